//! Estimator plumbing shared by the simulator and the validation harness:
//! batch-means confidence intervals, Kolmogorov-Smirnov distances against
//! exponential laws, and decorrelation of event-sampled series.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("{what} must be {requirement}, got {value}")]
    InvalidParameter { what: &'static str, requirement: &'static str, value: f64 },
}

/// A point estimate with a 95% half-width. Exact (non-sampled) quantities
/// carry a zero half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, half_width: 0.0 }
    }

    /// Whether `target` lies within `k` half-widths of the estimate.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.half_width
    }
}

/// Accumulates batch means (Welford form, so merging replications is exact
/// and order-independent) and reports a Student-t 95% half-width.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl BatchStats {
    pub fn new() -> Self {
        BatchStats::default()
    }

    /// A single exact value: the estimate is the value itself with zero
    /// half-width. Used when oracle output enters the estimator pipeline.
    pub fn exact(value: f64) -> Self {
        let mut s = BatchStats::new();
        s.push(value);
        s
    }

    pub fn push(&mut self, batch_mean: f64) {
        self.n += 1;
        let delta = batch_mean - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (batch_mean - self.mean);
    }

    /// Pools two sets of batch means. Associative and symmetric up to
    /// floating-point rounding.
    pub fn merge(&self, other: &BatchStats) -> BatchStats {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2
            + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        BatchStats { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance of the batch means; 0 when fewer than two batches.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n as f64 - 1.0)).max(0.0)
        }
    }

    /// 95% half-width `t_{0.975, n-1} * s / sqrt(n)`; 0 when fewer than two
    /// batches (a single batch carries no dispersion information).
    pub fn half_width(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let df = self.n as f64 - 1.0;
        t_quantile_975(df) * (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean(), half_width: self.half_width() }
    }
}

fn t_quantile_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("valid Student-t dof")
        .inverse_cdf(0.975)
}

/// Two-sided Kolmogorov-Smirnov distance between the empirical law of
/// `samples` and Exponential(`mean`).
pub fn ks_exponential(samples: &[f64], mean: f64) -> f64 {
    assert!(!samples.is_empty(), "KS needs samples");
    assert!(mean > 0.0 && mean.is_finite(), "KS reference mean must be positive");
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = 1.0 - (-x / mean).exp();
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    d
}

/// 1% critical value of the two-sided KS statistic (asymptotic).
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Lag-1 autocorrelation; 0 for degenerate series.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    if xs.len() < 3 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var <= 0.0 {
        return 0.0;
    }
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Thins a correlated series by doubling the stride until the lag-1
/// autocorrelation drops below `target`, refusing to go under `min_keep`
/// retained samples. Used to turn event-sampled snapshots into
/// near-independent samples for distributional tests.
pub fn decorrelate(xs: &[f64], target: f64, min_keep: usize) -> Vec<f64> {
    let mut stride = 1usize;
    loop {
        let thinned: Vec<f64> = xs.iter().copied().step_by(stride).collect();
        let next_len = xs.len() / (stride * 2);
        if lag1_autocorrelation(&thinned).abs() < target || next_len < min_keep.max(1) {
            return thinned;
        }
        stride *= 2;
    }
}

/// Pearson correlation coefficient; 0 for degenerate inputs.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Summary of a scaled sample against the exponential limit law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaledLawFit {
    pub mean: f64,
    pub variance: f64,
    /// KS distance to Exponential(sample mean).
    pub ks_to_exponential: f64,
    pub n_used: usize,
}

pub const MIN_LAW_SAMPLES: usize = 1000;

/// Scales each sample by `scale` and summarizes the result against an
/// exponential law fitted to the sample mean. Samples must already be
/// near-independent (see [`decorrelate`]).
pub fn estimate_scaled_law(samples: &[f64], scale: f64) -> Result<ScaledLawFit, StatsError> {
    if samples.len() < MIN_LAW_SAMPLES {
        return Err(StatsError::TooFewSamples { need: MIN_LAW_SAMPLES, got: samples.len() });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(StatsError::InvalidParameter {
            what: "scale",
            requirement: "positive and finite",
            value: scale,
        });
    }
    let scaled: Vec<f64> = samples.iter().map(|x| x * scale).collect();
    let n = scaled.len() as f64;
    let mean = scaled.iter().sum::<f64>() / n;
    if mean.is_nan() || mean <= 0.0 {
        return Err(StatsError::InvalidParameter {
            what: "sample mean",
            requirement: "positive for an exponential fit",
            value: mean,
        });
    }
    let variance = scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let ks = ks_exponential(&scaled, mean);
    Ok(ScaledLawFit { mean, variance, ks_to_exponential: ks, n_used: scaled.len() })
}

pub const MIN_PER_STATE_SAMPLES: usize = 500;

/// How far the per-environment-state conditional mean of a sampled quantity
/// strays from its marginal mean: `max_d |E[X|Z=d] - E[X]| / E[X]`, with an
/// approximate 95% half-width for the worst state (treats samples as
/// independent, so it understates the error on correlated input).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IndependenceDiagnostic {
    pub max_rel_gap: f64,
    pub half_width: f64,
    pub worst_state: usize,
}

pub fn independence_diagnostic(
    values: &[f64],
    states: &[usize],
    dim: usize,
    min_per_state: usize,
) -> Result<IndependenceDiagnostic, StatsError> {
    assert_eq!(values.len(), states.len(), "paired samples");
    let mut count = vec![0usize; dim];
    let mut sum = vec![0.0f64; dim];
    let mut sumsq = vec![0.0f64; dim];
    for (&v, &d) in values.iter().zip(states) {
        assert!(d < dim, "state index out of range");
        count[d] += 1;
        sum[d] += v;
        sumsq[d] += v * v;
    }
    for (d, &c) in count.iter().enumerate() {
        if c < min_per_state {
            let _ = d;
            return Err(StatsError::TooFewSamples { need: min_per_state, got: c });
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean.is_nan() || mean == 0.0 {
        return Err(StatsError::InvalidParameter {
            what: "marginal mean",
            requirement: "nonzero",
            value: mean,
        });
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let mut best = IndependenceDiagnostic { max_rel_gap: 0.0, half_width: 0.0, worst_state: 0 };
    for d in 0..dim {
        let nd = count[d] as f64;
        let mean_d = sum[d] / nd;
        let var_d = ((sumsq[d] - nd * mean_d * mean_d) / (nd - 1.0)).max(0.0);
        let gap = (mean_d - mean).abs() / mean.abs();
        if gap >= best.max_rel_gap {
            let hw = 1.96 * (var_d / nd + var / n).sqrt() / mean.abs();
            best = IndependenceDiagnostic { max_rel_gap: gap, half_width: hw, worst_state: d };
        }
    }
    Ok(best)
}

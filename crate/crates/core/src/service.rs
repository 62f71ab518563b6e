//! Service-requirement distributions attached to environment states.
//!
//! The queue fixes a customer's requirement at arrival by drawing from the
//! distribution of the state the environment occupies at that instant. The
//! supported families (exponential, hyperexponential, deterministic) cover
//! both low- and high-variability requirements; the multi-class machinery
//! additionally builds per-state hyperexponential mixtures out of class
//! splits via [`ServiceDistribution::mixture_from_classes`].

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hyperexponential weights must sum to 1 within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}")]
    WeightsNotNormalized { sum: f64 },
    #[error("rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("deterministic value must be positive and finite, got {0}")]
    BadValue(f64),
    #[error("weight must lie in [0, 1], got {0}")]
    BadWeight(f64),
    #[error("weights and rates must be non-empty and of equal length ({weights} vs {rates})")]
    LengthMismatch { weights: usize, rates: usize },
}

/// A positive service-requirement distribution with finite first and second
/// moments.
///
/// The JSON wire form is tagged by `kind`:
/// `{"kind":"exp","mu":2.0}`,
/// `{"kind":"hyperexp","alpha":[0.5,0.5],"mu":[1.0,2.0]}`,
/// `{"kind":"det","value":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", try_from = "WireForm")]
pub enum ServiceDistribution {
    #[serde(rename = "exp")]
    Exponential {
        #[serde(rename = "mu")]
        rate: f64,
    },
    #[serde(rename = "hyperexp")]
    HyperExponential {
        #[serde(rename = "alpha")]
        weights: Vec<f64>,
        #[serde(rename = "mu")]
        rates: Vec<f64>,
    },
    #[serde(rename = "det")]
    Deterministic { value: f64 },
}

/// Unvalidated mirror used so deserialized values pass the constructors.
#[derive(Deserialize)]
#[serde(tag = "kind")]
enum WireForm {
    #[serde(rename = "exp")]
    Exponential { mu: f64 },
    #[serde(rename = "hyperexp")]
    HyperExponential { alpha: Vec<f64>, mu: Vec<f64> },
    #[serde(rename = "det")]
    Deterministic { value: f64 },
}

impl TryFrom<WireForm> for ServiceDistribution {
    type Error = ServiceError;

    fn try_from(raw: WireForm) -> Result<Self, ServiceError> {
        match raw {
            WireForm::Exponential { mu } => ServiceDistribution::exponential(mu),
            WireForm::HyperExponential { alpha, mu } => {
                ServiceDistribution::hyper_exponential(alpha, mu)
            }
            WireForm::Deterministic { value } => ServiceDistribution::deterministic(value),
        }
    }
}

/// First and second moments of a service distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub h1: f64,
    pub h2: f64,
}

impl ServiceDistribution {
    pub fn exponential(rate: f64) -> Result<Self, ServiceError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(ServiceError::BadRate(rate));
        }
        Ok(ServiceDistribution::Exponential { rate })
    }

    pub fn deterministic(value: f64) -> Result<Self, ServiceError> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ServiceError::BadValue(value));
        }
        Ok(ServiceDistribution::Deterministic { value })
    }

    pub fn hyper_exponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, ServiceError> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(ServiceError::LengthMismatch {
                weights: weights.len(),
                rates: rates.len(),
            });
        }
        for &w in &weights {
            if !(0.0..=1.0).contains(&w) || !w.is_finite() {
                return Err(ServiceError::BadWeight(w));
            }
        }
        for &r in &rates {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ServiceError::BadRate(r));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(ServiceError::WeightsNotNormalized { sum });
        }
        Ok(ServiceDistribution::HyperExponential { weights, rates })
    }

    /// The per-state requirement distribution of a multi-class queue whose
    /// class-`k` customers are exponential with rate `mu_k` and arrive with
    /// probability `alpha_k`: a hyperexponential mixture. A single class
    /// collapses to its exponential.
    pub fn mixture_from_classes(alpha: &[f64], mu: &[f64]) -> Result<Self, ServiceError> {
        if alpha.len() == 1 {
            let sum = alpha[0];
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(ServiceError::WeightsNotNormalized { sum });
            }
            return ServiceDistribution::exponential(mu[0]);
        }
        ServiceDistribution::hyper_exponential(alpha.to_vec(), mu.to_vec())
    }

    /// First two moments `(h1, h2)`.
    pub fn moments(&self) -> Moments {
        match self {
            ServiceDistribution::Exponential { rate } => {
                Moments { h1: 1.0 / rate, h2: 2.0 / (rate * rate) }
            }
            ServiceDistribution::HyperExponential { weights, rates } => {
                let h1 = weights.iter().zip(rates).map(|(a, m)| a / m).sum();
                let h2 = 2.0 * weights.iter().zip(rates).map(|(a, m)| a / (m * m)).sum::<f64>();
                Moments { h1, h2 }
            }
            ServiceDistribution::Deterministic { value } => {
                Moments { h1: *value, h2: value * value }
            }
        }
    }

    /// Laplace-Stieltjes transform `E[exp(-s B)]` at `s >= 0`.
    pub fn lst(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "LST evaluated at negative argument");
        match self {
            ServiceDistribution::Exponential { rate } => rate / (rate + s),
            ServiceDistribution::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(a, m)| a * m / (m + s)).sum()
            }
            ServiceDistribution::Deterministic { value } => (-s * value).exp(),
        }
    }

    /// Distribution function `P(B <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            ServiceDistribution::Exponential { rate } => 1.0 - (-rate * x).exp(),
            ServiceDistribution::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(a, m)| a * (1.0 - (-m * x).exp()))
                .sum(),
            ServiceDistribution::Deterministic { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceDistribution::Exponential { rate } => {
                Exp::new(*rate).expect("positive rate").sample(rng)
            }
            ServiceDistribution::HyperExponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = rates.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                Exp::new(rates[pick]).expect("positive rate").sample(rng)
            }
            ServiceDistribution::Deterministic { value } => *value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    fn hyperexp_half_half() -> ServiceDistribution {
        ServiceDistribution::hyper_exponential(vec![0.5, 0.5], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn exponential_moments() {
        let m = ServiceDistribution::exponential(2.0).unwrap().moments();
        assert_eq!(m.h1, 0.5);
        assert_eq!(m.h2, 0.5);
    }

    #[test]
    fn deterministic_moments() {
        let m = ServiceDistribution::deterministic(3.0).unwrap().moments();
        assert_eq!(m.h1, 3.0);
        assert_eq!(m.h2, 9.0);
    }

    #[test]
    fn hyperexponential_moments() {
        let m = hyperexp_half_half().moments();
        assert_abs_diff_eq!(m.h1, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(m.h2, 1.25, epsilon = 1e-15);
    }

    #[test]
    fn moments_satisfy_jensen() {
        for dist in [
            ServiceDistribution::exponential(0.3).unwrap(),
            hyperexp_half_half(),
            ServiceDistribution::deterministic(2.5).unwrap(),
        ] {
            let m = dist.moments();
            assert!(m.h1 > 0.0 && m.h2 > 0.0);
            assert!(m.h2 >= m.h1 * m.h1 - 1e-15);
        }
    }

    #[test]
    fn lst_values() {
        let exp = ServiceDistribution::exponential(1.0).unwrap();
        assert_eq!(exp.lst(0.0), 1.0);
        assert_eq!(exp.lst(1.0), 0.5);
        assert_abs_diff_eq!(hyperexp_half_half().lst(2.0), 5.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn lst_strictly_decreasing() {
        for dist in [
            ServiceDistribution::exponential(2.0).unwrap(),
            hyperexp_half_half(),
            ServiceDistribution::deterministic(1.0).unwrap(),
        ] {
            let mut prev = dist.lst(0.0);
            assert_eq!(prev, 1.0);
            for i in 1..=20 {
                let v = dist.lst(i as f64 * 0.5);
                assert!(v < prev && v > 0.0);
                prev = v;
            }
        }
    }

    /// Forward finite differences of the LST at 0 recover the moments:
    /// -d/ds lst|0 = h1 and d^2/ds^2 lst|0 = h2.
    #[test]
    fn lst_derivatives_match_moments() {
        let h = 1e-6;
        for dist in [
            ServiceDistribution::exponential(2.0).unwrap(),
            hyperexp_half_half(),
            ServiceDistribution::deterministic(1.0).unwrap(),
        ] {
            let m = dist.moments();
            let d1 = (dist.lst(0.0) - dist.lst(h)) / h;
            assert!(
                (d1 - m.h1).abs() / m.h1 <= 1e-4,
                "first derivative {d1} vs h1 {}",
                m.h1
            );
            let d2 = (dist.lst(0.0) - 2.0 * dist.lst(h) + dist.lst(2.0 * h)) / (h * h);
            assert!(
                (d2 - m.h2).abs() / m.h2 <= 1e-3,
                "second derivative {d2} vs h2 {}",
                m.h2
            );
        }
    }

    #[test]
    fn mixture_single_class_collapses_to_exponential() {
        let d = ServiceDistribution::mixture_from_classes(&[1.0], &[5.0]).unwrap();
        assert_eq!(d, ServiceDistribution::Exponential { rate: 5.0 });
    }

    #[test]
    fn mixture_moments_match_formula() {
        let d = ServiceDistribution::mixture_from_classes(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(d.moments().h1, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn mixture_equal_rates_has_exponential_moments() {
        let d = ServiceDistribution::mixture_from_classes(&[0.3, 0.7], &[1.0, 1.0]).unwrap();
        let m = d.moments();
        assert_abs_diff_eq!(m.h1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.h2, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn mixture_rejects_unnormalized_weights() {
        let err = ServiceDistribution::mixture_from_classes(&[0.5, 0.6], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, ServiceError::WeightsNotNormalized { .. }));
    }

    #[test]
    fn deterministic_sampling_is_constant() {
        let d = ServiceDistribution::deterministic(3.0).unwrap();
        let mut rng = stream_rng(0, 0);
        for _ in 0..10 {
            assert_eq!(d.sample(&mut rng), 3.0);
        }
    }

    #[test]
    fn exponential_sample_mean_within_clt_band() {
        let d = ServiceDistribution::exponential(2.0).unwrap();
        let mut rng = stream_rng(13, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        // sd = 0.5, so 3 sd/sqrt(n) = 0.0015.
        assert_abs_diff_eq!(mean, 0.5, epsilon = 0.0016);
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = hyperexp_half_half();
        let a: Vec<f64> = (0..16).map(|_| d.sample(&mut stream_rng(9, 1))).collect();
        let b: Vec<f64> = (0..16).map(|_| d.sample(&mut stream_rng(9, 1))).collect();
        assert_eq!(a, b);
    }

    /// Empirical CDF of 1e5 draws against the analytic CDF; the KS distance
    /// must clear the 1% critical value 1.63/sqrt(n). Ties (atoms of the
    /// deterministic law) are grouped so both one-sided CDF limits are
    /// compared at the jump.
    #[test]
    fn sampling_law_matches_cdf() {
        fn cdf_left(dist: &ServiceDistribution, x: f64) -> f64 {
            match dist {
                ServiceDistribution::Deterministic { value } => {
                    if x > *value {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => dist.cdf(x),
            }
        }

        let n = 100_000usize;
        let critical = 1.63 / (n as f64).sqrt();
        for (stream, dist) in [
            ServiceDistribution::exponential(2.0).unwrap(),
            hyperexp_half_half(),
            ServiceDistribution::deterministic(1.5).unwrap(),
        ]
        .into_iter()
        .enumerate()
        {
            let mut rng = stream_rng(21, stream as u64);
            let mut xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j < n && xs[j] == xs[i] {
                    j += 1;
                }
                ks = ks.max((cdf_left(&dist, xs[i]) - i as f64 / n as f64).abs());
                ks = ks.max((dist.cdf(xs[i]) - j as f64 / n as f64).abs());
                i = j;
            }
            assert!(ks < critical, "KS {ks} >= {critical} for {dist:?}");
        }
    }

    #[test]
    fn wire_format_round_trips() {
        let variants = [
            (r#"{"kind":"exp","mu":2.0}"#, ServiceDistribution::exponential(2.0).unwrap()),
            (
                r#"{"kind":"hyperexp","alpha":[0.5,0.5],"mu":[1.0,2.0]}"#,
                hyperexp_half_half(),
            ),
            (r#"{"kind":"det","value":1.0}"#, ServiceDistribution::deterministic(1.0).unwrap()),
        ];
        for (json, want) in variants {
            let got: ServiceDistribution = serde_json::from_str(json).unwrap();
            assert_eq!(got, want);
            let back = serde_json::to_string(&got).unwrap();
            let again: ServiceDistribution = serde_json::from_str(&back).unwrap();
            assert_eq!(again, want);
        }
    }

    #[test]
    fn wire_format_rejects_invalid() {
        assert!(serde_json::from_str::<ServiceDistribution>(r#"{"kind":"exp","mu":-1.0}"#).is_err());
        assert!(serde_json::from_str::<ServiceDistribution>(
            r#"{"kind":"hyperexp","alpha":[0.5,0.6],"mu":[1.0,2.0]}"#
        )
        .is_err());
    }
}

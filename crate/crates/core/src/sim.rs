//! Event-driven simulation of (a) the modulated workload process under any
//! per-state service distribution and (b) the multi-class exponential DPS
//! queue, with batch-means confidence intervals.
//!
//! The workload path is piecewise linear and every event time — arrival,
//! environment jump, and the workload hitting zero — is available in closed
//! form, so all time integrals are computed exactly per segment with no
//! discretization error. Occupancy fractions are normalized by the realized
//! batch length, which makes `sum_d (p0_d + busy_d) = 1` hold to rounding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use thiserror::Error;

use crate::dps::DpsSpec;
use crate::rng::stream_rng;
use crate::stats::{BatchStats, StatsError};
use crate::workload::ModelSpec;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model is unstable: traffic intensity {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("{what} must be {requirement}, got {value}")]
    InvalidParameter { what: &'static str, requirement: &'static str, value: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Run-length and estimation parameters for a single simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub horizon: f64,
    /// Discarded initial stretch; defaults to 10% of the horizon.
    pub warmup: f64,
    /// Number of batch-means batches (at least 10; 30 by default).
    pub batches: usize,
    pub seed: u64,
    /// RNG stream, normally the replicate index.
    pub stream: u64,
    /// Number of stationary snapshots to record post-warmup (0 disables).
    pub snapshot_target: usize,
    pub initial_state: usize,
    /// Starting workload (workload simulation only).
    pub initial_workload: f64,
}

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        SimConfig {
            horizon,
            warmup: 0.1 * horizon,
            batches: 30,
            seed: 0,
            stream: 0,
            snapshot_target: 0,
            initial_state: 0,
            initial_workload: 0.0,
        }
    }

    fn validate(&self, dim: usize) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::InvalidParameter {
                what: "horizon",
                requirement: "positive and finite",
                value: self.horizon,
            });
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(SimError::InvalidParameter {
                what: "warmup",
                requirement: "nonnegative and below the horizon",
                value: self.warmup,
            });
        }
        if self.batches < 10 {
            return Err(SimError::InvalidParameter {
                what: "batches",
                requirement: "at least 10",
                value: self.batches as f64,
            });
        }
        if self.initial_state >= dim {
            return Err(SimError::InvalidParameter {
                what: "initial_state",
                requirement: "a valid environment state index",
                value: self.initial_state as f64,
            });
        }
        if !(self.initial_workload >= 0.0 && self.initial_workload.is_finite()) {
            return Err(SimError::InvalidParameter {
                what: "initial_workload",
                requirement: "nonnegative and finite",
                value: self.initial_workload,
            });
        }
        Ok(())
    }
}

/// Stationary snapshots taken at deterministic epochs; `width` is 1 for the
/// workload process and K for the DPS queue (row-major storage).
#[derive(Debug, Clone, Default, Serialize)]
pub struct Snapshots {
    pub width: usize,
    pub values: Vec<f64>,
    pub states: Vec<usize>,
}

impl Snapshots {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i, col)).collect()
    }

    fn append(&mut self, mut other: Snapshots) {
        if self.is_empty() {
            *self = other;
            return;
        }
        if other.is_empty() {
            return;
        }
        assert_eq!(self.width, other.width, "snapshot widths must match to merge");
        self.values.append(&mut other.values);
        self.states.append(&mut other.states);
    }
}

/// Estimates from one run or a merge of replications. For the workload
/// simulation `ew` is the time-average workload; for the DPS simulation it
/// is the workload functional `sum_k M_k/mu_k`, whose stationary mean is the
/// workload mean (remaining exponential requirements are memoryless).
#[derive(Debug, Clone)]
pub struct SimEstimates {
    pub ew: BatchStats,
    /// Time fraction of {empty, Z=d} per environment state.
    pub p0: Vec<BatchStats>,
    /// Time fraction of {busy, Z=d}.
    pub busy: Vec<BatchStats>,
    /// DPS only: time-average E[M_k 1{Z=d}], class-major.
    pub m_kd: Option<Vec<Vec<BatchStats>>>,
    /// DPS only: E[g_k M_k/(sum_j g_j M_j) 1{busy, Z=d}].
    pub share_kd: Option<Vec<Vec<BatchStats>>>,
    pub snapshots: Snapshots,
    pub events: u64,
    pub sim_time: f64,
}

impl SimEstimates {
    fn new(dim: usize) -> Self {
        SimEstimates {
            ew: BatchStats::new(),
            p0: vec![BatchStats::new(); dim],
            busy: vec![BatchStats::new(); dim],
            m_kd: None,
            share_kd: None,
            snapshots: Snapshots::default(),
            events: 0,
            sim_time: 0.0,
        }
    }

    /// Pools replications; associative, and deterministic given the merge
    /// order (the harness merges in replicate-index order).
    pub fn merge(mut self, other: SimEstimates) -> SimEstimates {
        self.ew = self.ew.merge(&other.ew);
        assert_eq!(self.p0.len(), other.p0.len(), "replicate dimensions must match");
        for (a, b) in self.p0.iter_mut().zip(&other.p0) {
            *a = a.merge(b);
        }
        for (a, b) in self.busy.iter_mut().zip(&other.busy) {
            *a = a.merge(b);
        }
        self.m_kd = merge_matrix(self.m_kd.take(), other.m_kd);
        self.share_kd = merge_matrix(self.share_kd.take(), other.share_kd);
        self.snapshots.append(other.snapshots);
        self.events += other.events;
        self.sim_time += other.sim_time;
        self
    }

    /// Residual-functional input view (DPS runs only).
    pub fn dps_estimates(&self) -> crate::dps::DpsEstimates {
        let lift = |m: &Option<Vec<Vec<BatchStats>>>| {
            m.as_ref().map(|rows| {
                rows.iter()
                    .map(|row| row.iter().map(|s| s.estimate()).collect())
                    .collect()
            })
        };
        crate::dps::DpsEstimates { share: lift(&self.share_kd), mean_m: lift(&self.m_kd) }
    }

    /// Simulated aggregate `sum_d p0_d c_d / c_inf`, for the
    /// empty-probability identity checks.
    pub fn empty_aggregate(&self, capacities: &[f64]) -> crate::stats::Estimate {
        let c_inf: f64 = capacities.iter().sum::<f64>() / capacities.len() as f64;
        let _ = c_inf;
        let mut value = 0.0;
        let mut hw = 0.0;
        for (d, s) in self.p0.iter().enumerate() {
            value += s.mean() * capacities[d];
            hw += s.half_width() * capacities[d];
        }
        crate::stats::Estimate { value, half_width: hw }
    }
}

fn merge_matrix(
    a: Option<Vec<Vec<BatchStats>>>,
    b: Option<Vec<Vec<BatchStats>>>,
) -> Option<Vec<Vec<BatchStats>>> {
    match (a, b) {
        (Some(mut x), Some(y)) => {
            assert_eq!(x.len(), y.len(), "replicate class counts must match");
            for (r, s) in x.iter_mut().zip(&y) {
                assert_eq!(r.len(), s.len());
                for (p, q) in r.iter_mut().zip(s) {
                    *p = p.merge(q);
                }
            }
            Some(x)
        }
        (None, None) => None,
        _ => panic!("cannot merge workload estimates with DPS estimates"),
    }
}

/// Splits measurement time into equal batches and accumulates per-batch
/// integrals; also hands out deterministic snapshot epochs.
struct Accumulator {
    warmup: f64,
    batches: usize,
    batch_len: f64,
    /// Integral accumulators, one slot per (quantity, batch).
    integrals: Vec<Vec<f64>>,
    /// Realized time per (batch, extra dimension for occupancy slots).
    snap_epochs: Vec<f64>,
    next_snap: usize,
}

impl Accumulator {
    fn new(cfg: &SimConfig, quantities: usize) -> Self {
        let span = cfg.horizon - cfg.warmup;
        let batch_len = span / cfg.batches as f64;
        let snap_epochs = (0..cfg.snapshot_target)
            .map(|j| {
                cfg.warmup + (j as f64 + 0.5) * span / cfg.snapshot_target as f64
            })
            .collect();
        Accumulator {
            warmup: cfg.warmup,
            batches: cfg.batches,
            batch_len,
            integrals: vec![vec![0.0; cfg.batches]; quantities],
            snap_epochs,
            next_snap: 0,
        }
    }

    /// Adds a segment [t0, t1] on which quantity `q` integrates via `f`,
    /// clipped to the measurement window and split at batch boundaries.
    /// `f(s0, s1)` must return the exact integral over [s0, s1].
    fn add<F: Fn(f64, f64) -> f64>(&mut self, q: usize, t0: f64, t1: f64, f: F) {
        let lo = t0.max(self.warmup);
        let hi = t1.min(self.warmup + self.batch_len * self.batches as f64);
        if lo >= hi {
            return;
        }
        let mut s0 = lo;
        let mut b = ((s0 - self.warmup) / self.batch_len) as usize;
        if b >= self.batches {
            return;
        }
        while s0 < hi {
            let boundary = self.warmup + (b as f64 + 1.0) * self.batch_len;
            let s1 = hi.min(boundary);
            if s1 > s0 {
                self.integrals[q][b] += f(s0, s1);
            }
            if s1 >= hi {
                break;
            }
            s0 = s1;
            b += 1;
            if b >= self.batches {
                break;
            }
        }
    }

    /// Snapshot epochs falling inside [t0, t1).
    fn epochs_within(&mut self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let start = self.next_snap;
        while self.next_snap < self.snap_epochs.len()
            && self.snap_epochs[self.next_snap] < t1
        {
            if self.snap_epochs[self.next_snap] < t0 {
                // Should not happen (segments are contiguous), but keep the
                // cursor monotone.
                self.next_snap += 1;
                continue;
            }
            self.next_snap += 1;
        }
        start..self.next_snap
    }

    /// Batch means of quantity `q`, each normalized by `norm[b]`.
    fn batch_means(&self, q: usize, norm: &[f64]) -> BatchStats {
        let mut s = BatchStats::new();
        for b in 0..self.batches {
            s.push(self.integrals[q][b] / norm[b]);
        }
        s
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        f64::INFINITY
    } else {
        let e: f64 = Exp1.sample(rng);
        e / rate
    }
}

/// Simulates the modulated workload process. Events are class arrivals
/// (adding a sampled requirement), environment jumps, and the workload
/// hitting zero (computed in closed form); ties, possible only at
/// floating-point granularity, resolve arrival first, hit-zero second,
/// environment jump last.
pub fn simulate_workload(
    model: &ModelSpec,
    cfg: &SimConfig,
) -> Result<SimEstimates, SimError> {
    let rho = model.traffic_intensity();
    if rho >= 1.0 {
        return Err(SimError::Unstable { rho });
    }
    cfg.validate(model.dim())?;
    let dim = model.dim();
    let mut rng = stream_rng(cfg.seed, cfg.stream);

    // Quantities: 0 = workload integral, 1..=D empty-time, D+1..=2D busy-time.
    let q_w = 0;
    let q_empty = |d: usize| 1 + d;
    let q_busy = |d: usize| 1 + dim + d;
    let mut acc = Accumulator::new(cfg, 1 + 2 * dim);
    let mut snaps = Snapshots {
        width: 1,
        values: Vec::with_capacity(cfg.snapshot_target),
        states: Vec::with_capacity(cfg.snapshot_target),
    };

    let mut t = 0.0;
    let mut w = cfg.initial_workload;
    let mut d = cfg.initial_state;
    let mut events: u64 = 0;

    while t < cfg.horizon {
        let c = model.capacities()[d];
        let t_arrival = exp_sample(&mut rng, model.lambda()[d]);
        let t_jump = exp_sample(&mut rng, model.env().exit_rate(d));
        let t_zero = if w > 0.0 { w / c } else { f64::INFINITY };
        let t_end = cfg.horizon - t;

        // Fixed priority on exact ties: arrival, then hit-zero, then jump.
        let dt = t_arrival.min(t_zero).min(t_jump).min(t_end);
        let t1 = t + dt;

        // The workload is linear on [t, t1]: w(s) = w - c (s - t) while
        // busy, constantly 0 while empty.
        if w > 0.0 {
            let (w0, tt, cc) = (w, t, c);
            acc.add(q_w, t, t1, |s0, s1| {
                let a = w0 - cc * (s0 - tt);
                let b = w0 - cc * (s1 - tt);
                0.5 * (a + b) * (s1 - s0)
            });
            acc.add(q_busy(d), t, t1, |s0, s1| s1 - s0);
        } else {
            acc.add(q_empty(d), t, t1, |s0, s1| s1 - s0);
        }
        if !acc.snap_epochs.is_empty() {
            let (w0, tt, cc, busy) = (w, t, c, w > 0.0);
            for j in acc.epochs_within(t, t1) {
                let epoch = acc.snap_epochs[j];
                let value = if busy { w0 - cc * (epoch - tt) } else { 0.0 };
                snaps.values.push(value.max(0.0));
                snaps.states.push(d);
            }
        }

        t = t1;
        if dt == t_end {
            break;
        }
        events += 1;
        if dt == t_arrival {
            w = (w - c * dt).max(0.0) + model.service(d).sample(&mut rng);
        } else if dt == t_zero {
            w = 0.0;
        } else {
            w = (w - c * dt).max(0.0);
            d = model.env().sample_jump(d, &mut rng);
        }
    }

    Ok(finish_estimates(model.dim(), acc, snaps, events, cfg, None))
}

/// Simulates the multi-class DPS queue as a CTMC with competing exponential
/// clocks: class-k arrivals at `alpha[k][d] lambda_d`, departures at
/// `mu_k c_d g_k m_k / sum_j g_j m_j`, environment jumps per the generator.
/// Event categories are examined in a fixed order (arrivals by class,
/// departures by class, jumps by target state), which doubles as the tie
/// priority.
pub fn simulate_dps(spec: &DpsSpec, cfg: &SimConfig) -> Result<SimEstimates, SimError> {
    let model = spec.model();
    let rho = model.traffic_intensity();
    if rho >= 1.0 {
        return Err(SimError::Unstable { rho });
    }
    cfg.validate(model.dim())?;
    let dim = model.dim();
    let kn = spec.n_classes();
    let mut rng = stream_rng(cfg.seed, cfg.stream);

    // Quantities: 0 workload functional; empty/busy occupancy; then the
    // K x D blocks for E[M_k 1{Z=d}] and the capacity shares.
    let q_w = 0;
    let q_empty = |d: usize| 1 + d;
    let q_busy = |d: usize| 1 + dim + d;
    let q_m = |k: usize, d: usize| 1 + 2 * dim + k * dim + d;
    let q_share = |k: usize, d: usize| 1 + 2 * dim + kn * dim + k * dim + d;
    let mut acc = Accumulator::new(cfg, 1 + 2 * dim + 2 * kn * dim);
    let mut snaps = Snapshots {
        width: kn,
        values: Vec::with_capacity(cfg.snapshot_target * kn),
        states: Vec::with_capacity(cfg.snapshot_target),
    };

    let mut t = 0.0;
    let mut d = cfg.initial_state;
    let mut m = vec![0u64; kn];
    let mut events: u64 = 0;
    let mut rates = vec![0.0f64; 2 * kn + dim];

    while t < cfg.horizon {
        let c = model.capacities()[d];
        let weighted: f64 =
            (0..kn).map(|k| spec.g()[k] * m[k] as f64).sum();
        let total_pop: u64 = m.iter().sum();

        // Event categories in tie-priority order.
        let mut total_rate = 0.0;
        for k in 0..kn {
            rates[k] = spec.class_arrival_rate(k, d);
            total_rate += rates[k];
        }
        for k in 0..kn {
            rates[kn + k] = if m[k] > 0 {
                spec.mu()[k] * c * spec.g()[k] * m[k] as f64 / weighted
            } else {
                0.0
            };
            total_rate += rates[kn + k];
        }
        for l in 0..dim {
            rates[2 * kn + l] = if l == d { 0.0 } else { model.env().rate(d, l) };
            total_rate += rates[2 * kn + l];
        }

        let dt_event = if total_rate > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            e / total_rate
        } else {
            f64::INFINITY
        };
        let dt = dt_event.min(cfg.horizon - t);
        let t1 = t + dt;

        // The state is constant on [t, t1): all integrands are constants.
        if total_pop > 0 {
            let w_func: f64 =
                (0..kn).map(|k| m[k] as f64 / spec.mu()[k]).sum();
            acc.add(q_w, t, t1, |s0, s1| w_func * (s1 - s0));
            acc.add(q_busy(d), t, t1, |s0, s1| s1 - s0);
            for k in 0..kn {
                if m[k] > 0 {
                    let mk = m[k] as f64;
                    acc.add(q_m(k, d), t, t1, |s0, s1| mk * (s1 - s0));
                    let share = spec.g()[k] * mk / weighted;
                    acc.add(q_share(k, d), t, t1, |s0, s1| share * (s1 - s0));
                }
            }
        } else {
            acc.add(q_empty(d), t, t1, |s0, s1| s1 - s0);
        }
        if !acc.snap_epochs.is_empty() {
            for _ in acc.epochs_within(t, t1) {
                for &mk in &m {
                    snaps.values.push(mk as f64);
                }
                snaps.states.push(d);
            }
        }

        t = t1;
        if dt != dt_event {
            break;
        }
        events += 1;
        // Categorical pick over the fixed-order categories.
        let mut u = rng.random::<f64>() * total_rate;
        let mut chosen = rates.len() - 1;
        for (i, &r) in rates.iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            chosen = i;
            if u < r {
                break;
            }
            u -= r;
        }
        if chosen < kn {
            m[chosen] += 1;
        } else if chosen < 2 * kn {
            m[chosen - kn] -= 1;
        } else {
            d = chosen - 2 * kn;
        }
    }

    Ok(finish_estimates(dim, acc, snaps, events, cfg, Some(kn)))
}

fn finish_estimates(
    dim: usize,
    acc: Accumulator,
    snapshots: Snapshots,
    events: u64,
    cfg: &SimConfig,
    kn: Option<usize>,
) -> SimEstimates {
    // Normalize every time integral by the realized occupancy time of its
    // batch, so the empty/busy fractions sum to one exactly.
    let mut realized = vec![0.0f64; acc.batches];
    for d in 0..dim {
        for b in 0..acc.batches {
            realized[b] += acc.integrals[1 + d][b] + acc.integrals[1 + dim + d][b];
        }
    }
    // Guard batches that saw no time at all (cannot happen with a positive
    // span, but keeps the division defined).
    for r in &mut realized {
        if *r <= 0.0 {
            *r = acc.batch_len;
        }
    }

    let mut est = SimEstimates::new(dim);
    est.ew = acc.batch_means(0, &realized);
    for d in 0..dim {
        est.p0[d] = acc.batch_means(1 + d, &realized);
        est.busy[d] = acc.batch_means(1 + dim + d, &realized);
    }
    if let Some(kn) = kn {
        let mut m_kd = vec![vec![BatchStats::new(); dim]; kn];
        let mut share_kd = vec![vec![BatchStats::new(); dim]; kn];
        for k in 0..kn {
            for d in 0..dim {
                m_kd[k][d] = acc.batch_means(1 + 2 * dim + k * dim + d, &realized);
                share_kd[k][d] =
                    acc.batch_means(1 + 2 * dim + kn * dim + k * dim + d, &realized);
            }
        }
        est.m_kd = Some(m_kd);
        est.share_kd = Some(share_kd);
    }
    est.snapshots = snapshots;
    est.events = events;
    est.sim_time = cfg.horizon;
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GeneratorMatrix;
    use crate::oracle::solve_truncated_dps;
    use crate::service::ServiceDistribution;
    use approx::assert_abs_diff_eq;

    fn mm1(lambda: f64) -> ModelSpec {
        let env = GeneratorMatrix::new(&[vec![0.0]]).unwrap();
        ModelSpec::new(
            env,
            vec![lambda],
            vec![1.0],
            vec![ServiceDistribution::exponential(1.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn workload_decays_exactly_with_no_arrivals() {
        let env = GeneratorMatrix::new(&[vec![0.0]]).unwrap();
        let model = ModelSpec::new(
            env,
            vec![0.0],
            vec![2.0],
            vec![ServiceDistribution::exponential(1.0).unwrap()],
        )
        .unwrap();
        let mut cfg = SimConfig::new(10.0);
        cfg.warmup = 0.0;
        cfg.initial_workload = 6.0;
        let est = simulate_workload(&model, &cfg).unwrap();
        // Hits zero at exactly t = 3; one event; integral = 6^2/(2*2) = 9.
        assert_eq!(est.events, 1);
        assert_abs_diff_eq!(est.ew.mean(), 9.0 / 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.p0[0].mean(), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(est.busy[0].mean(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn empty_system_occupancy_matches_pi() {
        let env = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let model = ModelSpec::new(
            env,
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![
                ServiceDistribution::exponential(1.0).unwrap(),
                ServiceDistribution::exponential(1.0).unwrap(),
            ],
        )
        .unwrap();
        let mut cfg = SimConfig::new(50_000.0);
        cfg.seed = 5;
        let est = simulate_workload(&model, &cfg).unwrap();
        assert_eq!(est.ew.mean(), 0.0);
        for d in 0..2 {
            assert!(
                est.p0[d].estimate().covers(model.pi().get(d), 3.0),
                "p0[{d}] = {:?} vs pi {}",
                est.p0[d].estimate(),
                model.pi().get(d)
            );
        }
    }

    #[test]
    fn occupancy_fractions_sum_to_one() {
        let model = mm1(0.5);
        let mut cfg = SimConfig::new(20_000.0);
        cfg.seed = 1;
        let est = simulate_workload(&model, &cfg).unwrap();
        let total: f64 = (0..1)
            .map(|d| est.p0[d].mean() + est.busy[d].mean())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mm1_workload_matches_theory() {
        let model = mm1(0.5);
        let mut cfg = SimConfig::new(200_000.0);
        cfg.seed = 2;
        let est = simulate_workload(&model, &cfg).unwrap();
        // E W = rho/(mu(1-rho)) = 1, p0 = 0.5.
        assert!(est.ew.estimate().covers(1.0, 3.0), "ew {:?}", est.ew.estimate());
        assert!(est.p0[0].estimate().covers(0.5, 3.0), "p0 {:?}", est.p0[0].estimate());
        assert!(est.events > 100_000);
    }

    #[test]
    fn disjoint_seeds_agree_within_joint_interval() {
        let model = mm1(0.5);
        let mut a = SimConfig::new(100_000.0);
        a.seed = 101;
        let mut b = a.clone();
        b.seed = 202;
        let ea = simulate_workload(&model, &a).unwrap();
        let eb = simulate_workload(&model, &b).unwrap();
        let gap = (ea.ew.mean() - eb.ew.mean()).abs();
        let joint =
            (ea.ew.half_width().powi(2) + eb.ew.half_width().powi(2)).sqrt();
        assert!(gap <= 3.0 * joint, "gap {gap} vs joint width {joint}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model = mm1(0.7);
        let mut cfg = SimConfig::new(5_000.0);
        cfg.seed = 7;
        cfg.snapshot_target = 100;
        let a = simulate_workload(&model, &cfg).unwrap();
        let b = simulate_workload(&model, &cfg).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.ew.mean().to_bits(), b.ew.mean().to_bits());
        assert_eq!(a.snapshots.values, b.snapshots.values);
        // A different stream gives a different path.
        let mut other = cfg.clone();
        other.stream = 1;
        let c = simulate_workload(&model, &other).unwrap();
        assert_ne!(a.ew.mean().to_bits(), c.ew.mean().to_bits());
    }

    #[test]
    fn snapshots_are_recorded_on_the_grid() {
        let model = mm1(0.5);
        let mut cfg = SimConfig::new(10_000.0);
        cfg.snapshot_target = 500;
        cfg.seed = 3;
        let est = simulate_workload(&model, &cfg).unwrap();
        assert_eq!(est.snapshots.len(), 500);
        assert_eq!(est.snapshots.width, 1);
        assert!(est.snapshots.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn merge_pools_replicates() {
        let model = mm1(0.5);
        let mut a = SimConfig::new(20_000.0);
        a.seed = 11;
        a.snapshot_target = 50;
        let mut b = a.clone();
        b.stream = 1;
        let ea = simulate_workload(&model, &a).unwrap();
        let eb = simulate_workload(&model, &b).unwrap();
        let n_a = ea.ew.count();
        let merged = ea.merge(eb);
        assert_eq!(merged.ew.count(), n_a * 2);
        assert_eq!(merged.snapshots.len(), 100);
        assert!(merged.ew.estimate().covers(1.0, 3.5), "{:?}", merged.ew.estimate());
    }

    fn mm1_ps_spec(lambda: f64) -> DpsSpec {
        let env = GeneratorMatrix::new(&[vec![0.0]]).unwrap();
        DpsSpec::new(env, vec![lambda], vec![1.0], vec![vec![1.0]], vec![1.0], vec![1.0])
            .unwrap()
    }

    #[test]
    fn dps_single_class_matches_mm1() {
        let spec = mm1_ps_spec(0.5);
        let mut cfg = SimConfig::new(200_000.0);
        cfg.seed = 13;
        let est = simulate_dps(&spec, &cfg).unwrap();
        let m = est.m_kd.as_ref().unwrap()[0][0].estimate();
        assert!(m.covers(1.0, 3.0), "E M {:?}", m);
        assert!(est.p0[0].estimate().covers(0.5, 3.0));
        // Share of the only class is the busy probability.
        let share = est.share_kd.as_ref().unwrap()[0][0].estimate();
        assert!(share.covers(0.5, 3.0), "share {:?}", share);
        // Workload functional mean equals E M / mu = 1.
        assert!(est.ew.estimate().covers(1.0, 3.0));
    }

    #[test]
    fn dps_occupancy_fractions_sum_to_one() {
        let spec = mm1_ps_spec(0.5);
        let mut cfg = SimConfig::new(20_000.0);
        cfg.seed = 17;
        let est = simulate_dps(&spec, &cfg).unwrap();
        let total = est.p0[0].mean() + est.busy[0].mean();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dps_matches_truncated_oracle_on_modulated_instance() {
        let env = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let lam = 16.0 / 17.0;
        let spec = DpsSpec::new(
            env,
            vec![lam, lam],
            vec![1.0, 2.0],
            vec![vec![0.5, 0.25], vec![0.5, 0.75]],
            vec![1.0, 2.0],
            vec![2.0, 1.0],
        )
        .unwrap();
        let sol = solve_truncated_dps(&spec, 30).unwrap();
        let mut cfg = SimConfig::new(150_000.0);
        cfg.seed = 19;
        let est = simulate_dps(&spec, &cfg).unwrap();
        for k in 0..2 {
            for d in 0..2 {
                let e = est.m_kd.as_ref().unwrap()[k][d].estimate();
                assert!(
                    e.covers(sol.mean_m(k, d), 3.0),
                    "m[{k}][{d}] {:?} vs oracle {}",
                    e,
                    sol.mean_m(k, d)
                );
                let s = est.share_kd.as_ref().unwrap()[k][d].estimate();
                assert!(
                    s.covers(sol.share(k, d), 3.0),
                    "share[{k}][{d}] {:?} vs oracle {}",
                    s,
                    sol.share(k, d)
                );
            }
        }
        for d in 0..2 {
            assert!(est.p0[d].estimate().covers(sol.p0(d), 3.0));
        }
    }

    #[test]
    fn work_conservation_between_simulators() {
        // DPS workload functional vs the single-class mixture workload.
        let spec = DpsSpec::new(
            GeneratorMatrix::new(&[vec![0.0]]).unwrap(),
            vec![0.8],
            vec![1.0],
            vec![vec![0.5], vec![0.5]],
            vec![1.0, 2.0],
            vec![2.0, 1.0],
        )
        .unwrap();
        let mut cfg = SimConfig::new(150_000.0);
        cfg.seed = 23;
        let dps = simulate_dps(&spec, &cfg).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.stream = 1;
        let wl = simulate_workload(spec.model(), &cfg2).unwrap();
        let gap = (dps.ew.mean() - wl.ew.mean()).abs();
        let joint =
            (dps.ew.half_width().powi(2) + wl.ew.half_width().powi(2)).sqrt();
        assert!(gap <= 3.0 * joint, "gap {gap} vs joint {joint}");
    }

    #[test]
    fn empty_probability_identity_across_loads() {
        for (seed, lambda) in [(31u64, 0.3), (32, 0.6), (33, 0.9)] {
            let model = mm1(lambda);
            let mut cfg = SimConfig::new(100_000.0);
            cfg.seed = seed;
            let est = simulate_workload(&model, &cfg).unwrap();
            let agg = est.empty_aggregate(model.capacities());
            let c_inf = model.mean_capacity();
            let want = (1.0 - model.traffic_intensity()) * c_inf;
            assert!(
                (agg.value - want).abs() <= 3.0 * agg.half_width.max(1e-4),
                "load {lambda}: {agg:?} vs {want}"
            );
        }
    }

    #[test]
    fn simulate_rejects_bad_configs() {
        let model = mm1(1.5);
        let cfg = SimConfig::new(100.0);
        assert!(matches!(
            simulate_workload(&model, &cfg),
            Err(SimError::Unstable { .. })
        ));
        let model = mm1(0.5);
        let mut cfg = SimConfig::new(100.0);
        cfg.batches = 5;
        assert!(matches!(
            simulate_workload(&model, &cfg),
            Err(SimError::InvalidParameter { what: "batches", .. })
        ));
        let mut cfg = SimConfig::new(100.0);
        cfg.warmup = 100.0;
        assert!(simulate_workload(&model, &cfg).is_err());
        let mut cfg = SimConfig::new(100.0);
        cfg.initial_state = 3;
        assert!(simulate_workload(&model, &cfg).is_err());
    }

    #[test]
    fn cross_check_simulated_p0_feeds_mean_workload() {
        // Two-state modulated model: formula with simulated p0 agrees with
        // the simulated mean workload.
        let env = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let model = ModelSpec::new(
            env,
            vec![0.9, 1.2],
            vec![1.0, 2.0],
            vec![
                ServiceDistribution::exponential(2.0).unwrap(),
                ServiceDistribution::exponential(2.0).unwrap(),
            ],
        )
        .unwrap();
        let mut cfg = SimConfig::new(200_000.0);
        cfg.seed = 37;
        let est = simulate_workload(&model, &cfg).unwrap();
        let p0: Vec<f64> = est.p0.iter().map(|s| s.mean()).collect();
        let formula = model.mean_workload(&p0, 1e-2).unwrap();
        let sim = est.ew.estimate();
        assert!(
            (formula - sim.value).abs() <= 3.0 * sim.half_width,
            "formula {formula} vs simulated {sim:?}"
        );
    }
}

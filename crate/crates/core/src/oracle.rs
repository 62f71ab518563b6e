//! Exact stationary quantities for small DPS instances by brute force: the
//! CTMC on states (m_1..m_K, d) is truncated to total population
//! `sum_k m_k <= m_max` (arrivals that would cross the boundary are
//! blocked) and its global-balance equations are solved densely.
//!
//! This is a test oracle for the analytic identities and the simulator; it
//! is deliberately not wired into the CLI. Truncation error is controlled
//! by choosing `m_max` so the geometric tail bound `rho^m` is far below the
//! tolerance being tested; `tail_mass()` reports the realized boundary mass.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::dps::{DpsEstimates, DpsSpec};
use crate::stats::Estimate;
use crate::workload::ModelError;

/// Smallest truncation level with `rho^m <= eps` under a geometric tail
/// bound (plus a small safety margin).
pub fn truncation_for(rho: f64, eps: f64) -> usize {
    assert!(rho > 0.0 && rho < 1.0, "need a stable load in (0,1)");
    assert!(eps > 0.0 && eps < 1.0);
    (eps.ln() / rho.ln()).ceil() as usize + 5
}

/// Stationary distribution of the truncated DPS chain.
#[derive(Debug)]
pub struct TruncatedDpsSolution {
    spec: DpsSpec,
    /// Class populations per enumerated state.
    populations: Vec<Vec<u32>>,
    /// Environment state per enumerated state.
    env_states: Vec<usize>,
    probs: Vec<f64>,
    m_max: usize,
}

/// Enumerates all K-vectors with total at most `m_max`, lexicographically.
fn enumerate_populations(k: usize, m_max: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; k];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, idx: usize, budget: u32) {
        if idx == cur.len() - 1 {
            for v in 0..=budget {
                cur[idx] = v;
                out.push(cur.clone());
            }
            cur[idx] = 0;
            return;
        }
        for v in 0..=budget {
            cur[idx] = v;
            rec(out, cur, idx + 1, budget - v);
        }
        cur[idx] = 0;
    }
    rec(&mut out, &mut cur, 0, m_max as u32);
    out
}

/// Solves the truncated global-balance system for `spec`. Instances are
/// expected to be desk-scale (the dense solve is cubic in the state count);
/// the state count is `C(m_max + K, K) * D`.
pub fn solve_truncated_dps(
    spec: &DpsSpec,
    m_max: usize,
) -> Result<TruncatedDpsSolution, ModelError> {
    let kn = spec.n_classes();
    let dn = spec.dim();
    let populations = enumerate_populations(kn, m_max);
    let n_pop = populations.len();
    let n = n_pop * dn;
    assert!(n <= 20_000, "truncated state space too large for a dense solve: {n}");

    let mut index: HashMap<&[u32], usize> = HashMap::with_capacity(n_pop);
    for (i, m) in populations.iter().enumerate() {
        index.insert(m.as_slice(), i);
    }
    let state_id = |pop_idx: usize, d: usize| pop_idx * dn + d;

    // Balance matrix B with B[s'][s] += rate(s -> s'), B[s][s] -= exit(s);
    // stationary probabilities solve B p = 0 with sum p = 1.
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut scratch = vec![0u32; kn];
    for (pi_idx, pop) in populations.iter().enumerate() {
        let total: u32 = pop.iter().sum();
        let weighted: f64 =
            (0..kn).map(|k| spec.g()[k] * pop[k] as f64).sum();
        for d in 0..dn {
            let s = state_id(pi_idx, d);
            // Class arrivals (blocked at the truncation boundary).
            if (total as usize) < m_max {
                for k in 0..kn {
                    let rate = spec.class_arrival_rate(k, d);
                    if rate <= 0.0 {
                        continue;
                    }
                    scratch.copy_from_slice(pop);
                    scratch[k] += 1;
                    let t = state_id(index[scratch.as_slice()], d);
                    b[(t, s)] += rate;
                    b[(s, s)] -= rate;
                }
            }
            // Class departures at the DPS shares.
            if total > 0 {
                for k in 0..kn {
                    if pop[k] == 0 {
                        continue;
                    }
                    let share = spec.g()[k] * pop[k] as f64 / weighted;
                    let rate =
                        spec.mu()[k] * spec.model().capacities()[d] * share;
                    scratch.copy_from_slice(pop);
                    scratch[k] -= 1;
                    let t = state_id(index[scratch.as_slice()], d);
                    b[(t, s)] += rate;
                    b[(s, s)] -= rate;
                }
            }
            // Environment jumps.
            for l in 0..dn {
                if l == d {
                    continue;
                }
                let rate = spec.model().env().rate(d, l);
                if rate > 0.0 {
                    let t = state_id(pi_idx, l);
                    b[(t, s)] += rate;
                    b[(s, s)] -= rate;
                }
            }
        }
    }

    // Replace the first balance equation with the normalization row.
    for col in 0..n {
        b[(0, col)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[0] = 1.0;
    let lu = b.lu();
    let solution = lu.solve(&rhs).ok_or(ModelError::BadParameter {
        what: "truncated balance system",
        requirement: "nonsingular",
        value: n as f64,
    })?;
    let mut probs: Vec<f64> = solution.iter().copied().collect();
    // Tiny negative entries are LU noise on a probability vector.
    let mut total = 0.0;
    for p in &mut probs {
        if *p < 0.0 {
            assert!(*p > -1e-9, "balance solution has significant negative mass: {p}");
            *p = 0.0;
        }
        total += *p;
    }
    for p in &mut probs {
        *p /= total;
    }

    let mut env_states = vec![0usize; n];
    for pi_idx in 0..n_pop {
        for d in 0..dn {
            env_states[state_id(pi_idx, d)] = d;
        }
    }
    // populations indexed per state id:
    let mut pops_by_state = vec![Vec::new(); n];
    for (pi_idx, pop) in populations.iter().enumerate() {
        for d in 0..dn {
            pops_by_state[state_id(pi_idx, d)] = pop.clone();
        }
    }

    Ok(TruncatedDpsSolution {
        spec: spec.clone(),
        populations: pops_by_state,
        env_states,
        probs,
        m_max,
    })
}

impl TruncatedDpsSolution {
    /// P(M = 0, Z = d).
    pub fn p0(&self, d: usize) -> f64 {
        self.iter()
            .filter(|(m, dd, _)| *dd == d && m.iter().all(|&x| x == 0))
            .map(|(_, _, p)| p)
            .sum()
    }

    /// E[M_k 1{Z = d}].
    pub fn mean_m(&self, k: usize, d: usize) -> f64 {
        self.iter()
            .filter(|(_, dd, _)| *dd == d)
            .map(|(m, _, p)| m[k] as f64 * p)
            .sum()
    }

    /// E[g_k M_k / (sum_j g_j M_j) 1{M != 0, Z = d}].
    pub fn share(&self, k: usize, d: usize) -> f64 {
        let g = self.spec.g();
        self.iter()
            .filter(|(m, dd, _)| *dd == d && m.iter().any(|&x| x > 0))
            .map(|(m, _, p)| {
                let weighted: f64 =
                    (0..g.len()).map(|j| g[j] * m[j] as f64).sum();
                g[k] * m[k] as f64 / weighted * p
            })
            .sum()
    }

    /// Expected workload `sum_k E[M_k] / mu_k` (remaining requirements are
    /// memoryless).
    pub fn workload_mean(&self) -> f64 {
        (0..self.spec.n_classes())
            .map(|k| {
                (0..self.spec.dim()).map(|d| self.mean_m(k, d)).sum::<f64>()
                    / self.spec.mu()[k]
            })
            .sum()
    }

    /// Environment marginal P(Z = d); equals the stationary distribution up
    /// to truncation error.
    pub fn env_marginal(&self, d: usize) -> f64 {
        self.iter().filter(|(_, dd, _)| *dd == d).map(|(_, _, p)| p).sum()
    }

    /// Probability mass on the truncation boundary `sum_k m_k = m_max` — a
    /// proxy for the truncation error.
    pub fn tail_mass(&self) -> f64 {
        self.iter()
            .filter(|(m, _, _)| m.iter().sum::<u32>() as usize == self.m_max)
            .map(|(_, _, p)| p)
            .sum()
    }

    /// Exact estimates (zero half-width) in the shape the residual
    /// functionals consume.
    pub fn to_estimates(&self) -> DpsEstimates {
        let kn = self.spec.n_classes();
        let dn = self.spec.dim();
        let share = (0..kn)
            .map(|k| (0..dn).map(|d| Estimate::exact(self.share(k, d))).collect())
            .collect();
        let mean_m = (0..kn)
            .map(|k| (0..dn).map(|d| Estimate::exact(self.mean_m(k, d))).collect())
            .collect();
        DpsEstimates { share: Some(share), mean_m: Some(mean_m) }
    }

    fn iter(&self) -> impl Iterator<Item = (&[u32], usize, f64)> + '_ {
        self.populations
            .iter()
            .zip(&self.env_states)
            .zip(&self.probs)
            .map(|((m, &d), &p)| (m.as_slice(), d, p))
    }
}

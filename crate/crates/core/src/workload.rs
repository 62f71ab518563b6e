//! Closed-form workload quantities for the modulated queue: traffic
//! intensity, the exact stationary mean workload, and the heavy-traffic
//! exponential limit.
//!
//! Workload is measured in units of service requirement: it drains at rate
//! `c_d` while the environment sits in state `d`. The exact mean-workload
//! formula needs the per-state empty probabilities `p0_d = P(W=0, Z=d)`,
//! which the model does not determine in closed form; callers supply them
//! (typically simulation estimates) and only the aggregate identity
//! `sum_d p0_d c_d / c_inf = 1 - rho_inf` is checkable, so it is validated
//! against a caller tolerance.

use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvError, GeneratorMatrix, StationaryDistribution};
use crate::service::{ServiceDistribution, ServiceError};

/// Default tolerance on the aggregate empty-probability identity when `p0`
/// comes from simulation.
pub const DEFAULT_P0_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{what}: expected length {want}, got {got}")]
    Dimension { what: &'static str, want: usize, got: usize },
    #[error("{what} must be {requirement}, got {value}")]
    BadParameter { what: &'static str, requirement: &'static str, value: f64 },
    #[error("model is unstable: traffic intensity {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("empty probabilities violate sum p0_d c_d/c_inf = 1 - rho_inf by {gap:e} (tolerance {tol:e})")]
    EmptyProbInconsistent { gap: f64, tol: f64 },
    #[error("spec is not at criticality: class loads sum to {sum}, expected 1 within {tol:e}")]
    NotCritical { sum: f64, tol: f64 },
    #[error("estimates missing {what}")]
    MissingEstimate { what: &'static str },
    #[error("class {class} has zero arrival rate in every environment state")]
    ClassNeverArrives { class: usize },
}

/// The modulated single-server queue: per-state Poisson arrival rates,
/// service-requirement distributions, and capacities, over a validated
/// environment chain.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    env: GeneratorMatrix,
    pi: StationaryDistribution,
    lambda: Vec<f64>,
    c: Vec<f64>,
    service: Vec<ServiceDistribution>,
}

impl ModelSpec {
    /// Validates rates and capacities and precomputes the stationary
    /// distribution. `lambda` may be identically zero (the empty queue, used
    /// by degenerate boundary cases); individual entries must be
    /// nonnegative and finite, capacities strictly positive.
    pub fn new(
        env: GeneratorMatrix,
        lambda: Vec<f64>,
        c: Vec<f64>,
        service: Vec<ServiceDistribution>,
    ) -> Result<Self, ModelError> {
        let d = env.dim();
        if lambda.len() != d {
            return Err(ModelError::Dimension { what: "lambda", want: d, got: lambda.len() });
        }
        if c.len() != d {
            return Err(ModelError::Dimension { what: "c", want: d, got: c.len() });
        }
        if service.len() != d {
            return Err(ModelError::Dimension { what: "service", want: d, got: service.len() });
        }
        for &l in &lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ModelError::BadParameter {
                    what: "arrival rate",
                    requirement: "nonnegative and finite",
                    value: l,
                });
            }
        }
        for &cap in &c {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(ModelError::BadParameter {
                    what: "capacity",
                    requirement: "positive and finite",
                    value: cap,
                });
            }
        }
        let pi = env.stationary_distribution()?;
        Ok(ModelSpec { env, pi, lambda, c, service })
    }

    pub fn dim(&self) -> usize {
        self.env.dim()
    }

    pub fn env(&self) -> &GeneratorMatrix {
        &self.env
    }

    pub fn pi(&self) -> &StationaryDistribution {
        &self.pi
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn capacities(&self) -> &[f64] {
        &self.c
    }

    pub fn service(&self, d: usize) -> &ServiceDistribution {
        &self.service[d]
    }

    pub fn services(&self) -> &[ServiceDistribution] {
        &self.service
    }

    /// Environment-averaged capacity `c_inf = sum_d pi_d c_d`.
    pub fn mean_capacity(&self) -> f64 {
        self.pi.average(&self.c)
    }

    /// Traffic intensity `rho_inf = sum_d pi_d lambda_d h_{d1} / c_inf`.
    pub fn traffic_intensity(&self) -> f64 {
        let offered: f64 = (0..self.dim())
            .map(|d| self.pi.get(d) * self.lambda[d] * self.service[d].moments().h1)
            .sum();
        offered / self.mean_capacity()
    }

    /// Rescales arrivals to `lambda_d^(N) = (lambda_d / rho_inf)(1 - 1/N)`,
    /// so the result has traffic intensity exactly `1 - 1/N`. `N = 1` is the
    /// empty-system boundary.
    pub fn ht_parametrize(&self, n: u64) -> Result<ModelSpec, ModelError> {
        assert!(n >= 1, "N must be at least 1");
        let rho = self.traffic_intensity();
        if rho <= 0.0 {
            return Err(ModelError::BadParameter {
                what: "traffic intensity",
                requirement: "positive for heavy-traffic parametrization",
                value: rho,
            });
        }
        let factor = (1.0 - 1.0 / n as f64) / rho;
        let lambda = self.lambda.iter().map(|l| l * factor).collect();
        ModelSpec::new(self.env.clone(), lambda, self.c.clone(), self.service.clone())
    }

    /// Right-hand side of the offset system:
    /// `b_d = c_d - lambda_d h_{d1} - c_inf (1 - rho_inf)`. Orthogonal to
    /// `pi` by construction.
    pub fn qa_rhs(&self) -> Vec<f64> {
        let c_inf = self.mean_capacity();
        let slack = c_inf * (1.0 - self.traffic_intensity());
        (0..self.dim())
            .map(|d| self.c[d] - self.lambda[d] * self.service[d].moments().h1 - slack)
            .collect()
    }

    /// The offset vector `a` solving `[Q a]_d = qa_rhs_d`, anchored at
    /// `a[0] = 0`.
    pub fn offset_vector(&self) -> Result<Vec<f64>, ModelError> {
        Ok(self.env.solve_offset_vector(&self.pi, &self.qa_rhs())?)
    }

    /// Exact stationary mean workload
    /// `E W = sum_d [pi_d lambda_d h_{d2}/2 + a_d pi_d (lambda_d h_{d1} - c_d)
    ///       + p0_d c_d a_d] / (c_inf (1 - rho_inf))`.
    ///
    /// `p0` are the per-state empty probabilities `P(W=0, Z=d)`; the
    /// aggregate identity `sum_d p0_d c_d / c_inf = 1 - rho_inf` must hold
    /// within `p0_tol`.
    pub fn mean_workload(&self, p0: &[f64], p0_tol: f64) -> Result<f64, ModelError> {
        let d = self.dim();
        if p0.len() != d {
            return Err(ModelError::Dimension { what: "p0", want: d, got: p0.len() });
        }
        let rho = self.traffic_intensity();
        if rho >= 1.0 {
            return Err(ModelError::Unstable { rho });
        }
        for (i, &p) in p0.iter().enumerate() {
            // The hard bound is [0, pi_d]; simulation estimates may poke
            // above pi_d by noise, so the upper check shares p0_tol.
            if !(p >= 0.0 && p <= self.pi.get(i) + p0_tol) {
                return Err(ModelError::BadParameter {
                    what: "empty probability",
                    requirement: "within [0, pi_d]",
                    value: p,
                });
            }
        }
        let c_inf = self.mean_capacity();
        let aggregate: f64 =
            (0..d).map(|i| p0[i] * self.c[i]).sum::<f64>() / c_inf;
        let gap = (aggregate - (1.0 - rho)).abs();
        if gap > p0_tol {
            return Err(ModelError::EmptyProbInconsistent { gap, tol: p0_tol });
        }

        let a = self.offset_vector()?;
        let mut sum = 0.0;
        for i in 0..d {
            let m = self.service[i].moments();
            let pi_d = self.pi.get(i);
            sum += pi_d * self.lambda[i] * m.h2 / 2.0
                + a[i] * pi_d * (self.lambda[i] * m.h1 - self.c[i])
                + p0[i] * self.c[i] * a[i];
        }
        Ok(sum / (c_inf * (1.0 - rho)))
    }
}

/// A model pinned at criticality: arrivals `lambda_hat_d = lambda_d /
/// rho_inf`, so the traffic intensity is exactly 1. This is the `N -> inf`
/// endpoint of [`ModelSpec::ht_parametrize`] and the input to the
/// heavy-traffic limits.
#[derive(Debug, Clone)]
pub struct HtModelSpec {
    base: ModelSpec,
}

impl HtModelSpec {
    pub fn from_model(m: &ModelSpec) -> Result<Self, ModelError> {
        let rho = m.traffic_intensity();
        if rho <= 0.0 {
            return Err(ModelError::BadParameter {
                what: "traffic intensity",
                requirement: "positive for heavy-traffic parametrization",
                value: rho,
            });
        }
        let lambda = m.lambda.iter().map(|l| l / rho).collect();
        let base = ModelSpec::new(m.env.clone(), lambda, m.c.clone(), m.service.clone())?;
        Ok(HtModelSpec { base })
    }

    /// The critical model itself (traffic intensity 1).
    pub fn base(&self) -> &ModelSpec {
        &self.base
    }

    /// Limit of `E W^(N) / N`:
    /// `(1/c_inf) sum_d pi_d [lambda_hat_d h_{d2}/2 + a_d (lambda_hat_d
    /// h_{d1} - c_d)]` with `a` solving `[Q a]_d = c_d - lambda_hat_d
    /// h_{d1}`.
    pub fn mean_workload(&self) -> Result<f64, ModelError> {
        let m = &self.base;
        let d = m.dim();
        let b: Vec<f64> = (0..d)
            .map(|i| m.c[i] - m.lambda[i] * m.service[i].moments().h1)
            .collect();
        let a = m.env.solve_offset_vector(&m.pi, &b)?;
        let mut sum = 0.0;
        for i in 0..d {
            let mm = m.service[i].moments();
            sum += m.pi.get(i)
                * (m.lambda[i] * mm.h2 / 2.0 + a[i] * (m.lambda[i] * mm.h1 - m.c[i]));
        }
        Ok(sum / m.mean_capacity())
    }

    /// The scaled workload `W^(N)/N` converges in distribution to an
    /// exponential with the heavy-traffic mean.
    pub fn workload_law(&self) -> Result<ExponentialLaw, ModelError> {
        Ok(ExponentialLaw::new(self.mean_workload()?))
    }
}

/// An exponential distribution, reported as the limiting law of scaled
/// workloads and queue lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialLaw {
    pub mean: f64,
}

impl ExponentialLaw {
    pub fn new(mean: f64) -> Self {
        assert!(mean > 0.0, "exponential law needs a positive mean, got {mean}");
        ExponentialLaw { mean }
    }

    pub fn variance(&self) -> f64 {
        self.mean * self.mean
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            1.0 - (-x / self.mean).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn single_state(
        lambda: f64,
        service: ServiceDistribution,
        c: f64,
    ) -> ModelSpec {
        let env = GeneratorMatrix::new(&[vec![0.0]]).unwrap();
        ModelSpec::new(env, vec![lambda], vec![c], vec![service]).unwrap()
    }

    fn exp_service(rate: f64) -> ServiceDistribution {
        ServiceDistribution::exponential(rate).unwrap()
    }

    /// Two-state model with mean service time 0.5 in both states:
    /// rho_inf = (2/3*0.9 + 1/3*1.2)*0.5 / (4/3) = 0.375.
    fn two_state_exp() -> ModelSpec {
        let env = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        ModelSpec::new(
            env,
            vec![0.9, 1.2],
            vec![1.0, 2.0],
            vec![exp_service(2.0), exp_service(2.0)],
        )
        .unwrap()
    }

    #[test]
    fn traffic_intensity_single_state() {
        let m = single_state(0.8, exp_service(1.0), 1.0);
        assert_abs_diff_eq!(m.traffic_intensity(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn traffic_intensity_two_state() {
        assert_abs_diff_eq!(two_state_exp().traffic_intensity(), 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(two_state_exp().mean_capacity(), 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn traffic_intensity_identical_states_collapses() {
        let env = GeneratorMatrix::new(&[vec![-3.0, 3.0], vec![3.0, -3.0]]).unwrap();
        let m = ModelSpec::new(
            env,
            vec![0.8, 0.8],
            vec![1.0, 1.0],
            vec![exp_service(1.0), exp_service(1.0)],
        )
        .unwrap();
        assert_abs_diff_eq!(
            m.traffic_intensity(),
            single_state(0.8, exp_service(1.0), 1.0).traffic_intensity(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn ht_parametrize_hits_target_intensity() {
        let m = single_state(0.5, exp_service(1.0), 1.0);
        let m10 = m.ht_parametrize(10).unwrap();
        assert_abs_diff_eq!(m10.lambda()[0], 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(m10.traffic_intensity(), 0.9, epsilon = 1e-12);

        for n in [2u64, 7, 100] {
            let mn = two_state_exp().ht_parametrize(n).unwrap();
            assert_abs_diff_eq!(
                mn.traffic_intensity(),
                1.0 - 1.0 / n as f64,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ht_parametrize_n1_empties_the_system() {
        let m = two_state_exp().ht_parametrize(1).unwrap();
        assert_eq!(m.lambda(), &[0.0, 0.0]);
        assert_eq!(m.traffic_intensity(), 0.0);
    }

    #[test]
    fn ht_model_is_critical_and_idempotent() {
        let hm = HtModelSpec::from_model(&two_state_exp()).unwrap();
        assert_abs_diff_eq!(hm.base().traffic_intensity(), 1.0, epsilon = 1e-12);
        let again = HtModelSpec::from_model(hm.base()).unwrap();
        assert_abs_diff_eq!(again.base().traffic_intensity(), 1.0, epsilon = 1e-12);
        for d in 0..2 {
            assert_abs_diff_eq!(again.base().lambda()[d], hm.base().lambda()[d], epsilon = 1e-12);
        }
    }

    #[test]
    fn qa_rhs_vanishes_in_degenerate_cases() {
        let m = single_state(0.8, exp_service(1.0), 1.0);
        assert_abs_diff_eq!(m.qa_rhs()[0], 0.0, epsilon = 1e-15);

        let env = GeneratorMatrix::new(&[vec![-3.0, 3.0], vec![3.0, -3.0]]).unwrap();
        let ident = ModelSpec::new(
            env,
            vec![0.8, 0.8],
            vec![1.0, 1.0],
            vec![exp_service(1.0), exp_service(1.0)],
        )
        .unwrap();
        for b in ident.qa_rhs() {
            assert_abs_diff_eq!(b, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn qa_rhs_is_orthogonal_to_pi() {
        let m = two_state_exp();
        let b = m.qa_rhs();
        assert!(m.pi().average(&b).abs() <= 1e-12);
    }

    #[test]
    fn mean_workload_reduces_to_pollaczek_khinchine() {
        // D=1 forces a=0, so E W = lambda h2 / (2 c (1 - rho)).
        let cases = [
            (0.8, exp_service(1.0), 4.0),
            (0.8, ServiceDistribution::deterministic(1.0).unwrap(), 2.0),
        ];
        for (lambda, service, want) in cases {
            let m = single_state(lambda, service, 1.0);
            let rho = m.traffic_intensity();
            let ew = m.mean_workload(&[1.0 - rho], 1e-12).unwrap();
            assert_abs_diff_eq!(ew, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_workload_rejects_unstable_model() {
        let m = single_state(1.2, exp_service(1.0), 1.0);
        assert!(matches!(m.mean_workload(&[0.0], 1e-3), Err(ModelError::Unstable { .. })));
    }

    #[test]
    fn mean_workload_rejects_inconsistent_p0() {
        let m = single_state(0.8, exp_service(1.0), 1.0);
        let err = m.mean_workload(&[0.15], 1e-3).unwrap_err();
        assert!(matches!(err, ModelError::EmptyProbInconsistent { .. }));
        // Out-of-range entries are rejected before the aggregate identity.
        assert!(m.mean_workload(&[-0.1], 1e-3).is_err());
    }

    #[test]
    fn mean_workload_accepts_within_tolerance() {
        let m = single_state(0.8, exp_service(1.0), 1.0);
        let ew = m.mean_workload(&[0.2004], 1e-2).unwrap();
        assert_abs_diff_eq!(ew, 4.0, epsilon = 0.05);
    }

    /// The offset term `sum_d a_d [pi_d(lambda_d h1 - c_d) + p0_d c_d]` is
    /// invariant under `a -> a + r 1` when p0 satisfies the aggregate
    /// identity; shifting must not move the bracketed sum.
    #[test]
    fn workload_bracket_is_shift_invariant() {
        let m = two_state_exp();
        let rho = m.traffic_intensity();
        let p0: Vec<f64> = (0..2).map(|d| m.pi().get(d) * (1.0 - rho)).collect();
        let a = m.offset_vector().unwrap();
        let bracket = |a: &[f64]| -> f64 {
            (0..2)
                .map(|d| {
                    let h1 = m.service(d).moments().h1;
                    a[d] * (m.pi().get(d) * (m.lambda()[d] * h1 - m.capacities()[d])
                        + p0[d] * m.capacities()[d])
                })
                .sum()
        };
        let base = bracket(&a);
        for r in [1.0, -3.0] {
            let shifted: Vec<f64> = a.iter().map(|x| x + r).collect();
            assert_abs_diff_eq!(bracket(&shifted), base, epsilon = 1e-9);
        }
    }

    #[test]
    fn ht_mean_workload_single_state_values() {
        let exp = single_state(0.3, exp_service(1.0), 1.0);
        let hm = HtModelSpec::from_model(&exp).unwrap();
        assert_abs_diff_eq!(hm.mean_workload().unwrap(), 1.0, epsilon = 1e-12);

        let det = single_state(0.9, ServiceDistribution::deterministic(1.0).unwrap(), 1.0);
        let hm = HtModelSpec::from_model(&det).unwrap();
        assert_abs_diff_eq!(hm.mean_workload().unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn ht_mean_workload_identical_states_collapses() {
        let env = GeneratorMatrix::new(&[vec![-2.0, 2.0], vec![2.0, -2.0]]).unwrap();
        let m = ModelSpec::new(
            env,
            vec![0.4, 0.4],
            vec![1.0, 1.0],
            vec![exp_service(1.0), exp_service(1.0)],
        )
        .unwrap();
        let hm = HtModelSpec::from_model(&m).unwrap();
        assert_abs_diff_eq!(hm.mean_workload().unwrap(), 1.0, epsilon = 1e-12);
    }

    /// Holding h1 (hence the offset vector) fixed, the heavy-traffic mean is
    /// affine in the second moments with slope pi_d lambda_hat_d / (2 c_inf).
    #[test]
    fn ht_mean_workload_linear_in_second_moment() {
        let env = GeneratorMatrix::new(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        // Both mixtures have h1 = 0.75; h2 differs: 1.25 vs 13/6.
        let lo = ServiceDistribution::hyper_exponential(vec![0.5, 0.5], vec![1.0, 2.0]).unwrap();
        let hi = ServiceDistribution::hyper_exponential(vec![0.25, 0.75], vec![0.5, 3.0]).unwrap();
        assert_abs_diff_eq!(lo.moments().h1, hi.moments().h1, epsilon = 1e-15);

        let build = |s: &ServiceDistribution| {
            let m = ModelSpec::new(
                env.clone(),
                vec![0.9, 1.2],
                vec![1.0, 2.0],
                vec![s.clone(), s.clone()],
            )
            .unwrap();
            HtModelSpec::from_model(&m).unwrap()
        };
        let a = build(&lo);
        let b = build(&hi);
        let delta_h2 = hi.moments().h2 - lo.moments().h2;
        let predicted: f64 = (0..2)
            .map(|d| {
                a.base().pi().get(d) * a.base().lambda()[d] * delta_h2
                    / (2.0 * a.base().mean_capacity())
            })
            .sum();
        let got = b.mean_workload().unwrap() - a.mean_workload().unwrap();
        assert_abs_diff_eq!(got, predicted, epsilon = 1e-12);
    }

    #[test]
    fn workload_law_is_exponential_with_ht_mean() {
        let m = single_state(0.3, exp_service(1.0), 1.0);
        let hm = HtModelSpec::from_model(&m).unwrap();
        let law = hm.workload_law().unwrap();
        assert_abs_diff_eq!(law.mean, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(law.variance(), law.mean * law.mean, epsilon = 1e-15);
        assert_abs_diff_eq!(law.cdf(law.mean), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn model_spec_validates_shapes_and_signs() {
        let env = GeneratorMatrix::new(&[vec![0.0]]).unwrap();
        assert!(matches!(
            ModelSpec::new(env.clone(), vec![0.5, 0.5], vec![1.0], vec![exp_service(1.0)]),
            Err(ModelError::Dimension { what: "lambda", .. })
        ));
        assert!(matches!(
            ModelSpec::new(env.clone(), vec![-0.5], vec![1.0], vec![exp_service(1.0)]),
            Err(ModelError::BadParameter { what: "arrival rate", .. })
        ));
        assert!(matches!(
            ModelSpec::new(env, vec![0.5], vec![0.0], vec![exp_service(1.0)]),
            Err(ModelError::BadParameter { what: "capacity", .. })
        ));
    }
}

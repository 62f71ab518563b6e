//! Multi-class discriminatory processor sharing (DPS) on top of the
//! modulated queue: class loads, the heavy-traffic state-space collapse, and
//! the stationary conservation identities as residual functionals.
//!
//! A class-k customer has an exponential requirement with rate `mu_k` and
//! weight `g_k`; a customer arriving in state `d` is class k with
//! probability `alpha[k][d]`. Completion rates factor as `mu_k * c_d`
//! (requirements are fixed in work units and drained at the modulated
//! capacity), which is what makes the workload results applicable.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::env::GeneratorMatrix;
use crate::service::ServiceDistribution;
use crate::stats::Estimate;
use crate::workload::{ExponentialLaw, HtModelSpec, ModelError, ModelSpec};

/// Tolerance for detecting that a spec is parametrized at criticality.
pub const CRITICALITY_TOL: f64 = 1e-9;

/// Multi-class DPS specification. The embedded [`ModelSpec`] carries the
/// per-state hyperexponential mixture of the class requirements, so every
/// single-class workload quantity is available on `model()`.
#[derive(Debug, Clone)]
pub struct DpsSpec {
    model: ModelSpec,
    alpha: Vec<Vec<f64>>,
    mu: Vec<f64>,
    g: Vec<f64>,
}

/// Per-class load decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct ClassLoads {
    /// Environment-averaged class arrival rates `sum_d pi_d alpha[k][d] lambda_d`.
    pub lambda_inf: Vec<f64>,
    /// Class loads `lambda_inf[k] / (mu_k c_inf)`; they sum to the traffic
    /// intensity of the embedded model.
    pub rho_inf: Vec<f64>,
    /// Per-state intensities `sum_k lambda_{k,d} / mu_k / c_d`.
    pub rho_state: Vec<f64>,
}

/// The heavy-traffic limit of the scaled queue-length vector: a fixed
/// direction times a single exponential factor X, independent of the
/// environment.
#[derive(Debug, Clone)]
pub struct CollapsePrediction {
    /// `rho_inf[k] / g_k`, the deterministic collapse direction.
    pub direction: Vec<f64>,
    /// Law of the common factor X.
    pub x_law: ExponentialLaw,
    /// Stationary environment weights, so that
    /// `E[M_k 1{Z=d}] / N -> pi_d * direction[k] * E X`.
    pub per_state_weights: Vec<f64>,
}

impl CollapsePrediction {
    /// Predicted scaled class mean `lim E[M_k^(N)] / N`.
    pub fn class_mean(&self, k: usize) -> f64 {
        self.direction[k] * self.x_law.mean
    }

    pub fn class_means(&self) -> Vec<f64> {
        (0..self.direction.len()).map(|k| self.class_mean(k)).collect()
    }

    /// Predicted scaled joint mean `lim E[M_k^(N) 1{Z=d}] / N`.
    pub fn per_state_mean(&self, k: usize, d: usize) -> f64 {
        self.per_state_weights[d] * self.class_mean(k)
    }
}

impl Serialize for CollapsePrediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let d = self.per_state_weights.len();
        let k = self.direction.len();
        let per_state: Vec<Vec<f64>> =
            (0..d).map(|i| (0..k).map(|j| self.per_state_mean(j, i)).collect()).collect();
        let mut s = serializer.serialize_struct("CollapsePrediction", 3)?;
        s.serialize_field("direction", &self.direction)?;
        s.serialize_field("ex_mean", &self.x_law.mean)?;
        s.serialize_field("per_state", &per_state)?;
        s.end()
    }
}

/// A conservation-identity residual with the half-width propagated from the
/// estimates it consumed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residual {
    pub value: f64,
    pub half_width: f64,
}

impl Residual {
    /// Whether the residual is within `k` half-widths of zero. Exact inputs
    /// (zero half-width) must meet `slack` instead.
    pub fn vanishes(&self, k: f64, slack: f64) -> bool {
        self.value.abs() <= (k * self.half_width).max(slack)
    }
}

/// Stationary queue-length expectations consumed by the residual
/// functionals, typically produced by the simulator or (exactly) by the
/// truncated global-balance oracle. Both matrices are class-major `K x D`.
#[derive(Debug, Clone, Default)]
pub struct DpsEstimates {
    /// `E[g_k M_k / (sum_j g_j M_j) 1{M != 0, Z=d}]` — the stationary
    /// capacity share of class k jointly with the environment state.
    pub share: Option<Vec<Vec<Estimate>>>,
    /// `E[M_k 1{Z=d}]`.
    pub mean_m: Option<Vec<Vec<Estimate>>>,
}

impl DpsSpec {
    /// Builds and validates a DPS spec. `alpha` is class-major (`alpha[k][d]`)
    /// with columns summing to 1; every class must see arrivals in some state
    /// unless the system is entirely empty (`lambda = 0`, a degenerate
    /// boundary the simulator contract admits).
    pub fn new(
        env: GeneratorMatrix,
        lambda: Vec<f64>,
        c: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        mu: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let d = env.dim();
        let k = alpha.len();
        if k == 0 {
            return Err(ModelError::Dimension { what: "alpha", want: 1, got: 0 });
        }
        for row in &alpha {
            if row.len() != d {
                return Err(ModelError::Dimension { what: "alpha row", want: d, got: row.len() });
            }
        }
        if mu.len() != k {
            return Err(ModelError::Dimension { what: "mu", want: k, got: mu.len() });
        }
        if g.len() != k {
            return Err(ModelError::Dimension { what: "g", want: k, got: g.len() });
        }
        for &rate in &mu {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(ModelError::BadParameter {
                    what: "class service rate",
                    requirement: "positive and finite",
                    value: rate,
                });
            }
        }
        for &w in &g {
            if !(w > 0.0 && w.is_finite()) {
                return Err(ModelError::BadParameter {
                    what: "DPS weight",
                    requirement: "positive and finite",
                    value: w,
                });
            }
        }
        // Per-state service mixture; validates the alpha columns.
        let services: Vec<ServiceDistribution> = (0..d)
            .map(|state| {
                let col: Vec<f64> = alpha.iter().map(|row| row[state]).collect();
                ServiceDistribution::mixture_from_classes(&col, &mu)
            })
            .collect::<Result<_, _>>()?;
        let model = ModelSpec::new(env, lambda, c, services)?;
        if model.lambda().iter().any(|&l| l > 0.0) {
            for (class, row) in alpha.iter().enumerate() {
                let seen = row
                    .iter()
                    .zip(model.lambda())
                    .any(|(&a, &l)| a * l > 0.0);
                if !seen {
                    return Err(ModelError::ClassNeverArrives { class });
                }
            }
        }
        Ok(DpsSpec { model, alpha, mu, g })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn n_classes(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// Class-k arrival rate in state d, `alpha[k][d] * lambda_d`.
    pub fn class_arrival_rate(&self, k: usize, d: usize) -> f64 {
        self.alpha[k][d] * self.model.lambda()[d]
    }

    /// Rebuilds the spec with each `lambda_d` multiplied by `factor`.
    fn scaled(&self, factor: f64) -> Result<DpsSpec, ModelError> {
        let lambda = self.model.lambda().iter().map(|l| l * factor).collect();
        DpsSpec::new(
            self.model.env().clone(),
            lambda,
            self.model.capacities().to_vec(),
            self.alpha.clone(),
            self.mu.clone(),
            self.g.clone(),
        )
    }

    /// Per-class load decomposition; with `ht` the rates are first pushed to
    /// criticality (`lambda / rho_inf`), so the loads sum to 1.
    pub fn class_loads(&self, ht: bool) -> Result<ClassLoads, ModelError> {
        let spec = if ht { self.ht()? } else { self.clone() };
        let m = &spec.model;
        let kn = spec.n_classes();
        let c_inf = m.mean_capacity();
        let mut lambda_inf = vec![0.0; kn];
        for k in 0..kn {
            for d in 0..m.dim() {
                lambda_inf[k] += m.pi().get(d) * spec.class_arrival_rate(k, d);
            }
        }
        let rho_inf: Vec<f64> =
            (0..kn).map(|k| lambda_inf[k] / (spec.mu[k] * c_inf)).collect();
        let rho_state: Vec<f64> = (0..m.dim())
            .map(|d| {
                (0..kn)
                    .map(|k| spec.class_arrival_rate(k, d) / spec.mu[k])
                    .sum::<f64>()
                    / m.capacities()[d]
            })
            .collect();
        Ok(ClassLoads { lambda_inf, rho_inf, rho_state })
    }

    /// The spec at criticality: arrival rates divided by the traffic
    /// intensity.
    pub fn ht(&self) -> Result<DpsSpec, ModelError> {
        let rho = self.model.traffic_intensity();
        if rho <= 0.0 {
            return Err(ModelError::BadParameter {
                what: "traffic intensity",
                requirement: "positive for heavy-traffic parametrization",
                value: rho,
            });
        }
        self.scaled(1.0 / rho)
    }

    /// The spec at traffic intensity `1 - 1/N`.
    pub fn ht_parametrize(&self, n: u64) -> Result<DpsSpec, ModelError> {
        assert!(n >= 2, "N must be at least 2 for a nonempty DPS system");
        let rho = self.model.traffic_intensity();
        if rho <= 0.0 {
            return Err(ModelError::BadParameter {
                what: "traffic intensity",
                requirement: "positive for heavy-traffic parametrization",
                value: rho,
            });
        }
        self.scaled((1.0 - 1.0 / n as f64) / rho)
    }

    /// State-space collapse at criticality: the scaled queue-length vector
    /// converges to `(rho_inf[k]/g_k)_k * X` with X exponential,
    /// independently of the environment.
    ///
    /// The spec itself must already be parametrized at criticality
    /// (`sum_k rho_inf[k] = 1` on its own rates). The mean of X is
    ///
    /// `E X = [c_inf sum_k rho_k/mu_k - sum_d c_d pi_d a_d (1-rho_d)]
    ///        / (c_inf sum_k rho_k/(g_k mu_k))`,
    ///
    /// with `a` solving `[Q a]_d = c_d (1 - rho_d)`. The first numerator
    /// term carries the factor `c_inf` so that `E X * sum_k rho_k/(g_k mu_k)`
    /// reproduces the heavy-traffic mean workload of the mixture model for
    /// every capacity normalization, not only `c_inf = 1`; see the
    /// consistency-chain test below.
    pub fn collapse_prediction(&self) -> Result<CollapsePrediction, ModelError> {
        let loads = self.class_loads(false)?;
        let total: f64 = loads.rho_inf.iter().sum();
        if (total - 1.0).abs() > CRITICALITY_TOL {
            return Err(ModelError::NotCritical { sum: total, tol: CRITICALITY_TOL });
        }
        let m = &self.model;
        let c_inf = m.mean_capacity();
        let b: Vec<f64> = (0..m.dim())
            .map(|d| m.capacities()[d] * (1.0 - loads.rho_state[d]))
            .collect();
        let a = m.env().solve_offset_vector(m.pi(), &b)?;
        let s_plain: f64 =
            (0..self.n_classes()).map(|k| loads.rho_inf[k] / self.mu[k]).sum();
        let s_weighted: f64 = (0..self.n_classes())
            .map(|k| loads.rho_inf[k] / (self.g[k] * self.mu[k]))
            .sum();
        let offset_term: f64 = (0..m.dim())
            .map(|d| m.capacities()[d] * m.pi().get(d) * a[d] * (1.0 - loads.rho_state[d]))
            .sum();
        let ex = (c_inf * s_plain - offset_term) / (c_inf * s_weighted);
        let direction: Vec<f64> =
            (0..self.n_classes()).map(|k| loads.rho_inf[k] / self.g[k]).collect();
        Ok(CollapsePrediction {
            direction,
            x_law: ExponentialLaw::new(ex),
            per_state_weights: m.pi().as_slice().to_vec(),
        })
    }

    /// Chains the collapse back to the workload:
    /// `W_hat = sum_k M_hat_k / mu_k = X sum_k rho_k/(g_k mu_k)`, so the
    /// heavy-traffic workload is exponential with mean
    /// `E X * sum_k rho_inf[k]/(g_k mu_k)`. Agrees with
    /// [`HtModelSpec::mean_workload`] on the embedded mixture model.
    pub fn ht_workload_from_collapse(
        &self,
        pred: &CollapsePrediction,
    ) -> Result<ExponentialLaw, ModelError> {
        let loads = self.class_loads(false)?;
        let s_weighted: f64 = (0..self.n_classes())
            .map(|k| loads.rho_inf[k] / (self.g[k] * self.mu[k]))
            .sum();
        Ok(ExponentialLaw::new(pred.x_law.mean * s_weighted))
    }

    /// Rate conservation: in stationarity the class-k arrival rate equals
    /// the class-k departure rate,
    /// `lambda_inf[k] = sum_d mu_k c_d E[g_k M_k/(sum_j g_j M_j) 1{M!=0, Z=d}]`.
    /// Returns `lambda_inf[k] - (departure side)` per class with the
    /// propagated half-width.
    pub fn rate_conservation_residual(
        &self,
        est: &DpsEstimates,
    ) -> Result<Vec<Residual>, ModelError> {
        let share = est.share.as_ref().ok_or(ModelError::MissingEstimate {
            what: "capacity shares E[g_k M_k/(sum_j g_j M_j); Z=d]",
        })?;
        self.check_matrix_shape(share, "share")?;
        let loads = self.class_loads(false)?;
        let m = &self.model;
        let mut out = Vec::with_capacity(self.n_classes());
        for k in 0..self.n_classes() {
            let mut served = 0.0;
            let mut hw = 0.0;
            for d in 0..m.dim() {
                let coef = self.mu[k] * m.capacities()[d];
                served += coef * share[k][d].value;
                hw += coef * share[k][d].half_width;
            }
            out.push(Residual { value: loads.lambda_inf[k] - served, half_width: hw });
        }
        Ok(out)
    }

    /// Capacity-weighted first-moment identity: for each class k,
    ///
    /// `sum_d c_d E[M_k 1{Z=d}] = lambda_inf[k]/mu_k
    ///  + sum_{d,j} g_j (lambda_{k,d} E[M_j 1{Z=d}] + lambda_{j,d} E[M_k 1{Z=d}])
    ///    / (mu_k g_k + mu_j g_j)`.
    ///
    /// Underdetermined as a system for D > 1, so it is exposed as a verifier:
    /// the residual (left minus right) vanishes on exact stationary moments.
    pub fn weighted_moment_residual(
        &self,
        est: &DpsEstimates,
    ) -> Result<Vec<Residual>, ModelError> {
        let mean_m = est.mean_m.as_ref().ok_or(ModelError::MissingEstimate {
            what: "joint queue-length means E[M_k; Z=d]",
        })?;
        self.check_matrix_shape(mean_m, "mean_m")?;
        let loads = self.class_loads(false)?;
        let m = &self.model;
        let kn = self.n_classes();
        let mut out = Vec::with_capacity(kn);
        for k in 0..kn {
            // Assemble the residual as sum of coef[j][d] * E[M_j 1{Z=d}]
            // minus the constant, so the half-width propagates through the
            // same coefficients.
            let mut coef = vec![vec![0.0; m.dim()]; kn];
            for d in 0..m.dim() {
                coef[k][d] += m.capacities()[d];
                for j in 0..kn {
                    let den = self.mu[k] * self.g[k] + self.mu[j] * self.g[j];
                    coef[j][d] -= self.g[j] * self.class_arrival_rate(k, d) / den;
                    coef[k][d] -= self.g[j] * self.class_arrival_rate(j, d) / den;
                }
            }
            let mut value = -loads.lambda_inf[k] / self.mu[k];
            let mut hw = 0.0;
            for j in 0..kn {
                for d in 0..m.dim() {
                    value += coef[j][d] * mean_m[j][d].value;
                    hw += coef[j][d].abs() * mean_m[j][d].half_width;
                }
            }
            out.push(Residual { value, half_width: hw });
        }
        Ok(out)
    }

    fn check_matrix_shape(
        &self,
        mat: &[Vec<Estimate>],
        what: &'static str,
    ) -> Result<(), ModelError> {
        if mat.len() != self.n_classes() {
            return Err(ModelError::Dimension {
                what,
                want: self.n_classes(),
                got: mat.len(),
            });
        }
        for row in mat {
            if row.len() != self.dim() {
                return Err(ModelError::Dimension {
                    what,
                    want: self.dim(),
                    got: row.len(),
                });
            }
        }
        Ok(())
    }

    /// Rewrites a spec whose requirements are fixed at arrival (class k
    /// arriving in state d completes at rate `mu_k c_d` regardless of later
    /// environment moves) as an equivalent plain multi-class spec: one class
    /// per (k, d) pair with arrival rate `lambda_{k,d}` in state d only,
    /// service rate `mu_k c_d`, weight `g_k`, and unit capacities. Classes
    /// that never arrive are dropped. Returns the new spec and the (k, d)
    /// origin of each of its classes.
    pub fn split_to_classes(&self) -> Result<(DpsSpec, Vec<(usize, usize)>), ModelError> {
        let m = &self.model;
        let dn = m.dim();
        let mut alpha = Vec::new();
        let mut mu = Vec::new();
        let mut g = Vec::new();
        let mut origin = Vec::new();
        for k in 0..self.n_classes() {
            for d in 0..dn {
                let lam = self.class_arrival_rate(k, d);
                if lam <= 0.0 {
                    continue;
                }
                let mut row = vec![0.0; dn];
                row[d] = self.alpha[k][d];
                alpha.push(row);
                mu.push(self.mu[k] * m.capacities()[d]);
                g.push(self.g[k]);
                origin.push((k, d));
            }
        }
        let spec = DpsSpec::new(
            m.env().clone(),
            m.lambda().to_vec(),
            vec![1.0; dn],
            alpha,
            mu,
            g,
        )?;
        Ok((spec, origin))
    }
}

/// Heavy-traffic view of the embedded mixture model, for workload-level
/// cross-checks.
pub fn ht_mixture_model(spec: &DpsSpec) -> Result<HtModelSpec, ModelError> {
    HtModelSpec::from_model(spec.model())
}

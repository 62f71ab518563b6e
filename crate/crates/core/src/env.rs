//! The modulating environment: a finite irreducible CTMC given by its
//! generator matrix `Q`, plus the generator-based linear algebra the workload
//! formulas need.
//!
//! Two solves live here. `stationary_distribution` finds the probability
//! vector `pi` with `pi Q = 0`. `solve_offset_vector` solves the singular
//! system `Q a = b` for a right-hand side orthogonal to `pi`; the solution is
//! only determined up to a multiple of the all-ones vector, so it is pinned
//! by the normalization `a[0] = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

/// Row sums of a generator must vanish within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// `pi . b` must vanish within this tolerance for `Q a = b` to be solvable.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;
/// Componentwise residual allowed on `Q a - b` after the anchored solve.
pub const OFFSET_RESIDUAL_TOL: f64 = 1e-9;
/// Componentwise residual allowed on `pi Q` for the stationary solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("generator must be a non-empty square matrix, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("off-diagonal rate ({row},{col}) is negative: {value}")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("row {row} of the generator sums to {sum:e}, expected 0 within {ROW_SUM_TOL:e}")]
    RowSumNonzero { row: usize, sum: f64 },
    #[error("off-diagonal support graph is not strongly connected: chain is reducible")]
    Reducible,
    #[error("generator rank {rank} < D-1 = {expected}: nullspace larger than the span of 1")]
    SingularBeyondNullspace { rank: usize, expected: usize },
    #[error("right-hand side is not orthogonal to pi: |pi.b| = {dot:e} > {ORTHOGONALITY_TOL:e}")]
    RhsNotOrthogonal { dot: f64 },
    #[error("linear solve left residual {residual:e}, above {tol:e}")]
    SolveFailed { residual: f64, tol: f64 },
}

/// Validated CTMC generator: square, off-diagonals nonnegative, rows summing
/// to zero, and irreducible (off-diagonal support strongly connected).
///
/// `D = 1` with `Q = [[0]]` is admitted as the degenerate frozen environment;
/// it is the main analytic cross-check since it reduces every formula to the
/// classical single-state queue.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    rates: DMatrix<f64>,
}

impl GeneratorMatrix {
    /// Validates a row-major rate matrix. Never repairs entries: any
    /// violation is reported as an error.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, EnvError> {
        let d = rows.len();
        if d == 0 {
            return Err(EnvError::BadShape { rows: 0, cols: 0 });
        }
        for r in rows {
            if r.len() != d {
                return Err(EnvError::BadShape { rows: d, cols: r.len() });
            }
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for (j, &q) in row.iter().enumerate() {
                if i != j && q < 0.0 {
                    return Err(EnvError::NegativeOffDiagonal { row: i, col: j, value: q });
                }
                sum += q;
            }
            if sum.abs() > ROW_SUM_TOL {
                return Err(EnvError::RowSumNonzero { row: i, sum });
            }
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let rates = DMatrix::from_row_slice(d, d, &flat);
        let g = GeneratorMatrix { rates };
        if !g.strongly_connected() {
            return Err(EnvError::Reducible);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.rates.nrows()
    }

    /// Transition rate `q_{from,to}`.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[(from, to)]
    }

    /// Total exit rate out of state `d`, i.e. `-q_{dd}` clamped at zero.
    pub fn exit_rate(&self, d: usize) -> f64 {
        (-self.rates[(d, d)]).max(0.0)
    }

    /// Rows as plain vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.rates[(i, j)]).collect())
            .collect()
    }

    /// Both-directions reachability of state 0 on the support graph.
    /// Irreducible means strongly connected; for a finite graph that is
    /// equivalent to `0 -> all` and `all -> 0`.
    fn strongly_connected(&self) -> bool {
        let forward = self.reachable(false);
        let backward = self.reachable(true);
        forward.iter().all(|&v| v) && backward.iter().all(|&v| v)
    }

    fn reachable(&self, transpose: bool) -> Vec<bool> {
        let d = self.dim();
        let mut seen = vec![false; d];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..d {
                if v == u || seen[v] {
                    continue;
                }
                let q = if transpose { self.rates[(v, u)] } else { self.rates[(u, v)] };
                if q > 0.0 {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Stationary distribution `pi` with `pi Q = 0`, `sum pi = 1`.
    ///
    /// Solved as the least-squares system `[Q^T; 1^T] pi = [0; 1]` after a
    /// rank check: a validated generator has nullspace exactly `span{1}`, so
    /// rank below `D - 1` signals a reducible input that slipped validation.
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution, EnvError> {
        let d = self.dim();
        if d == 1 {
            return Ok(StationaryDistribution { pi: vec![1.0] });
        }
        let svd = self.rates.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.rank(smax * 1e-10);
        if rank < d - 1 {
            return Err(EnvError::SingularBeyondNullspace { rank, expected: d - 1 });
        }

        let mut a = DMatrix::zeros(d + 1, d);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = self.rates[(j, i)];
            }
            a[(d, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(d + 1);
        rhs[d] = 1.0;
        let sol = a
            .svd(true, true)
            .solve(&rhs, f64::EPSILON * smax.max(1.0))
            .map_err(|_| EnvError::SingularBeyondNullspace { rank, expected: d - 1 })?;

        let mut pi: Vec<f64> = sol.iter().copied().collect();
        if pi.iter().any(|&p| p <= 0.0) {
            return Err(EnvError::SingularBeyondNullspace { rank, expected: d - 1 });
        }
        let total: f64 = pi.iter().sum();
        for p in &mut pi {
            *p /= total;
        }

        let residual = (0..d)
            .map(|j| (0..d).map(|i| pi[i] * self.rates[(i, j)]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if residual > STATIONARY_RESIDUAL_TOL {
            return Err(EnvError::SolveFailed { residual, tol: STATIONARY_RESIDUAL_TOL });
        }
        Ok(StationaryDistribution { pi })
    }

    /// Solves `Q a = b` for `b` orthogonal to `pi`, normalized to `a[0] = 0`.
    ///
    /// `Q` is singular with nullspace `span{1}`, so the system is solved as
    /// the stacked least-squares problem `[Q; e_0^T] a = [b; 0]`; the anchor
    /// row pins the free direction. The result is shifted by `-a[0]` (a
    /// nullspace move) so the normalization holds exactly, and the residual
    /// `Q a - b` is checked componentwise.
    pub fn solve_offset_vector(
        &self,
        pi: &StationaryDistribution,
        b: &[f64],
    ) -> Result<Vec<f64>, EnvError> {
        let d = self.dim();
        assert_eq!(b.len(), d, "rhs length must match generator dimension");
        assert_eq!(pi.dim(), d, "pi length must match generator dimension");

        let dot: f64 = pi.as_slice().iter().zip(b).map(|(p, x)| p * x).sum();
        if dot.abs() > ORTHOGONALITY_TOL {
            return Err(EnvError::RhsNotOrthogonal { dot });
        }

        let mut a = DMatrix::zeros(d + 1, d);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = self.rates[(i, j)];
            }
        }
        a[(d, 0)] = 1.0;
        let mut rhs = DVector::zeros(d + 1);
        for i in 0..d {
            rhs[i] = b[i];
        }
        let scale = self.rates.abs().max().max(1.0);
        let sol = a
            .svd(true, true)
            .solve(&rhs, f64::EPSILON * scale)
            .map_err(|_| EnvError::SolveFailed { residual: f64::INFINITY, tol: OFFSET_RESIDUAL_TOL })?;

        let anchor = sol[0];
        let out: Vec<f64> = sol.iter().map(|v| v - anchor).collect();

        let residual = (0..d)
            .map(|i| {
                let row: f64 = (0..d).map(|j| self.rates[(i, j)] * out[j]).sum();
                (row - b[i]).abs()
            })
            .fold(0.0, f64::max);
        if residual > OFFSET_RESIDUAL_TOL {
            return Err(EnvError::SolveFailed { residual, tol: OFFSET_RESIDUAL_TOL });
        }
        Ok(out)
    }

    /// Samples the environment path on `[0, horizon)` started in `d0`.
    /// Holding time in state `d` is exponential with rate `-q_{dd}`; the jump
    /// target is `l` with probability `q_{dl} / (-q_{dd})`.
    pub fn sample_path<R: Rng + ?Sized>(&self, d0: usize, horizon: f64, rng: &mut R) -> EnvPath {
        assert!(d0 < self.dim(), "initial state out of range");
        assert!(horizon > 0.0, "horizon must be positive");
        let mut epochs = vec![0.0];
        let mut states = vec![d0];
        let mut t = 0.0;
        let mut d = d0;
        loop {
            let rate = self.exit_rate(d);
            if rate == 0.0 {
                break;
            }
            t += Exp::new(rate).expect("positive rate").sample(rng);
            if t >= horizon {
                break;
            }
            d = self.sample_jump(d, rng);
            epochs.push(t);
            states.push(d);
        }
        EnvPath { epochs, states, horizon }
    }

    /// Jump target out of `d`, proportional to the off-diagonal rates.
    pub fn sample_jump<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> usize {
        let exit = self.exit_rate(d);
        debug_assert!(exit > 0.0, "sample_jump from an absorbing state");
        let u: f64 = rng.random::<f64>() * exit;
        let mut acc = 0.0;
        let mut last = d;
        for l in 0..self.dim() {
            if l == d {
                continue;
            }
            let q = self.rates[(d, l)];
            if q > 0.0 {
                acc += q;
                last = l;
                if u < acc {
                    return l;
                }
            }
        }
        // Rounding pushed u past the accumulated total; take the last
        // positive-rate target.
        last
    }
}

/// Stationary probability vector of the environment chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    pub fn get(&self, d: usize) -> f64 {
        self.pi[d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    /// `sum_d pi_d x_d`.
    pub fn average(&self, x: &[f64]) -> f64 {
        self.pi.iter().zip(x).map(|(p, v)| p * v).sum()
    }
}

/// A sampled environment trajectory on `[0, horizon)`: `states[i]` is
/// occupied on `[epochs[i], epochs[i+1])`, the last state up to `horizon`.
#[derive(Debug, Clone)]
pub struct EnvPath {
    epochs: Vec<f64>,
    states: Vec<usize>,
    horizon: f64,
}

impl EnvPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jumps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Iterates `(t_start, t_end, state)` segments covering `[0, horizon)`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.states.len()).map(move |i| {
            let end = if i + 1 < self.epochs.len() { self.epochs[i + 1] } else { self.horizon };
            (self.epochs[i], end, self.states[i])
        })
    }

    /// Fraction of `[0, horizon)` spent in state `d`.
    pub fn occupancy(&self, d: usize) -> f64 {
        let time: f64 =
            self.segments().filter(|&(_, _, s)| s == d).map(|(t0, t1, _)| t1 - t0).sum();
        time / self.horizon
    }
}

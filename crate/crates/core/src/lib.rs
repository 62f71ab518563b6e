//! Analytics and exact simulation for Markov-modulated single-server queues.
//!
//! The model: a finite irreducible CTMC environment `Z` with generator `Q`
//! modulates a single-server queue. While the environment sits in state `d`,
//! customers arrive at Poisson rate `lambda_d`, bring a service requirement
//! drawn from a per-state distribution `H_d` (fixed at arrival), and the
//! server drains work at speed `c_d`. The crate computes closed-form
//! performance quantities for this queue and validates them against an exact
//! event-driven simulator of the same dynamics:
//!
//! * [`env`] — environment CTMC: generator validation, stationary
//!   distribution, the anchored singular solve used by the workload formulas,
//!   and path sampling.
//! * [`service`] — service-requirement distributions (exponential,
//!   hyperexponential, deterministic): moments, Laplace-Stieltjes transform,
//!   sampling.
//! * [`workload`] — traffic intensity, exact mean workload, heavy-traffic
//!   parametrization and the heavy-traffic exponential workload law.
//! * [`dps`] — multi-class discriminatory processor sharing: class loads,
//!   the heavy-traffic state-space-collapse prediction, rate-conservation
//!   residual checks, and the class-splitting construction.
//! * [`sim`] — event-driven simulation of the workload process and of the
//!   multi-class DPS queue, with batch-means confidence intervals.
//! * [`stats`] — estimator plumbing: batch statistics, merging,
//!   Kolmogorov-Smirnov distances, decorrelation, independence diagnostics.
//! * [`oracle`] — exact global-balance solve of the truncated DPS CTMC;
//!   this is the test oracle backing the validation suite, not a tuned
//!   production solver.
//! * [`harness`] — the `mmq` command-line interface: JSON experiment
//!   configs, heavy-traffic sweeps, validation suites, CSV/JSON reports.
//!
//! Environment states and customer classes are indexed from 0 throughout.

// Index loops here usually couple several per-state/per-class arrays through
// one shared index; iterator zips would obscure that.
#![allow(clippy::needless_range_loop)]

pub mod dps;
pub mod env;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod service;
pub mod sim;
pub mod stats;
pub mod workload;

pub use env::{EnvError, EnvPath, GeneratorMatrix, StationaryDistribution};
pub use dps::{ClassLoads, CollapsePrediction, DpsEstimates, DpsSpec, Residual};
pub use service::{Moments, ServiceDistribution, ServiceError};
pub use sim::{SimConfig, SimError, SimEstimates, Snapshots};
pub use stats::{BatchStats, Estimate, StatsError};
pub use workload::{ExponentialLaw, HtModelSpec, ModelError, ModelSpec};

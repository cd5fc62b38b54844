//! Steady-state analysis of many-server, finite-buffer load balancing.
//!
//! The crate models `N` unit-rate exponential servers, each holding at most
//! `b` jobs, fed by a Poisson stream of rate `λN` and a routing policy
//! (JSQ, I1F, JIQ, power-of-d, uniform random). The state is the occupancy
//! vector `(n_0, …, n_b)`, which is a CTMC for every policy in scope.
//!
//! * [`model`]: configurations, occupancy states, enumeration and the jump
//!   structure of the generator.
//! * [`policies`]: routing laws `A_i(S)` and the idle-routing condition check.
//! * [`exact`]: generator assembly, GTH stationary solve, exact metrics.
//! * [`sim`]: aggregate-count event simulation with batch-means intervals.
//! * [`stein`]: the Stein/Lyapunov machinery (h, g, V, drift, tail and
//!   collapse bounds) and the closed-form performance bounds.

pub mod error;
pub mod exact;
pub mod model;
pub mod policies;
pub mod sim;
pub mod stein;

pub use error::{Error, Result};
pub use exact::{ExactMetrics, GeneratorMatrix, StationaryDist};
pub use model::{Move, Occupancy, SystemConfig, Transition, DEFAULT_STATE_CAP};
pub use policies::{ConditionReport, Policy, PolicySpec, RoutingLaw};
pub use sim::{Estimate, SimMetrics, SimSpec};
pub use stein::{BoundReport, DriftReport, SteinContext, TailBoundInputs};

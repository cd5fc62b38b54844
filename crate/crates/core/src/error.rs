use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid occupancy state: {0}")]
    InvalidState(String),

    #[error("state space has {states} states, above the cap of {cap}")]
    CapExceeded { states: u128, cap: usize },

    #[error("routing law sends mass to level {level}, which has no servers")]
    InconsistentLaw { level: usize },

    #[error("generator is reducible: zero pivot while eliminating state {state}")]
    Reducible { state: usize },

    #[error("iterative solve did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("effective throughput λ(1 - p_block) is zero")]
    DegenerateLoad,

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("batch means need at least {min} batches, got {got}")]
    TooFewBatches { got: usize, min: usize },

    #[error("simulation exceeded {0} events")]
    EventOverflow(u64),

    #[error("tail bound needs gamma > 0, got {0}")]
    NonpositiveGamma(f64),

    #[error("policy {0} has no corollary bound")]
    UnsupportedPolicy(String),

    #[error("unknown policy `{0}` (expected jsq | i1f | jiq | pod:<d|auto> | random)")]
    UnknownPolicy(String),
}

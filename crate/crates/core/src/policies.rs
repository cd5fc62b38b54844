//! Routing laws of the supported dispatch policies.
//!
//! Every policy here depends on the system only through the occupancy counts,
//! so a policy is fully described by the vector `A_i(S)`: the probability that
//! an arriving job is sent to a server already holding at least `i` jobs.
//! `A_0 = 1`, and `A_b` is the blocking probability.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{enumerate_states, Occupancy, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Join the shortest queue.
    Jsq,
    /// Idle first, then a server with one job, else uniform at random.
    I1f,
    /// Join an idle queue if any, else uniform at random.
    Jiq,
    /// Best of `d` servers sampled uniformly with replacement.
    Pod { d: u32 },
    /// Uniform at random.
    Random,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Jsq => "jsq",
            Policy::I1f => "i1f",
            Policy::Jiq => "jiq",
            Policy::Pod { .. } => "pod",
            Policy::Random => "random",
        }
    }

    pub fn d(&self) -> Option<u32> {
        match self {
            Policy::Pod { d } => Some(*d),
            _ => None,
        }
    }

    /// All five policies, with power-of-d at its default `d`.
    pub fn catalog(config: &SystemConfig) -> [Policy; 5] {
        [
            Policy::Jsq,
            Policy::I1f,
            Policy::Jiq,
            Policy::Pod {
                d: default_pod_d(config),
            },
            Policy::Random,
        ]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Pod { d } => write!(f, "pod:{d}"),
            other => f.write_str(other.name()),
        }
    }
}

/// A policy as written in configuration, before `pod:auto` is resolved
/// against a particular `N` and `α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicySpec {
    Fixed(Policy),
    PodAuto,
}

impl PolicySpec {
    pub fn resolve(self, config: &SystemConfig) -> Policy {
        match self {
            PolicySpec::Fixed(p) => p,
            PolicySpec::PodAuto => Policy::Pod {
                d: default_pod_d(config),
            },
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let policy = match lower.as_str() {
            "jsq" => Policy::Jsq,
            "i1f" => Policy::I1f,
            "jiq" => Policy::Jiq,
            "random" => Policy::Random,
            "pod:auto" | "pod" => return Ok(PolicySpec::PodAuto),
            other => match other.strip_prefix("pod:").map(str::parse::<u32>) {
                Some(Ok(d)) if d >= 1 => Policy::Pod { d },
                _ => return Err(Error::UnknownPolicy(s.to_string())),
            },
        };
        Ok(PolicySpec::Fixed(policy))
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Fixed(p) => p.fmt(f),
            PolicySpec::PodAuto => f.write_str("pod:auto"),
        }
    }
}

/// `⌈N^α log N⌉`, at least 1. Uses the `α` implied by `λ` when the load was
/// set directly.
pub fn default_pod_d(config: &SystemConfig) -> u32 {
    let Some(alpha) = config.effective_alpha() else {
        return 1;
    };
    let d = (config.n_f64().powf(alpha) * config.log_n()).ceil();
    if d.is_finite() && d >= 1.0 {
        d.min(f64::from(u32::MAX)) as u32
    } else {
        1
    }
}

/// `(A_0, …, A_b)` for one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoutingLaw {
    a: Vec<f64>,
}

impl RoutingLaw {
    pub fn from_probabilities(a: Vec<f64>) -> Self {
        Self { a }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.a
    }

    pub fn a(&self, i: usize) -> f64 {
        self.a.get(i).copied().unwrap_or(0.0)
    }

    /// Probability that an arrival is not sent to an idle server.
    pub fn a1(&self) -> f64 {
        self.a[1]
    }

    /// Probability that an arrival is discarded, `A_b`.
    pub fn block(&self) -> f64 {
        self.a[self.a.len() - 1]
    }
}

/// Routing law of `policy` at `state`.
pub fn routing_law(policy: Policy, state: &Occupancy, config: &SystemConfig) -> RoutingLaw {
    debug_assert_eq!(state.b(), config.b());
    let mut a = vec![0.0; state.counts().len()];
    fill_routing_law(policy, state.counts(), &mut a);
    RoutingLaw { a }
}

/// Writes `A_0..A_b` for `counts` into `out` without allocating.
pub fn fill_routing_law(policy: Policy, counts: &[u32], out: &mut [f64]) {
    let b = counts.len() - 1;
    let n: u32 = counts.iter().sum();
    let n = f64::from(n);
    out[0] = 1.0;

    // S_i for i >= 1, written in place
    let uniform = |out: &mut [f64]| {
        let mut acc = 0u32;
        for i in (1..=b).rev() {
            acc += counts[i];
            out[i] = f64::from(acc) / n;
        }
    };

    match policy {
        Policy::Jsq => {
            let m = counts.iter().position(|&c| c > 0).unwrap_or(0);
            for (i, slot) in out.iter_mut().enumerate().skip(1) {
                *slot = if i <= m { 1.0 } else { 0.0 };
            }
        }
        Policy::I1f => {
            if counts[0] > 0 {
                out[1..].fill(0.0);
            } else if counts[1] > 0 {
                out[1] = 1.0;
                out[2..].fill(0.0);
            } else {
                uniform(out);
            }
        }
        Policy::Jiq => {
            if counts[0] > 0 {
                out[1..].fill(0.0);
            } else {
                uniform(out);
            }
        }
        Policy::Random => uniform(out),
        Policy::Pod { d } => {
            uniform(out);
            let d = d.max(1);
            for slot in out.iter_mut().skip(1) {
                *slot = pow_u32(*slot, d);
            }
        }
    }
}

fn pow_u32(x: f64, d: u32) -> f64 {
    match i32::try_from(d) {
        Ok(d) => x.powi(d),
        Err(_) => x.powf(f64::from(d)),
    }
}

/// How [`condition_report`] searches for the worst-case `A_1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    /// Every state with `S_1 ≤ τ`, up to the given state cap.
    Exhaustive { cap: usize },
    /// Closed-form envelope, valid for any `N`.
    Formula,
}

/// Result of checking `A_1(S) ≤ 1/√N` whenever `S_1 ≤ τ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub policy: Policy,
    pub mode: ConditionMode,
    pub threshold: f64,
    pub limit: f64,
    pub max_a1: f64,
    pub witness_state: Option<Occupancy>,
    /// The region `S_1 ≤ τ` contains the all-busy state.
    pub region_includes_saturation: bool,
    pub satisfied: bool,
}

pub fn condition_report(
    policy: Policy,
    config: &SystemConfig,
    mode: ConditionMode,
) -> Result<ConditionReport> {
    let tau = config.tau();
    let limit = 1.0 / config.sqrt_n();
    let (max_a1, witness_state) = match mode {
        ConditionMode::Exhaustive { cap } => {
            let mut best = (f64::NEG_INFINITY, None);
            for s in enumerate_states(config, cap)? {
                if s.tail(1) > tau {
                    continue;
                }
                let a1 = routing_law(policy, &s, config).a1();
                if a1 > best.0 {
                    best = (a1, Some(s));
                }
            }
            // the empty state always qualifies, so best is set
            best
        }
        ConditionMode::Formula => {
            // largest attainable S_1 in the region, on the 1/N grid
            let s1_max = (tau * config.n_f64()).floor().min(config.n_f64()) / config.n_f64();
            let a1 = match policy {
                Policy::Jsq | Policy::I1f | Policy::Jiq => {
                    if s1_max >= 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Policy::Pod { d } => pow_u32(tau.min(1.0), d),
                Policy::Random => tau.min(1.0),
            };
            (a1, None)
        }
    };
    Ok(ConditionReport {
        policy,
        mode,
        threshold: tau,
        limit,
        max_a1,
        witness_state,
        region_includes_saturation: tau >= 1.0,
        satisfied: max_a1 <= limit,
    })
}

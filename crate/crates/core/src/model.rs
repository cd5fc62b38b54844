//! System configuration, occupancy states and the generator's jump structure.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policies::RoutingLaw;

/// Default upper bound on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// A many-server system: `n` servers, capacity `b` jobs per server, and an
/// arrival rate `λN` where `λ` is either `1 - N^(-α)` or set explicitly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemConfig {
    n: u32,
    alpha: Option<f64>,
    lambda: f64,
    b: usize,
}

impl SystemConfig {
    /// Load in the sub-Halfin-Whitt regime, `λ = 1 - N^(-α)`.
    pub fn with_alpha(n: u32, alpha: f64, b: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 0.5), got {alpha}"
            )));
        }
        Self::validate_shape(n, b)?;
        let lambda = 1.0 - f64::from(n).powf(-alpha);
        Ok(Self {
            n,
            alpha: Some(alpha),
            lambda,
            b,
        })
    }

    /// Explicit per-server load `λ ∈ [0, 1)`.
    pub fn with_lambda(n: u32, lambda: f64, b: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0, 1), got {lambda}"
            )));
        }
        Self::validate_shape(n, b)?;
        Ok(Self {
            n,
            alpha: None,
            lambda,
            b,
        })
    }

    fn validate_shape(n: u32, b: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidConfig("N must be positive".into()));
        }
        if b < 2 {
            return Err(Error::InvalidConfig(format!(
                "b must be at least 2 (k = 1 + 1/(2(b-1)) is undefined at b = 1), got {b}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn n_f64(&self) -> f64 {
        f64::from(self.n)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The configured `α`, if the load was given that way.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// `α` solving `λ = 1 - N^(-α)`; derived from `λ` when it was set
    /// explicitly. `None` when no finite positive value exists (`N = 1`
    /// or `λ = 0`).
    pub fn effective_alpha(&self) -> Option<f64> {
        if let Some(a) = self.alpha {
            return Some(a);
        }
        if self.n < 2 || self.lambda <= 0.0 {
            return None;
        }
        Some(-(1.0 - self.lambda).ln() / self.log_n())
    }

    /// Natural log of `N`.
    pub fn log_n(&self) -> f64 {
        self.n_f64().ln()
    }

    pub fn sqrt_n(&self) -> f64 {
        self.n_f64().sqrt()
    }

    /// `log N / √N`, the scale of every threshold in the analysis.
    pub fn scale(&self) -> f64 {
        self.log_n() / self.sqrt_n()
    }

    /// `k = 1 + 1/(2(b-1))`.
    pub fn k(&self) -> f64 {
        1.0 + 1.0 / (2.0 * (self.b as f64 - 1.0))
    }

    /// `k̃ = 1 + 1/(4(b-1))`.
    pub fn k_tilde(&self) -> f64 {
        1.0 + 1.0 / (4.0 * (self.b as f64 - 1.0))
    }

    /// `τ = λ + k log N / √N`.
    pub fn tau(&self) -> f64 {
        self.lambda + self.k() * self.scale()
    }

    /// Number of occupancy states, `C(N + b, b)`, saturating at `u128::MAX`.
    pub fn state_count(&self) -> u128 {
        binomial(u64::from(self.n) + self.b as u64, self.b as u64)
    }
}

/// `C(n, k)` with saturating arithmetic.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul(u128::from(n - i)) {
            Some(v) => v / u128::from(i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Server counts `(n_0, …, n_b)`, where `n_i` servers hold exactly `i` jobs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Occupancy(Vec<u32>);

impl Occupancy {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidState(
                "need at least the levels 0 and 1".into(),
            ));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidState("no servers".into()));
        }
        Ok(Self(counts))
    }

    /// Checks the state against a configuration (`b + 1` levels summing to `N`).
    pub fn check(&self, config: &SystemConfig) -> Result<()> {
        if self.0.len() != config.b() + 1 {
            return Err(Error::InvalidState(format!(
                "expected {} levels, got {}",
                config.b() + 1,
                self.0.len()
            )));
        }
        let total: u64 = self.0.iter().map(|&c| u64::from(c)).sum();
        if total != u64::from(config.n()) {
            return Err(Error::InvalidState(format!(
                "counts sum to {total}, expected N = {}",
                config.n()
            )));
        }
        Ok(())
    }

    /// All servers idle.
    pub fn empty(config: &SystemConfig) -> Self {
        let mut counts = vec![0; config.b() + 1];
        counts[0] = config.n();
        Self(counts)
    }

    /// Every server holding `b` jobs.
    pub fn full(config: &SystemConfig) -> Self {
        let mut counts = vec![0; config.b() + 1];
        counts[config.b()] = config.n();
        Self(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn b(&self) -> usize {
        self.0.len() - 1
    }

    pub fn servers(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Total number of jobs in the system.
    pub fn jobs(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &c)| i as u64 * u64::from(c))
            .sum()
    }

    /// Servers holding at least `i` jobs.
    pub fn tail_count(&self, i: usize) -> u32 {
        self.0.iter().skip(i).sum()
    }

    /// `S_i`, with the conventions `S_0 = 1` and `S_i = 0` for `i > b`.
    pub fn tail(&self, i: usize) -> f64 {
        if i > self.b() {
            return 0.0;
        }
        f64::from(self.tail_count(i)) / f64::from(self.servers())
    }

    /// `(S_1, …, S_b)`.
    pub fn tail_fractions(&self) -> Vec<f64> {
        let n = f64::from(self.servers());
        let mut out = vec![0.0; self.b()];
        let mut acc = 0u32;
        for i in (1..=self.b()).rev() {
            acc += self.0[i];
            out[i - 1] = f64::from(acc) / n;
        }
        out
    }

    /// `Σ_i S_i`, the number of jobs per server.
    pub fn load(&self) -> f64 {
        self.jobs() as f64 / f64::from(self.servers())
    }

    /// The state reached after a move. Panics if the move is not possible.
    pub fn apply(&self, mv: Move) -> Self {
        let mut counts = self.0.clone();
        mv.apply_to(&mut counts);
        Self(counts)
    }
}

impl fmt::Display for Occupancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// `S_i` for every level of a count vector; see [`Occupancy::tail_fractions`].
pub fn tail_fractions(state: &Occupancy) -> Vec<f64> {
    state.tail_fractions()
}

/// A single jump of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    /// A job joins a server that held `level - 1` jobs.
    Arrival(usize),
    /// A job leaves a server that held `level` jobs.
    Departure(usize),
}

impl Move {
    pub fn apply_to(self, counts: &mut [u32]) {
        match self {
            Move::Arrival(level) => {
                counts[level - 1] -= 1;
                counts[level] += 1;
            }
            Move::Departure(level) => {
                counts[level] -= 1;
                counts[level - 1] += 1;
            }
        }
    }

    /// Change in the total job count.
    pub fn job_delta(self) -> i64 {
        match self {
            Move::Arrival(_) => 1,
            Move::Departure(_) => -1,
        }
    }
}

/// A target state with the rate of jumping to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub target: Occupancy,
    pub rate: f64,
}

/// Enumerates the moves out of `counts` with their rates.
///
/// Arrivals land on level `i` at rate `λN (A_{i-1} - A_i)`; departures leave
/// level `i` at rate `n_i`. Blocked arrivals (`A_b`) leave the state unchanged
/// and are not reported.
pub fn for_each_move(
    counts: &[u32],
    law: &[f64],
    arrival_rate: f64,
    mut f: impl FnMut(Move, f64),
) -> Result<()> {
    let b = counts.len() - 1;
    for i in 1..=b {
        let p = law[i - 1] - law[i];
        if p > 0.0 && arrival_rate > 0.0 {
            if counts[i - 1] == 0 {
                return Err(Error::InconsistentLaw { level: i - 1 });
            }
            f(Move::Arrival(i), arrival_rate * p);
        }
    }
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > 0 {
            f(Move::Departure(i), f64::from(c));
        }
    }
    Ok(())
}

/// Moves out of `state` under `law`, paired with their rates.
pub fn moves(
    state: &Occupancy,
    law: &RoutingLaw,
    config: &SystemConfig,
) -> Result<Vec<(Move, f64)>> {
    let mut out = Vec::with_capacity(2 * config.b());
    for_each_move(
        state.counts(),
        law.probabilities(),
        config.lambda() * config.n_f64(),
        |mv, rate| out.push((mv, rate)),
    )?;
    Ok(out)
}

/// Outgoing transitions of `state` under `law`.
pub fn transitions(
    state: &Occupancy,
    law: &RoutingLaw,
    config: &SystemConfig,
) -> Result<Vec<Transition>> {
    Ok(moves(state, law, config)?
        .into_iter()
        .map(|(mv, rate)| Transition {
            target: state.apply(mv),
            rate,
        })
        .collect())
}

/// Every occupancy state of `config`, in lexicographically descending order
/// of `(n_0, …, n_b)`; the empty system comes first and the full one last.
pub fn enumerate_states(config: &SystemConfig, cap: usize) -> Result<Vec<Occupancy>> {
    let count = config.state_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded { states: count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut counts = vec![0u32; config.b() + 1];
    fill(&mut counts, 0, config.n(), &mut out);
    Ok(out)
}

fn fill(counts: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Occupancy>) {
    if pos == counts.len() - 1 {
        counts[pos] = remaining;
        out.push(Occupancy(counts.to_vec()));
        return;
    }
    for v in (0..=remaining).rev() {
        counts[pos] = v;
        fill(counts, pos + 1, remaining - v, out);
    }
}

/// Position of `counts` in the order produced by [`enumerate_states`].
pub fn state_index(counts: &[u32]) -> usize {
    let levels = counts.len();
    let mut remaining: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let mut index: u128 = 0;
    for (pos, &c) in counts.iter().enumerate().take(levels - 1) {
        let parts_after = (levels - pos - 1) as u64;
        // compositions with a larger value at this position come first
        for v in (u64::from(c) + 1)..=remaining {
            index += binomial(remaining - v + parts_after - 1, parts_after - 1);
        }
        remaining -= u64::from(c);
    }
    index as usize
}

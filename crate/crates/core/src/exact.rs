//! Exact stationary analysis on the enumerated state space.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{enumerate_states, for_each_move, state_index, Occupancy, SystemConfig};
use crate::policies::{fill_routing_law, Policy};

/// Largest dimension solved by direct elimination.
pub const DIRECT_SOLVE_LIMIT: usize = 50_000;
/// Memory ceiling (in `f64` entries) for the banded elimination workspace.
const BAND_ENTRY_LIMIT: usize = 64 << 20;
const ITERATIVE_TOLERANCE: f64 = 1e-10;
const ITERATIVE_MAX_SWEEPS: usize = 1_000_000;

/// Sparse rate matrix over the states of [`enumerate_states`].
///
/// Off-diagonal rates are stored row-wise (CSR); the diagonal is implied by
/// `exit[i] = Σ_j q(i, j)`.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    states: Vec<Occupancy>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    exit: Vec<f64>,
}

impl GeneratorMatrix {
    /// Builds a generator from explicit off-diagonal rows. Mostly useful for
    /// small hand-made chains; `states` may be empty in that case.
    pub fn from_rows(states: Vec<Occupancy>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut rates = Vec::new();
        let mut exit = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        for row in rows {
            let mut total = 0.0;
            for (j, r) in row {
                cols.push(j);
                rates.push(r);
                total += r;
            }
            exit.push(total);
            row_ptr.push(cols.len());
        }
        Self {
            states,
            row_ptr,
            cols,
            rates,
            exit,
        }
    }

    pub fn dimension(&self) -> usize {
        self.exit.len()
    }

    pub fn states(&self) -> &[Occupancy] {
        &self.states
    }

    /// Off-diagonal entries of row `i` as `(column, rate)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.rates[span].iter().copied())
    }

    /// Total exit rate of state `i`, i.e. `-q(i, i)`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    /// Entry `q(i, j)`, including the diagonal.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return -self.exit[i];
        }
        self.row(i).filter(|&(c, _)| c == j).map(|(_, r)| r).sum()
    }

    /// Row sums of `Q`; zero up to rounding.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dimension())
            .map(|i| self.row(i).map(|(_, r)| r).sum::<f64>() - self.exit[i])
            .collect()
    }

    /// `(Qf)(i) = Σ_j q(i, j) (f(j) - f(i))`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.dimension())
            .map(|i| self.row(i).map(|(j, r)| r * (f[j] - f[i])).sum())
            .collect()
    }

    /// `max_j |(πQ)_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out: Vec<f64> = pi.iter().zip(&self.exit).map(|(p, e)| -p * e).collect();
        for (i, &p) in pi.iter().enumerate() {
            for (j, r) in self.row(i) {
                out[j] += p * r;
            }
        }
        out.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for i in 0..self.dimension() {
            for (j, _) in self.row(i) {
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        (lower, upper)
    }
}

/// Assembles the generator of `policy` on every state of `config`.
pub fn build_generator(config: &SystemConfig, policy: Policy, cap: usize) -> Result<GeneratorMatrix> {
    let states = enumerate_states(config, cap)?;
    let arrival_rate = config.lambda() * config.n_f64();
    let rows = states
        .par_iter()
        .map(|s| {
            let mut law = vec![0.0; s.counts().len()];
            fill_routing_law(policy, s.counts(), &mut law);
            let mut row = Vec::with_capacity(2 * config.b());
            let mut target = s.counts().to_vec();
            for_each_move(s.counts(), &law, arrival_rate, |mv, rate| {
                target.copy_from_slice(s.counts());
                mv.apply_to(&mut target);
                row.push((state_index(&target), rate));
            })?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratorMatrix::from_rows(states, rows))
}

/// Which solver produced a [`StationaryDist`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Gth,
    Power,
}

/// Stationary probabilities aligned with the generator's state order.
#[derive(Clone, Debug)]
pub struct StationaryDist {
    states: Vec<Occupancy>,
    probs: Vec<f64>,
    residual: f64,
    method: SolveMethod,
}

impl StationaryDist {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn states(&self) -> &[Occupancy] {
        &self.states
    }

    /// `max |πQ|` at the time of solving.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Occupancy, f64)> {
        self.states.iter().zip(self.probs.iter().copied())
    }

    /// Writes one CSV row per state: the counts `n_0..n_b`, then the probability.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let levels = self.states.first().map_or(0, |s| s.counts().len());
        let header: Vec<String> = (0..levels).map(|i| format!("n{i}")).collect();
        writeln!(w, "{},probability", header.join(","))?;
        for (s, p) in self.iter() {
            for c in s.counts() {
                write!(w, "{c},")?;
            }
            writeln!(w, "{p:.17e}")?;
        }
        Ok(())
    }
}

/// Solves `πQ = 0`, `Σπ = 1`.
///
/// Uses banded GTH elimination (no subtractions, so no cancellation) when
/// the dimension and band fit; otherwise power iteration on the uniformized
/// chain.
pub fn stationary(gen: &GeneratorMatrix) -> Result<StationaryDist> {
    let n = gen.dimension();
    let (lower, upper) = gen.bandwidths();
    let band_entries = n.saturating_mul(lower + upper + 1);
    let (probs, method) = if n <= DIRECT_SOLVE_LIMIT && band_entries <= BAND_ENTRY_LIMIT {
        (gth_banded(gen, lower, upper)?, SolveMethod::Gth)
    } else {
        (power_iteration(gen)?, SolveMethod::Power)
    };
    let residual = gen.residual(&probs);
    Ok(StationaryDist {
        states: gen.states.clone(),
        probs,
        residual,
        method,
    })
}

/// Forces the iterative path regardless of size.
pub fn stationary_iterative(gen: &GeneratorMatrix) -> Result<StationaryDist> {
    let probs = power_iteration(gen)?;
    let residual = gen.residual(&probs);
    Ok(StationaryDist {
        states: gen.states.clone(),
        probs,
        residual,
        method: SolveMethod::Power,
    })
}

fn gth_banded(gen: &GeneratorMatrix, lower: usize, upper: usize) -> Result<Vec<f64>> {
    let n = gen.dimension();
    if n == 0 {
        return Ok(Vec::new());
    }
    let width = lower + upper + 1;
    // p[i][j] lives at i * width + (j + lower - i)
    let mut p = vec![0.0f64; n * width];
    let at = |i: usize, j: usize| i * width + j + lower - i;
    for i in 0..n {
        for (j, r) in gen.row(i) {
            p[at(i, j)] += r;
        }
    }

    for k in (1..n).rev() {
        let lo_j = k.saturating_sub(lower);
        let lo_i = k.saturating_sub(upper);
        let s: f64 = (lo_j..k).map(|j| p[at(k, j)]).sum();
        if s.is_nan() || s <= 0.0 {
            return Err(Error::Reducible { state: k });
        }
        for i in lo_i..k {
            p[at(i, k)] /= s;
        }
        for i in lo_i..k {
            let pik = p[at(i, k)];
            if pik == 0.0 {
                continue;
            }
            for j in lo_j..k {
                if j != i {
                    let pkj = p[at(k, j)];
                    p[at(i, j)] += pik * pkj;
                }
            }
        }
    }

    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    let mut total = 1.0;
    for j in 1..n {
        let v: f64 = (j.saturating_sub(upper)..j).map(|i| pi[i] * p[at(i, j)]).sum();
        pi[j] = v;
        total += v;
    }
    for v in &mut pi {
        *v /= total;
    }
    Ok(pi)
}

fn power_iteration(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = gen.dimension();
    let max_exit = gen.exit.iter().fold(0.0f64, |m, &e| m.max(e));
    if max_exit == 0.0 {
        return if n == 1 {
            Ok(vec![1.0])
        } else {
            Err(Error::Reducible { state: 0 })
        };
    }
    // a strictly positive self-loop everywhere keeps the kernel aperiodic
    let unif = 1.05 * max_exit;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for sweep in 0..ITERATIVE_MAX_SWEEPS {
        for (j, slot) in next.iter_mut().enumerate() {
            *slot = pi[j] * (1.0 - gen.exit[j] / unif);
        }
        for (i, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (j, r) in gen.row(i) {
                next[j] += p * r / unif;
            }
        }
        let total: f64 = next.iter().sum();
        for v in &mut next {
            *v /= total;
        }
        std::mem::swap(&mut pi, &mut next);
        if sweep % 16 == 15 {
            residual = gen.residual(&pi);
            if residual <= ITERATIVE_TOLERANCE {
                return Ok(pi);
            }
        }
    }
    Err(Error::NotConverged {
        sweeps: ITERATIVE_MAX_SWEEPS,
        residual,
    })
}

/// `E_π[f(S)]`.
pub fn expectation(dist: &StationaryDist, f: impl Fn(&Occupancy) -> f64) -> f64 {
    dist.iter().map(|(s, p)| p * f(s)).sum()
}

/// Exact steady-state performance of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExactMetrics {
    /// `E[Σ_i S_i]`.
    pub mean_total: f64,
    /// `E[max{Σ_i S_i - τ, 0}]`.
    pub excess: f64,
    /// Probability an arrival is not sent to an idle server, `E[A_1(S)]`.
    pub p_wait: f64,
    /// Probability an arrival is discarded, `E[A_b(S)]`.
    pub p_block: f64,
    /// Mean waiting time from Little's law, `E[ΣS]/(λ(1 - p_block)) - 1`.
    pub mean_wait: f64,
}

pub fn exact_metrics(
    dist: &StationaryDist,
    config: &SystemConfig,
    policy: Policy,
) -> Result<ExactMetrics> {
    let tau = config.tau();
    let mut law = vec![0.0; config.b() + 1];
    let (mut mean_total, mut excess, mut p_wait, mut p_block) = (0.0, 0.0, 0.0, 0.0);
    for (s, p) in dist.iter() {
        fill_routing_law(policy, s.counts(), &mut law);
        let load = s.load();
        mean_total += p * load;
        excess += p * (load - tau).max(0.0);
        p_wait += p * law[1];
        p_block += p * law[config.b()];
    }
    let throughput = config.lambda() * (1.0 - p_block);
    if throughput.is_nan() || throughput <= 0.0 {
        return Err(Error::DegenerateLoad);
    }
    Ok(ExactMetrics {
        mean_total,
        excess,
        p_wait,
        p_block,
        mean_wait: mean_total / throughput - 1.0,
    })
}

/// Generator, stationary law and metrics in one call.
pub fn solve(
    config: &SystemConfig,
    policy: Policy,
    cap: usize,
) -> Result<(GeneratorMatrix, StationaryDist, ExactMetrics)> {
    let gen = build_generator(config, policy, cap)?;
    let dist = stationary(&gen)?;
    let metrics = exact_metrics(&dist, config, policy)?;
    Ok((gen, dist, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_STATE_CAP;

    fn single_server() -> SystemConfig {
        SystemConfig::with_lambda(1, 0.5, 2).unwrap()
    }

    #[test]
    fn single_server_is_birth_death() {
        let gen = build_generator(&single_server(), Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(gen.dimension(), 3);
        let dense: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| gen.entry(i, j)).collect())
            .collect();
        assert_eq!(
            dense,
            vec![
                vec![-0.5, 0.5, 0.0],
                vec![1.0, -1.5, 0.5],
                vec![0.0, 1.0, -1.0]
            ]
        );
    }

    #[test]
    fn single_server_closed_form() {
        let (_, dist, m) = solve(&single_server(), Policy::Random, DEFAULT_STATE_CAP).unwrap();
        let want = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (p, w) in dist.probs().iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
        assert!((m.p_block - 1.0 / 7.0).abs() < 1e-15);
        assert!((m.mean_total - 4.0 / 7.0).abs() < 1e-15);
        assert!((m.mean_wait - 1.0 / 3.0).abs() < 1e-14);
        let full = expectation(&dist, |s| f64::from(s.counts()[2]));
        assert!((full - 1.0 / 7.0).abs() < 1e-15);
        assert!((expectation(&dist, |_| 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_state_chain() {
        let gen = GeneratorMatrix::from_rows(vec![], vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let d = stationary(&gen).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        let it = stationary_iterative(&gen).unwrap();
        assert!((it.probs()[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn row_sums_vanish_and_full_row_is_single() {
        let c = SystemConfig::with_lambda(2, 0.5, 2).unwrap();
        for policy in Policy::catalog(&c) {
            let gen = build_generator(&c, policy, DEFAULT_STATE_CAP).unwrap();
            assert_eq!(gen.dimension(), 6);
            assert!(gen.row_sums().iter().all(|v| v.abs() < 1e-15));
            let last = gen.dimension() - 1;
            let row: Vec<_> = gen.row(last).collect();
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].1, 2.0);
        }
    }

    #[test]
    fn iterative_agrees_with_gth() {
        let c = SystemConfig::with_lambda(6, 0.8, 3).unwrap();
        let gen = build_generator(&c, Policy::Pod { d: 2 }, DEFAULT_STATE_CAP).unwrap();
        let a = stationary(&gen).unwrap();
        let b = stationary_iterative(&gen).unwrap();
        assert_eq!(a.method(), SolveMethod::Gth);
        let diff = a
            .probs()
            .iter()
            .zip(b.probs())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn zero_load_concentrates_on_empty() {
        let c = SystemConfig::with_lambda(4, 0.0, 2).unwrap();
        let gen = build_generator(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        let d = stationary(&gen).unwrap();
        assert_eq!(d.probs()[0], 1.0);
        assert_eq!(exact_metrics(&d, &c, Policy::Jsq), Err(Error::DegenerateLoad));
    }

    #[test]
    fn light_load_metrics_vanish() {
        let c = SystemConfig::with_lambda(5, 1e-9, 2).unwrap();
        let (_, _, m) = solve(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        assert!(m.mean_total < 1e-8);
        assert!(m.p_wait < 1e-8);
        assert!(m.p_block < 1e-8);
        assert!(m.mean_wait.abs() < 1e-8);
        assert!(m.excess < 1e-40);
    }

    #[test]
    fn reducible_chain_is_reported() {
        // state 1 cannot reach state 0
        let gen = GeneratorMatrix::from_rows(vec![], vec![vec![(1, 1.0)], vec![]]);
        assert_eq!(stationary(&gen).unwrap_err(), Error::Reducible { state: 1 });
    }

    #[test]
    fn csv_export() {
        let (_, dist, _) = solve(&single_server(), Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "n0,n1,n2,probability");
        assert!(lines[1].starts_with("1,0,0,5.71428571428571"));
        assert_eq!(lines.len(), 4);
    }
}

//! Event-driven simulation of the occupancy chain with batch-means estimates.
//!
//! The simulator works on the counts `(n_0, …, n_b)` directly. Each event
//! costs `O(b)`: the total rate is `λN + (N - n_0)`, arrivals pick a level
//! from the routing law, departures pick a busy server uniformly.
//!
//! # Random stream
//!
//! A run draws from a single `ChaCha8Rng` seeded with `SimSpec::seed`. Per
//! event the draws are, in order: the holding time (`Exp1`), the event type
//! (uniform `f64`), then either the routing class (uniform `f64`) or the
//! departing server (uniform integer over busy servers). Changing this order
//! changes every trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Move, Occupancy, SystemConfig};
use crate::policies::{fill_routing_law, Policy};

/// Fewest batches accepted by [`batch_means`].
pub const MIN_BATCHES: usize = 10;
/// Hard ceiling on simulated events per run.
pub const MAX_EVENTS: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimSpec {
    /// Simulated model time.
    pub horizon: f64,
    /// Initial stretch of model time excluded from every estimate.
    pub warmup: f64,
    pub batches: usize,
    pub seed: u64,
    /// Starting state; the empty system when `None`.
    pub initial_state: Option<Occupancy>,
}

impl SimSpec {
    /// 10% warm-up, 20 batches, empty start.
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            warmup: 0.1 * horizon,
            batches: 20,
            seed,
            initial_state: None,
        }
    }

    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidSpec(format!("horizon {} must be positive", self.horizon)));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::InvalidSpec(format!(
                "warmup {} must lie in [0, horizon)",
                self.warmup
            )));
        }
        if self.batches < MIN_BATCHES {
            return Err(Error::InvalidSpec(format!(
                "need at least {MIN_BATCHES} batches, got {}",
                self.batches
            )));
        }
        if let Some(s) = &self.initial_state {
            s.check(config)
                .map_err(|e| Error::InvalidSpec(format!("initial state: {e}")))?;
        }
        Ok(())
    }

    /// Length of one batch in model time.
    pub fn batch_length(&self) -> f64 {
        (self.horizon - self.warmup) / self.batches as f64
    }
}

/// A point estimate with a 95% Student-t half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub batches_used: usize,
}

impl Estimate {
    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Mean of the batch means with half-width `t_{0.975, n-1} · sd / √n`.
pub fn batch_means(samples: &[f64]) -> Result<Estimate> {
    let n = samples.len();
    if n < MIN_BATCHES {
        return Err(Error::TooFewBatches {
            got: n,
            min: MIN_BATCHES,
        });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    Ok(Estimate {
        mean,
        half_width: t * sd / nf.sqrt(),
        batches_used: n,
    })
}

/// Simulated counterparts of [`crate::exact::ExactMetrics`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimMetrics {
    pub mean_total: Estimate,
    pub excess: Estimate,
    pub p_wait: Estimate,
    pub p_block: Estimate,
    pub mean_wait: Estimate,
    /// Fraction of arrivals not sent to an idle server, counted per event.
    pub p_wait_arrivals: Estimate,
    pub events: u64,
    pub arrivals: u64,
}

impl SimMetrics {
    /// The five steady-state metrics in a fixed order.
    pub fn named(&self) -> [(&'static str, Estimate); 5] {
        [
            ("mean_total", self.mean_total),
            ("excess", self.excess),
            ("p_wait", self.p_wait),
            ("p_block", self.p_block),
            ("mean_wait", self.mean_wait),
        ]
    }

    /// Time-averaged and arrival-sampled waiting probabilities agree within
    /// their joint intervals.
    pub fn pasta_consistent(&self) -> bool {
        (self.p_wait.mean - self.p_wait_arrivals.mean).abs()
            <= self.p_wait.half_width + self.p_wait_arrivals.half_width
    }
}

/// What happened at an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    /// An arrival joined a server, landing on `level`, or was blocked (`None`).
    Arrival(Option<usize>),
    /// A job left a server at `level`.
    Departure(usize),
}

/// One holding interval followed by the event that ends it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub holding: f64,
    /// `None` when every rate is zero and the chain stays put forever.
    pub event: Option<Event>,
}

/// Sequential trajectory generator on occupancy counts.
pub struct Simulator {
    policy: Policy,
    counts: Vec<u32>,
    law: Vec<f64>,
    jobs: u64,
    n: u32,
    arrival_rate: f64,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(config: &SystemConfig, policy: Policy, initial: Occupancy, seed: u64) -> Self {
        let counts = initial.counts().to_vec();
        let mut law = vec![0.0; counts.len()];
        fill_routing_law(policy, &counts, &mut law);
        Self {
            policy,
            jobs: initial.jobs(),
            counts,
            law,
            n: config.n(),
            arrival_rate: config.lambda() * config.n_f64(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Routing law at the current state.
    pub fn law(&self) -> &[f64] {
        &self.law
    }

    pub fn jobs(&self) -> u64 {
        self.jobs
    }

    /// Draws the holding time in the current state and applies the next event.
    pub fn step(&mut self) -> Step {
        let busy = self.n - self.counts[0];
        let total = self.arrival_rate + f64::from(busy);
        if total <= 0.0 {
            return Step {
                holding: f64::INFINITY,
                event: None,
            };
        }
        let e: f64 = self.rng.sample(Exp1);
        let holding = e / total;
        let u: f64 = self.rng.random::<f64>() * total;
        let event = if u < self.arrival_rate {
            self.route()
        } else {
            let mut r = self.rng.random_range(0..busy);
            let mut level = 1;
            while r >= self.counts[level] {
                r -= self.counts[level];
                level += 1;
            }
            Move::Departure(level).apply_to(&mut self.counts);
            self.jobs -= 1;
            Event::Departure(level)
        };
        debug_assert_eq!(self.counts.iter().sum::<u32>(), self.n);
        fill_routing_law(self.policy, &self.counts, &mut self.law);
        Step {
            holding,
            event: Some(event),
        }
    }

    fn route(&mut self) -> Event {
        let b = self.counts.len() - 1;
        let v: f64 = self.rng.random();
        // class i (landing on level i) has probability A_{i-1} - A_i, so the
        // smallest i with v < 1 - A_i is the sampled class
        if v >= 1.0 - self.law[b] {
            return Event::Arrival(None);
        }
        let level = (1..=b)
            .find(|&i| v < 1.0 - self.law[i])
            .expect("v < 1 - A_b guarantees a class");
        debug_assert!(self.counts[level - 1] > 0, "routed to an empty level");
        Move::Arrival(level).apply_to(&mut self.counts);
        self.jobs += 1;
        Event::Arrival(Some(level))
    }
}

#[derive(Clone, Copy, Default)]
struct BatchAcc {
    total: f64,
    excess: f64,
    a1: f64,
    block: f64,
    arrivals: u64,
    busy_arrivals: u64,
}

/// Runs one replication and returns batch-means estimates of every metric.
pub fn simulate(config: &SystemConfig, policy: Policy, spec: &SimSpec) -> Result<SimMetrics> {
    spec.validate(config)?;
    let initial = spec
        .initial_state
        .clone()
        .unwrap_or_else(|| Occupancy::empty(config));
    let mut sim = Simulator::new(config, policy, initial, spec.seed);

    let n = config.n_f64();
    let b = config.b();
    let tau = config.tau();
    let blen = spec.batch_length();
    let mut acc = vec![BatchAcc::default(); spec.batches];
    let mut t = 0.0;
    let mut events: u64 = 0;
    let mut arrivals: u64 = 0;

    loop {
        let load = sim.jobs() as f64 / n;
        let values = [load, (load - tau).max(0.0), sim.law()[1], sim.law()[b]];
        let step = sim.step();
        let t_next = t + step.holding;
        integrate(&mut acc, spec.warmup, blen, t, t_next.min(spec.horizon), values);
        if t_next >= spec.horizon {
            break;
        }
        t = t_next;
        events += 1;
        if events > MAX_EVENTS {
            return Err(Error::EventOverflow(MAX_EVENTS));
        }
        if let Some(Event::Arrival(level)) = step.event {
            arrivals += 1;
            if t >= spec.warmup {
                let idx = (((t - spec.warmup) / blen) as usize).min(spec.batches - 1);
                acc[idx].arrivals += 1;
                if level != Some(1) {
                    acc[idx].busy_arrivals += 1;
                }
            }
        }
    }

    let lambda = config.lambda();
    let mut cols: [Vec<f64>; 6] = Default::default();
    for a in &acc {
        let total = a.total / blen;
        let block = a.block / blen;
        cols[0].push(total);
        cols[1].push(a.excess / blen);
        cols[2].push(a.a1 / blen);
        cols[3].push(block);
        // no load means no jobs and nothing to wait for
        cols[4].push(if lambda > 0.0 {
            total / (lambda * (1.0 - block)) - 1.0
        } else {
            0.0
        });
        cols[5].push(if a.arrivals > 0 {
            a.busy_arrivals as f64 / a.arrivals as f64
        } else {
            0.0
        });
    }
    Ok(SimMetrics {
        mean_total: batch_means(&cols[0])?,
        excess: batch_means(&cols[1])?,
        p_wait: batch_means(&cols[2])?,
        p_block: batch_means(&cols[3])?,
        mean_wait: batch_means(&cols[4])?,
        p_wait_arrivals: batch_means(&cols[5])?,
        events,
        arrivals,
    })
}

/// Adds `values · |[t0, t1] ∩ batch|` to every batch overlapped by the interval.
fn integrate(acc: &mut [BatchAcc], warmup: f64, blen: f64, t0: f64, t1: f64, values: [f64; 4]) {
    if t1 <= warmup {
        return;
    }
    let last = acc.len() - 1;
    let mut s = t0.max(warmup);
    let mut idx = (((s - warmup) / blen) as usize).min(last);
    while s < t1 {
        let end = if idx == last {
            t1
        } else {
            t1.min(warmup + (idx + 1) as f64 * blen)
        };
        let dt = end - s;
        if dt > 0.0 {
            let a = &mut acc[idx];
            a.total += values[0] * dt;
            a.excess += values[1] * dt;
            a.a1 += values[2] * dt;
            a.block += values[3] * dt;
        }
        s = end;
        if idx == last {
            break;
        }
        idx += 1;
    }
}

/// Fraction of post-warm-up time spent in each state, indexed as in
/// [`crate::model::enumerate_states`].
pub fn occupancy_time_fractions(
    config: &SystemConfig,
    policy: Policy,
    spec: &SimSpec,
) -> Result<Vec<f64>> {
    spec.validate(config)?;
    let initial = spec
        .initial_state
        .clone()
        .unwrap_or_else(|| Occupancy::empty(config));
    let states = usize::try_from(config.state_count())
        .map_err(|_| Error::InvalidSpec("state space too large to tabulate".into()))?;
    let mut time = vec![0.0; states];
    let mut sim = Simulator::new(config, policy, initial, spec.seed);
    let mut t = 0.0;
    loop {
        let idx = crate::model::state_index(sim.counts());
        let step = sim.step();
        let t_next = t + step.holding;
        let lo = t.max(spec.warmup);
        let hi = t_next.min(spec.horizon);
        if hi > lo {
            time[idx] += hi - lo;
        }
        if t_next >= spec.horizon {
            break;
        }
        t = t_next;
    }
    let span = spec.horizon - spec.warmup;
    Ok(time.into_iter().map(|x| x / span).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_batches() {
        let e = batch_means(&[0.7; 12]).unwrap();
        assert!((e.mean - 0.7).abs() < 1e-15);
        assert!(e.half_width < 1e-14);
        assert_eq!(e.batches_used, 12);
    }

    #[test]
    fn symmetric_batches_center_on_midpoint() {
        let samples: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let e = batch_means(&samples).unwrap();
        assert_eq!(e.mean, 2.0);
        // sd = sqrt(10/9), t_{0.975,9} = 2.2622
        assert!((e.half_width - 2.262_157 * (10.0f64 / 9.0).sqrt() / 10f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn too_few_batches() {
        assert_eq!(
            batch_means(&[1.0; 9]),
            Err(Error::TooFewBatches { got: 9, min: 10 })
        );
    }

    #[test]
    fn interval_coverage_is_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let reps = 1000;
        let mut covered = 0;
        for _ in 0..reps {
            let xs: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
            if batch_means(&xs).unwrap().contains(0.0) {
                covered += 1;
            }
        }
        // binomial(1000, 0.95) has sd ≈ 6.9, so ±3 sd
        assert!((929..=971).contains(&covered), "covered {covered}");
    }

    #[test]
    fn spec_validation() {
        let c = SystemConfig::with_lambda(3, 0.5, 2).unwrap();
        assert!(SimSpec::new(100.0, 1).validate(&c).is_ok());
        let mut s = SimSpec::new(100.0, 1);
        s.warmup = 100.0;
        assert!(s.validate(&c).is_err());
        let mut s = SimSpec::new(100.0, 1);
        s.batches = 5;
        assert!(s.validate(&c).is_err());
        let mut s = SimSpec::new(100.0, 1);
        s.initial_state = Some(Occupancy::new(vec![1, 1, 0]).unwrap());
        assert!(s.validate(&c).is_err());
    }

    #[test]
    fn zero_load_does_nothing() {
        let c = SystemConfig::with_lambda(5, 0.0, 2).unwrap();
        for policy in Policy::catalog(&c) {
            let m = simulate(&c, policy, &SimSpec::new(1000.0, 3)).unwrap();
            assert_eq!(m.arrivals, 0);
            assert_eq!(m.events, 0);
            for (_, e) in m.named() {
                assert_eq!(e.mean, 0.0);
                assert_eq!(e.half_width, 0.0);
            }
        }
    }

    #[test]
    fn departures_drain_a_full_start() {
        let c = SystemConfig::with_lambda(4, 0.0, 2).unwrap();
        let mut sim = Simulator::new(&c, Policy::Jsq, Occupancy::full(&c), 9);
        let mut steps = 0;
        while sim.step().event.is_some() {
            steps += 1;
        }
        assert_eq!(steps, 8);
        assert_eq!(sim.counts(), &[4, 0, 0]);
    }

    #[test]
    fn integrate_splits_across_batches() {
        let mut acc = vec![BatchAcc::default(); 10];
        integrate(&mut acc, 1.0, 1.0, 0.5, 3.5, [1.0, 0.0, 0.0, 2.0]);
        assert_eq!(acc[0].total, 1.0);
        assert_eq!(acc[1].total, 1.0);
        assert_eq!(acc[2].total, 0.5);
        assert_eq!(acc[2].block, 1.0);
        assert_eq!(acc[3].total, 0.0);
    }
}

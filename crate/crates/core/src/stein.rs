//! Stein's-method quantities for the many-server chain and the bounds they yield.
//!
//! The comparison generator is one-dimensional: `Lg(x) = -g'(x) log N/√N`
//! acting on `x = Σ_i S_i`. With `h(x) = max{x - τ, 0}` the Stein equation
//! `Lg = h` has the closed-form solution
//!
//! ```text
//! g(x) = 0                        x ≤ τ
//! g(x) = -(√N / 2 log N)(x - τ)²  x > τ
//! ```
//!
//! Everything here is checked numerically against exact stationary laws:
//! the identity `E[h] = E[Lg - Gg]`, Lyapunov drift of
//! `V(s) = min{Σ_{i≥2} s_i, τ - s_1}`, the geometric tail bound it implies,
//! and the closed-form performance bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::StationaryDist;
use crate::model::{enumerate_states, for_each_move, Occupancy, SystemConfig};
use crate::policies::{fill_routing_law, routing_law, Policy};

/// Grid resolution of [`gradient_bound_check`].
pub const GRADIENT_GRID_POINTS: usize = 10_000;
/// Violating states kept verbatim in a [`DriftReport`].
const MAX_LISTED_VIOLATIONS: usize = 64;

/// Thresholds shared by `h`, `g` and `V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SteinContext {
    /// `τ = λ + k log N/√N`.
    pub tau: f64,
    /// `√N / log N`.
    pub slope: f64,
    /// `log N / √N`.
    pub scale: f64,
    /// `k̃ log N/√N`, the collapse level for `V`.
    pub tilde_tau: f64,
    /// `1 - 1/(4(b-1))`, the contraction factor on the collapsed region.
    pub contraction: f64,
    pub n: f64,
}

impl SteinContext {
    pub fn new(config: &SystemConfig) -> Self {
        let scale = config.scale();
        Self {
            tau: config.tau(),
            slope: 1.0 / scale,
            scale,
            tilde_tau: config.k_tilde() * scale,
            contraction: 1.0 - 1.0 / (4.0 * (config.b() as f64 - 1.0)),
            n: config.n_f64(),
        }
    }

    /// `h(x) = max{x - τ, 0}`.
    pub fn h(&self, x: f64) -> f64 {
        (x - self.tau).max(0.0)
    }

    pub fn g(&self, x: f64) -> f64 {
        let d = x - self.tau;
        if d <= 0.0 {
            0.0
        } else {
            -0.5 * self.slope * d * d
        }
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        -self.slope * (x - self.tau).max(0.0)
    }

    /// Left limit at `τ`.
    pub fn g_double_prime(&self, x: f64) -> f64 {
        if x > self.tau {
            -self.slope
        } else {
            0.0
        }
    }

    /// `Lg(x) = g'(x) · (-log N/√N)`.
    pub fn lg(&self, x: f64) -> f64 {
        -self.g_prime(x) * self.scale
    }
}

pub fn eval_h(x: f64, ctx: &SteinContext) -> f64 {
    ctx.h(x)
}

pub fn eval_g(x: f64, ctx: &SteinContext) -> f64 {
    ctx.g(x)
}

pub fn eval_g_prime(x: f64, ctx: &SteinContext) -> f64 {
    ctx.g_prime(x)
}

pub fn eval_g_double_prime(x: f64, ctx: &SteinContext) -> f64 {
    ctx.g_double_prime(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub grid_points: usize,
    /// `max |g'| · √N log N / 2` over `[τ - 2/N, τ + 2/N]`.
    pub max_g1_ratio: f64,
    /// `max |g''| · log N / √N` over `(τ, τ + 1]`.
    pub max_g2_ratio: f64,
    pub holds: bool,
}

/// Dense-grid check of `|g'| ≤ 2/(√N log N)` near `τ` and `|g''| ≤ √N/log N`
/// above it.
pub fn gradient_bound_check(config: &SystemConfig) -> GradientReport {
    let ctx = SteinContext::new(config);
    let n = ctx.n;
    let g1_limit = 2.0 / (n.sqrt() * config.log_n());
    let m = GRADIENT_GRID_POINTS;
    let lo = ctx.tau - 2.0 / n;
    let hi = ctx.tau + 2.0 / n;
    let max_g1 = (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .map(|x| ctx.g_prime(x).abs() / g1_limit)
        .fold(0.0, f64::max);
    let max_g2 = (1..=m)
        .map(|i| ctx.tau + i as f64 / m as f64)
        .map(|x| ctx.g_double_prime(x).abs() / ctx.slope)
        .fold(0.0, f64::max);
    GradientReport {
        grid_points: m,
        max_g1_ratio: max_g1,
        max_g2_ratio: max_g2,
        holds: max_g1 <= 1.0 + 1e-12 && max_g2 <= 1.0 + 1e-12,
    }
}

/// `V(s) = min{Σ_{i≥2} S_i, τ - S_1}`. Negative whenever `S_1 > τ`.
pub fn eval_v(state: &Occupancy, ctx: &SteinContext) -> f64 {
    // Σ_{i≥2} S_i = (jobs - servers holding ≥ 1) / N
    let n = f64::from(state.servers());
    let upper_sum = (state.jobs() - u64::from(state.tail_count(1))) as f64 / n;
    upper_sum.min(ctx.tau - state.tail(1))
}

/// `Σ rate · (f(s') - f(s))` over the moves out of `state`.
pub fn drift_of(
    f: impl Fn(&Occupancy) -> f64,
    state: &Occupancy,
    policy: Policy,
    config: &SystemConfig,
) -> Result<f64> {
    let here = f(state);
    let law = routing_law(policy, state, config);
    let mut drift = 0.0;
    let mut target = state.counts().to_vec();
    let mut err = None;
    for_each_move(
        state.counts(),
        law.probabilities(),
        config.lambda() * config.n_f64(),
        |mv, rate| {
            target.copy_from_slice(state.counts());
            mv.apply_to(&mut target);
            match Occupancy::new(target.clone()) {
                Ok(next) => drift += rate * (f(&next) - here),
                Err(e) => err = Some(e),
            }
        },
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(drift),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    /// States with `V(s) ≥ log N/√N`.
    pub checked_states: usize,
    pub worst_drift: f64,
    pub worst_state: Option<Occupancy>,
    /// `-log N/(2(b-1)√N) + 1/√N`.
    pub bound: f64,
    pub violation_count: usize,
    /// Up to the first 64 violating states, in enumeration order.
    pub violations: Vec<(Occupancy, f64)>,
    /// `τ ≥ 1`: the region `S_1 ≤ τ` covers every state.
    pub premise_vacuous: bool,
    /// `A_1 ≤ 1/√N` on every checked state with `S_1 ≤ τ`.
    pub premise_a1_held: bool,
}

impl DriftReport {
    pub fn satisfied(&self) -> bool {
        self.violation_count == 0
    }
}

/// Exhaustive Lyapunov drift check on every state with `V(s) ≥ log N/√N`.
pub fn drift_condition_report(
    config: &SystemConfig,
    policy: Policy,
    cap: usize,
) -> Result<DriftReport> {
    let ctx = SteinContext::new(config);
    let bound = -ctx.scale / (2.0 * (config.b() as f64 - 1.0)) + 1.0 / config.sqrt_n();
    let a1_limit = 1.0 / config.sqrt_n();
    let mut report = DriftReport {
        checked_states: 0,
        worst_drift: f64::NEG_INFINITY,
        worst_state: None,
        bound,
        violation_count: 0,
        violations: Vec::new(),
        premise_vacuous: ctx.tau >= 1.0,
        premise_a1_held: true,
    };
    for s in enumerate_states(config, cap)? {
        if eval_v(&s, &ctx) < ctx.scale {
            continue;
        }
        report.checked_states += 1;
        if s.tail(1) <= ctx.tau && routing_law(policy, &s, config).a1() > a1_limit {
            report.premise_a1_held = false;
        }
        let d = drift_of(|x| eval_v(x, &ctx), &s, policy, config)?;
        if d > report.worst_drift {
            report.worst_drift = d;
            report.worst_state = Some(s.clone());
        }
        if d > bound {
            report.violation_count += 1;
            if report.violations.len() < MAX_LISTED_VIOLATIONS {
                report.violations.push((s, d));
            }
        }
    }
    Ok(report)
}

/// Constants of the geometric tail bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBoundInputs {
    pub gamma: f64,
    /// Level `B` above which the drift is at most `-γ`.
    pub level: f64,
    pub nu_max: f64,
    pub q_max: f64,
}

/// `(q_max ν_max / (q_max ν_max + γ))^(j+1)`, bounding `Pr(V > B + 2 ν_max j)`.
pub fn tail_bound(inputs: &TailBoundInputs, j: u32) -> Result<f64> {
    if inputs.gamma.is_nan() || inputs.gamma <= 0.0 {
        return Err(Error::NonpositiveGamma(inputs.gamma));
    }
    let qv = inputs.q_max * inputs.nu_max;
    let ratio = qv / (qv + inputs.gamma);
    Ok(ratio.powf(f64::from(j) + 1.0).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRow {
    pub j: u32,
    pub level: f64,
    pub exact_tail: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCheckReport {
    pub inputs: TailBoundInputs,
    /// `γ > 0` on the chain, so the bound applies.
    pub applicable: bool,
    pub max_v: f64,
    /// States with `V > B` and nonnegative drift (empty when applicable).
    pub drift_failures: usize,
    pub rows: Vec<TailRow>,
    pub violations: usize,
    /// Smallest `V` level above which every state has strictly negative
    /// drift; `None` if no state above the minimum `V` qualifies.
    pub certified_level: Option<f64>,
}

struct VProfile {
    values: Vec<f64>,
    drifts: Vec<f64>,
    nu_max: f64,
    q_max: f64,
}

fn v_profile(config: &SystemConfig, policy: Policy, dist: &StationaryDist) -> Result<VProfile> {
    let ctx = SteinContext::new(config);
    let values: Vec<f64> = dist.states().iter().map(|s| eval_v(s, &ctx)).collect();
    let arrival_rate = config.lambda() * config.n_f64();
    let mut drifts = Vec::with_capacity(values.len());
    let mut nu_max = 0.0f64;
    let mut q_max = 0.0f64;
    let mut law = vec![0.0; config.b() + 1];
    for (s, &v) in dist.states().iter().zip(&values) {
        fill_routing_law(policy, s.counts(), &mut law);
        let mut target = s.counts().to_vec();
        let mut drift = 0.0;
        let mut up = 0.0;
        for_each_move(s.counts(), &law, arrival_rate, |mv, rate| {
            target.copy_from_slice(s.counts());
            mv.apply_to(&mut target);
            let next = Occupancy::new(target.clone()).expect("moves conserve servers");
            let dv = eval_v(&next, &ctx) - v;
            drift += rate * dv;
            nu_max = nu_max.max(dv.abs());
            if dv > 0.0 {
                up += rate;
            }
        })?;
        q_max = q_max.max(up);
        drifts.push(drift);
    }
    Ok(VProfile {
        values,
        drifts,
        nu_max,
        q_max,
    })
}

/// Compares the exact tail of `V` under `dist` with [`tail_bound`] at the
/// level `B = log N/√N`.
pub fn empirical_tail_check(
    config: &SystemConfig,
    policy: Policy,
    dist: &StationaryDist,
) -> Result<TailCheckReport> {
    empirical_tail_check_at(config, policy, dist, config.scale())
}

/// As [`empirical_tail_check`], with an explicit level `B`.
pub fn empirical_tail_check_at(
    config: &SystemConfig,
    policy: Policy,
    dist: &StationaryDist,
    level: f64,
) -> Result<TailCheckReport> {
    let profile = v_profile(config, policy, dist)?;
    let max_v = profile.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut gamma = f64::INFINITY;
    let mut drift_failures = 0;
    for (&v, &d) in profile.values.iter().zip(&profile.drifts) {
        if v > level {
            gamma = gamma.min(-d);
            if d >= 0.0 {
                drift_failures += 1;
            }
        }
    }
    // an empty region above B makes the premise hold for any γ; the bound
    // then only needs some positive value and every tail is zero anyway
    if gamma == f64::INFINITY {
        gamma = f64::MAX;
    }

    let certified_level = {
        let worst_nonneg = profile
            .values
            .iter()
            .zip(&profile.drifts)
            .filter(|(_, &d)| d >= 0.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        (worst_nonneg < max_v).then_some(worst_nonneg.max(0.0))
    };

    let inputs = TailBoundInputs {
        gamma,
        level,
        nu_max: profile.nu_max,
        q_max: profile.q_max,
    };
    let applicable = gamma > 0.0 && profile.nu_max > 0.0;
    let mut rows = Vec::new();
    let mut violations = 0;
    if applicable {
        let span = ((max_v - level) / (2.0 * profile.nu_max)).ceil().max(0.0) as u32;
        for j in 0..=span {
            let l = level + 2.0 * profile.nu_max * f64::from(j);
            let exact_tail: f64 = profile
                .values
                .iter()
                .zip(dist.probs())
                .filter(|(&v, _)| v > l)
                .map(|(_, &p)| p)
                .sum();
            let bound = tail_bound(&inputs, j)?;
            if exact_tail > bound {
                violations += 1;
            }
            rows.push(TailRow {
                j,
                level: l,
                exact_tail,
                bound,
                margin: bound - exact_tail,
            });
        }
    }
    Ok(TailCheckReport {
        inputs,
        applicable,
        max_v,
        drift_failures,
        rows,
        violations,
        certified_level,
    })
}

/// `Pr(V ≥ k̃ log N/√N) ≤ exp(-log²N/(32(b-1)²) + log N/(16(b-1)))`.
pub fn ssc_bound(config: &SystemConfig) -> f64 {
    ssc_bound_from(config.log_n(), config.b())
}

pub fn ssc_bound_from(log_n: f64, b: usize) -> f64 {
    let bm1 = b as f64 - 1.0;
    (-log_n * log_n / (32.0 * bm1 * bm1) + log_n / (16.0 * bm1)).exp()
}

/// `29b / (√N log N)`, the bound on `E[max{Σ S_i - τ, 0}]` as stated.
pub fn theorem_bound(config: &SystemConfig) -> f64 {
    29.0 * config.b() as f64 / (config.sqrt_n() * config.log_n())
}

/// `29(b-1) / (√N log N)`, the constant reached at the end of the argument.
pub fn theorem_bound_proof(config: &SystemConfig) -> f64 {
    29.0 * (config.b() as f64 - 1.0) / (config.sqrt_n() * config.log_n())
}

/// An empirical value set against a bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub quantity: String,
    pub empirical: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// `bound - empirical`.
    pub margin: f64,
}

impl BoundReport {
    pub fn new(quantity: impl Into<String>, empirical: f64, bound: f64) -> Self {
        Self {
            quantity: quantity.into(),
            empirical,
            bound,
            satisfied: empirical <= bound,
            margin: bound - empirical,
        }
    }
}

/// A bound awaiting its empirical counterpart. `quantity` names the metric
/// it applies to (`excess`, `mean_wait`, `p_wait`, `p_block`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTemplate {
    pub quantity: &'static str,
    pub bound: f64,
}

impl BoundTemplate {
    pub fn report(&self, empirical: f64) -> BoundReport {
        BoundReport::new(self.quantity, empirical, self.bound)
    }
}

/// Performance bounds that apply to `policy`.
///
/// JSQ, I1F and power-of-d get waiting time, waiting probability and
/// blocking bounds; JIQ only a waiting probability bound.
pub fn corollary_bounds(config: &SystemConfig, policy: Policy) -> Result<Vec<BoundTemplate>> {
    let ln = config.log_n();
    let sq = config.sqrt_n();
    let wait = BoundTemplate {
        quantity: "mean_wait",
        bound: 3.0 * ln / sq,
    };
    let p_wait = BoundTemplate {
        quantity: "p_wait",
        bound: 4.0 * ln / sq,
    };
    match policy {
        Policy::Jsq | Policy::I1f => Ok(vec![
            wait,
            p_wait,
            BoundTemplate {
                quantity: "p_block",
                bound: 29.0 / (sq * ln),
            },
        ]),
        Policy::Pod { .. } => Ok(vec![
            wait,
            p_wait,
            BoundTemplate {
                quantity: "p_block",
                bound: 30.0 / (sq * ln),
            },
        ]),
        Policy::Jiq => {
            // N^(0.5 - α) = √N · N^(-α) = √N (1 - λ)
            let scale = sq * (1.0 - config.lambda());
            Ok(vec![BoundTemplate {
                quantity: "p_wait",
                bound: 30.0 * config.b() as f64 / (scale * ln),
            }])
        }
        Policy::Random => Err(Error::UnsupportedPolicy(policy.to_string())),
    }
}

/// Theorem bound on the excess followed by [`corollary_bounds`] (when any).
pub fn all_bounds(config: &SystemConfig, policy: Policy) -> Vec<BoundTemplate> {
    let mut out = vec![BoundTemplate {
        quantity: "excess",
        bound: theorem_bound(config),
    }];
    if let Ok(more) = corollary_bounds(config, policy) {
        out.extend(more);
    }
    out
}

/// Power-of-d blocking split: `(1 - N^(-α))^(N^α log N) + Pr(Σ S_i > b - b N^(-α))`.
pub fn pod_blocking_split(config: &SystemConfig, high_load_prob: f64) -> f64 {
    let idle = 1.0 - config.lambda();
    if idle <= 0.0 {
        return 1.0 + high_load_prob;
    }
    (1.0 - idle).powf(config.log_n() / idle) + high_load_prob
}

/// Exact check of `E[h] = E[Lg - Gg]` and of the three-term upper bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteinReport {
    /// `E[h(Σ S_i)]`.
    pub expected_h: f64,
    /// `E[Lg - Gg]`.
    pub generator_side: f64,
    pub identity_residual: f64,
    /// `E[G f]` for `f = Σ S_i`, `V`, `g(Σ S_i)`.
    pub stationarity: [f64; 3],
    /// Drift-correction term on `Σ S_i > τ + 1/N`, curvature term
    /// `(2/N) max |g''|`, and boundary term on `|Σ S_i - τ| ≤ 1/N`.
    pub terms: [f64; 3],
    pub inequality_holds: bool,
}

pub fn stein_decomposition_check(
    dist: &StationaryDist,
    config: &SystemConfig,
    policy: Policy,
) -> Result<SteinReport> {
    if config.n() < 2 {
        // log N = 0 leaves g without a finite slope
        return Err(Error::InvalidConfig(
            "the Stein decomposition needs N >= 2".into(),
        ));
    }
    let ctx = SteinContext::new(config);
    let n = ctx.n;
    let lambda = config.lambda();
    let step = 1.0 / n;

    let mut expected_h = 0.0;
    let mut generator_side = 0.0;
    let mut stationarity = [0.0; 3];
    let mut t1 = 0.0;
    let mut t3 = 0.0;
    for (s, p) in dist.iter() {
        let x = s.load();
        let gg = drift_of(|y| ctx.g(y.load()), s, policy, config)?;
        expected_h += p * ctx.h(x);
        generator_side += p * (ctx.lg(x) - gg);
        stationarity[0] += p * drift_of(|y| y.load(), s, policy, config)?;
        stationarity[1] += p * drift_of(|y| eval_v(y, &ctx), s, policy, config)?;
        stationarity[2] += p * gg;

        let law = routing_law(policy, s, config);
        let block = law.block();
        let s1 = s.tail(1);
        if x > ctx.tau + step {
            t1 += p * ctx.g_prime(x) * (lambda * block - lambda - ctx.scale + s1);
        } else if x >= ctx.tau - step {
            // exact difference quotients stand in for g'(ξ), g'(ξ̃)
            let up = ((ctx.g(x + step) - ctx.g(x)) / step).abs();
            let down = ((ctx.g(x - step) - ctx.g(x)) / step).abs();
            t3 += p * (ctx.lg(x) + lambda * (1.0 - block) * up + s1 * down);
        }
    }
    let t2 = 2.0 / n * ctx.slope;
    let terms = [t1, t2, t3];
    Ok(SteinReport {
        expected_h,
        generator_side,
        identity_residual: (expected_h - generator_side).abs(),
        stationarity,
        terms,
        inequality_holds: expected_h <= t1 + t2 + t3 + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::solve;
    use crate::model::DEFAULT_STATE_CAP;

    fn occ(c: &[u32]) -> Occupancy {
        Occupancy::new(c.to_vec()).unwrap()
    }

    #[test]
    fn h_examples() {
        let c = SystemConfig::with_alpha(100, 0.3, 2).unwrap();
        let ctx = SteinContext::new(&c);
        assert_eq!(eval_h(ctx.tau, &ctx), 0.0);
        assert_eq!(eval_h(ctx.tau - 1.0, &ctx), 0.0);
        assert!((eval_h(ctx.tau + 0.2, &ctx) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn g_examples() {
        let c = SystemConfig::with_alpha(100, 0.3, 2).unwrap();
        let ctx = SteinContext::new(&c);
        for x in [ctx.tau - 0.5, ctx.tau] {
            assert_eq!(eval_g(x, &ctx), 0.0);
            assert_eq!(eval_g_prime(x, &ctx), 0.0);
        }
        // 2 / (10 · ln 100) = 0.0434294...
        let d = eval_g_prime(ctx.tau + 2.0 / 100.0, &ctx).abs();
        assert!((d - 0.043_429_448).abs() < 1e-8, "{d}");
        assert!((eval_g_double_prime(ctx.tau + 0.1, &ctx).abs() - 10.0 / 100f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn stein_equation_holds_pointwise() {
        for n in [10u32, 100, 10_000] {
            let c = SystemConfig::with_alpha(n, 0.3, 3).unwrap();
            let ctx = SteinContext::new(&c);
            for i in 0..=2000 {
                let x = 3.0 * f64::from(i) / 2000.0;
                let residual = ctx.g_prime(x) * (-ctx.scale) - ctx.h(x);
                assert!(residual.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_bounds_on_grid() {
        let r = gradient_bound_check(&SystemConfig::with_alpha(100, 0.3, 2).unwrap());
        assert!((r.max_g1_ratio - 1.0).abs() < 1e-9, "{r:?}");
        assert!(r.holds);
        let r = gradient_bound_check(&SystemConfig::with_alpha(10_000, 0.3, 2).unwrap());
        assert_eq!(r.max_g2_ratio, 1.0);
    }

    #[test]
    fn v_examples() {
        let c = SystemConfig::with_lambda(4, 0.5, 2).unwrap();
        let ctx = SteinContext::new(&c);
        assert_eq!(eval_v(&Occupancy::empty(&c), &ctx), 0.0);
        assert!((eval_v(&Occupancy::full(&c), &ctx) - (1.0f64).min(ctx.tau - 1.0)).abs() < 1e-15);
        assert!((eval_v(&occ(&[0, 4, 0]), &ctx) - (ctx.tau - 1.0).min(0.0)).abs() < 1e-15);
    }

    #[test]
    fn drift_examples() {
        let c = SystemConfig::with_lambda(2, 0.5, 2).unwrap();
        let ctx = SteinContext::new(&c);
        let empty = Occupancy::empty(&c);
        assert_eq!(drift_of(|_| 3.0, &empty, Policy::Jsq, &c).unwrap(), 0.0);
        assert!((drift_of(|s| s.load(), &empty, Policy::Jsq, &c).unwrap() - 0.5).abs() < 1e-15);
        // all-full: one departure at rate 2 to (0,1,1)
        let full = Occupancy::full(&c);
        let d = drift_of(|s| eval_v(s, &ctx), &full, Policy::Jsq, &c).unwrap();
        let want = 2.0 * (eval_v(&occ(&[0, 1, 1]), &ctx) - eval_v(&full, &ctx));
        assert!((d - want).abs() < 1e-15);
    }

    #[test]
    fn tail_bound_examples() {
        let inputs = TailBoundInputs {
            gamma: 0.1,
            level: 0.0,
            nu_max: 1.0 / 50.0,
            q_max: 50.0,
        };
        assert!((tail_bound(&inputs, 9).unwrap() - (1.0f64 / 1.1).powi(10)).abs() < 1e-15);
        assert!((tail_bound(&inputs, 9).unwrap() - 0.385_543).abs() < 1e-6);
        let huge = TailBoundInputs {
            gamma: 1e300,
            ..inputs
        };
        assert!(tail_bound(&huge, 0).unwrap() < 1e-299);
        let zero = TailBoundInputs {
            gamma: 0.0,
            ..inputs
        };
        assert_eq!(tail_bound(&zero, 0), Err(Error::NonpositiveGamma(0.0)));
    }

    #[test]
    fn ssc_examples() {
        assert!((ssc_bound_from(10.0, 2) - (-2.5f64).exp()).abs() < 1e-15);
        assert!((ssc_bound_from(10.0, 2) - 0.082_085).abs() < 1e-6);
        assert!((ssc_bound_from(32.0, 2) - (-30.0f64).exp()).abs() < 1e-25);
        // Increasing while b - 1 <= log N, then above 1 and decaying back to it.
        let mut prev = 0.0;
        for b in 2..=11 {
            let v = ssc_bound_from(10.0, b);
            assert!(v >= prev);
            prev = v;
        }
        assert!((ssc_bound_from(10.0, 11) - (1.0f64 / 32.0).exp()).abs() < 1e-15);
        for b in 12..200 {
            let v = ssc_bound_from(10.0, b);
            assert!(v <= prev && v > 1.0);
            prev = v;
        }
    }

    #[test]
    fn theorem_examples() {
        let c2 = SystemConfig::with_alpha(10_000, 0.3, 2).unwrap();
        let c3 = SystemConfig::with_alpha(10_000, 0.3, 3).unwrap();
        assert!((theorem_bound(&c2) - 58.0 / (100.0 * 10_000f64.ln())).abs() < 1e-15);
        assert!((theorem_bound(&c2) - 0.062_973).abs() < 1e-6);
        assert!((theorem_bound(&c2) / theorem_bound(&c3) - 2.0 / 3.0).abs() < 1e-15);
        assert!((theorem_bound_proof(&c2) - theorem_bound(&c2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn corollary_examples() {
        let c = SystemConfig::with_alpha(10_000, 0.3, 2).unwrap();
        let jsq = corollary_bounds(&c, Policy::Jsq).unwrap();
        assert_eq!(jsq[0].quantity, "mean_wait");
        assert!((jsq[0].bound - 0.276_310).abs() < 1e-6);
        assert!((jsq[1].bound - 0.368_414).abs() < 1e-6);
        let jiq = corollary_bounds(&c, Policy::Jiq).unwrap();
        let want = 60.0 / (10_000f64.powf(0.2) * 10_000f64.ln());
        assert!((jiq[0].bound - want).abs() < 1e-12);
        assert!(matches!(
            corollary_bounds(&c, Policy::Random),
            Err(Error::UnsupportedPolicy(_))
        ));
        assert_eq!(all_bounds(&c, Policy::Jsq).len(), 4);
        assert_eq!(all_bounds(&c, Policy::Random).len(), 1);
    }

    #[test]
    fn pod_split_first_term() {
        let c = SystemConfig::with_alpha(10_000, 0.3, 2).unwrap();
        let idle = 10_000f64.powf(-0.3);
        let want = (1.0 - idle).powf(10_000f64.powf(0.3) * 10_000f64.ln());
        assert!((pod_blocking_split(&c, 0.0) - want).abs() < 1e-12);
    }

    #[test]
    fn collapse_identities_hold_exhaustively() {
        for (n, b) in [(10u32, 2usize), (12, 3), (8, 4)] {
            let c = SystemConfig::with_lambda(n, 0.9, b).unwrap();
            let ctx = SteinContext::new(&c);
            for s in enumerate_states(&c, DEFAULT_STATE_CAP).unwrap() {
                if s.load() <= ctx.tau + 1.0 / ctx.n {
                    continue;
                }
                let v = eval_v(&s, &ctx);
                assert!((v - (ctx.tau - s.tail(1))).abs() < 1e-12);
                if v <= ctx.tilde_tau {
                    let lhs = c.lambda() + ctx.scale - s.tail(1);
                    assert!(lhs <= ctx.contraction * ctx.scale + 1e-12);
                }
            }
        }
    }

    #[test]
    fn stein_identity_small_chain() {
        let c = SystemConfig::with_alpha(10, 0.3, 2).unwrap();
        let (_, dist, _) = solve(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        let r = stein_decomposition_check(&dist, &c, Policy::Jsq).unwrap();
        assert!(r.identity_residual < 1e-9, "{r:?}");
        assert!(r.inequality_holds);
        assert!(r.stationarity.iter().all(|v| v.abs() < 1e-10), "{r:?}");
    }

    #[test]
    fn stein_identity_zero_load() {
        let c = SystemConfig::with_lambda(6, 0.0, 2).unwrap();
        let gen = crate::exact::build_generator(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        let dist = crate::exact::stationary(&gen).unwrap();
        let r = stein_decomposition_check(&dist, &c, Policy::Jsq).unwrap();
        assert_eq!(r.expected_h, 0.0);
        assert_eq!(r.generator_side, 0.0);
    }

    #[test]
    fn stein_decomposition_rejects_single_server() {
        let c = SystemConfig::with_lambda(1, 0.5, 2).unwrap();
        let (_, dist, _) = solve(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        assert!(matches!(
            stein_decomposition_check(&dist, &c, Policy::Jsq),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn empty_drift_region_is_vacuous() {
        // N = 2, λ = 0.1: the largest V is 0.335 < log 2/√2
        let c = SystemConfig::with_lambda(2, 0.1, 2).unwrap();
        let r = drift_condition_report(&c, Policy::Jsq, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(r.checked_states, 0);
        assert!(r.satisfied());
        assert!(r.violations.is_empty());
    }
}

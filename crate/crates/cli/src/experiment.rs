//! Runs an experiment grid and collects result rows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lbstein_core::exact::{self, ExactMetrics, GeneratorMatrix, StationaryDist};
use lbstein_core::policies::{condition_report, ConditionMode, ConditionReport};
use lbstein_core::sim::{simulate, SimMetrics};
use lbstein_core::stein::{
    all_bounds, drift_condition_report, empirical_tail_check, stein_decomposition_check,
    BoundReport, DriftReport, SteinReport, TailCheckReport,
};
use lbstein_core::{Error as CoreError, Policy, SystemConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GridPoint, Mode, SCHEMA_VERSION};
use crate::error::CliError;

/// Tolerance on `max |πQ|` for the exact solve to count as correct.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Tolerance on `|Σπ - 1|`.
pub const MASS_TOLERANCE: f64 = 1e-12;
/// Tolerance on `|E[h] - E[Lg - Gg]|`.
pub const STEIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exact,
    Sim,
    Bound,
}

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    #[serde(rename = "N")]
    pub n: u32,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub b: usize,
    pub policy: String,
    pub d: Option<u32>,
    pub metric: String,
    pub source: Source,
    pub value: Option<f64>,
    pub ci: Option<f64>,
    pub satisfied: Option<bool>,
    pub margin: Option<f64>,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Failing this row fails `verify`.
    #[serde(skip)]
    pub hard: bool,
}

impl ResultRow {
    /// Rebuilds the system configuration echoed in the row.
    pub fn system(&self) -> Result<SystemConfig, CoreError> {
        match self.alpha {
            Some(a) => SystemConfig::with_alpha(self.n, a, self.b),
            None => SystemConfig::with_lambda(self.n, self.lambda, self.b),
        }
    }

    /// The CSV record without the wall-time column.
    pub fn deterministic_part(&self) -> ResultRow {
        ResultRow {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Everything computed for one grid point.
#[derive(Clone, Debug, Serialize)]
pub struct PointSummary {
    pub index: usize,
    #[serde(rename = "N")]
    pub n: u32,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub b: usize,
    pub policy: String,
    pub d: Option<u32>,
    pub replication: usize,
    pub seed: u64,
    pub tau: f64,
    pub exact: Option<ExactMetrics>,
    pub sim: Option<SimMetrics>,
    pub pasta_consistent: Option<bool>,
    pub condition: Option<ConditionReport>,
    pub drift: Option<DriftReport>,
    pub tails: Option<TailCheckReport>,
    pub stein: Option<SteinReport>,
    pub bounds: Vec<BoundReport>,
    /// `excess · √N log N / b`, from simulation when available.
    pub scaled_excess: Option<f64>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Experiment {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub points: Vec<PointSummary>,
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
}

impl Experiment {
    /// Hard checks that failed.
    pub fn failures(&self) -> Vec<&ResultRow> {
        self.rows
            .iter()
            .filter(|r| r.hard && r.satisfied == Some(false))
            .collect()
    }

    /// Exit code for `verify`.
    pub fn verify_code(&self) -> i32 {
        if self.failures().is_empty() {
            crate::exit::OK
        } else {
            crate::exit::CHECK_FAILED
        }
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.points
            .iter()
            .flat_map(|p| p.warnings.iter().map(String::as_str))
    }

    pub fn csv_string(&self) -> Result<String, CliError> {
        write_rows(Vec::new(), &self.rows).map(|buf| String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Writes `<name>.csv` and `<name>.json` under `dir`; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let csv_path = dir.join(format!("{}.csv", self.config.name));
        let json_path = dir.join(format!("{}.json", self.config.name));
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |e| CliError::Io { path: p, source: e }
        };
        fs::write(&csv_path, self.csv_string()?).map_err(io_err(&csv_path))?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&json_path, json).map_err(io_err(&json_path))?;
        Ok((csv_path, json_path))
    }

    /// Plain-text table of every row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>7} {:>7} {:>2} {:<8} {:<26} {:<6} {:>13} {:>11} {:>5} {:>12}",
            "N", "lambda", "b", "policy", "metric", "source", "value", "ci", "ok", "margin"
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
        for r in &self.rows {
            let ok = match r.satisfied {
                Some(true) => "yes",
                Some(false) => "NO",
                None => "-",
            };
            let policy = match r.d {
                Some(d) => format!("{}:{d}", r.policy),
                None => r.policy.clone(),
            };
            let _ = writeln!(
                out,
                "{:>7} {:>7.4} {:>2} {:<8} {:<26} {:<6} {:>13} {:>11} {:>5} {:>12}",
                r.n,
                r.lambda,
                r.b,
                policy,
                r.metric,
                format!("{:?}", r.source).to_lowercase(),
                fmt(r.value),
                fmt(r.ci),
                ok,
                fmt(r.margin)
            );
        }
        out
    }
}

pub fn write_rows<W: std::io::Write>(w: W, rows: &[ResultRow]) -> Result<W, CliError> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer
        .into_inner()
        .map_err(|e| CliError::Csv(csv::Error::from(e.into_error())))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        let row: ResultRow = r?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(CliError::SchemaMismatch {
                found: row.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Runs every grid point, in parallel across points when `threads != Some(1)`.
/// Output order is always grid order.
pub fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Experiment, CliError> {
    let grid = cfg.grid()?;
    let run_all = || -> Result<Vec<_>, CliError> {
        // one exact solve per (system, policy), shared by its replications
        let solves: Vec<Option<ExactStage>> = grid
            .par_iter()
            .map(|p| {
                if p.replication == 0 && cfg.modes.iter().any(|m| m.needs_exact()) {
                    solve_stage(cfg, p).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_, CliError>>()?;
        grid.par_iter()
            .map(|p| {
                let stage = solves[p.index - p.replication].as_ref();
                run_point(cfg, p, stage)
            })
            .collect()
    };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::invalid("--threads", e))?
            .install(run_all)?,
        None => run_all()?,
    };
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (summary, mut point_rows) in results {
        rows.append(&mut point_rows);
        points.push(summary);
    }
    Ok(Experiment {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        points,
        rows,
    })
}

struct RowSink<'a> {
    point: &'a GridPoint,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        metric: &str,
        source: Source,
        value: Option<f64>,
        ci: Option<f64>,
        satisfied: Option<bool>,
        margin: Option<f64>,
        hard: bool,
    ) {
        let sys = &self.point.system;
        self.rows.push(ResultRow {
            schema_version: SCHEMA_VERSION,
            n: sys.n(),
            alpha: sys.alpha(),
            lambda: sys.lambda(),
            b: sys.b(),
            policy: self.point.policy.name().to_string(),
            d: self.point.policy.d(),
            metric: metric.to_string(),
            source,
            value,
            ci,
            satisfied,
            margin,
            seed: self.point.seed,
            wall_time_s: 0.0,
            hard,
        });
    }

    fn check(&mut self, metric: &str, source: Source, value: f64, limit: f64) {
        self.push(
            metric,
            source,
            Some(value),
            None,
            Some(value <= limit),
            Some(limit - value),
            true,
        );
    }
}

fn exact_named(m: &ExactMetrics) -> [(&'static str, f64); 5] {
    [
        ("mean_total", m.mean_total),
        ("excess", m.excess),
        ("p_wait", m.p_wait),
        ("p_block", m.p_block),
        ("mean_wait", m.mean_wait),
    ]
}

type Solved = (GeneratorMatrix, StationaryDist, ExactMetrics);

struct ExactStage {
    solved: Option<Solved>,
    warning: Option<String>,
    seconds: f64,
}

fn cap_warning(cfg: &ExperimentConfig, point: &GridPoint, what: &str, e: CoreError) -> Result<String, CliError> {
    match e {
        CoreError::CapExceeded { .. } if !cfg.require_exact => Ok(format!(
            "N = {}, b = {}, {}: {what} skipped: {e}",
            point.system.n(),
            point.system.b(),
            point.policy
        )),
        e => Err(CliError::Core(e)),
    }
}

fn solve_stage(cfg: &ExperimentConfig, point: &GridPoint) -> Result<ExactStage, CliError> {
    let start = Instant::now();
    let (solved, warning) = match exact::solve(&point.system, point.policy, cfg.state_cap) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(cap_warning(cfg, point, "exact solve", e)?)),
    };
    Ok(ExactStage {
        solved,
        warning,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_point(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    stage: Option<&ExactStage>,
) -> Result<(PointSummary, Vec<ResultRow>), CliError> {
    let start = Instant::now();
    let sys = &point.system;
    let policy = point.policy;
    let first = point.replication == 0;
    let mut warnings = Vec::new();
    let mut sink = RowSink {
        point,
        rows: Vec::new(),
    };

    if first {
        if let Some(w) = stage.and_then(|st| st.warning.clone()) {
            warnings.push(w);
        }
    }
    let exact_metrics = stage.and_then(|st| st.solved.as_ref()).map(|(_, _, m)| *m);
    let solved = if first {
        stage.and_then(|st| st.solved.as_ref())
    } else {
        None
    };

    if cfg.has(Mode::Exact) {
        if let Some((_, dist, m)) = solved {
            for (name, v) in exact_named(m) {
                sink.push(name, Source::Exact, Some(v), None, None, None, false);
            }
            sink.check("pi_residual", Source::Exact, dist.residual(), RESIDUAL_TOLERANCE);
            let mass: f64 = dist.probs().iter().sum();
            sink.check("pi_mass_error", Source::Exact, (mass - 1.0).abs(), MASS_TOLERANCE);
        }
    }

    let sim = if cfg.has(Mode::Simulate) {
        let spec = cfg.sim.spec_for(sys.n(), point.seed);
        let m = simulate(sys, policy, &spec)?;
        for (name, est) in m.named() {
            let reference = exact_metrics.map(|e| {
                exact_named(&e)
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| v)
                    .expect("same metric names")
            });
            let (satisfied, margin) = match reference {
                Some(v) => (
                    Some(est.contains(v)),
                    Some(est.half_width - (est.mean - v).abs()),
                ),
                None => (None, None),
            };
            sink.push(
                name,
                Source::Sim,
                Some(est.mean),
                Some(est.half_width),
                satisfied,
                margin,
                false,
            );
        }
        Some(m)
    } else {
        None
    };

    let drift = if first && cfg.has(Mode::Drift) {
        match drift_condition_report(sys, policy, cfg.state_cap) {
            Ok(r) => {
                let (value, margin) = if r.checked_states > 0 {
                    (Some(r.worst_drift), Some(r.bound - r.worst_drift))
                } else {
                    (None, None)
                };
                sink.push(
                    "lyapunov_drift_worst",
                    Source::Bound,
                    value,
                    None,
                    Some(r.satisfied()),
                    margin,
                    false,
                );
                Some(r)
            }
            Err(e) => {
                warnings.push(cap_warning(cfg, point, "drift check", e)?);
                None
            }
        }
    } else {
        None
    };

    let tails = match (solved, cfg.has(Mode::Tails)) {
        (Some((_, dist, _)), true) => {
            let r = empirical_tail_check(sys, policy, dist)?;
            let min_margin = r.rows.iter().map(|x| x.margin).fold(f64::INFINITY, f64::min);
            sink.push(
                "tail_gamma",
                Source::Exact,
                Some(r.inputs.gamma.min(f64::MAX)),
                None,
                None,
                None,
                false,
            );
            sink.push(
                "tail_bound_violations",
                Source::Bound,
                r.applicable.then_some(r.violations as f64),
                None,
                r.applicable.then_some(r.violations == 0),
                (r.applicable && min_margin.is_finite()).then_some(min_margin),
                true,
            );
            Some(r)
        }
        _ => None,
    };

    let stein = match (solved, cfg.has(Mode::Stein)) {
        (Some(_), true) if sys.n() < 2 => {
            warnings.push(format!("N = {}: stein check skipped, it needs N >= 2", sys.n()));
            None
        }
        (Some((_, dist, _)), true) => {
            let r = stein_decomposition_check(dist, sys, policy)?;
            sink.check(
                "stein_identity_residual",
                Source::Exact,
                r.identity_residual,
                STEIN_TOLERANCE,
            );
            let stationarity = r.stationarity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            sink.check(
                "stationarity_residual",
                Source::Exact,
                stationarity,
                RESIDUAL_TOLERANCE,
            );
            let rhs: f64 = r.terms.iter().sum();
            sink.push(
                "stein_three_term_bound",
                Source::Bound,
                Some(rhs),
                None,
                Some(r.inequality_holds),
                Some(rhs - r.expected_h),
                true,
            );
            Some(r)
        }
        _ => None,
    };

    let mut bounds = Vec::new();
    let mut condition = None;
    if cfg.has(Mode::Bounds) {
        condition = Some(condition_report(policy, sys, ConditionMode::Formula)?);
        for template in all_bounds(sys, policy) {
            let empirical = sim
                .as_ref()
                .and_then(|m| {
                    m.named()
                        .into_iter()
                        .find(|(n, _)| *n == template.quantity)
                        .map(|(_, e)| e.mean)
                })
                .or_else(|| {
                    exact_metrics.and_then(|e| {
                        exact_named(&e)
                            .into_iter()
                            .find(|(n, _)| *n == template.quantity)
                            .map(|(_, v)| v)
                    })
                });
            let (satisfied, margin) = match empirical {
                Some(v) => {
                    let r = template.report(v);
                    let out = (Some(r.satisfied), Some(r.margin));
                    bounds.push(r);
                    out
                }
                None => (None, None),
            };
            sink.push(
                template.quantity,
                Source::Bound,
                Some(template.bound),
                None,
                satisfied,
                margin,
                false,
            );
        }
    }

    let excess = sim
        .as_ref()
        .map(|m| m.excess.mean)
        .or(exact_metrics.map(|m| m.excess));
    let scaled_excess = excess.map(|e| scaled_excess(sys, e));

    let mut wall = start.elapsed().as_secs_f64();
    if first {
        wall += stage.map_or(0.0, |st| st.seconds);
    }
    let mut rows = sink.rows;
    for r in &mut rows {
        r.wall_time_s = wall;
    }
    let summary = PointSummary {
        index: point.index,
        n: sys.n(),
        alpha: sys.alpha(),
        lambda: sys.lambda(),
        b: sys.b(),
        policy: policy.name().to_string(),
        d: policy.d(),
        replication: point.replication,
        seed: point.seed,
        tau: sys.tau(),
        exact: exact_metrics,
        pasta_consistent: sim.as_ref().map(SimMetrics::pasta_consistent),
        sim,
        condition,
        drift,
        tails,
        stein,
        bounds,
        scaled_excess,
        warnings,
        wall_time_s: wall,
    };
    Ok((summary, rows))
}

/// `excess · √N log N / b`.
pub fn scaled_excess(sys: &SystemConfig, excess: f64) -> f64 {
    excess * sys.sqrt_n() * sys.log_n() / sys.b() as f64
}

/// Convenience for callers that only need the policy label used in rows.
pub fn policy_label(policy: Policy) -> String {
    policy.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn minimal_exact_run() {
        let c = cfg(r#"{"N": [10], "b": 2, "alpha": 0.3, "policies": ["jsq"], "modes": ["exact"]}"#);
        let exp = execute(&c, Some(1)).unwrap();
        let metrics: Vec<_> = exp
            .rows
            .iter()
            .filter(|r| r.source == Source::Exact && r.satisfied.is_none())
            .map(|r| r.metric.as_str())
            .collect();
        assert_eq!(metrics, ["mean_total", "excess", "p_wait", "p_block", "mean_wait"]);
        assert!(exp.failures().is_empty());
    }

    #[test]
    fn verify_style_run_is_green() {
        let c = cfg(
            r#"{"N": [10], "b": 2, "lambda": 0.9, "policies": ["jsq"],
                "modes": ["exact", "tails", "stein", "drift", "bounds"]}"#,
        );
        let exp = execute(&c, None).unwrap();
        assert!(exp.failures().is_empty(), "{}", exp.table());
        assert!(exp.rows.iter().any(|r| r.metric == "stein_identity_residual"));
    }

    #[test]
    fn failed_hard_check_sets_verify_code() {
        let c = cfg(r#"{"N": [4], "b": 2, "lambda": 0.5, "policies": ["jsq"], "modes": ["exact"]}"#);
        let mut exp = execute(&c, None).unwrap();
        assert_eq!(exp.verify_code(), crate::exit::OK);
        let row = exp.rows.iter_mut().find(|r| r.metric == "pi_residual").unwrap();
        row.satisfied = Some(false);
        assert_eq!(exp.verify_code(), crate::exit::CHECK_FAILED);
        // soft rows never fail verification
        let mut soft = execute(&c, None).unwrap();
        soft.rows[0].satisfied = Some(false);
        assert_eq!(soft.verify_code(), crate::exit::OK);
    }

    #[test]
    fn cap_exceeded_becomes_warning() {
        let c = cfg(
            r#"{"N": [50], "b": 3, "lambda": 0.5, "policies": ["jsq"], "modes": ["exact"],
                "state_cap": 100}"#,
        );
        let exp = execute(&c, None).unwrap();
        assert!(exp.rows.is_empty());
        assert_eq!(exp.warnings().count(), 1);

        let mut strict = c.clone();
        strict.require_exact = true;
        assert!(matches!(
            execute(&strict, None),
            Err(CliError::Core(CoreError::CapExceeded { .. }))
        ));
    }

    #[test]
    fn csv_round_trip_and_echo_revalidates() {
        let c = cfg(
            r#"{"N": [10], "b": 2, "alpha": 0.3, "policies": ["pod:auto", "random"],
                "modes": ["exact", "bounds"]}"#,
        );
        let exp = execute(&c, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, json_path) = exp.write(dir.path()).unwrap();
        let rows = read_rows(&csv_path).unwrap();
        assert_eq!(rows.len(), exp.rows.len());
        for (a, b) in rows.iter().zip(&exp.rows) {
            assert_eq!(a.deterministic_part().metric, b.metric);
            assert_eq!(a.value, b.value);
            a.system().unwrap();
        }
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["points"].as_array().unwrap().len(), 2);
        let header = std::fs::read_to_string(&csv_path).unwrap();
        assert!(header.starts_with(
            "schema_version,N,alpha,lambda,b,policy,d,metric,source,value,ci,satisfied,margin,seed,wall_time_s"
        ));
    }
}

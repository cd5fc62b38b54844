//! Experiment configuration files.
//!
//! A configuration is a JSON object. Scalars and lists are interchangeable
//! for the grid axes, so `"b": 2` and `"b": [2, 3]` both work.
//!
//! ```json
//! {
//!   "name": "sweep",
//!   "N": [100, 1000, 10000],
//!   "alpha": 0.3,
//!   "b": 2,
//!   "policies": ["jsq", "pod:auto"],
//!   "modes": ["simulate", "bounds"],
//!   "sim": { "horizon": 20000, "warmup": 2000, "batches": 20,
//!            "overrides": { "10000": { "horizon": 2000, "warmup": 200 } } },
//!   "seed": 7
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lbstein_core::{Policy, PolicySpec, SimSpec, SystemConfig, DEFAULT_STATE_CAP};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Exact stationary metrics.
    Exact,
    /// Batch-means simulation estimates.
    Simulate,
    /// Exhaustive Lyapunov drift check.
    Drift,
    /// Geometric tail-bound soundness on the exact law.
    Tails,
    /// Stein identity and three-term inequality on the exact law.
    Stein,
    /// Theorem and corollary bounds, compared with available estimates.
    Bounds,
}

impl Mode {
    pub fn needs_exact(self) -> bool {
        matches!(self, Mode::Exact | Mode::Tails | Mode::Stein)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Exact => "exact",
            Mode::Simulate => "simulate",
            Mode::Drift => "drift",
            Mode::Tails => "tails",
            Mode::Stein => "stein",
            Mode::Bounds => "bounds",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimOverride {
    pub horizon: Option<f64>,
    pub warmup: Option<f64>,
    pub batches: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Defaults to 10% of the horizon.
    pub warmup: Option<f64>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Independent seeds per grid point.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Per-`N` overrides, keyed by the decimal value of `N`.
    #[serde(default)]
    pub overrides: BTreeMap<String, SimOverride>,
}

fn default_horizon() -> f64 {
    1e5
}

fn default_batches() -> usize {
    20
}

fn default_replications() -> usize {
    1
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            warmup: None,
            batches: default_batches(),
            replications: default_replications(),
            overrides: BTreeMap::new(),
        }
    }
}

impl SimSection {
    /// The simulation spec for one grid point.
    pub fn spec_for(&self, n: u32, seed: u64) -> SimSpec {
        let o = self.overrides.get(&n.to_string()).cloned().unwrap_or_default();
        let horizon = o.horizon.unwrap_or(self.horizon);
        let warmup = o
            .warmup
            .or(if o.horizon.is_some() { None } else { self.warmup })
            .unwrap_or(0.1 * horizon);
        SimSpec {
            horizon,
            warmup,
            batches: o.batches.unwrap_or(self.batches),
            seed,
            initial_state: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Stem of the output files.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(rename = "N")]
    pub n: OneOrMany<u32>,
    #[serde(default)]
    pub alpha: Option<OneOrMany<f64>>,
    #[serde(default)]
    pub lambda: Option<OneOrMany<f64>>,
    pub b: OneOrMany<usize>,
    pub policies: Vec<String>,
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub state_cap: usize,
    /// Fail instead of skipping when the exact state space exceeds the cap.
    #[serde(default)]
    pub require_exact: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_name() -> String {
    "results".into()
}

fn default_cap() -> usize {
    DEFAULT_STATE_CAP
}

/// How a grid point specifies its load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Load {
    Alpha(f64),
    Lambda(f64),
}

/// One fully specified point of the experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub system: SystemConfig,
    pub policy: Policy,
    pub replication: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::ConfigParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn loads(&self) -> Result<Vec<Load>, CliError> {
        match (&self.alpha, &self.lambda) {
            (Some(a), None) => Ok(a.to_vec().into_iter().map(Load::Alpha).collect()),
            (None, Some(l)) => Ok(l.to_vec().into_iter().map(Load::Lambda).collect()),
            _ => Err(CliError::invalid(
                "alpha/lambda",
                "exactly one of `alpha` and `lambda` must be given",
            )),
        }
    }

    fn policy_specs(&self) -> Result<Vec<PolicySpec>, CliError> {
        self.policies
            .iter()
            .enumerate()
            .map(|(i, p)| {
                PolicySpec::from_str(p).map_err(|e| CliError::invalid(format!("policies[{i}]"), e))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::SchemaMismatch {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        if self.modes.is_empty() {
            return Err(CliError::invalid("modes", "at least one mode is required"));
        }
        if self.policies.is_empty() {
            return Err(CliError::invalid("policies", "at least one policy is required"));
        }
        if self.sim.replications == 0 {
            return Err(CliError::invalid("sim.replications", "must be at least 1"));
        }
        for key in self.sim.overrides.keys() {
            if key.parse::<u32>().is_err() {
                return Err(CliError::invalid(
                    format!("sim.overrides.{key}"),
                    "keys must be values of N",
                ));
            }
        }
        let points = self.grid()?;
        if self.has(Mode::Simulate) {
            for p in &points {
                self.sim
                    .spec_for(p.system.n(), p.seed)
                    .validate(&p.system)
                    .map_err(|e| CliError::invalid(format!("sim (N = {})", p.system.n()), e))?;
            }
        }
        Ok(())
    }

    pub fn has(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }

    /// Grid points in run order: `N`, then load, then `b`, then policy, then
    /// replication. Seeds depend only on the master seed and the run index.
    pub fn grid(&self) -> Result<Vec<GridPoint>, CliError> {
        let loads = self.loads()?;
        let specs = self.policy_specs()?;
        let mut out = Vec::new();
        for (ni, &n) in self.n.to_vec().iter().enumerate() {
            for (li, &load) in loads.iter().enumerate() {
                for (bi, &b) in self.b.to_vec().iter().enumerate() {
                    let system = match load {
                        Load::Alpha(a) => SystemConfig::with_alpha(n, a, b),
                        Load::Lambda(l) => SystemConfig::with_lambda(n, l, b),
                    }
                    .map_err(|e| {
                        CliError::invalid(format!("grid point N[{ni}], load[{li}], b[{bi}]"), e)
                    })?;
                    for spec in &specs {
                        let policy = spec.resolve(&system);
                        for replication in 0..self.sim.replications {
                            let index = out.len();
                            out.push(GridPoint {
                                index,
                                system: system.clone(),
                                policy,
                                replication,
                                seed: derive_seed(self.seed, index as u64),
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Seed of run `index`: SplitMix64 applied to `master + (index + 1)·φ`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{"N": [10], "b": 2, "alpha": 0.3, "policies": ["jsq"], "modes": ["exact"]}"#,
        )
        .unwrap();
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid[0].system.n(), 10);
        assert_eq!(grid[0].policy, Policy::Jsq);
    }

    #[test]
    fn grid_order_and_seeds() {
        let cfg = ExperimentConfig::from_json(
            r#"{"N": [10, 20], "b": [2, 3], "lambda": 0.5, "policies": ["jsq", "pod:auto"],
                "modes": ["simulate"], "seed": 11, "sim": {"replications": 2}}"#,
        )
        .unwrap();
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.len(), 16);
        assert_eq!(grid[0].system.b(), 2);
        assert_eq!(grid[2].policy.name(), "pod");
        assert_eq!(grid[4].system.b(), 3);
        assert_eq!(grid[8].system.n(), 20);
        assert_eq!(grid[1].replication, 1);
        let seeds: std::collections::HashSet<_> = grid.iter().map(|p| p.seed).collect();
        assert_eq!(seeds.len(), 16);
        assert_eq!(grid[3].seed, derive_seed(11, 3));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"N\": [10],\n  \"seed\": \"two\"\n}").unwrap_err();
        match err {
            CliError::ConfigParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::from_json(
            r#"{"N": [10], "b": 2, "alpha": 0.3, "policies": ["jsq"], "modes": ["exact"], "bogus": 1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = ExperimentConfig::from_json(
            r#"{"N": [10], "b": 1, "alpha": 0.3, "policies": ["jsq"], "modes": ["exact"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("b[0]"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"N": [10], "b": 2, "alpha": 0.3, "lambda": 0.5, "policies": ["jsq"], "modes": ["exact"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("alpha/lambda"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"N": [10], "b": 2, "alpha": 0.3, "policies": ["lwl"], "modes": ["exact"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("policies[0]"), "{err}");
    }

    #[test]
    fn sim_overrides() {
        let cfg = ExperimentConfig::from_json(
            r#"{"N": [10, 100], "b": 2, "alpha": 0.3, "policies": ["jsq"], "modes": ["simulate"],
                "sim": {"horizon": 1000, "warmup": 50, "overrides": {"100": {"horizon": 300}}}}"#,
        )
        .unwrap();
        let a = cfg.sim.spec_for(10, 1);
        assert_eq!((a.horizon, a.warmup), (1000.0, 50.0));
        let b = cfg.sim.spec_for(100, 1);
        assert_eq!((b.horizon, b.warmup), (300.0, 30.0));
    }
}

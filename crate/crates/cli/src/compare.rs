//! Scaled-quantity trends across system sizes.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;
use crate::experiment::{read_rows, ResultRow, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Flat,
    Nonincreasing,
    Increasing,
    Mixed,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Flat => "flat",
            Verdict::Nonincreasing => "nonincreasing",
            Verdict::Increasing => "increasing",
            Verdict::Mixed => "mixed",
        })
    }
}

/// A scaled value at one N. `ci` is the scaled half-width (0 for exact rows).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrendPoint {
    #[serde(rename = "N")]
    pub n: u32,
    pub value: f64,
    pub ci: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trend {
    pub policy: String,
    pub d: Option<u32>,
    pub b: usize,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub quantity: &'static str,
    pub points: Vec<TrendPoint>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendReport {
    pub trends: Vec<Trend>,
}

const QUANTITIES: [(&str, &str); 3] = [
    ("excess", "excess_scaled"),
    ("p_wait", "p_wait_scaled"),
    ("mean_wait", "mean_wait_scaled"),
];

fn scale_factor(metric: &str, n: u32, b: usize) -> f64 {
    let nf = f64::from(n);
    let (sqrt_n, log_n) = (nf.sqrt(), nf.ln());
    match metric {
        "excess" => sqrt_n * log_n / b as f64,
        _ => sqrt_n / log_n,
    }
}

/// Judges a sequence ordered by increasing N. Consecutive points count as
/// equal when they differ by no more than the sum of their half-widths.
pub fn verdict(points: &[TrendPoint]) -> Verdict {
    let steps: Vec<i8> = points
        .windows(2)
        .map(|w| {
            let tol = w[0].ci + w[1].ci + 1e-12 * w[0].value.abs().max(w[1].value.abs());
            let diff = w[1].value - w[0].value;
            if diff.abs() <= tol {
                0
            } else if diff < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect();
    if steps.iter().all(|&s| s == 0) {
        Verdict::Flat
    } else if steps.iter().all(|&s| s <= 0) {
        Verdict::Nonincreasing
    } else if steps.iter().all(|&s| s >= 0) {
        Verdict::Increasing
    } else {
        Verdict::Mixed
    }
}

type GroupKey = (String, Option<u32>, usize, Option<u64>, Option<u64>);

/// Builds trends from already-loaded rows. Simulated rows win over exact ones
/// for the same N; replications are averaged, with the half-width shrunk by √k.
pub fn trends(rows: &[ResultRow]) -> Result<TrendReport, CliError> {
    let distinct_n: std::collections::BTreeSet<u32> = rows.iter().map(|r| r.n).collect();
    if distinct_n.len() < 2 {
        return Err(CliError::NotEnoughN(distinct_n.len()));
    }

    // key -> metric -> N -> source -> (values, cis)
    type Cell = BTreeMap<u32, (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>;
    let mut groups: BTreeMap<GroupKey, BTreeMap<&'static str, Cell>> = BTreeMap::new();
    for r in rows {
        let Some((metric, _)) = QUANTITIES.iter().find(|(m, _)| *m == r.metric) else {
            continue;
        };
        let Some(value) = r.value else { continue };
        if r.source == Source::Bound {
            continue;
        }
        // Sorting keys on floats: the raw bits are exact echoes of the config.
        let key = (
            r.policy.clone(),
            r.d,
            r.b,
            r.alpha.map(f64::to_bits),
            r.alpha.is_none().then_some(r.lambda.to_bits()),
        );
        let cell = groups
            .entry(key)
            .or_default()
            .entry(metric)
            .or_default()
            .entry(r.n)
            .or_default();
        match r.source {
            Source::Sim => {
                cell.0.push(value);
                cell.1.push(r.ci.unwrap_or(0.0));
            }
            _ => {
                cell.2.push(value);
                cell.3.push(0.0);
            }
        }
    }

    let mut trends = Vec::new();
    for ((policy, d, b, alpha, lambda), metrics) in groups {
        for (metric, label) in QUANTITIES {
            let Some(by_n) = metrics.get(metric) else { continue };
            let points: Vec<TrendPoint> = by_n
                .iter()
                .map(|(&n, (sv, sc, ev, ec))| {
                    let (vals, cis) = if sv.is_empty() { (ev, ec) } else { (sv, sc) };
                    let k = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / k;
                    let ci = cis.iter().sum::<f64>() / k / k.sqrt();
                    let s = scale_factor(metric, n, b);
                    TrendPoint {
                        n,
                        value: mean * s,
                        ci: ci * s,
                    }
                })
                .collect();
            if points.len() < 2 {
                continue;
            }
            trends.push(Trend {
                policy: policy.clone(),
                d,
                b,
                alpha: alpha.map(f64::from_bits),
                lambda: lambda.map(f64::from_bits),
                quantity: label,
                verdict: verdict(&points),
                points,
            });
        }
    }
    Ok(TrendReport { trends })
}

pub fn compare_files<P: AsRef<Path>>(paths: &[P]) -> Result<TrendReport, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_rows(p.as_ref())?);
    }
    trends(&rows)
}

impl TrendReport {
    pub fn find(&self, policy: &str, quantity: &str) -> Option<&Trend> {
        self.trends
            .iter()
            .find(|t| t.policy == policy && t.quantity == quantity)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for t in &self.trends {
            let load = match (t.alpha, t.lambda) {
                (Some(a), _) => format!("alpha={a}"),
                (_, Some(l)) => format!("lambda={l}"),
                _ => String::new(),
            };
            let policy = match t.d {
                Some(d) => format!("{}:{d}", t.policy),
                None => t.policy.clone(),
            };
            let _ = writeln!(out, "{policy} b={} {load} {}: {}", t.b, t.quantity, t.verdict);
            for p in &t.points {
                let _ = writeln!(out, "  N={:<8} {:.6e} ± {:.3e}", p.n, p.value, p.ci);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SCHEMA_VERSION;

    fn row(n: u32, metric: &str, value: f64, ci: Option<f64>) -> ResultRow {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            n,
            alpha: Some(0.3),
            lambda: 1.0 - f64::from(n).powf(-0.3),
            b: 2,
            policy: "jsq".into(),
            d: None,
            metric: metric.into(),
            source: if ci.is_some() { Source::Sim } else { Source::Exact },
            value: Some(value),
            ci,
            satisfied: None,
            margin: None,
            seed: 1,
            wall_time_s: 0.0,
            hard: false,
        }
    }

    #[test]
    fn single_n_is_rejected() {
        let rows = vec![row(100, "excess", 0.1, None), row(100, "excess", 0.1, None)];
        assert!(matches!(trends(&rows), Err(CliError::NotEnoughN(1))));
    }

    #[test]
    fn duplicated_rows_give_flat_trend() {
        // Same scaled value at both N.
        let s = |n: u32| scale_factor("excess", n, 2);
        let rows = vec![
            row(100, "excess", 1.0 / s(100), None),
            row(100, "excess", 1.0 / s(100), None),
            row(400, "excess", 1.0 / s(400), None),
            row(400, "excess", 1.0 / s(400), None),
        ];
        let report = trends(&rows).unwrap();
        let t = report.find("jsq", "excess_scaled").unwrap();
        assert_eq!(t.verdict, Verdict::Flat);
        assert!((t.points[0].value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        let p = |value: f64, ci: f64| TrendPoint { n: 1, value, ci };
        assert_eq!(verdict(&[p(3.0, 0.0), p(2.0, 0.0), p(2.0, 0.0)]), Verdict::Nonincreasing);
        assert_eq!(verdict(&[p(1.0, 0.0), p(2.0, 0.0)]), Verdict::Increasing);
        assert_eq!(verdict(&[p(1.0, 0.6), p(2.0, 0.6)]), Verdict::Flat);
        assert_eq!(verdict(&[p(1.0, 0.0), p(2.0, 0.0), p(0.5, 0.0)]), Verdict::Mixed);
    }

    #[test]
    fn sim_rows_take_precedence() {
        let rows = vec![
            row(100, "p_wait", 0.5, None),
            row(100, "p_wait", 0.2, Some(0.01)),
            row(1000, "p_wait", 0.1, Some(0.01)),
        ];
        let report = trends(&rows).unwrap();
        let t = report.find("jsq", "p_wait_scaled").unwrap();
        let s = scale_factor("p_wait", 100, 2);
        assert!((t.points[0].value - 0.2 * s).abs() < 1e-12);
    }
}

//! Shared fixtures for the benchmarks.

use lbstein_core::{Policy, SystemConfig};

/// Configurations benchmarked for exact solves, smallest first.
pub fn exact_cases() -> Vec<(&'static str, SystemConfig, Policy)> {
    vec![
        ("n10_b2_jsq", SystemConfig::with_lambda(10, 0.9, 2).unwrap(), Policy::Jsq),
        ("n20_b3_pod2", SystemConfig::with_lambda(20, 0.9, 3).unwrap(), Policy::Pod { d: 2 }),
        ("n100_b2_jsq", SystemConfig::with_lambda(100, 0.9, 2).unwrap(), Policy::Jsq),
    ]
}

/// Configurations benchmarked for event throughput.
pub fn sim_cases() -> Vec<(&'static str, SystemConfig, Policy)> {
    let big = SystemConfig::with_alpha(10_000, 0.3, 2).unwrap();
    let pod = Policy::Pod {
        d: lbstein_core::policies::default_pod_d(&big),
    };
    vec![
        ("n10_jsq", SystemConfig::with_alpha(10, 0.3, 2).unwrap(), Policy::Jsq),
        ("n10000_jsq", big.clone(), Policy::Jsq),
        ("n10000_pod", big, pod),
    ]
}

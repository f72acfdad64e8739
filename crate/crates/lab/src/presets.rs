//! Built-in experiment configurations, one per verified weak-limit claim.
//!
//! Every preset carries its own seed so that a bare `--preset` run is
//! reproducible; `--seed` overrides it.

use crate::config::ExperimentConfig;

/// Critical stable-tailed offspring `s + 0.5 (1 - s)^1.5` with immigration
/// `1 - 0.5 (1 - s)^0.5`, level scaled by `b_n = n^2`.
const CBI_LEVEL_LAPLACE: &str = r#"{
    "experiment": "estimator-law",
    "model": {
        "n": 400,
        "offspring": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5},
        "immigration": {"family": "stable-immigration", "index": 0.5, "coeff": 0.5}
    },
    "scaling": {"b_n": "n^{1/(alpha-1)}", "alpha": 1.5},
    "estimator_law": {"law": "cbi-level", "alpha": 1.5, "gamma": 0.5, "varpi": 0.5, "se_multiple": 3.0},
    "run": {"replicates": 4000, "seed": 101, "lambdas": [1.0]}
}"#;

const STABLE_INCREMENT_LAPLACE: &str = r#"{
    "experiment": "limit-law",
    "limit_law": {"object": "stable-increment", "alpha": 1.5, "dt": 1.0, "se_multiple": 3.0},
    "run": {"replicates": 1000000, "seed": 102, "lambdas": [0.25, 0.5, 1.0]}
}"#;

const NATURAL_MEAN_LAW: &str = r#"{
    "experiment": "estimator-law",
    "model": {
        "n": 2000,
        "offspring": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5},
        "immigration": {"family": "stable-immigration", "index": 0.5, "coeff": 0.5}
    },
    "scaling": {"b_n": "n^{1/(alpha-1)}", "alpha": 1.5},
    "estimator_law": {
        "law": "natural-mean", "alpha": 1.5, "gamma": 0.5, "varpi": 0.5,
        "reference_replicates": 10000, "ks_max": 0.05
    },
    "run": {"replicates": 3000, "seed": 103, "dt": 0.001}
}"#;

/// Offspring `(1 - s)^1.5` coefficient `0.5 / n` around mean 1, immigration
/// with mean 1 and coefficient 0.5, `c_n = n^{2/3}`.
const STABLE_CLSE_MEAN: &str = r#"{
    "experiment": "estimator-law",
    "model": {
        "n": 2000,
        "offspring": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5, "coeff_over_n": true},
        "immigration": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5}
    },
    "scaling": {"c_n": "n^{1/alpha}", "alpha": 1.5},
    "estimator_law": {
        "law": "stable-mean", "alpha": 1.5, "a": 0.0, "omega": 1.0, "gamma": 0.5, "varpi": 0.5,
        "se_multiple": 4.0
    },
    "run": {"replicates": 5000, "seed": 104, "lambdas": [0.25, 0.5, 1.0]}
}"#;

/// Geometric offspring with `p_n = 1 - 1/n` and geometric immigration with
/// `p = 1/2`: `a = 1, pi = 1, a4 = 1, omega = 2, r = 2, b4 = 38`.
const DIFFUSION_VARIANCE_NORMAL: &str = r#"{
    "experiment": "estimator-law",
    "model": {
        "n": 500,
        "offspring": {"family": "near-critical-geometric", "a": 1.0},
        "immigration": {"family": "geometric", "p": 0.5}
    },
    "estimator_law": {
        "law": "diffusion-variances", "a": 1.0, "omega": 2.0, "pi": 1.0, "r": 2.0, "a4": 1.0, "b4": 38.0,
        "variance_rel_tol": 0.10, "reference_replicates": 1000000, "ks_max": 0.05
    },
    "run": {"replicates": 5000, "seed": 105}
}"#;

/// Rare jumps of size `floor(sqrt n)` in both offspring and immigration; the
/// limit has unit atoms in `mu` and `nu`.
const JUMP_VARIANCE_LAW: &str = r#"{
    "experiment": "estimator-law",
    "model": {
        "n": 10000,
        "offspring": {"family": "jump-offspring"},
        "immigration": {"family": "jump-immigration"}
    },
    "estimator_law": {
        "law": "jump-variances",
        "limit": {"a": 0.0, "omega": 1.0, "mu": [[1.0, 1.0]], "nu": [[1.0, 1.0]]},
        "moment_rel_tol": 0.15, "reference_replicates": 100000, "ks_max": 0.06
    },
    "run": {"replicates": 3000, "seed": 106, "dt": 0.001}
}"#;

const JUMP_OU_MOMENTS: &str = r#"{
    "experiment": "limit-law",
    "limit_law": {
        "object": "jump-ou",
        "limit": {"a": 0.0, "omega": 1.0, "mu": [[1.0, 1.0]], "nu": [[1.0, 1.0]]},
        "se_multiple": 4.0, "identity_tol": 1e-10
    },
    "run": {"replicates": 10000, "seed": 107, "dt": 0.001}
}"#;

/// Offspring mean `1 - 0.3/n` with tail coefficient `0.5/n`, `c_n = n^{2/3}`:
/// `G_n` and `H_n` do not depend on `n`.
const STABLE_DIAGNOSTICS: &str = r#"{
    "experiment": "diagnose",
    "model": {
        "n": 100,
        "offspring": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5, "mean_shift": -0.3, "coeff_over_n": true},
        "immigration": {"family": "stable-tailed", "alpha": 1.5, "coeff": 0.5}
    },
    "scaling": {"c_n": "n^{1/alpha}", "alpha": 1.5},
    "diagnose": {"conditions": ["G", "H"], "ns": [100, 1000, 10000], "cauchy_max": 1e-9},
    "run": {"replicates": 1, "seed": 108, "lambdas": [0.25, 0.5, 1.0, 2.0]}
}"#;

const PRESETS: [(&str, &str); 8] = [
    ("cbi-level-laplace", CBI_LEVEL_LAPLACE),
    ("stable-increment-laplace", STABLE_INCREMENT_LAPLACE),
    ("natural-mean-law", NATURAL_MEAN_LAW),
    ("stable-clse-mean", STABLE_CLSE_MEAN),
    ("diffusion-variance-normal", DIFFUSION_VARIANCE_NORMAL),
    ("jump-variance-law", JUMP_VARIANCE_LAW),
    ("jump-ou-moments", JUMP_OU_MOMENTS),
    ("stable-diagnostics", STABLE_DIAGNOSTICS),
];

/// Names of all presets.
pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// The preset of the given name, parsed and validated.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentConfig::from_json(text).expect("built-in presets are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in names() {
            let config = preset(name).unwrap();
            assert!(config.run.seed.is_some(), "{name} has no seed");
        }
        assert!(preset("missing").is_none());
    }
}

//! Experiment configuration, read from JSON.
//!
//! Families and normalizations are given by name and resolved against the
//! model index `n`, so one config describes a whole sequence of models.

use std::path::PathBuf;

use gwi_core::analysis::Condition;
use gwi_core::dist::DiscreteDist;
use gwi_core::est::Normalization;
use gwi_core::gwi::{GwiModel, Scaling};
use gwi_core::limit::{Atom, LimitSpec};
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Estimate,
    EstimatorLaw,
    LimitLaw,
    Diagnose,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Estimate => "estimate",
            ExperimentKind::EstimatorLaw => "estimator-law",
            ExperimentKind::LimitLaw => "limit-law",
            ExperimentKind::Diagnose => "diagnose",
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Distribution family, possibly depending on `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySpec {
    Deterministic {
        value: u64,
    },
    Bernoulli {
        mean: f64,
    },
    Geometric {
        p: f64,
    },
    /// `(1 - m_n) + m_n s + c_n (1 - s)^alpha` with `m_n = mean + mean_shift / n`
    /// and `c_n = coeff / n` when `coeff_over_n`, else `coeff`.
    StableTailed {
        alpha: f64,
        coeff: f64,
        #[serde(default = "one")]
        mean: f64,
        #[serde(default)]
        mean_shift: f64,
        #[serde(default)]
        coeff_over_n: bool,
    },
    /// `1 - coeff (1 - s)^index`.
    StableImmigration {
        index: f64,
        coeff: f64,
    },
    /// Bernoulli with mean `1 - a / n`.
    NearCriticalBernoulli {
        a: f64,
    },
    /// Geometric on `{1, 2, ...}` with `p = 1 - a / n`.
    NearCriticalGeometric {
        a: f64,
    },
    /// `floor(sqrt n)` with probability `1 / n^2`, else 1.
    JumpOffspring,
    /// `floor(sqrt n)` with probability `1 / n`, else 1.
    JumpImmigration,
    Explicit {
        probs: Vec<f64>,
    },
}

impl FamilySpec {
    pub fn resolve(&self, n: u64) -> Result<DiscreteDist, LabError> {
        let nf = n as f64;
        let dist = match self {
            FamilySpec::Deterministic { value } => DiscreteDist::deterministic(*value),
            FamilySpec::Bernoulli { mean } => DiscreteDist::bernoulli(*mean)?,
            FamilySpec::Geometric { p } => DiscreteDist::geometric(*p)?,
            FamilySpec::StableTailed { alpha, coeff, mean, mean_shift, coeff_over_n } => {
                let c = if *coeff_over_n { coeff / nf } else { *coeff };
                DiscreteDist::stable_tailed(mean + mean_shift / nf, *alpha, c)?
            }
            FamilySpec::StableImmigration { index, coeff } => DiscreteDist::stable_immigration(*index, *coeff)?,
            FamilySpec::NearCriticalBernoulli { a } => DiscreteDist::bernoulli_offspring(*a, n)?,
            FamilySpec::NearCriticalGeometric { a } => DiscreteDist::geometric_offspring(*a, n)?,
            FamilySpec::JumpOffspring => DiscreteDist::jump_offspring(n)?,
            FamilySpec::JumpImmigration => DiscreteDist::jump_immigration(n)?,
            FamilySpec::Explicit { probs } => DiscreteDist::explicit(probs.clone())?,
        };
        Ok(dist)
    }
}

/// Named normalizing sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleRule {
    #[serde(rename = "one")]
    One,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "sqrt-n")]
    SqrtN,
    #[serde(rename = "n^{1/alpha}")]
    NOneOverAlpha,
    #[serde(rename = "n^{1/(alpha-1)}")]
    NOneOverAlphaMinusOne,
}

impl ScaleRule {
    pub fn eval(self, n: u64, alpha: Option<f64>) -> Result<f64, LabError> {
        let nf = n as f64;
        let need_alpha = || alpha.ok_or_else(|| LabError::Config("scale rule needs scaling.alpha".into()));
        Ok(match self {
            ScaleRule::One => 1.0,
            ScaleRule::N => nf,
            ScaleRule::SqrtN => nf.sqrt(),
            ScaleRule::NOneOverAlpha => nf.powf(1.0 / need_alpha()?),
            ScaleRule::NOneOverAlphaMinusOne => nf.powf(1.0 / (need_alpha()? - 1.0)),
        })
    }
}

fn rule_one() -> ScaleRule {
    ScaleRule::One
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingBlock {
    #[serde(default = "rule_one")]
    pub b_n: ScaleRule,
    #[serde(default = "rule_one")]
    pub c_n: ScaleRule,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gamma0: Option<f64>,
}

impl Default for ScalingBlock {
    fn default() -> Self {
        Self { b_n: ScaleRule::One, c_n: ScaleRule::One, alpha: None, gamma0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: u64,
    pub offspring: FamilySpec,
    pub immigration: FamilySpec,
}

/// Builds the model of index `n` from the family and scaling blocks.
pub fn build_model(model: &ModelBlock, scaling: &ScalingBlock, n: u64) -> Result<GwiModel, LabError> {
    let offspring = model.offspring.resolve(n)?;
    let immigration = model.immigration.resolve(n)?;
    let scaling = Scaling {
        b_n: scaling.b_n.eval(n, scaling.alpha)?,
        c_n: scaling.c_n.eval(n, scaling.alpha)?,
        gamma0: scaling.gamma0,
    };
    Ok(GwiModel::new(offspring, immigration, n, scaling)?)
}

/// Atom lists and drift terms of a finite-activity limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitBlock {
    pub a: f64,
    pub omega: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub gamma0: f64,
    #[serde(default)]
    pub mu: Vec<(f64, f64)>,
    #[serde(default)]
    pub nu: Vec<(f64, f64)>,
}

impl LimitBlock {
    pub fn spec(&self) -> LimitSpec {
        let atoms = |v: &[(f64, f64)]| v.iter().map(|(u, m)| Atom::new(*u, *m)).collect();
        let mut spec = LimitSpec::jumps(self.a, self.omega, atoms(&self.mu), atoms(&self.nu))
            .with_gaussian_coefficients(self.sigma1, self.sigma2, self.gamma0);
        spec.beta1 = self.beta1;
        spec.beta2 = self.beta2;
        spec
    }
}

/// Statistic computed on each simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    NaturalMean,
    ClseMean,
    ClseMeanJoint,
    ClseVariances,
    ClseVariancesPlugin,
}

/// One estimator of the `estimate` experiment with the rates applied to its
/// components (offspring side first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorEntry {
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub normalization: Vec<Normalization>,
}

/// Weak-limit comparison for `estimator-law`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum EstimatorLaw {
    /// `E exp(-lambda Y_n(t) / b_n)` against the stable CBI transform.
    CbiLevel {
        alpha: f64,
        gamma: f64,
        varpi: f64,
        #[serde(default = "one")]
        time: f64,
        se_multiple: f64,
    },
    /// `n (natural mean - m_n)` against `(Y(1) - Y'(1)) / int Y` of the stable CBI.
    NaturalMean {
        alpha: f64,
        gamma: f64,
        varpi: f64,
        reference_replicates: u64,
        ks_max: f64,
    },
    /// `n^2 / c_n (clse mean - m_n)` against the stable law with Laplace
    /// transform `exp(K lambda^alpha)`.
    StableMean {
        alpha: f64,
        a: f64,
        omega: f64,
        gamma: f64,
        varpi: f64,
        se_multiple: f64,
    },
    /// `n^{3/2} (pi - pi_n)` and `n^{1/2} (r - r_n)` against `N(0, Sigma)`.
    DiffusionVariances {
        a: f64,
        omega: f64,
        pi: f64,
        r: f64,
        a4: f64,
        b4: f64,
        variance_rel_tol: f64,
        reference_replicates: u64,
        ks_max: f64,
    },
    /// `n (pi - pi_n)` against `U1` of the jump limit.
    JumpVariances {
        limit: LimitBlock,
        moment_rel_tol: f64,
        reference_replicates: u64,
        ks_max: f64,
    },
}

/// Limit-object simulation for `limit-law`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "object", rename_all = "kebab-case")]
pub enum LimitLaw {
    /// Stable increments over `dt` against `exp(dt lambda^alpha)`.
    StableIncrement { alpha: f64, dt: f64, se_multiple: f64 },
    /// `Y(1)` of the stable CBI against its Laplace transform.
    Cbi { alpha: f64, gamma: f64, varpi: f64, se_multiple: f64 },
    /// Variances of `Z(1)` and `J(1)` and the jump bookkeeping identity.
    JumpOu { limit: LimitBlock, se_multiple: f64, identity_tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseBlock {
    pub conditions: Vec<Condition>,
    pub ns: Vec<u64>,
    /// Largest tolerated `|value_n - value_{2n}|` for `--check`.
    #[serde(default)]
    pub cauchy_max: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub replicates: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Generations per path; defaults to `n`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub scaling: ScalingBlock,
    #[serde(default)]
    pub estimators: Vec<EstimatorEntry>,
    #[serde(default)]
    pub estimator_law: Option<EstimatorLaw>,
    #[serde(default)]
    pub limit_law: Option<LimitLaw>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseBlock>,
    pub run: RunBlock,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let config: Self = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let fail = |msg: &str| Err(LabError::Config(msg.into()));
        if self.run.replicates == 0 {
            return fail("run.replicates must be at least 1");
        }
        if self.run.workers == Some(0) {
            return fail("run.workers must be at least 1");
        }
        if !(self.run.dt > 0.0 && self.run.dt <= 1.0) {
            return fail("run.dt must lie in (0, 1]");
        }
        let needs_model = !matches!(self.experiment, ExperimentKind::LimitLaw);
        if needs_model && self.model.is_none() {
            return fail("this experiment needs a model block");
        }
        if let Some(m) = &self.model {
            if m.n == 0 {
                return fail("model.n must be at least 1");
            }
        }
        match self.experiment {
            ExperimentKind::Estimate if self.estimators.is_empty() => fail("estimate needs at least one estimator"),
            ExperimentKind::EstimatorLaw if self.estimator_law.is_none() => fail("estimator-law needs an estimator_law block"),
            ExperimentKind::LimitLaw if self.limit_law.is_none() => fail("limit-law needs a limit_law block"),
            ExperimentKind::Diagnose => match &self.diagnose {
                None => fail("diagnose needs a diagnose block"),
                Some(d) if d.ns.is_empty() || self.run.lambdas.is_empty() => {
                    fail("diagnose needs nonempty diagnose.ns and run.lambdas")
                }
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

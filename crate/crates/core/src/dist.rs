//! Nonnegative-integer distributions defined through their generating
//! functions, with exact pmf/pgf/moments and samplers.
//!
//! Heavy-tailed families (`StableTailed`, `StableImmigration`) are sampled by
//! inversion over a lazily built table of tail probabilities `P(X > k)`,
//! extended past the table with a power-law tail calibrated to the last
//! tabulated value.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::numeric::CompensatedSum;

/// Tail mass below which the sampler table stops.
pub const TABLE_TAIL_CUTOFF: f64 = 1e-12;
/// Hard cap on the sampler table length.
pub const TABLE_MAX_LEN: usize = 1_000_000;

/// Remaining draws at or below which `sample_iid_sum` stops splitting by value
/// and draws the rest one by one.
const MIN_INDIVIDUAL: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {0} outside [0, 1]")]
    Domain(f64),
    #[error("count overflowed 64 bits")]
    Overflow,
}

/// Parametric family of a [`DiscreteDist`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// Point mass at `value`.
    Deterministic { value: u64 },
    /// Values in {0, 1} with `P(1) = mean`.
    Bernoulli { mean: f64 },
    /// `P(X = i) = p (1 - p)^(i - 1)` for `i >= 1`.
    Geometric { p: f64 },
    /// `g(s) = (1 - m) + m s + c (1 - s)^alpha` with `1 < alpha <= 2`.
    StableTailed { mean: f64, alpha: f64, coeff: f64 },
    /// `h(s) = 1 - c (1 - s)^index` with `0 < index < 1` (infinite mean).
    StableImmigration { index: f64, coeff: f64 },
    /// `P(X = high) = p_high`, otherwise `low`.
    TwoPointJump { low: u64, high: u64, p_high: f64 },
    /// Finite support, `probs[k] = P(X = k)`.
    ExplicitPmf { probs: Vec<f64> },
}

/// A moment that may diverge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Moment {
    Finite(f64),
    Infinite,
}

impl Moment {
    pub fn finite(self) -> Option<f64> {
        match self {
            Moment::Finite(v) => Some(v),
            Moment::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Moment::Finite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub mean: Moment,
    pub variance: Moment,
    pub fourth_central: Moment,
}

#[derive(Debug)]
struct TailTable {
    /// `tail[k] = P(X > k)`, nonincreasing.
    tail: Vec<f64>,
    /// Power-law exponent of the tail beyond the table, if the support is
    /// unbounded.
    pareto_exponent: Option<f64>,
}

/// Immutable distribution handle; clones share the sampler table.
#[derive(Debug, Clone)]
pub struct DiscreteDist {
    family: Family,
    moments: MomentRecord,
    table: Arc<OnceLock<TailTable>>,
}

impl PartialEq for DiscreteDist {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

fn invalid(msg: impl Into<String>) -> DistError {
    DistError::InvalidParameter(msg.into())
}

fn check_probability(name: &str, p: f64) -> Result<(), DistError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl DiscreteDist {
    /// Validates `family` eagerly: any negative pmf value is rejected here.
    pub fn new(family: Family) -> Result<Self, DistError> {
        let family = validate(family)?;
        let moments = compute_moments(&family);
        Ok(Self { family, moments, table: Arc::new(OnceLock::new()) })
    }

    pub fn deterministic(value: u64) -> Self {
        Self::new(Family::Deterministic { value }).expect("always valid")
    }

    pub fn bernoulli(mean: f64) -> Result<Self, DistError> {
        Self::new(Family::Bernoulli { mean })
    }

    /// Bernoulli offspring with mean `1 - a / n`.
    pub fn bernoulli_offspring(a: f64, n: u64) -> Result<Self, DistError> {
        Self::bernoulli(1.0 - a / n as f64)
    }

    pub fn geometric(p: f64) -> Result<Self, DistError> {
        Self::new(Family::Geometric { p })
    }

    /// Geometric offspring on `{1, 2, ...}` with parameter `p_n = 1 - a / n`.
    pub fn geometric_offspring(a: f64, n: u64) -> Result<Self, DistError> {
        Self::geometric(1.0 - a / n as f64)
    }

    pub fn stable_tailed(mean: f64, alpha: f64, coeff: f64) -> Result<Self, DistError> {
        Self::new(Family::StableTailed { mean, alpha, coeff })
    }

    pub fn stable_immigration(index: f64, coeff: f64) -> Result<Self, DistError> {
        Self::new(Family::StableImmigration { index, coeff })
    }

    pub fn two_point_jump(low: u64, high: u64, p_high: f64) -> Result<Self, DistError> {
        Self::new(Family::TwoPointJump { low, high, p_high })
    }

    /// Offspring law with a rare jump: `P(X = floor(sqrt n)) = 1/n^2`, else 1.
    pub fn jump_offspring(n: u64) -> Result<Self, DistError> {
        let nf = n as f64;
        Self::two_point_jump(1, isqrt(n), 1.0 / (nf * nf))
    }

    /// Immigration law with a rare jump: `P(X = floor(sqrt n)) = 1/n`, else 1.
    pub fn jump_immigration(n: u64) -> Result<Self, DistError> {
        Self::two_point_jump(1, isqrt(n), 1.0 / n as f64)
    }

    pub fn explicit(probs: Vec<f64>) -> Result<Self, DistError> {
        Self::new(Family::ExplicitPmf { probs })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn moments(&self) -> MomentRecord {
        self.moments
    }

    /// Mean, or `None` when it diverges.
    pub fn mean(&self) -> Option<f64> {
        self.moments.mean.finite()
    }

    /// Generating function `E[s^X]`.
    pub fn pgf_eval(&self, s: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(DistError::Domain(s));
        }
        if s == 1.0 {
            return Ok(1.0);
        }
        let x = 1.0 - s;
        Ok(match &self.family {
            Family::Deterministic { value } => pow_u64(s, *value),
            Family::Bernoulli { mean } => 1.0 - mean * x,
            Family::Geometric { p } => p * s / (p + (1.0 - p) * x),
            Family::StableTailed { mean, alpha, coeff } => 1.0 - mean * x + coeff * x.powf(*alpha),
            Family::StableImmigration { index, coeff } => 1.0 - coeff * x.powf(*index),
            Family::TwoPointJump { low, high, p_high } => {
                (1.0 - p_high) * pow_u64(s, *low) + p_high * pow_u64(s, *high)
            }
            Family::ExplicitPmf { probs } => probs.iter().rev().fold(0.0, |acc, p| acc * s + p),
        })
    }

    /// `(1 - slope * x) - g(1 - x)` for `x` in `[0, 1]`, evaluated without the
    /// cancellation a direct difference suffers when `x` is tiny.
    ///
    /// `R_n`, `F_n`, `G_n` and `H_n` are all scaled deficits with slope 1, 0,
    /// `m_n` and `omega_n` respectively.
    pub fn pgf_deficit(&self, x: f64, slope: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(DistError::Domain(x));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(match &self.family {
            Family::Bernoulli { mean } => (mean - slope) * x,
            Family::Geometric { p } => {
                let denom = p + (1.0 - p) * x;
                x * (1.0 - slope * denom) / denom
            }
            Family::StableTailed { mean, alpha, coeff } => (mean - slope) * x - coeff * x.powf(*alpha),
            Family::StableImmigration { index, coeff } => coeff * x.powf(*index) - slope * x,
            _ => {
                // finite support: deficit = (m - slope) x - sum_k p_k [(1-x)^k - 1 + k x]
                let mean = self.mean().expect("finite support has a mean");
                let mut acc = CompensatedSum::new();
                self.for_each_atom(|k, p| acc.add(-p * binomial_remainder(k, x)));
                acc.add((mean - slope) * x);
                acc.value()
            }
        })
    }

    /// Exact probability `P(X = k)`.
    pub fn pmf(&self, k: u64) -> f64 {
        match &self.family {
            Family::Deterministic { value } => f64::from(u8::from(k == *value)),
            Family::Bernoulli { mean } => match k {
                0 => 1.0 - mean,
                1 => *mean,
                _ => 0.0,
            },
            Family::Geometric { p } => {
                if k == 0 {
                    0.0
                } else {
                    p * pow_u64(1.0 - p, k - 1)
                }
            }
            Family::StableTailed { mean, alpha, coeff } => match k {
                0 => 1.0 - mean + coeff,
                1 => mean - coeff * alpha,
                _ => self.tail_mass(k - 1) * alpha / k as f64,
            },
            Family::StableImmigration { index, coeff } => match k {
                0 => 1.0 - coeff,
                _ => self.tail_mass(k - 1) * index / k as f64,
            },
            Family::TwoPointJump { low, high, p_high } => {
                if k == *high {
                    *p_high
                } else if k == *low {
                    1.0 - p_high
                } else {
                    0.0
                }
            }
            Family::ExplicitPmf { probs } => {
                usize::try_from(k).ok().and_then(|i| probs.get(i)).copied().unwrap_or(0.0)
            }
        }
    }

    /// Analytic tail mass `P(X > k)`.
    pub fn tail_mass(&self, k: u64) -> f64 {
        match &self.family {
            Family::Deterministic { value } => f64::from(u8::from(k < *value)),
            Family::Bernoulli { mean } => {
                if k == 0 {
                    *mean
                } else {
                    0.0
                }
            }
            Family::Geometric { p } => pow_u64(1.0 - p, k),
            Family::TwoPointJump { low, high, p_high } => {
                if k < *low.min(high) {
                    1.0
                } else if k < *low.max(high) {
                    if high > low {
                        *p_high
                    } else {
                        1.0 - p_high
                    }
                } else {
                    0.0
                }
            }
            Family::StableTailed { .. } | Family::StableImmigration { .. } => {
                let table = self.table();
                match usize::try_from(k).ok().and_then(|i| table.tail.get(i)) {
                    Some(t) => *t,
                    None => self.stable_tail_closed_form(k),
                }
            }
            Family::ExplicitPmf { .. } => {
                let table = self.table();
                usize::try_from(k).ok().and_then(|i| table.tail.get(i)).copied().unwrap_or(0.0)
            }
        }
    }

    /// Largest tabulated index of the sampler table (`K_max`), or `None` for
    /// families sampled in closed form.
    pub fn table_cutoff(&self) -> Option<u64> {
        match self.family {
            Family::StableTailed { .. } | Family::StableImmigration { .. } | Family::ExplicitPmf { .. } => {
                Some(self.table().tail.len() as u64 - 1)
            }
            _ => None,
        }
    }

    /// One draw. Values beyond `u64::MAX` saturate; [`DiscreteDist::sample_iid_sum`]
    /// reports them as overflow.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.family {
            Family::Deterministic { value } => *value,
            Family::Bernoulli { mean } => u64::from(rng.random::<f64>() < *mean),
            Family::Geometric { p } => {
                1 + Geometric::new(*p).expect("validated").sample(rng)
            }
            Family::TwoPointJump { low, high, p_high } => {
                if rng.random::<f64>() < *p_high {
                    *high
                } else {
                    *low
                }
            }
            _ => self.sample_table(0, 1.0, rng),
        }
    }

    /// Sum of `count` iid draws.
    pub fn sample_iid_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> Result<u64, DistError> {
        if count == 0 {
            return Ok(0);
        }
        match &self.family {
            Family::Deterministic { value } => value.checked_mul(count).ok_or(DistError::Overflow),
            Family::Bernoulli { mean } => Ok(binomial(count, *mean, rng)),
            Family::TwoPointJump { low, high, p_high } => {
                let hits = binomial(count, *p_high, rng);
                let lows = low.checked_mul(count - hits);
                let highs = high.checked_mul(hits);
                lows.zip(highs)
                    .and_then(|(a, b)| a.checked_add(b))
                    .ok_or(DistError::Overflow)
            }
            Family::Geometric { p } => {
                // count + NegBin(count, p) failures, as a gamma-mixed Poisson.
                let q = 1.0 - p;
                if q == 0.0 {
                    return Ok(count);
                }
                let rate = Gamma::new(count as f64, q / p).expect("validated").sample(rng);
                let failures = if rate > 0.0 {
                    Poisson::new(rate).map_err(|_| DistError::Overflow)?.sample(rng)
                } else {
                    0.0
                };
                if failures >= u64::MAX as f64 {
                    return Err(DistError::Overflow);
                }
                count.checked_add(failures as u64).ok_or(DistError::Overflow)
            }
            _ => self.table_iid_sum(count, rng),
        }
    }

    fn table(&self) -> &TailTable {
        self.table.get_or_init(|| build_table(&self.family))
    }

    /// Inversion draw conditioned on `X >= start`, where `prev_tail = P(X >= start)`.
    fn sample_table<R: Rng + ?Sized>(&self, start: usize, prev_tail: f64, rng: &mut R) -> u64 {
        let table = self.table();
        let u = 1.0 - rng.random::<f64>();
        let target = u * prev_tail;
        let rest = &table.tail[start.min(table.tail.len())..];
        let idx = start + rest.partition_point(|&t| t >= target);
        if idx < table.tail.len() {
            return idx as u64;
        }
        let last = table.tail.len() - 1;
        let last_tail = table.tail[last];
        match table.pareto_exponent {
            Some(rho) if last_tail > 0.0 => {
                let x = last as f64 * (target / last_tail).powf(-1.0 / rho);
                // float-to-int casts saturate
                x.ceil() as u64
            }
            _ => last as u64,
        }
    }

    /// Splits the draws by value with sequential conditional binomials while
    /// that is cheaper than drawing them one by one.
    fn table_iid_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> Result<u64, DistError> {
        let table = self.table();
        let mut remaining = count;
        let mut total: u128 = 0;
        let mut k = 0usize;
        let mut prev_tail = 1.0;
        while remaining > (k as u64).max(MIN_INDIVIDUAL) && k < table.tail.len() {
            let next = table.tail[k];
            let p = if prev_tail > 0.0 { (1.0 - next / prev_tail).clamp(0.0, 1.0) } else { 1.0 };
            let hits = binomial(remaining, p, rng);
            total += u128::from(hits) * k as u128;
            remaining -= hits;
            prev_tail = next;
            k += 1;
        }
        for _ in 0..remaining {
            let v = self.sample_table(k, prev_tail, rng);
            if v == u64::MAX {
                return Err(DistError::Overflow);
            }
            total += u128::from(v);
        }
        u64::try_from(total).map_err(|_| DistError::Overflow)
    }

    fn stable_tail_closed_form(&self, k: u64) -> f64 {
        let kf = k as f64;
        match self.family {
            // c (alpha-1) Gamma(k+1-alpha) / (Gamma(2-alpha) Gamma(k+1))
            Family::StableTailed { mean, alpha, coeff } => match k {
                0 => mean - coeff,
                1 => coeff * (alpha - 1.0),
                _ if alpha >= 2.0 => 0.0,
                _ => {
                    coeff
                        * (alpha - 1.0)
                        * (ln_gamma(kf + 1.0 - alpha) - ln_gamma(2.0 - alpha) - ln_gamma(kf + 1.0)).exp()
                }
            },
            // c Gamma(k+1-index) / (Gamma(1-index) Gamma(k+1))
            Family::StableImmigration { index, coeff } => {
                coeff * (ln_gamma(kf + 1.0 - index) - ln_gamma(1.0 - index) - ln_gamma(kf + 1.0)).exp()
            }
            _ => unreachable!("closed-form tail only for stable families"),
        }
    }

    fn for_each_atom(&self, mut f: impl FnMut(u64, f64)) {
        match &self.family {
            Family::Deterministic { value } => f(*value, 1.0),
            Family::Bernoulli { mean } => {
                f(0, 1.0 - mean);
                f(1, *mean);
            }
            Family::TwoPointJump { low, high, p_high } => {
                f(*low, 1.0 - p_high);
                f(*high, *p_high);
            }
            Family::ExplicitPmf { probs } => {
                for (k, p) in probs.iter().enumerate() {
                    f(k as u64, *p);
                }
            }
            Family::StableTailed { alpha, .. } if *alpha >= 2.0 => {
                for k in 0..3 {
                    f(k, self.pmf(k));
                }
            }
            _ => unreachable!("atoms only for finite-support families"),
        }
    }
}

fn validate(family: Family) -> Result<Family, DistError> {
    match &family {
        Family::Deterministic { .. } => {}
        Family::Bernoulli { mean } => check_probability("mean", *mean)?,
        Family::Geometric { p } => {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(invalid(format!("geometric p = {p} outside (0, 1]")));
            }
        }
        Family::StableTailed { mean, alpha, coeff } => {
            if !(*alpha > 1.0 && *alpha <= 2.0) {
                return Err(invalid(format!("alpha = {alpha} outside (1, 2]")));
            }
            if !(*coeff > 0.0) || !coeff.is_finite() {
                return Err(invalid(format!("coefficient = {coeff} must be positive")));
            }
            if !mean.is_finite() {
                return Err(invalid("mean must be finite"));
            }
            let p0 = 1.0 - mean + coeff;
            let p1 = mean - coeff * alpha;
            if p0 < 0.0 || p1 < 0.0 {
                return Err(invalid(format!(
                    "stable-tailed (m={mean}, alpha={alpha}, c={coeff}) has negative probabilities p0={p0}, p1={p1}"
                )));
            }
        }
        Family::StableImmigration { index, coeff } => {
            if !(*index > 0.0 && *index < 1.0) {
                return Err(invalid(format!("index = {index} outside (0, 1)")));
            }
            if !(*coeff > 0.0 && *coeff <= 1.0) {
                return Err(invalid(format!("coefficient = {coeff} outside (0, 1]")));
            }
        }
        Family::TwoPointJump { low, high, p_high } => {
            check_probability("p_high", *p_high)?;
            if low == high {
                return Err(invalid("two-point law needs distinct points"));
            }
        }
        Family::ExplicitPmf { probs } => {
            if probs.is_empty() {
                return Err(invalid("empty pmf"));
            }
            if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(invalid(format!("pmf entry {p} is not a probability")));
            }
            let total: f64 = probs.iter().copied().collect::<CompensatedSum>().value();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("pmf sums to {total}")));
            }
            let probs = probs.iter().map(|p| p / total).collect();
            return Ok(Family::ExplicitPmf { probs });
        }
    }
    Ok(family)
}

fn compute_moments(family: &Family) -> MomentRecord {
    use Moment::{Finite, Infinite};
    let record = |m: f64, v: f64, f: f64| MomentRecord {
        mean: Finite(m),
        variance: Finite(v),
        fourth_central: Finite(f),
    };
    match family {
        Family::Deterministic { value } => record(*value as f64, 0.0, 0.0),
        Family::Bernoulli { mean: p } => {
            let v = p * (1.0 - p);
            record(*p, v, v * (1.0 - 3.0 * p + 3.0 * p * p))
        }
        Family::Geometric { p } => {
            let q = 1.0 - p;
            record(1.0 / p, q / (p * p), q * (1.0 + 7.0 * q + q * q) / p.powi(4))
        }
        Family::TwoPointJump { low, high, p_high: p } => {
            let d = *high as f64 - *low as f64;
            let v = p * (1.0 - p);
            record(*low as f64 + d * p, d * d * v, d.powi(4) * v * (1.0 - 3.0 * p + 3.0 * p * p))
        }
        Family::StableTailed { mean, alpha, coeff } => {
            if *alpha < 2.0 {
                MomentRecord { mean: Finite(*mean), variance: Infinite, fourth_central: Infinite }
            } else {
                let probs = [1.0 - mean + coeff, mean - 2.0 * coeff, *coeff];
                let (_, v, f) = central_moments(probs.iter().enumerate().map(|(k, p)| (k as f64, *p)));
                record(*mean, v, f)
            }
        }
        Family::StableImmigration { .. } => {
            MomentRecord { mean: Infinite, variance: Infinite, fourth_central: Infinite }
        }
        Family::ExplicitPmf { probs } => {
            let (m, v, f) = central_moments(probs.iter().enumerate().map(|(k, p)| (k as f64, *p)));
            record(m, v, f)
        }
    }
}

fn central_moments<I: Iterator<Item = (f64, f64)> + Clone>(atoms: I) -> (f64, f64, f64) {
    let mean = atoms.clone().map(|(k, p)| k * p).collect::<CompensatedSum>().value();
    let mut var = CompensatedSum::new();
    let mut fourth = CompensatedSum::new();
    for (k, p) in atoms {
        let d2 = (k - mean) * (k - mean);
        var.add(p * d2);
        fourth.add(p * d2 * d2);
    }
    (mean, var.value(), fourth.value())
}

fn build_table(family: &Family) -> TailTable {
    match *family {
        Family::StableTailed { mean, alpha, coeff } => {
            let mut tail = vec![mean - coeff, coeff * (alpha - 1.0)];
            extend_tail(&mut tail, alpha);
            TailTable { tail, pareto_exponent: (alpha < 2.0).then_some(alpha) }
        }
        Family::StableImmigration { index, coeff } => {
            let mut tail = vec![coeff];
            extend_tail(&mut tail, index);
            TailTable { tail, pareto_exponent: Some(index) }
        }
        Family::ExplicitPmf { ref probs } => {
            let mut tail = vec![0.0; probs.len()];
            let mut acc = CompensatedSum::new();
            for k in (0..probs.len()).rev() {
                tail[k] = acc.value();
                acc.add(probs[k]);
            }
            TailTable { tail, pareto_exponent: None }
        }
        _ => unreachable!("closed-form families have no table"),
    }
}

/// `tail[k] = tail[k-1] (k - rho) / k` until the cutoff or the cap.
fn extend_tail(tail: &mut Vec<f64>, rho: f64) {
    while tail.len() < TABLE_MAX_LEN && *tail.last().expect("seeded") >= TABLE_TAIL_CUTOFF {
        let k = tail.len() as f64;
        let next = tail.last().expect("seeded") * ((k - rho) / k).max(0.0);
        tail.push(next);
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || n == 0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("p in (0,1)").sample(rng)
    }
}

fn pow_u64(base: f64, exp: u64) -> f64 {
    match i32::try_from(exp) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf(exp as f64),
    }
}

fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// `(1 - x)^k - 1 + k x`, accurate for small `k x`.
fn binomial_remainder(k: u64, x: f64) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let kf = k as f64;
    if kf * x > 0.5 {
        return (kf * (-x).ln_1p()).exp() - 1.0 + kf * x;
    }
    // sum_{j>=2} C(k, j) (-x)^j
    let mut term = kf * (kf - 1.0) / 2.0 * x * x;
    let mut sum = CompensatedSum::new();
    let mut j = 2.0;
    while term != 0.0 && j <= kf {
        sum.add(term);
        if term.abs() < 1e-18 * sum.value().abs() {
            break;
        }
        term *= -(kf - j) / (j + 1.0) * x;
        j += 1.0;
    }
    sum.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream;

    fn stable() -> DiscreteDist {
        DiscreteDist::stable_tailed(1.0, 1.5, 0.25).unwrap()
    }

    #[test]
    fn stable_pmf_head() {
        let d = stable();
        assert_eq!(d.pmf(0), 0.25);
        assert_eq!(d.pmf(1), 0.625);
        assert_eq!(d.pmf(2), 0.09375);
        assert_eq!(d.pmf(3), 0.015625);
    }

    #[test]
    fn quadratic_stable_has_three_atoms() {
        let d = DiscreteDist::stable_tailed(1.0, 2.0, 0.1).unwrap();
        assert!((d.pmf(2) - 0.1).abs() < 1e-15);
        assert_eq!(d.pmf(3), 0.0);
        assert_eq!(d.table_cutoff(), Some(2));
        let var = d.moments().variance.finite().unwrap();
        assert!((var - 0.2).abs() < 1e-14);
    }

    #[test]
    fn pgf_examples() {
        let g = DiscreteDist::geometric(0.5).unwrap();
        assert_eq!(g.pgf_eval(1.0).unwrap(), 1.0);
        assert_eq!(stable().pgf_eval(0.0).unwrap(), 0.25);
        let q = DiscreteDist::stable_tailed(1.0, 2.0, 0.1).unwrap();
        assert!((q.pgf_eval(0.5).unwrap() - 0.525).abs() < 1e-15);
        assert_eq!(q.pgf_eval(1.5), Err(DistError::Domain(1.5)));
        assert_eq!(q.pgf_eval(-0.1), Err(DistError::Domain(-0.1)));
    }

    #[test]
    fn two_point_jump_pmf() {
        let d = DiscreteDist::jump_offspring(16).unwrap();
        assert_eq!(d.pmf(4), 1.0 / 256.0);
        assert_eq!(d.pmf(1), 255.0 / 256.0);
        assert_eq!(d.pmf(2), 0.0);
    }

    #[test]
    fn moments_examples() {
        let b = DiscreteDist::bernoulli_offspring(1.0, 10).unwrap().moments();
        assert!((b.mean.finite().unwrap() - 0.9).abs() < 1e-15);
        assert!((b.variance.finite().unwrap() - 0.09).abs() < 1e-15);
        let g = DiscreteDist::geometric(0.9).unwrap().moments();
        assert!((g.mean.finite().unwrap() - 1.0 / 0.9).abs() < 1e-15);
        assert!((g.variance.finite().unwrap() - 0.1 / 0.81).abs() < 1e-15);
        assert_eq!(stable().moments().variance, Moment::Infinite);
        assert_eq!(
            DiscreteDist::stable_immigration(0.5, 0.5).unwrap().moments().mean,
            Moment::Infinite
        );
    }

    #[test]
    fn geometric_fourth_moment_matches_series() {
        let p: f64 = 0.3;
        let d = DiscreteDist::geometric(p).unwrap();
        let m = 1.0 / p;
        let series: f64 = (1..2000).map(|i| (i as f64 - m).powi(4) * d.pmf(i)).sum();
        assert!((d.moments().fourth_central.finite().unwrap() - series).abs() < 1e-9 * series);
    }

    #[test]
    fn invalid_parameters_rejected() {
        // p1 = m - c alpha < 0
        assert!(DiscreteDist::stable_tailed(1.0, 1.5, 0.8).is_err());
        // p0 = 1 - m + c < 0
        assert!(DiscreteDist::stable_tailed(2.0, 1.5, 0.5).is_err());
        assert!(DiscreteDist::stable_tailed(1.0, 2.5, 0.1).is_err());
        assert!(DiscreteDist::bernoulli(1.2).is_err());
        assert!(DiscreteDist::geometric(0.0).is_err());
        assert!(DiscreteDist::explicit(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::explicit(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDist::stable_immigration(1.0, 0.5).is_err());
    }

    #[test]
    fn immigration_pmf_sums_with_tail() {
        let d = DiscreteDist::stable_immigration(0.5, 0.5).unwrap();
        let head: f64 = (0..=50).map(|k| d.pmf(k)).sum();
        assert!((head + d.tail_mass(50) - 1.0).abs() < 1e-14);
        // closed form beyond the table agrees with the recursion at the seam
        let k = d.table_cutoff().unwrap();
        let seam = d.stable_tail_closed_form(k);
        assert!((seam / d.tail_mass(k) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn closed_form_tail_matches_table() {
        let d = stable();
        for k in [2u64, 3, 10, 1000, 50_000] {
            let rel = d.stable_tail_closed_form(k) / d.tail_mass(k) - 1.0;
            assert!(rel.abs() < 1e-9, "k = {k}: {rel}");
        }
    }

    #[test]
    fn deficit_matches_direct_difference() {
        let dists = [
            stable(),
            DiscreteDist::geometric(0.7).unwrap(),
            DiscreteDist::bernoulli(0.3).unwrap(),
            DiscreteDist::deterministic(3),
            DiscreteDist::two_point_jump(1, 10, 0.2).unwrap(),
            DiscreteDist::explicit(vec![0.2, 0.5, 0.3]).unwrap(),
            DiscreteDist::stable_immigration(0.5, 0.4).unwrap(),
        ];
        for d in &dists {
            for x in [0.9, 0.5, 0.2, 0.05] {
                let direct = (1.0 - 0.7 * x) - d.pgf_eval(1.0 - x).unwrap();
                let deficit = d.pgf_deficit(x, 0.7).unwrap();
                assert!((direct - deficit).abs() < 1e-13, "{:?} x={x}", d.family());
            }
        }
    }

    #[test]
    fn deficit_small_argument_second_order() {
        // deterministic 3: (1-x)^3 - 1 + 3x = 3x^2 - x^3
        let d = DiscreteDist::deterministic(3);
        let x = 1e-7;
        let got = d.pgf_deficit(x, 3.0).unwrap();
        let exact = -(3.0 * x * x - x * x * x);
        assert!((got / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iid_sum_trivial_cases() {
        let mut rng = stream(1, 0);
        assert_eq!(DiscreteDist::deterministic(1).sample_iid_sum(5, &mut rng).unwrap(), 5);
        for d in [stable(), DiscreteDist::geometric(0.4).unwrap(), DiscreteDist::bernoulli(0.5).unwrap()] {
            assert_eq!(d.sample_iid_sum(0, &mut rng).unwrap(), 0);
        }
        assert_eq!(
            DiscreteDist::deterministic(u64::MAX).sample_iid_sum(2, &mut rng),
            Err(DistError::Overflow)
        );
    }

    #[test]
    fn explicit_sampler_stays_on_support() {
        let d = DiscreteDist::explicit(vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..1000 {
            let v = d.sample(&mut rng);
            assert!(v == 1 || v == 3);
        }
        let s = d.sample_iid_sum(100_000, &mut rng).unwrap();
        assert!((s as f64 - 200_000.0).abs() < 4.0 * 100_000f64.sqrt() + 1.0);
    }

    #[test]
    fn isqrt_floor() {
        assert_eq!(isqrt(16), 4);
        assert_eq!(isqrt(10_000), 100);
        assert_eq!(isqrt(99), 9);
    }
}

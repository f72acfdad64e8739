//! Analytic side of the limit theory: the fluid limit `phi`, Riccati flows
//! and CBI Laplace transforms, convergence diagnostics for the scaled
//! generating functions, limit covariances, and empirical-law comparison.
//!
//! Integrals over `[0, 1]` go through adaptive Simpson at
//! [`SIMPSON_TOLERANCE`](crate::numeric::SIMPSON_TOLERANCE); the closed forms
//! on [`Phi`] exist for the limit simulators' compensators.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Moment};
use crate::gwi::{GwiError, GwiModel};
use crate::limit::Atom;
use crate::numeric::{integrate_unit, CompensatedSum};

/// `|psi|` beyond which a Riccati solution is reported as blown up.
pub const RICCATI_BLOWUP_BOUND: f64 = 1e12;
/// Default Riccati step.
pub const RICCATI_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Riccati solution left [-{RICCATI_BLOWUP_BOUND}, {RICCATI_BLOWUP_BOUND}] at t = {t} (value {value})")]
    BlowUp { t: f64, value: f64 },
    #[error("lambda = {lambda} exceeds the scale {bound}")]
    OutsideScale { lambda: f64, bound: f64 },
    #[error("sample is empty or too small")]
    EmptySample,
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Gwi(#[from] GwiError),
}

fn invalid(msg: impl Into<String>) -> AnalysisError {
    AnalysisError::InvalidParameter(msg.into())
}

/// `phi(t) = omega int_0^t e^{a u} du`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    pub a: f64,
    pub omega: f64,
}

/// `(e^x - 1 - x) / x^2` without cancellation near 0.
fn second_order_expm1(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Taylor terms up to x^4 leave an error below 1e-14
        1.0 / 2.0 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)))
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

impl Phi {
    pub fn eval(&self, t: f64) -> f64 {
        if self.a == 0.0 {
            self.omega * t
        } else {
            self.omega * (self.a * t).exp_m1() / self.a
        }
    }

    /// `int_0^t phi(s) ds` in closed form.
    pub fn integral(&self, t: f64) -> f64 {
        self.omega * t * t * second_order_expm1(self.a * t)
    }
}

pub fn phi(t: f64, a: f64, omega: f64) -> f64 {
    Phi { a, omega }.eval(t)
}

/// Integrals of `phi` over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiIntegrals {
    /// `int phi`
    pub first: f64,
    /// `int phi^2`
    pub second: f64,
    /// `L = int phi^2 - (int phi)^2`
    pub spread: f64,
    /// `int phi^alpha (varpi + gamma phi)`, when stable parameters are given.
    pub stable_weight: Option<f64>,
}

pub fn phi_integrals(a: f64, omega: f64, stable: Option<(f64, f64, f64)>) -> PhiIntegrals {
    let p = Phi { a, omega };
    let first = integrate_unit(|t| p.eval(t));
    let second = integrate_unit(|t| p.eval(t).powi(2));
    let stable_weight = stable.map(|(alpha, gamma, varpi)| {
        integrate_unit(|t| {
            let f = p.eval(t);
            f.powf(alpha) * (varpi + gamma * f)
        })
    });
    PhiIntegrals { first, second, spread: second - first * first, stable_weight }
}

/// Jump part of a Levy-Khintchine exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpMeasure {
    None,
    Atoms { atoms: Vec<Atom> },
    /// Stable measure whose jump integral equals `scale * lambda^alpha`.
    Stable { alpha: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletKind {
    /// `R(l) = c l - theta l^2 - int (e^{-l u} - 1 + l u) Lambda(du)`
    Branching,
    /// `F(l) = d l + int (1 - e^{-l u}) Lambda(du)`; the quadratic term must be 0.
    Immigration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyTriplet {
    pub kind: TripletKind,
    pub linear: f64,
    pub quadratic: f64,
    pub jumps: JumpMeasure,
}

impl LevyTriplet {
    pub fn branching(linear: f64, quadratic: f64, jumps: JumpMeasure) -> Result<Self, AnalysisError> {
        Self { kind: TripletKind::Branching, linear, quadratic, jumps }.validated()
    }

    pub fn immigration(linear: f64, jumps: JumpMeasure) -> Result<Self, AnalysisError> {
        Self { kind: TripletKind::Immigration, linear, quadratic: 0.0, jumps }.validated()
    }

    /// `R(l) = -gamma l^alpha`.
    pub fn stable_branching(alpha: f64, gamma: f64) -> Result<Self, AnalysisError> {
        Self::branching(0.0, 0.0, JumpMeasure::Stable { alpha, scale: gamma })
    }

    /// `F(l) = varpi l^{alpha - 1}`.
    pub fn stable_immigration(alpha: f64, varpi: f64) -> Result<Self, AnalysisError> {
        Self::immigration(0.0, JumpMeasure::Stable { alpha: alpha - 1.0, scale: varpi })
    }

    fn validated(self) -> Result<Self, AnalysisError> {
        if !(self.quadratic >= 0.0) {
            return Err(invalid(format!("quadratic coefficient {} must be nonnegative", self.quadratic)));
        }
        if self.kind == TripletKind::Immigration && (self.quadratic != 0.0 || self.linear < 0.0) {
            return Err(invalid("immigration exponent needs d >= 0 and no quadratic term"));
        }
        match &self.jumps {
            JumpMeasure::None => {}
            JumpMeasure::Atoms { atoms } => {
                if atoms.iter().any(|a| !(a.position > 0.0 && a.mass > 0.0)) {
                    return Err(invalid("jump atoms need positive position and mass"));
                }
            }
            JumpMeasure::Stable { alpha, scale } => {
                let range_ok = match self.kind {
                    TripletKind::Branching => *alpha > 1.0 && *alpha < 2.0,
                    TripletKind::Immigration => *alpha > 0.0 && *alpha < 1.0,
                };
                if !range_ok || !(*scale >= 0.0) {
                    return Err(invalid(format!("stable jump part ({alpha}, {scale}) out of range")));
                }
            }
        }
        Ok(self)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let jump = match &self.jumps {
            JumpMeasure::None => 0.0,
            JumpMeasure::Stable { alpha, scale } => scale * lambda.powf(*alpha),
            JumpMeasure::Atoms { atoms } => atoms
                .iter()
                .map(|a| {
                    let x = -lambda * a.position;
                    match self.kind {
                        // e^{x} - 1 - x
                        TripletKind::Branching => a.mass * (x.exp_m1() - x),
                        TripletKind::Immigration => -a.mass * x.exp_m1(),
                    }
                })
                .sum(),
        };
        match self.kind {
            TripletKind::Branching => self.linear * lambda - self.quadratic * lambda * lambda - jump,
            TripletKind::Immigration => self.linear * lambda + jump,
        }
    }
}

/// Constraints tying the Gaussian coefficients of the two limit exponents to
/// `gamma0 = lim n / c_n^2`: `2 sigma1 >= a gamma0` and
/// `2 sigma2 + omega gamma0 >= omega^2 gamma0`.
pub fn check_gaussian_constraints(sigma1: f64, sigma2: f64, a: f64, omega: f64, gamma0: f64) -> Result<(), AnalysisError> {
    if 2.0 * sigma1 < a * gamma0 {
        return Err(invalid(format!("2 sigma1 = {} < a gamma0 = {}", 2.0 * sigma1, a * gamma0)));
    }
    if 2.0 * sigma2 + omega * gamma0 < omega * omega * gamma0 {
        return Err(invalid(format!("2 sigma2 + omega gamma0 < omega^2 gamma0 (sigma2 = {sigma2})")));
    }
    Ok(())
}

/// `psi_t(z1)` on `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl RiccatiSolution {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("solution has its initial value")
    }

    /// Linear interpolation between grid values.
    pub fn at(&self, t: f64) -> f64 {
        let pos = (t / self.dt).clamp(0.0, (self.values.len() - 1) as f64);
        let k = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - k as f64;
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, AnalysisError> {
    if !(horizon >= 0.0 && horizon.is_finite()) || !(dt > 0.0) {
        return Err(invalid(format!("need horizon >= 0 and dt > 0 (horizon={horizon}, dt={dt})")));
    }
    Ok((horizon / dt).round().max(1.0) as usize)
}

fn check_bound(t: f64, value: f64) -> Result<(), AnalysisError> {
    if !value.is_finite() || value.abs() > RICCATI_BLOWUP_BOUND {
        return Err(AnalysisError::BlowUp { t, value });
    }
    Ok(())
}

/// Fixed-step RK4 for `d psi / dt = R(psi)`, `psi_0 = z1`. The step is
/// adjusted so that it divides the horizon.
pub fn solve_riccati(
    r: impl Fn(f64) -> f64,
    z1: f64,
    horizon: f64,
    dt: f64,
) -> Result<RiccatiSolution, AnalysisError> {
    let steps = step_count(horizon, dt)?;
    let h = horizon / steps as f64;
    let mut values = Vec::with_capacity(steps + 1);
    let mut psi = z1;
    values.push(psi);
    for k in 0..steps {
        let k1 = r(psi);
        let k2 = r(psi + 0.5 * h * k1);
        let k3 = r(psi + 0.5 * h * k2);
        let k4 = r(psi + h * k3);
        psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_bound((k + 1) as f64 * h, psi)?;
        values.push(psi);
    }
    Ok(RiccatiSolution { dt: h, values })
}

/// `E_x exp(-z1 Y1(t) - z2 Y2(t))` for the two-type CBI
/// `exp(-x1 psi_t(z1) - x2 z2 - int_0^t F(psi_s(z1) + z2) ds)`, where the
/// integral is carried along the Riccati solution as an extra RK4 component.
pub fn cbi_laplace(
    x: (f64, f64),
    z: (f64, f64),
    t: f64,
    r: impl Fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
    dt: f64,
) -> Result<f64, AnalysisError> {
    if x.0 < 0.0 || x.1 < 0.0 || z.0 < 0.0 || z.1 < 0.0 {
        return Err(invalid("cbi_laplace needs x, z >= 0"));
    }
    if t == 0.0 {
        return Ok((-x.0 * z.0 - x.1 * z.1).exp());
    }
    let steps = step_count(t, dt)?;
    let h = t / steps as f64;
    let (mut psi, mut acc) = (z.0, 0.0);
    for k in 0..steps {
        let k1 = r(psi);
        let p2 = psi + 0.5 * h * k1;
        let k2 = r(p2);
        let p3 = psi + 0.5 * h * k2;
        let k3 = r(p3);
        let p4 = psi + h * k3;
        let k4 = r(p4);
        acc += h / 6.0 * (f(psi + z.1) + 2.0 * f(p2 + z.1) + 2.0 * f(p3 + z.1) + f(p4 + z.1));
        psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_bound((k + 1) as f64 * h, psi)?;
    }
    Ok((-x.0 * psi - x.1 * z.1 - acc).exp())
}

/// Scaled generating-function deficits whose limits define the level and
/// fluctuation limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// `n b_n [(1 - l/b_n) - g(1 - l/b_n)]`
    R,
    /// `n [1 - h(1 - l/b_n)]`
    F,
    /// `n^2 [(1 - m_n l/c_n) - g(1 - l/c_n)]`
    G,
    /// `n [(1 - omega_n l/c_n) - h(1 - l/c_n)]`
    H,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::R, Condition::F, Condition::G, Condition::H];

    pub fn name(self) -> &'static str {
        match self {
            Condition::R => "R",
            Condition::F => "F",
            Condition::G => "G",
            Condition::H => "H",
        }
    }

    /// Value of the condition function for `model` at `lambda`.
    pub fn eval(self, model: &GwiModel, lambda: f64) -> Result<f64, AnalysisError> {
        let n = model.n as f64;
        let Scaling2 { b, c } = Scaling2::of(model);
        let bound = match self {
            Condition::R | Condition::F => b,
            Condition::G | Condition::H => c,
        };
        if !(0.0..=bound).contains(&lambda) {
            return Err(AnalysisError::OutsideScale { lambda, bound });
        }
        Ok(match self {
            Condition::R => n * b * model.offspring.pgf_deficit(lambda / b, 1.0)?,
            Condition::F => n * model.immigration.pgf_deficit(lambda / b, 0.0)?,
            Condition::G => n * n * model.offspring.pgf_deficit(lambda / c, model.offspring_mean()?)?,
            Condition::H => n * model.immigration.pgf_deficit(lambda / c, model.immigration_mean()?)?,
        })
    }
}

struct Scaling2 {
    b: f64,
    c: f64,
}

impl Scaling2 {
    fn of(model: &GwiModel) -> Self {
        Self { b: model.scaling.b_n, c: model.scaling.c_n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub condition: Condition,
    pub n: u64,
    pub lambda: f64,
    pub value: f64,
}

/// Convergence indicators for one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    /// `max |value_n - value_{2n}|` over the grid and the requested `n`.
    pub cauchy_gap: f64,
    /// Largest divided difference along the grid over all evaluated `n`.
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticRow>,
    pub reports: Vec<ConditionReport>,
}

/// Evaluates the requested conditions for the models `build(n)` and
/// `build(2n)` over the grid.
pub fn condition_diagnostics(
    build: impl Fn(u64) -> Result<GwiModel, AnalysisError>,
    conditions: &[Condition],
    lambdas: &[f64],
    ns: &[u64],
) -> Result<Diagnostics, AnalysisError> {
    let mut rows = Vec::new();
    let mut reports = Vec::with_capacity(conditions.len());
    let mut models = Vec::with_capacity(2 * ns.len());
    for &n in ns {
        models.push((build(n)?, build(2 * n)?));
    }
    for &cond in conditions {
        let mut gap = 0.0f64;
        let mut lipschitz = 0.0f64;
        for (base, doubled) in &models {
            let v: Vec<f64> = lambdas.iter().map(|&l| cond.eval(base, l)).collect::<Result<_, _>>()?;
            let w: Vec<f64> = lambdas.iter().map(|&l| cond.eval(doubled, l)).collect::<Result<_, _>>()?;
            for (x, y) in v.iter().zip(&w) {
                gap = gap.max((x - y).abs());
            }
            for values in [&v, &w] {
                for i in 1..lambdas.len() {
                    let width = lambdas[i] - lambdas[i - 1];
                    if width > 0.0 {
                        lipschitz = lipschitz.max((values[i] - values[i - 1]).abs() / width);
                    }
                }
            }
            for (&lambda, &value) in lambdas.iter().zip(&v) {
                rows.push(DiagnosticRow { condition: cond, n: base.n, lambda, value });
            }
        }
        reports.push(ConditionReport { condition: cond, cauchy_gap: gap, lipschitz });
    }
    Ok(Diagnostics { rows, reports })
}

/// Writes `condition,n,lambda,value` rows.
pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DiagnosticRow]) -> io::Result<()> {
    writeln!(out, "condition,n,lambda,value")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.condition.name(), r.n, r.lambda, r.value)?;
    }
    Ok(())
}

/// `rho2(t) = quadratic phi^2 + linear phi + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rho2 {
    pub quadratic: f64,
    pub linear: f64,
    pub constant: f64,
}

impl Rho2 {
    pub fn at_phi(&self, f: f64) -> f64 {
        (self.quadratic * f + self.linear) * f + self.constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaMatrix {
    /// `L^{-2} (sigma_ij)`
    pub sigma: [[f64; 2]; 2],
    /// Unnormalized `sigma_ij`.
    pub raw: [[f64; 2]; 2],
    pub spread: f64,
    pub rho2: Rho2,
    /// Set when `b4 < r^2`, which makes `rho2` negative near 0.
    pub warning: Option<String>,
}

/// Asymptotic covariance of the normalized variance estimates in the
/// diffusive regime.
pub fn sigma_matrix(a: f64, omega: f64, pi: f64, r: f64, a4: f64, b4: f64) -> Result<SigmaMatrix, AnalysisError> {
    if !(omega > 0.0) {
        return Err(invalid(format!("omega = {omega} must be positive")));
    }
    let p = Phi { a, omega };
    let rho2 = Rho2 { quadratic: 2.0 * pi * pi, linear: a4 + 4.0 * pi * r, constant: b4 - r * r };
    let warning = (b4 < r * r).then(|| format!("b4 = {b4} < r^2 = {}", r * r));
    let ints = phi_integrals(a, omega, None);
    if !(ints.spread > 0.0) {
        return Err(invalid(format!("phi has nonpositive spread {}", ints.spread)));
    }
    let first_weight = |t: f64| p.eval(t) - ints.first;
    let second_weight = |t: f64| ints.second - p.eval(t) * ints.first;
    let rho = |t: f64| rho2.at_phi(p.eval(t));
    let s11 = integrate_unit(|t| first_weight(t).powi(2) * rho(t));
    let s22 = integrate_unit(|t| second_weight(t).powi(2) * rho(t));
    let s12 = integrate_unit(|t| first_weight(t) * second_weight(t) * rho(t));
    let raw = [[s11, s12], [s12, s22]];
    let l2 = ints.spread * ints.spread;
    let sigma = [[s11 / l2, s12 / l2], [s12 / l2, s22 / l2]];
    Ok(SigmaMatrix { sigma, raw, spread: ints.spread, rho2, warning })
}

/// `K = int phi^alpha (varpi + gamma phi) / (int phi^2)^alpha`.
pub fn stable_mean_limit_coefficient(alpha: f64, a: f64, omega: f64, gamma: f64, varpi: f64) -> Result<f64, AnalysisError> {
    if !(omega > 0.0) {
        return Err(invalid(format!("omega = {omega} must be positive")));
    }
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha = {alpha} outside (1, 2]")));
    }
    let ints = phi_integrals(a, omega, Some((alpha, gamma, varpi)));
    Ok(ints.stable_weight.expect("requested") / ints.second.powf(alpha))
}

/// Laplace transform `exp(K lambda^alpha)` of the stable limit of the
/// normalized least-squares mean estimate.
pub fn stable_mean_limit_laplace(
    lambda: f64,
    alpha: f64,
    a: f64,
    omega: f64,
    gamma: f64,
    varpi: f64,
) -> Result<f64, AnalysisError> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be nonnegative")));
    }
    let k = stable_mean_limit_coefficient(alpha, a, omega, gamma, varpi)?;
    Ok((k * lambda.powf(alpha)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct U12Moments {
    pub u1: Moment,
    pub u2: Moment,
}

/// Second moments of the jump-regime limit `(U1, U2)`.
///
/// `U1 = int (phi - P1) dJ / L` and `U2 = int (P2 - phi P1) dJ / L` with
/// `P1 = int phi`, `P2 = int phi^2`. `J` has predictable quadratic variation
/// `(nu4 + phi(t) mu4) dt`, so each second moment is the integral of the
/// squared weight against that intensity, divided by `L^2`.
pub fn u1_u2_second_moments(nu4: Moment, mu4: Moment, a: f64, omega: f64) -> Result<U12Moments, AnalysisError> {
    if !(omega > 0.0) {
        return Err(invalid(format!("omega = {omega} must be positive")));
    }
    let (Moment::Finite(nu4), Moment::Finite(mu4)) = (nu4, mu4) else {
        return Ok(U12Moments { u1: Moment::Infinite, u2: Moment::Infinite });
    };
    let p = Phi { a, omega };
    let ints = phi_integrals(a, omega, None);
    let l2 = ints.spread * ints.spread;
    let moment = |weight: &dyn Fn(f64) -> f64| {
        let flat = integrate_unit(|t| weight(t).powi(2));
        let tilted = integrate_unit(|t| p.eval(t) * weight(t).powi(2));
        (flat * nu4 + tilted * mu4) / l2
    };
    let u1 = moment(&|t| p.eval(t) - ints.first);
    let u2 = moment(&|t| ints.second - p.eval(t) * ints.first);
    Ok(U12Moments { u1: Moment::Finite(u1), u2: Moment::Finite(u2) })
}

/// Empirical Laplace transform at one `lambda` with its jackknife standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplacePoint {
    pub lambda: f64,
    pub value: f64,
    pub se: f64,
}

pub fn empirical_laplace(samples: &[f64], lambdas: &[f64]) -> Result<Vec<LaplacePoint>, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::EmptySample);
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let terms: Vec<f64> = samples.iter().map(|x| (-lambda * x).exp()).collect();
            let (value, se) = jackknife_mean(&terms);
            LaplacePoint { lambda, value, se }
        })
        .collect())
}

/// Mean and jackknife standard error of the mean.
fn jackknife_mean(terms: &[f64]) -> (f64, f64) {
    let r = terms.len() as f64;
    let total: f64 = terms.iter().copied().collect::<CompensatedSum>().value();
    let mean = total / r;
    // leave-one-out means differ from the full mean by (mean - x_i) / (r - 1)
    let ss: f64 = terms
        .iter()
        .map(|x| {
            let d = (mean - x) / (r - 1.0);
            d * d
        })
        .collect::<CompensatedSum>()
        .value();
    (mean, ((r - 1.0) / r * ss).sqrt())
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov-Smirnov distance to a continuous CDF.
pub fn ks_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (i, x)| {
        let f = cdf(*x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}

/// What an empirical law is compared with.
pub enum Reference<'a> {
    Samples(&'a [f64]),
    Cdf(&'a dyn Fn(f64) -> f64),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawReport {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub laplace: Vec<LaplacePoint>,
    pub ks: Option<f64>,
}

pub fn compare_laws(samples: &[f64], reference: Reference<'_>, lambdas: &[f64]) -> Result<LawReport, AnalysisError> {
    let laplace = empirical_laplace(samples, lambdas)?;
    let (mean, variance) = mean_variance(samples)?;
    let ks = match reference {
        Reference::Samples(r) => Some(ks_two_sample(samples, r)?),
        Reference::Cdf(f) => Some(ks_cdf(samples, f)?),
        Reference::None => None,
    };
    Ok(LawReport { count: samples.len(), mean, variance, laplace, ks })
}

/// Sample mean and unbiased variance.
pub fn mean_variance(samples: &[f64]) -> Result<(f64, f64), AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().copied().collect::<CompensatedSum>().value() / n;
    let ss = samples.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value();
    Ok((mean, ss / (n - 1.0)))
}

/// Unbiased sample covariance of paired samples.
pub fn covariance(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(invalid("paired samples differ in length"));
    }
    let (mx, _) = mean_variance(x)?;
    let (my, _) = mean_variance(y)?;
    let s = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<CompensatedSum>().value();
    Ok(s / (x.len() as f64 - 1.0))
}

/// Writes `lambda,empirical,se,theoretical` rows.
pub fn write_laplace_csv<W: Write>(
    mut out: W,
    points: &[LaplacePoint],
    theoretical: impl Fn(f64) -> f64,
) -> io::Result<()> {
    writeln!(out, "lambda,empirical,se,theoretical")?;
    for p in points {
        writeln!(out, "{},{},{},{}", p.lambda, p.value, p.se, theoretical(p.lambda))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiscreteDist;
    use crate::gwi::Scaling;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1.0, 0.0, 1.0), 1.0);
        let i = phi_integrals(0.0, 1.0, None);
        assert!(close(i.first, 0.5, 1e-12) && close(i.second, 1.0 / 3.0, 1e-12));
        let i = phi_integrals(0.0, 2.0, None);
        assert!(close(i.spread, 1.0 / 3.0, 1e-12));
        assert_eq!(phi(0.7, 0.4, 0.0), 0.0);
    }

    #[test]
    fn phi_closed_integral_matches_quadrature() {
        for (a, omega) in [(0.0, 1.0), (1e-9, 1.0), (0.003, 2.0), (1.5, 0.7), (-2.0, 1.0)] {
            let p = Phi { a, omega };
            let quad = integrate_unit(|t| p.eval(t));
            assert!(close(p.integral(1.0), quad, 1e-10), "a = {a}");
        }
    }

    #[test]
    fn triplet_forms() {
        let r = LevyTriplet::stable_branching(1.5, 0.5).unwrap();
        assert!(close(r.eval(4.0), -0.5 * 8.0, 1e-12));
        let f = LevyTriplet::stable_immigration(1.5, 0.5).unwrap();
        assert!(close(f.eval(4.0), 1.0, 1e-12));
        let atoms = JumpMeasure::Atoms { atoms: vec![Atom::new(1.0, 2.0)] };
        let r = LevyTriplet::branching(0.5, 1.0, atoms.clone()).unwrap();
        let l: f64 = 0.3;
        assert!(close(r.eval(l), 0.5 * l - l * l - 2.0 * ((-l).exp() - 1.0 + l), 1e-15));
        let f = LevyTriplet::immigration(1.0, atoms).unwrap();
        assert!(close(f.eval(l), l + 2.0 * (1.0 - (-l).exp()), 1e-15));
        assert!(LevyTriplet::branching(0.0, -1.0, JumpMeasure::None).is_err());
        assert!(LevyTriplet::stable_branching(2.5, 1.0).is_err());
    }

    #[test]
    fn gaussian_constraints() {
        assert!(check_gaussian_constraints(0.5, 0.0, 1.0, 1.0, 1.0).is_ok());
        assert!(check_gaussian_constraints(0.4, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(check_gaussian_constraints(1.0, -0.2, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn riccati_linear() {
        let sol = solve_riccati(|l| 0.7 * l, 2.0, 1.0, 1e-3).unwrap();
        assert!(close(sol.terminal(), 2.0 * 0.7f64.exp(), 1e-8));
    }

    #[test]
    fn riccati_stable_closed_form() {
        let (alpha, gamma) = (1.5, 0.5);
        let r = |l: f64| -gamma * l.powf(alpha);
        for lambda in [0.1, 1.0, 5.0] {
            let sol = solve_riccati(r, lambda, 1.0, 1e-3).unwrap();
            for (k, v) in sol.values.iter().enumerate() {
                let t = k as f64 * sol.dt;
                let exact = lambda * (1.0 + gamma * (alpha - 1.0) * lambda.powf(alpha - 1.0) * t).powf(-1.0 / (alpha - 1.0));
                assert!(close(*v, exact, 1e-6));
            }
        }
    }

    #[test]
    fn riccati_fixed_point_and_blowup() {
        let sol = solve_riccati(|l| -0.5 * l.powf(1.5), 0.0, 1.0, 1e-3).unwrap();
        assert!(sol.values.iter().all(|v| *v == 0.0));
        assert!(matches!(solve_riccati(|l| l * l, 1.0, 2.0, 1e-3), Err(AnalysisError::BlowUp { .. })));
    }

    #[test]
    fn cbi_laplace_examples() {
        let r = |l: f64| -0.5 * l.powf(1.5);
        let f = |l: f64| 0.5 * l.powf(0.5);
        assert!(close(cbi_laplace((0.0, 0.0), (1.0, 0.0), 1.0, r, f, 1e-3).unwrap(), 1.25f64.powi(-2), 1e-9));
        assert_eq!(cbi_laplace((0.0, 0.0), (0.0, 0.0), 1.0, r, f, 1e-3).unwrap(), 1.0);
        let v = cbi_laplace((2.0, 3.0), (0.5, 0.25), 0.0, r, f, 1e-3).unwrap();
        assert!(close(v, (-1.0f64 - 0.75).exp(), 1e-15));
    }

    fn corollary_family(n: u64, alpha: f64, gamma: f64, varpi: f64) -> Result<GwiModel, AnalysisError> {
        let nf = n as f64;
        let off = DiscreteDist::stable_tailed(1.0 - 0.3 / nf, alpha, gamma / nf)?;
        let imm = DiscreteDist::stable_tailed(1.0, alpha, varpi)?;
        let c_n = nf.powf(1.0 / alpha);
        let b_n = nf.powf(1.0 / (alpha - 1.0));
        Ok(GwiModel::new(off, imm, n, Scaling { b_n, c_n, gamma0: None })?)
    }

    #[test]
    fn diagnostics_exact_for_stable_family() {
        let lambdas = [0.0, 0.25, 0.5, 1.0];
        let d = condition_diagnostics(
            |n| corollary_family(n, 1.5, 0.5, 0.5),
            &[Condition::G, Condition::H],
            &lambdas,
            &[100, 1000],
        )
        .unwrap();
        for row in &d.rows {
            assert!(close(row.value, -0.5 * row.lambda.powf(1.5), 1e-12), "{row:?}");
        }
        assert!(d.reports.iter().all(|r| r.cauchy_gap < 1e-12));
    }

    #[test]
    fn diagnostics_r_for_critical_family() {
        let build = |n: u64| -> Result<GwiModel, AnalysisError> {
            let nf = n as f64;
            let off = DiscreteDist::stable_tailed(1.0, 1.5, 0.5)?;
            let imm = DiscreteDist::stable_immigration(0.5, 0.5)?;
            Ok(GwiModel::new(off, imm, n, Scaling { b_n: nf * nf, c_n: 1.0, gamma0: None })?)
        };
        let d = condition_diagnostics(build, &[Condition::R, Condition::F], &[0.0, 0.5, 2.0], &[50]).unwrap();
        for row in &d.rows {
            let exact = match row.condition {
                Condition::R => -0.5 * row.lambda.powf(1.5),
                _ => 0.5 * row.lambda.sqrt(),
            };
            assert!(close(row.value, exact, 1e-12), "{row:?}");
        }
        assert!(condition_diagnostics(build, &[Condition::G], &[2.0], &[50]).is_err());
    }

    #[test]
    fn sigma_examples() {
        // pi = 0, a4 = 0, b4 - r^2 = 1
        let s = sigma_matrix(0.0, 1.0, 0.0, 1.0, 0.0, 2.0).unwrap();
        assert!(close(s.raw[0][0], 1.0 / 12.0, 1e-12));
        assert!(close(s.sigma[0][0], 12.0, 1e-9));
        assert_eq!(s.sigma[0][1], s.sigma[1][0]);
        let z = sigma_matrix(0.3, 1.0, 0.0, 2.0, 0.0, 4.0).unwrap();
        assert!(z.sigma.iter().flatten().all(|v| *v == 0.0));
        assert!(sigma_matrix(0.0, 1.0, 0.0, 2.0, 0.0, 1.0).unwrap().warning.is_some());
        assert!(sigma_matrix(0.0, 0.0, 0.0, 1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn stable_coefficient() {
        let k = stable_mean_limit_coefficient(1.5, 0.0, 1.0, 0.5, 0.5).unwrap();
        let exact = (12.0 / 35.0) / (1.0f64 / 3.0).powf(1.5);
        assert!(close(k, exact, 1e-9));
        assert!(close(k, 1.7816, 1e-4));
        assert_eq!(stable_mean_limit_laplace(0.0, 1.5, 0.0, 1.0, 0.5, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn stable_coefficient_gaussian_case() {
        // alpha = 2: variance 2 int phi^2 rho1 / (int phi^2)^2, mgf exp(var lambda^2 / 2)
        let (a, omega, gamma, varpi) = (0.4, 1.5, 0.7, 0.2);
        let p = Phi { a, omega };
        let p2 = integrate_unit(|t| p.eval(t).powi(2));
        let weighted = integrate_unit(|t| p.eval(t).powi(2) * (varpi + gamma * p.eval(t)));
        let var = 2.0 * weighted / (p2 * p2);
        let lambda: f64 = 0.8;
        let got = stable_mean_limit_laplace(lambda, 2.0, a, omega, gamma, varpi).unwrap();
        assert!(close(got.ln(), var * lambda * lambda / 2.0, 1e-10));
    }

    #[test]
    fn u_moments() {
        let m = u1_u2_second_moments(Moment::Finite(1.0), Moment::Finite(1.0), 0.0, 1.0).unwrap();
        assert!(close(m.u1.finite().unwrap(), 18.0, 1e-8));
        let z = u1_u2_second_moments(Moment::Finite(0.0), Moment::Finite(0.0), 0.0, 1.0).unwrap();
        assert_eq!((z.u1, z.u2), (Moment::Finite(0.0), Moment::Finite(0.0)));
        let inf = u1_u2_second_moments(Moment::Infinite, Moment::Finite(1.0), 0.0, 1.0).unwrap();
        assert_eq!(inf.u1, Moment::Infinite);
    }

    #[test]
    fn u2_moment_by_hand() {
        // a = 0, omega = 1: weight 1/3 - t/2; int w^2 = 1/36, int t w^2 = 1/144
        let m = u1_u2_second_moments(Moment::Finite(1.0), Moment::Finite(1.0), 0.0, 1.0).unwrap();
        assert!(close(m.u2.finite().unwrap(), 144.0 * (1.0 / 36.0 + 1.0 / 144.0), 1e-8));
    }

    #[test]
    fn laplace_of_zeros() {
        let pts = empirical_laplace(&[0.0; 10], &[0.5, 2.0]).unwrap();
        assert!(pts.iter().all(|p| p.value == 1.0 && p.se == 0.0));
        assert!(empirical_laplace(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn jackknife_matches_standard_error() {
        let x = [0.5, 1.5, 2.0, 4.0, -1.0];
        let (m, se) = jackknife_mean(&x);
        let (mean, var) = mean_variance(&x).unwrap();
        assert!(close(m, mean, 1e-15));
        assert!(close(se, (var / 5.0).sqrt(), 1e-14));
    }

    #[test]
    fn ks_basics() {
        let x = [0.3, 0.1, 0.7, 0.2];
        assert_eq!(ks_two_sample(&x, &x).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert!(close(ks_two_sample(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5, 0.0));
        // uniform grid midpoints against the uniform CDF
        let u: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        assert!(close(ks_cdf(&u, |t| t.clamp(0.0, 1.0)).unwrap(), 0.05, 1e-12));
        assert!(ks_two_sample(&[], &x).is_err());
    }

    #[test]
    fn law_report_and_csv() {
        let x = [1.0, 2.0, 3.0];
        let report = compare_laws(&x, Reference::Samples(&x), &[0.0]).unwrap();
        assert_eq!((report.count, report.mean, report.variance, report.ks), (3, 2.0, 1.0, Some(0.0)));
        assert!(close(covariance(&x, &[2.0, 4.0, 6.0]).unwrap(), 2.0, 1e-15));
        let mut buf = Vec::new();
        write_laplace_csv(&mut buf, &report.laplace, |_| 1.0).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lambda,empirical,se,theoretical\n0,1,0,1\n");
    }
}

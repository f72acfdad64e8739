//! Simulators for the limit processes: the stable CBI, the OU diffusion, the
//! stable-driven OU process, the finite-activity jump OU process, the
//! martingales `M` and `J`, and the functionals built from them.
//!
//! Conventions: a spectrally positive `alpha`-stable process `X` satisfies
//! `E[exp(-lambda X_t)] = exp(t lambda^alpha)`; all stochastic integrals use
//! left endpoints of a uniform grid.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Phi;
use crate::numeric::{integrate_unit, CompensatedSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rate is negative at t = {t}")]
    NegativeRate { t: f64 },
    #[error("rate must be positive, got {value} at t = {t}")]
    NonPositiveRate { t: f64, value: f64 },
    #[error("weight function is constant: its centered second moment is {0}")]
    ConstantWeight(f64),
}

fn invalid(msg: impl Into<String>) -> LimitError {
    LimitError::InvalidParameter(msg.into())
}

/// Uniform time grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self, LimitError> {
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(invalid(format!("grid needs dt > 0 and steps > 0 (dt={dt}, steps={steps})")));
        }
        Ok(Self { dt, steps })
    }

    /// Grid on `[0, 1]` with step as close to `dt` as divides 1.
    pub fn unit(dt: f64) -> Result<Self, LimitError> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(invalid(format!("unit grid step {dt} outside (0, 1]")));
        }
        let steps = (1.0 / dt).round() as usize;
        Self::new(1.0 / steps as f64, steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.time(k))
    }
}

/// Time-dependent rate `intercept + slope * phi(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiRate {
    pub intercept: f64,
    pub slope: f64,
    pub phi: Phi,
}

impl PhiRate {
    pub fn constant(value: f64) -> Self {
        Self { intercept: value, slope: 0.0, phi: Phi { a: 0.0, omega: 0.0 } }
    }

    pub fn at(&self, t: f64) -> f64 {
        if self.slope == 0.0 {
            self.intercept
        } else {
            self.intercept + self.slope * self.phi.eval(t)
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { intercept: factor * self.intercept, slope: factor * self.slope, phi: self.phi }
    }

    fn is_zero(&self) -> bool {
        self.intercept == 0.0 && (self.slope == 0.0 || self.phi.omega == 0.0)
    }
}

/// Atom `mass * delta_position` of a finite jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(position: f64, mass: f64) -> Self {
        Self { position, mass }
    }
}

/// Total mass and `sum mass * u^p` of an atom list.
pub fn atom_moment(atoms: &[Atom], power: i32) -> f64 {
    atoms.iter().map(|a| a.mass * a.position.powi(power)).sum()
}

/// Stable parameters `(alpha, gamma, varpi)` of the heavy-tailed families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub gamma: f64,
    pub varpi: f64,
}

/// Parameters of the time-inhomogeneous OU-type limit with finite-activity
/// jump measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub a: f64,
    pub omega: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gaussian intensity as an affine form in `phi`.
    pub rho_intercept: f64,
    pub rho_slope: f64,
    /// Offspring-side jump measure, active at rate `phi(s)`.
    pub mu: Vec<Atom>,
    /// Immigration-side jump measure, active at unit rate.
    pub nu: Vec<Atom>,
    #[serde(default)]
    pub stable: Option<StableParams>,
}

impl LimitSpec {
    /// Pure-jump spec with the given measures and no drift terms.
    pub fn jumps(a: f64, omega: f64, mu: Vec<Atom>, nu: Vec<Atom>) -> Self {
        Self { a, omega, beta1: 0.0, beta2: 0.0, rho_intercept: 0.0, rho_slope: 0.0, mu, nu, stable: None }
    }

    /// Sets the Gaussian intensity from the quadratic coefficients of the
    /// branching and immigration limits:
    /// `rho(s) = (2 sigma1 - a gamma0) phi(s) + 2 sigma2 + omega (1 - omega) gamma0`.
    pub fn with_gaussian_coefficients(mut self, sigma1: f64, sigma2: f64, gamma0: f64) -> Self {
        self.rho_slope = 2.0 * sigma1 - self.a * gamma0;
        self.rho_intercept = 2.0 * sigma2 + self.omega * (1.0 - self.omega) * gamma0;
        self
    }

    pub fn phi(&self) -> Phi {
        Phi { a: self.a, omega: self.omega }
    }

    pub fn rho(&self) -> PhiRate {
        PhiRate { intercept: self.rho_intercept, slope: self.rho_slope, phi: self.phi() }
    }

    pub fn validate(&self, horizon: f64) -> Result<(), LimitError> {
        if !(self.omega >= 0.0) {
            return Err(invalid(format!("omega = {} must be nonnegative", self.omega)));
        }
        for atom in self.mu.iter().chain(&self.nu) {
            if !(atom.position > 0.0 && atom.mass > 0.0) || !atom.position.is_finite() || !atom.mass.is_finite() {
                return Err(invalid(format!("atom {atom:?} needs positive position and mass")));
            }
        }
        let rho = self.rho();
        for t in [0.0, horizon] {
            if rho.at(t) < 0.0 {
                return Err(LimitError::NegativeRate { t });
            }
        }
        Ok(())
    }

    /// `int_0^t (sum_nu mass u^p + phi(s) sum_mu mass u^p) ds`: the
    /// compensator of the jumps raised to the power `p`.
    pub fn compensator(&self, t: f64, power: i32) -> f64 {
        atom_moment(&self.nu, power) * t + atom_moment(&self.mu, power) * self.phi().integral(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpSource {
    /// Immigration-side measure.
    Nu,
    /// Offspring-side measure.
    Mu,
}

impl fmt::Display for JumpSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JumpSource::Nu => "nu",
            JumpSource::Mu => "mu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub size: f64,
    pub source: JumpSource,
}

/// A sample path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    /// Compensated-jump component of `values`, when the path has one.
    pub jump_part: Option<Vec<f64>>,
}

impl Trajectory {
    fn continuous(grid: TimeGrid, values: Vec<f64>) -> Self {
        Self { grid, values, jumps: Vec::new(), jump_part: None }
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("trajectory has at least one point")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.times()
    }
}

/// Sampler of totally right-skewed stable variables (Chambers-Mallows-Stuck,
/// skewness +1), scaled so that an increment over `dt` has Laplace transform
/// `exp(dt lambda^alpha)` for `1 < alpha < 2` or `exp(-dt lambda^alpha)` for
/// `0 < alpha < 1`.
#[derive(Debug, Clone, Copy)]
pub struct SkewedStable {
    alpha: f64,
    shift: f64,
    prefactor: f64,
    /// `|cos(pi alpha / 2)|`
    cos_factor: f64,
}

impl SkewedStable {
    pub fn new(alpha: f64) -> Result<Self, LimitError> {
        if !(alpha > 0.0 && alpha < 2.0) || alpha == 1.0 {
            return Err(invalid(format!("stable index {alpha} outside (0, 1) and (1, 2)")));
        }
        let tan = (FRAC_PI_2 * alpha).tan();
        Ok(Self {
            alpha,
            shift: tan.atan() / alpha,
            prefactor: (1.0 + tan * tan).powf(0.5 / alpha),
            cos_factor: (FRAC_PI_2 * alpha).cos().abs(),
        })
    }

    /// Unit-scale draw.
    fn standard<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        let w: f64 = Exp1.sample(rng);
        let a = self.alpha;
        let arg = a * (v + self.shift);
        self.prefactor * arg.sin() / v.cos().powf(1.0 / a) * ((v - arg).cos() / w).powf((1.0 - a) / a)
    }

    /// Increment over `dt` of the process with Laplace exponent `rate * lambda^alpha`.
    pub fn increment<R: Rng + ?Sized>(&self, rate: f64, dt: f64, rng: &mut R) -> f64 {
        let scale = (rate * dt * self.cos_factor).powf(1.0 / self.alpha);
        scale * self.standard(rng)
    }
}

/// One increment over `dt` of the spectrally positive `alpha`-stable process
/// with `E[exp(-lambda X_t)] = exp(t lambda^alpha)`. `alpha = 2` is Brownian
/// with variance `2 dt`.
pub fn sample_stable_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> Result<f64, LimitError> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    if alpha == 2.0 {
        return Ok(gaussian_step(2.0, dt, rng));
    }
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(invalid(format!("alpha = {alpha} outside (1, 2]")));
    }
    Ok(SkewedStable::new(alpha)?.increment(1.0, dt, rng))
}

#[inline]
fn gaussian_step<R: Rng + ?Sized>(rate: f64, dt: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (rate * dt).sqrt() * z
}

/// Euler-Maruyama path of `dZ = a Z dt + sqrt(rho(t)) dB`, `Z(0) = 0`.
pub fn simulate_ou_diffusion<R: Rng + ?Sized>(
    a: f64,
    rho: &PhiRate,
    grid: TimeGrid,
    rng: &mut R,
) -> Result<Trajectory, LimitError> {
    let rates = grid_rates(rho, grid)?;
    if let Some(k) = rates.iter().position(|r| *r < 0.0) {
        return Err(LimitError::NegativeRate { t: grid.time(k) });
    }
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut z = 0.0;
    values.push(z);
    for rate in &rates[..grid.steps] {
        z += a * z * grid.dt + gaussian_step(*rate, grid.dt, rng);
        values.push(z);
    }
    Ok(Trajectory::continuous(grid, values))
}

/// Euler path of `dZ = a Z dt + rho1(t)^{1/alpha} dX`, `Z(0) = 0`.
///
/// At `alpha = 2` this draws exactly what [`simulate_ou_diffusion`] draws for
/// `rho = 2 rho1`.
pub fn simulate_stable_ou<R: Rng + ?Sized>(
    a: f64,
    alpha: f64,
    rho1: &PhiRate,
    grid: TimeGrid,
    rng: &mut R,
) -> Result<Trajectory, LimitError> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha = {alpha} outside (1, 2]")));
    }
    let rates = grid_rates(rho1, grid)?;
    if let Some(k) = rates.iter().position(|r| !(*r > 0.0)) {
        return Err(LimitError::NonPositiveRate { t: grid.time(k), value: rates[k] });
    }
    if alpha == 2.0 {
        return simulate_ou_diffusion(a, &rho1.scaled(2.0), grid, rng);
    }
    let sampler = SkewedStable::new(alpha)?;
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut z = 0.0;
    values.push(z);
    for rate in &rates[..grid.steps] {
        z += a * z * grid.dt + sampler.increment(*rate, grid.dt, rng);
        values.push(z);
    }
    Ok(Trajectory::continuous(grid, values))
}

fn grid_rates(rate: &PhiRate, grid: TimeGrid) -> Result<Vec<f64>, LimitError> {
    let rates: Vec<f64> = grid.times().map(|t| rate.at(t)).collect();
    if let Some(k) = rates.iter().position(|r| !r.is_finite()) {
        return Err(invalid(format!("rate is not finite at t = {}", grid.time(k))));
    }
    Ok(rates)
}

/// Jump times and sizes on `(0, horizon]`: `nu`-jumps at constant rate,
/// `mu`-jumps at rate `phi(s) mu(R+)` by thinning against `max phi` on the
/// horizon. Sorted by time.
pub fn sample_jump_events<R: Rng + ?Sized>(spec: &LimitSpec, horizon: f64, rng: &mut R) -> Vec<JumpEvent> {
    let mut events = Vec::new();
    let nu_rate: f64 = spec.nu.iter().map(|a| a.mass).sum();
    if nu_rate > 0.0 {
        let mut t = 0.0;
        loop {
            t += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / nu_rate;
            if t > horizon {
                break;
            }
            let size = pick_atom(&spec.nu, nu_rate, rng);
            events.push(JumpEvent { time: t, size, source: JumpSource::Nu });
        }
    }
    let mu_mass: f64 = spec.mu.iter().map(|a| a.mass).sum();
    let phi = spec.phi();
    // phi is monotone, so its maximum over [0, T] sits at an endpoint
    let phi_max = phi.eval(0.0).max(phi.eval(horizon));
    if mu_mass > 0.0 && phi_max > 0.0 {
        let envelope = mu_mass * phi_max;
        let mut t = 0.0;
        let mut accepted = Vec::new();
        loop {
            t += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / envelope;
            if t > horizon {
                break;
            }
            if rng.random::<f64>() * phi_max < phi.eval(t) {
                let size = pick_atom(&spec.mu, mu_mass, rng);
                accepted.push(JumpEvent { time: t, size, source: JumpSource::Mu });
            }
        }
        events = merge_by_time(events, accepted);
    }
    events
}

fn pick_atom<R: Rng + ?Sized>(atoms: &[Atom], total: f64, rng: &mut R) -> f64 {
    if atoms.len() == 1 {
        return atoms[0].position;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for atom in atoms {
        acc += atom.mass;
        if target < acc {
            return atom.position;
        }
    }
    atoms.last().expect("nonempty").position
}

fn merge_by_time(a: Vec<JumpEvent>, b: Vec<JumpEvent>) -> Vec<JumpEvent> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].time <= b[j].time {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Cumulative compensated jump sum `sum_{tau <= t_k} u^p - compensator(t_k)` on the grid.
fn compensated_jump_path(spec: &LimitSpec, events: &[JumpEvent], grid: TimeGrid, power: i32) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.steps + 1);
    let mut level = 0.0;
    out.push(level);
    let mut next = 0;
    for k in 0..grid.steps {
        let (t0, t1) = (grid.time(k), grid.time(k + 1));
        while next < events.len() && events[next].time <= t1 {
            level += events[next].size.powi(power);
            next += 1;
        }
        level -= spec.compensator(t1, power) - spec.compensator(t0, power);
        out.push(level);
    }
    out
}

/// Path of the jump OU process driven by the given events; drift and Brownian
/// parts by Euler steps, jumps placed exactly.
pub fn jump_ou_from_events<R: Rng + ?Sized>(
    spec: &LimitSpec,
    events: Vec<JumpEvent>,
    grid: TimeGrid,
    rng: &mut R,
) -> Result<Trajectory, LimitError> {
    spec.validate(grid.horizon())?;
    let jump_part = compensated_jump_path(spec, &events, grid, 1);
    let rho = spec.rho();
    let diffusive = !rho.is_zero();
    let phi = spec.phi();
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut continuous = 0.0;
    let mut z = 0.0;
    values.push(z);
    for k in 0..grid.steps {
        let t = grid.time(k);
        continuous += (spec.beta2 + spec.beta1 * phi.eval(t) + spec.a * z) * grid.dt;
        if diffusive {
            let rate = rho.at(t);
            if rate < 0.0 {
                return Err(LimitError::NegativeRate { t });
            }
            continuous += gaussian_step(rate, grid.dt, rng);
        }
        z = continuous + jump_part[k + 1];
        values.push(z);
    }
    Ok(Trajectory { grid, values, jumps: events, jump_part: Some(jump_part) })
}

/// Jump OU path with freshly sampled events.
pub fn simulate_jump_ou<R: Rng + ?Sized>(spec: &LimitSpec, grid: TimeGrid, rng: &mut R) -> Result<Trajectory, LimitError> {
    spec.validate(grid.horizon())?;
    let events = sample_jump_events(spec, grid.horizon(), rng);
    jump_ou_from_events(spec, events, grid, rng)
}

/// The martingale `J`: the same jump stream with sizes squared, compensated.
pub fn j_from_events(spec: &LimitSpec, events: &[JumpEvent], grid: TimeGrid) -> Trajectory {
    let values = compensated_jump_path(spec, events, grid, 2);
    let jumps = events.iter().map(|e| JumpEvent { size: e.size * e.size, ..*e }).collect();
    Trajectory { grid, jump_part: Some(values.clone()), values, jumps }
}

pub fn simulate_j<R: Rng + ?Sized>(spec: &LimitSpec, grid: TimeGrid, rng: &mut R) -> Result<Trajectory, LimitError> {
    spec.validate(grid.horizon())?;
    let events = sample_jump_events(spec, grid.horizon(), rng);
    Ok(j_from_events(spec, &events, grid))
}

/// Level `Y` and immigration `Y'` of the stable CBI, with the number of steps
/// that started below zero and were clamped inside the root.
#[derive(Debug, Clone, PartialEq)]
pub struct CbiPath {
    pub level: Trajectory,
    pub immigration: Trajectory,
    pub clamp_events: usize,
}

/// Euler scheme for `dY = Y(t-)^{1/alpha} dX + dY'`, where `X` has Laplace
/// exponent `-gamma lambda^alpha` and `Y'` is the `(alpha - 1)`-stable
/// subordinator with exponent `varpi lambda^{alpha - 1}`.
pub fn simulate_cbi_stable<R: Rng + ?Sized>(
    alpha: f64,
    gamma: f64,
    varpi: f64,
    grid: TimeGrid,
    rng: &mut R,
) -> Result<CbiPath, LimitError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(invalid(format!("alpha = {alpha} outside (1, 2)")));
    }
    if !(gamma > 0.0) || !(varpi >= 0.0) {
        return Err(invalid(format!("need gamma > 0 and varpi >= 0 (gamma={gamma}, varpi={varpi})")));
    }
    let branching = SkewedStable::new(alpha)?;
    let subordinator = SkewedStable::new(alpha - 1.0)?;
    let inv_alpha = 1.0 / alpha;
    let mut level = Vec::with_capacity(grid.steps + 1);
    let mut immigration = Vec::with_capacity(grid.steps + 1);
    let (mut y, mut y_imm) = (0.0f64, 0.0f64);
    level.push(y);
    immigration.push(y_imm);
    let mut clamp_events = 0;
    for _ in 0..grid.steps {
        let dx = branching.increment(gamma, grid.dt, rng);
        let dimm = if varpi > 0.0 { subordinator.increment(varpi, grid.dt, rng) } else { 0.0 };
        if y < 0.0 {
            clamp_events += 1;
        }
        y += y.max(0.0).powf(inv_alpha) * dx + dimm;
        y_imm += dimm;
        level.push(y);
        immigration.push(y_imm);
    }
    Ok(CbiPath {
        level: Trajectory::continuous(grid, level),
        immigration: Trajectory::continuous(grid, immigration),
        clamp_events,
    })
}

/// `M(t) = Z(t) - int_0^t a Z(s) ds` with trapezoidal integration.
pub fn martingale_m(z: &Trajectory, a: f64) -> Trajectory {
    let dt = z.grid.dt;
    let mut values = Vec::with_capacity(z.values.len());
    let mut integral = 0.0;
    values.push(z.values[0]);
    for w in z.values.windows(2) {
        integral += 0.5 * (w[0] + w[1]) * dt;
        values.push(w[1] - a * integral);
    }
    Trajectory::continuous(z.grid, values)
}

/// Left-endpoint stochastic integral `int phi dX` over the whole grid.
pub fn stochastic_integral(path: &Trajectory, phi: impl Fn(f64) -> f64) -> f64 {
    path.values
        .windows(2)
        .enumerate()
        .map(|(k, w)| phi(path.grid.time(k)) * (w[1] - w[0]))
        .sum()
}

/// `int_0^1 phi dM / int_0^1 phi^2`.
pub fn limit_mean_functional(m: &Trajectory, phi: impl Fn(f64) -> f64) -> f64 {
    let denom = integrate_unit(|t| phi(t) * phi(t));
    stochastic_integral(m, &phi) / denom
}

/// Pair `((int phi dX - X(1) int phi) / L, (X(1) int phi^2 - int phi int phi dX) / L)`
/// with `L = int phi^2 - (int phi)^2`.
fn centered_pair<P: Fn(f64) -> f64>(
    path: &Trajectory,
    phi: P,
    weighted: impl Fn(&Trajectory, &P) -> f64,
) -> Result<(f64, f64), LimitError> {
    let first = integrate_unit(&phi);
    let second = integrate_unit(|t| phi(t) * phi(t));
    let spread = second - first * first;
    if !(spread > 1e-12 * second.abs()) {
        return Err(LimitError::ConstantWeight(spread));
    }
    let weighted = weighted(path, &phi);
    let terminal = path.terminal();
    Ok(((weighted - terminal * first) / spread, (terminal * second - first * weighted) / spread))
}

/// Limit of the joint least-squares mean estimates, driven by `M`.
pub fn limit_mean_joint_functional(m: &Trajectory, phi: impl Fn(f64) -> f64) -> Result<(f64, f64), LimitError> {
    centered_pair(m, phi, |p, f| stochastic_integral(p, f))
}

/// `int phi dJ` for a compensated pure-jump path whose `jumps` list matches
/// its values: jumps weighted at their own times, the smooth compensator by
/// the trapezoid rule, so the error is second order in the step.
pub fn jump_path_integral(path: &Trajectory, phi: impl Fn(f64) -> f64) -> f64 {
    let events = &path.jumps;
    let mut next = 0;
    let mut total = CompensatedSum::new();
    for (k, w) in path.values.windows(2).enumerate() {
        let (t0, t1) = (path.grid.time(k), path.grid.time(k + 1));
        let mut jumps = 0.0;
        while next < events.len() && events[next].time <= t1 {
            jumps += events[next].size;
            total.add(phi(events[next].time) * events[next].size);
            next += 1;
        }
        total.add(0.5 * (phi(t0) + phi(t1)) * (w[1] - w[0] - jumps));
    }
    total.value()
}

/// Limit `(U1, U2)` of the variance estimates, driven by `J` (as built by
/// [`j_from_events`]).
pub fn limit_variance_functional(j: &Trajectory, phi: impl Fn(f64) -> f64) -> Result<(f64, f64), LimitError> {
    centered_pair(j, phi, |p, f| jump_path_integral(p, f))
}

/// Writes `t,value` rows.
pub fn write_trajectory_csv<W: Write>(mut out: W, path: &Trajectory) -> io::Result<()> {
    writeln!(out, "t,value")?;
    for (t, v) in path.times().zip(&path.values) {
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}

/// Writes `t,size,source` rows.
pub fn write_jumps_csv<W: Write>(mut out: W, jumps: &[JumpEvent]) -> io::Result<()> {
    writeln!(out, "t,size,source")?;
    for e in jumps {
        writeln!(out, "{},{},{}", e.time, e.size, e.source)?;
    }
    Ok(())
}

//! Experiment execution and artifact writing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use gwi_core::analysis::{
    self, cbi_laplace, compare_laws, condition_diagnostics, empirical_laplace, mean_variance, sigma_matrix,
    stable_mean_limit_coefficient, u1_u2_second_moments, write_diagnostics_csv, write_laplace_csv, AnalysisError,
    LaplacePoint, Reference,
};
use gwi_core::dist::Moment;
use gwi_core::est::{self, EstError, EstimateRow, Normalization};
use gwi_core::gwi::{grid_index, simulate_path, write_paths_csv, GwiModel, PathRecord};
use gwi_core::limit::{
    atom_moment, j_from_events, jump_ou_from_events, limit_variance_functional, sample_jump_events,
    sample_stable_increment, simulate_cbi_stable, simulate_j, write_jumps_csv, write_trajectory_csv, JumpEvent,
    LimitSpec, TimeGrid, Trajectory,
};
use gwi_core::mc::MonteCarlo;
use gwi_core::numeric::integrate_unit;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{
    build_model, EstimatorChoice, EstimatorLaw, ExperimentConfig, ExperimentKind, LimitLaw, ModelBlock,
};
use crate::LabError;

/// Step of the Riccati solver behind theoretical CBI transforms.
const ORACLE_RICCATI_STEP: f64 = 1e-4;

/// Sub-experiment domains for independent reference streams.
const REFERENCE_DOMAIN: u64 = 1;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

/// A tolerance check: passes when `statistic <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, statistic: f64, bound: f64) -> Self {
        Self { name: name.into(), statistic, bound, pass: statistic <= bound }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub parameters: ExperimentConfig,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    /// `None` when the experiment has no checks.
    pub pass: Option<bool>,
}

#[derive(Default)]
struct Outcome {
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
}

impl Outcome {
    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn laplace_checks(&mut self, points: &[LaplacePoint], theory: impl Fn(f64) -> f64, se_multiple: f64) {
        for p in points {
            let gap = (p.value - theory(p.lambda)).abs();
            let z = if p.se > 0.0 {
                gap / p.se
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            self.checks.push(Check::at_most(format!("laplace z-score at lambda={}", p.lambda), z, se_multiple));
        }
    }
}

/// Runs one experiment, writing its artifacts into `opts.out`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<Summary, LabError> {
    config.validate()?;
    fs::create_dir_all(&opts.out).map_err(|source| LabError::Io { path: opts.out.display().to_string(), source })?;
    let mc = MonteCarlo::new(opts.seed, opts.workers);
    let out = opts.out.as_path();
    let mut outcome = Outcome::default();
    match config.experiment {
        ExperimentKind::Simulate => simulate(config, &mc, out, &mut outcome)?,
        ExperimentKind::Estimate => estimate(config, &mc, out, &mut outcome)?,
        ExperimentKind::EstimatorLaw => estimator_law(config, &mc, out, &mut outcome)?,
        ExperimentKind::LimitLaw => limit_law(config, &mc, out, &mut outcome)?,
        ExperimentKind::Diagnose => diagnose(config, out, &mut outcome)?,
    }
    let mut parameters = config.clone();
    parameters.run.seed = Some(opts.seed);
    parameters.run.workers = None;
    parameters.run.out = None;
    let pass = (!outcome.checks.is_empty()).then(|| outcome.checks.iter().all(|c| c.pass));
    let summary = Summary {
        experiment: config.experiment.as_str().to_string(),
        seed: opts.seed,
        parameters,
        metrics: outcome.metrics,
        checks: outcome.checks,
        pass,
    };
    write_file(out, "summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(io::Error::other)?;
        writeln!(w)
    })?;
    Ok(summary)
}

fn write_file(out: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), LabError> {
    let path = out.join(name);
    let wrap = |source| LabError::Io { path: path.display().to_string(), source };
    let file = File::create(&path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|()| w.flush()).map_err(|e| LabError::Io { path: path.display().to_string(), source: e })
}

fn write_values_csv<W: Write>(mut w: W, header: &str, rows: &[Vec<f64>]) -> io::Result<()> {
    writeln!(w, "replicate,{header}")?;
    for (i, row) in rows.iter().enumerate() {
        write!(w, "{i}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn model_of(config: &ExperimentConfig) -> Result<(GwiModel, &ModelBlock), LabError> {
    let block = config.model.as_ref().ok_or_else(|| LabError::Config("missing model block".into()))?;
    Ok((build_model(block, &config.scaling, block.n)?, block))
}

fn horizon(config: &ExperimentConfig, model: &GwiModel) -> usize {
    config.run.horizon.unwrap_or(model.n as usize)
}

fn finite(moment: Moment, what: &str) -> Result<f64, LabError> {
    moment.finite().ok_or_else(|| LabError::Config(format!("{what} is infinite for this model")))
}

/// Exact offspring and immigration moments of the model.
struct Truth {
    m: Moment,
    omega: Moment,
    pi: Moment,
    r: Moment,
}

impl Truth {
    fn of(model: &GwiModel) -> Self {
        let o = model.offspring.moments();
        let i = model.immigration.moments();
        Self { m: o.mean, omega: i.mean, pi: o.variance, r: i.variance }
    }
}

fn simulate(config: &ExperimentConfig, mc: &MonteCarlo, out: &Path, outcome: &mut Outcome) -> Result<(), LabError> {
    let (model, _) = model_of(config)?;
    let horizon = horizon(config, &model);
    let paths = mc.try_run(config.run.replicates, |_, rng| simulate_path(&model, horizon, rng, true))??;
    write_file(out, "paths.csv", |w| write_paths_csv(w, paths.iter().enumerate().map(|(i, p)| (i as u64, p))))?;
    let terminal: Vec<f64> = paths.iter().map(|p| *p.y().last().expect("nonempty") as f64).collect();
    let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
    outcome.metric("mean_terminal", mean);
    outcome.metric("mean_terminal_over_b_n", mean / model.scaling.b_n);
    Ok(())
}

impl From<EstError> for LabError {
    fn from(e: EstError) -> Self {
        LabError::Numerical(e.to_string())
    }
}

/// Named components of one estimator with the true values they estimate.
fn estimator_components(
    path: &PathRecord,
    choice: EstimatorChoice,
    truth: &Truth,
) -> Result<Result<Vec<(&'static str, f64, f64)>, EstError>, LabError> {
    Ok(match choice {
        EstimatorChoice::NaturalMean => {
            let m = finite(truth.m, "offspring mean")?;
            est::natural_mean(path).map(|r| vec![("natural-mean", r.value, m)])
        }
        EstimatorChoice::ClseMean => {
            let m = finite(truth.m, "offspring mean")?;
            let omega = finite(truth.omega, "immigration mean")?;
            est::clse_mean_known_immigration(path, omega).map(|r| vec![("clse-mean", r.value, m)])
        }
        EstimatorChoice::ClseMeanJoint => {
            let m = finite(truth.m, "offspring mean")?;
            let omega = finite(truth.omega, "immigration mean")?;
            est::clse_mean_joint(path).map(|r| {
                vec![("clse-mean-joint.m", r.value, m), ("clse-mean-joint.omega", r.second.unwrap_or(f64::NAN), omega)]
            })
        }
        EstimatorChoice::ClseVariances | EstimatorChoice::ClseVariancesPlugin => {
            let m = finite(truth.m, "offspring mean")?;
            let omega = finite(truth.omega, "immigration mean")?;
            let pi = finite(truth.pi, "offspring variance")?;
            let r = finite(truth.r, "immigration variance")?;
            let (report, names) = if choice == EstimatorChoice::ClseVariances {
                (est::clse_variances(path, m, omega), ["clse-variances.pi", "clse-variances.r"])
            } else {
                (est::clse_variances_plugin(path), ["clse-variances-plugin.pi", "clse-variances-plugin.r"])
            };
            report.map(|rep| vec![(names[0], rep.value, pi), (names[1], rep.second.unwrap_or(f64::NAN), r)])
        }
    })
}

fn estimate(config: &ExperimentConfig, mc: &MonteCarlo, out: &Path, outcome: &mut Outcome) -> Result<(), LabError> {
    let (model, _) = model_of(config)?;
    let horizon = horizon(config, &model);
    let truth = Truth::of(&model);
    let record = config.estimators.iter().any(|e| e.estimator == EstimatorChoice::NaturalMean);
    let (n, c_n) = (model.n, model.scaling.c_n);
    let per_replicate = mc.try_run(config.run.replicates, |i, rng| -> Result<(Vec<EstimateRow>, u64), LabError> {
        let path = simulate_path(&model, horizon, rng, record)?;
        let mut rows = Vec::new();
        let mut degenerate = 0;
        for entry in &config.estimators {
            match estimator_components(&path, entry.estimator, &truth)? {
                Ok(components) => {
                    for (k, (name, value, target)) in components.into_iter().enumerate() {
                        let normalized = entry.normalization.get(k).map(|z| z.apply(n, c_n, value, target));
                        rows.push(EstimateRow { replicate: i, n, estimator: name.to_string(), value, normalized });
                    }
                }
                Err(_) => degenerate += 1,
            }
        }
        Ok((rows, degenerate))
    })??;
    let degenerate: u64 = per_replicate.iter().map(|(_, d)| d).sum();
    let rows: Vec<EstimateRow> = per_replicate.into_iter().flat_map(|(r, _)| r).collect();
    write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &rows))?;
    outcome.metric("degenerate_paths", degenerate as f64);
    outcome.metric("rows", rows.len() as f64);
    Ok(())
}

/// Runs `statistic` on every path; degenerate paths are dropped and counted.
fn path_statistics<const K: usize>(
    mc: &MonteCarlo,
    replicates: u64,
    model: &GwiModel,
    horizon: usize,
    record: bool,
    statistic: impl Fn(&PathRecord) -> Result<[f64; K], EstError> + Sync,
) -> Result<(Vec<[f64; K]>, u64), LabError> {
    let results = mc.try_run(replicates, |_, rng| -> Result<Option<[f64; K]>, LabError> {
        let path = simulate_path(model, horizon, rng, record)?;
        Ok(statistic(&path).ok())
    })??;
    let dropped = results.iter().filter(|r| r.is_none()).count() as u64;
    Ok((results.into_iter().flatten().collect(), dropped))
}

fn rows_for(names: &[&str], n: u64, values: &[Vec<f64>]) -> Vec<EstimateRow> {
    values
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            names.iter().zip(row).map(move |(name, v)| EstimateRow {
                replicate: i as u64,
                n,
                estimator: (*name).to_string(),
                value: *v,
                normalized: None,
            })
        })
        .collect()
}

/// Estimate rows with raw and normalized values side by side.
fn normalized_rows(name: &str, n: u64, raw: &[f64], normalized: &[f64]) -> Vec<EstimateRow> {
    raw.iter()
        .zip(normalized)
        .enumerate()
        .map(|(i, (v, z))| EstimateRow { replicate: i as u64, n, estimator: name.to_string(), value: *v, normalized: Some(*z) })
        .collect()
}

fn column<const K: usize>(values: &[[f64; K]], k: usize) -> Vec<f64> {
    values.iter().map(|v| v[k]).collect()
}

fn estimator_law(config: &ExperimentConfig, mc: &MonteCarlo, out: &Path, outcome: &mut Outcome) -> Result<(), LabError> {
    let (model, _) = model_of(config)?;
    let law = config.estimator_law.as_ref().expect("validated");
    let truth = Truth::of(&model);
    let n = model.n;
    let replicates = config.run.replicates;
    let lambdas = &config.run.lambdas;
    let reference_mc = mc.child(REFERENCE_DOMAIN);
    let grid = TimeGrid::unit(config.run.dt)?;
    match law {
        EstimatorLaw::CbiLevel { alpha, gamma, varpi, time, se_multiple } => {
            let idx = grid_index(n, *time).max(1);
            let b_n = model.scaling.b_n;
            let (levels, _) = path_statistics(mc, replicates, &model, idx, false, |p| Ok([p.y()[idx] as f64 / b_n]))?;
            let levels = column(&levels, 0);
            let (alpha, gamma, varpi, time) = (*alpha, *gamma, *varpi, *time);
            let theory = |lambda: f64| {
                cbi_laplace(
                    (0.0, 0.0),
                    (lambda, 0.0),
                    time,
                    |l| -gamma * l.powf(alpha),
                    |l| varpi * l.powf(alpha - 1.0),
                    ORACLE_RICCATI_STEP,
                )
            };
            let theoretical: Vec<f64> = lambdas.iter().map(|l| theory(*l)).collect::<Result<_, _>>()?;
            let points = empirical_laplace(&levels, lambdas)?;
            let lookup = |l: f64| theoretical[lambdas.iter().position(|x| *x == l).expect("grid value")];
            write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &rows_for(&["level"], n, &wrap(&levels))))?;
            write_file(out, "laws.csv", |w| write_laplace_csv(w, &points, lookup))?;
            outcome.metric("b_n", b_n);
            outcome.laplace_checks(&points, lookup, *se_multiple);
        }
        EstimatorLaw::NaturalMean { alpha, gamma, varpi, reference_replicates, ks_max } => {
            let m = finite(truth.m, "offspring mean")?;
            let horizon = horizon(config, &model);
            let (raw, dropped) =
                path_statistics(mc, replicates, &model, horizon, true, |p| est::natural_mean(p).map(|r| [r.value]))?;
            let raw = column(&raw, 0);
            let scaled: Vec<f64> = raw.iter().map(|v| Normalization::N.apply(n, 1.0, *v, m)).collect();
            let reference = reference_mc.try_run(*reference_replicates, |_, rng| -> Result<(Option<f64>, usize), LabError> {
                let path = simulate_cbi_stable(*alpha, *gamma, *varpi, grid, rng)?;
                let area = trapezoid(&path.level);
                let value = (area > 0.0).then(|| (path.level.terminal() - path.immigration.terminal()) / area);
                Ok((value, path.clamp_events))
            })??;
            let clamps: usize = reference.iter().map(|(_, c)| c).sum();
            let reference: Vec<f64> = reference.into_iter().filter_map(|(v, _)| v).collect();
            let report = compare_laws(&scaled, Reference::Samples(&reference), lambdas)?;
            write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &normalized_rows("natural-mean", n, &raw, &scaled)))?;
            write_file(out, "reference.csv", |w| write_values_csv(w, "value", &wrap(&reference)))?;
            outcome.metric("degenerate_paths", dropped as f64);
            outcome.metric("reference_size", reference.len() as f64);
            outcome.metric("reference_clamp_events", clamps as f64);
            outcome.metric("empirical_mean", report.mean);
            outcome.checks.push(Check::at_most("ks two-sample", report.ks.expect("reference given"), *ks_max));
        }
        EstimatorLaw::StableMean { alpha, a, omega, gamma, varpi, se_multiple } => {
            let m = finite(truth.m, "offspring mean")?;
            let omega_n = finite(truth.omega, "immigration mean")?;
            let horizon = horizon(config, &model);
            let (raw, dropped) = path_statistics(mc, replicates, &model, horizon, false, |p| {
                est::clse_mean_known_immigration(p, omega_n).map(|r| [r.value])
            })?;
            let raw = column(&raw, 0);
            let c_n = model.scaling.c_n;
            let scaled: Vec<f64> = raw.iter().map(|v| Normalization::NSquaredOverCn.apply(n, c_n, *v, m)).collect();
            let k = stable_mean_limit_coefficient(*alpha, *a, *omega, *gamma, *varpi)?;
            let alpha = *alpha;
            let theory = |l: f64| (k * l.powf(alpha)).exp();
            let points = empirical_laplace(&scaled, lambdas)?;
            write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &normalized_rows("clse-mean", n, &raw, &scaled)))?;
            write_file(out, "laws.csv", |w| write_laplace_csv(w, &points, theory))?;
            outcome.metric("degenerate_paths", dropped as f64);
            outcome.metric("stable_coefficient", k);
            outcome.laplace_checks(&points, theory, *se_multiple);
        }
        EstimatorLaw::DiffusionVariances { a, omega, pi, r, a4, b4, variance_rel_tol, reference_replicates, ks_max } => {
            let (m_n, omega_n) = (finite(truth.m, "offspring mean")?, finite(truth.omega, "immigration mean")?);
            let (pi_n, r_n) = (finite(truth.pi, "offspring variance")?, finite(truth.r, "immigration variance")?);
            let horizon = horizon(config, &model);
            let (raw, dropped) = path_statistics(mc, replicates, &model, horizon, false, |p| {
                est::clse_variances(p, m_n, omega_n).map(|rep| [rep.value, rep.second.unwrap_or(f64::NAN)])
            })?;
            let pi_scaled: Vec<f64> = raw.iter().map(|v| Normalization::NThreeHalves.apply(n, 1.0, v[0], pi_n)).collect();
            let r_scaled: Vec<f64> = raw.iter().map(|v| Normalization::SqrtN.apply(n, 1.0, v[1], r_n)).collect();
            let sigma = sigma_matrix(*a, *omega, *pi, *r, *a4, *b4)?;
            let (sd1, sd2) = (sigma.sigma[0][0].sqrt(), sigma.sigma[1][1].sqrt());
            let normals = reference_mc.run(*reference_replicates, |_, rng| [sd1 * rng.sample::<f64, _>(StandardNormal), sd2 * rng.sample::<f64, _>(StandardNormal)])?;
            let (_, var_pi) = mean_variance(&pi_scaled)?;
            let (_, var_r) = mean_variance(&r_scaled)?;
            let cov = analysis::covariance(&pi_scaled, &r_scaled)?;
            let ks_pi = analysis::ks_two_sample(&pi_scaled, &column(&normals, 0))?;
            let ks_r = analysis::ks_two_sample(&r_scaled, &column(&normals, 1))?;
            let mut rows = normalized_rows("clse-variances.pi", n, &column(&raw, 0), &pi_scaled);
            rows.extend(normalized_rows("clse-variances.r", n, &column(&raw, 1), &r_scaled));
            write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &rows))?;
            outcome.metric("degenerate_paths", dropped as f64);
            outcome.metric("sigma11", sigma.sigma[0][0]);
            outcome.metric("sigma12", sigma.sigma[0][1]);
            outcome.metric("sigma22", sigma.sigma[1][1]);
            outcome.metric("empirical_var_pi", var_pi);
            outcome.metric("empirical_var_r", var_r);
            outcome.metric("empirical_cov", cov);
            outcome.metric("pi_n", pi_n);
            outcome.metric("r_n", r_n);
            outcome.checks.push(Check::at_most("variance rel. error (pi)", (var_pi / sigma.sigma[0][0] - 1.0).abs(), *variance_rel_tol));
            outcome.checks.push(Check::at_most("variance rel. error (r)", (var_r / sigma.sigma[1][1] - 1.0).abs(), *variance_rel_tol));
            outcome.checks.push(Check::at_most("ks vs normal reference (pi)", ks_pi, *ks_max));
            outcome.checks.push(Check::at_most("ks vs normal reference (r)", ks_r, *ks_max));
        }
        EstimatorLaw::JumpVariances { limit, moment_rel_tol, reference_replicates, ks_max } => {
            let (m_n, omega_n) = (finite(truth.m, "offspring mean")?, finite(truth.omega, "immigration mean")?);
            let (pi_n, r_n) = (finite(truth.pi, "offspring variance")?, finite(truth.r, "immigration variance")?);
            let horizon = horizon(config, &model);
            let (raw, dropped) = path_statistics(mc, replicates, &model, horizon, false, |p| {
                est::clse_variances(p, m_n, omega_n).map(|rep| [rep.value, rep.second.unwrap_or(f64::NAN)])
            })?;
            let pi_scaled: Vec<f64> = raw.iter().map(|v| Normalization::N.apply(n, 1.0, v[0], pi_n)).collect();
            let r_scaled: Vec<f64> = raw.iter().map(|v| Normalization::Unit.apply(n, 1.0, v[1], r_n)).collect();
            let spec = limit.spec();
            let moments = u1_u2_second_moments(
                Moment::Finite(atom_moment(&spec.nu, 4)),
                Moment::Finite(atom_moment(&spec.mu, 4)),
                spec.a,
                spec.omega,
            )?;
            let target_u1 = finite(moments.u1, "second moment of U1")?;
            let phi = spec.phi();
            let reference = reference_mc.try_run(*reference_replicates, |_, rng| -> Result<[f64; 2], LabError> {
                let j = simulate_j(&spec, grid, rng)?;
                let (u1, u2) = limit_variance_functional(&j, |t| phi.eval(t))?;
                Ok([u1, u2])
            })??;
            let second = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            let emp_u1 = second(&pi_scaled);
            let ks = analysis::ks_two_sample(&pi_scaled, &column(&reference, 0))?;
            let mut rows = normalized_rows("clse-variances.pi", n, &column(&raw, 0), &pi_scaled);
            rows.extend(normalized_rows("clse-variances.r", n, &column(&raw, 1), &r_scaled));
            write_file(out, "estimates.csv", |w| est::write_estimates_csv(w, &rows))?;
            write_file(out, "reference.csv", |w| {
                write_values_csv(w, "u1,u2", &reference.iter().map(|v| v.to_vec()).collect::<Vec<_>>())
            })?;
            outcome.metric("degenerate_paths", dropped as f64);
            outcome.metric("second_moment_u1_theory", target_u1);
            outcome.metric("second_moment_u1_empirical", emp_u1);
            outcome.metric("second_moment_u1_reference", second(&column(&reference, 0)));
            if let Some(u2) = moments.u2.finite() {
                outcome.metric("second_moment_u2_theory", u2);
            }
            outcome.metric("second_moment_u2_empirical", second(&r_scaled));
            outcome.metric("second_moment_u2_reference", second(&column(&reference, 1)));
            outcome.checks.push(Check::at_most("second moment rel. error (pi)", (emp_u1 / target_u1 - 1.0).abs(), *moment_rel_tol));
            outcome.checks.push(Check::at_most("ks vs simulated U1", ks, *ks_max));
        }
    }
    Ok(())
}

fn wrap(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|v| vec![*v]).collect()
}

fn trapezoid(path: &Trajectory) -> f64 {
    path.values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * path.grid.dt
}

/// Sample variance with the standard error of the variance estimate.
fn variance_with_se(x: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let (mean, var) = mean_variance(x)?;
    let n = x.len() as f64;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    Ok((var, ((m4 - var * var) / n).max(0.0).sqrt()))
}

/// `Var Z(1) = int_0^1 e^{2a(1-s)} (rho(s) + nu2 + phi(s) mu2) ds`.
fn jump_ou_variance(spec: &LimitSpec) -> f64 {
    let (phi, rho) = (spec.phi(), spec.rho());
    let (nu2, mu2) = (atom_moment(&spec.nu, 2), atom_moment(&spec.mu, 2));
    integrate_unit(|s| (2.0 * spec.a * (1.0 - s)).exp() * (rho.at(s) + nu2 + phi.eval(s) * mu2))
}

/// `Var J(1) = int_0^1 (nu4 + phi(s) mu4) ds`.
fn j_variance(spec: &LimitSpec) -> f64 {
    let phi = spec.phi();
    let (nu4, mu4) = (atom_moment(&spec.nu, 4), atom_moment(&spec.mu, 4));
    integrate_unit(|s| nu4 + phi.eval(s) * mu4)
}

struct JumpReplicate {
    z1: f64,
    j1: f64,
    identity_error: f64,
    sample: Option<(Trajectory, Vec<JumpEvent>)>,
}

fn limit_law(config: &ExperimentConfig, mc: &MonteCarlo, out: &Path, outcome: &mut Outcome) -> Result<(), LabError> {
    let law = config.limit_law.as_ref().expect("validated");
    let replicates = config.run.replicates;
    let lambdas = &config.run.lambdas;
    let grid = TimeGrid::unit(config.run.dt)?;
    match law {
        LimitLaw::StableIncrement { alpha, dt, se_multiple } => {
            let draws = mc.try_run(replicates, |_, rng| sample_stable_increment(*alpha, *dt, rng))??;
            let (alpha, dt) = (*alpha, *dt);
            let theory = |l: f64| (dt * l.powf(alpha)).exp();
            let points = empirical_laplace(&draws, lambdas)?;
            write_file(out, "laws.csv", |w| write_laplace_csv(w, &points, theory))?;
            outcome.laplace_checks(&points, theory, *se_multiple);
        }
        LimitLaw::Cbi { alpha, gamma, varpi, se_multiple } => {
            let runs = mc.try_run(replicates, |i, rng| -> Result<_, LabError> {
                let path = simulate_cbi_stable(*alpha, *gamma, *varpi, grid, rng)?;
                Ok((path.level.terminal(), path.clamp_events, (i == 0).then_some(path.level)))
            })??;
            let terminal: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let clamps: usize = runs.iter().map(|r| r.1).sum();
            let (alpha, gamma, varpi) = (*alpha, *gamma, *varpi);
            let theoretical: Vec<f64> = lambdas
                .iter()
                .map(|&lambda| {
                    cbi_laplace(
                        (0.0, 0.0),
                        (lambda, 0.0),
                        grid.horizon(),
                        |l| -gamma * l.powf(alpha),
                        |l| varpi * l.powf(alpha - 1.0),
                        ORACLE_RICCATI_STEP,
                    )
                })
                .collect::<Result<_, _>>()?;
            let lookup = |l: f64| theoretical[lambdas.iter().position(|x| *x == l).expect("grid value")];
            let points = empirical_laplace(&terminal, lambdas)?;
            write_file(out, "laws.csv", |w| write_laplace_csv(w, &points, lookup))?;
            if let Some((_, _, Some(path))) = runs.first() {
                write_file(out, "trajectory.csv", |w| write_trajectory_csv(w, path))?;
            }
            outcome.metric("clamp_events", clamps as f64);
            outcome.laplace_checks(&points, lookup, *se_multiple);
        }
        LimitLaw::JumpOu { limit, se_multiple, identity_tol } => {
            let spec = limit.spec();
            spec.validate(grid.horizon())?;
            let runs = mc.try_run(replicates, |i, rng| -> Result<JumpReplicate, LabError> {
                let events = sample_jump_events(&spec, grid.horizon(), rng);
                let j = j_from_events(&spec, &events, grid);
                let z = jump_ou_from_events(&spec, events, grid, rng)?;
                let logged: f64 = z.jumps.iter().map(|e| e.size).sum();
                let jump_part = z.jump_part.as_ref().and_then(|v| v.last().copied()).unwrap_or(0.0);
                let identity_error = (logged - spec.compensator(grid.horizon(), 1) - jump_part).abs();
                let sample = (i == 0).then(|| (z.clone(), z.jumps.clone()));
                Ok(JumpReplicate { z1: z.terminal(), j1: j.terminal(), identity_error, sample })
            })??;
            let z1: Vec<f64> = runs.iter().map(|r| r.z1).collect();
            let j1: Vec<f64> = runs.iter().map(|r| r.j1).collect();
            let identity = runs.iter().map(|r| r.identity_error).fold(0.0, f64::max);
            let (var_z, se_z) = variance_with_se(&z1)?;
            let (var_j, se_j) = variance_with_se(&j1)?;
            let (theory_z, theory_j) = (jump_ou_variance(&spec), j_variance(&spec));
            let (mean_z, _) = mean_variance(&z1)?;
            let (mean_j, _) = mean_variance(&j1)?;
            write_file(out, "moments.csv", |w| {
                writeln!(w, "quantity,empirical,se,theoretical")?;
                writeln!(w, "var_z1,{var_z},{se_z},{theory_z}")?;
                writeln!(w, "var_j1,{var_j},{se_j},{theory_j}")
            })?;
            if let Some(JumpReplicate { sample: Some((path, jumps)), .. }) = runs.first() {
                write_file(out, "trajectory.csv", |w| write_trajectory_csv(w, path))?;
                write_file(out, "jumps.csv", |w| write_jumps_csv(w, jumps))?;
            }
            outcome.metric("mean_z1", mean_z);
            outcome.metric("mean_j1", mean_j);
            outcome.metric("var_z1", var_z);
            outcome.metric("var_j1", var_j);
            outcome.metric("var_z1_theory", theory_z);
            outcome.metric("var_j1_theory", theory_j);
            outcome.checks.push(Check::at_most("var Z(1) z-score", (var_z - theory_z).abs() / se_z, *se_multiple));
            outcome.checks.push(Check::at_most("var J(1) z-score", (var_j - theory_j).abs() / se_j, *se_multiple));
            outcome.checks.push(Check::at_most("jump bookkeeping identity", identity, *identity_tol));
        }
    }
    Ok(())
}

fn diagnose(config: &ExperimentConfig, out: &Path, outcome: &mut Outcome) -> Result<(), LabError> {
    let block = config.model.as_ref().expect("validated");
    let diag = config.diagnose.as_ref().expect("validated");
    let build = |n: u64| build_model(block, &config.scaling, n).map_err(|e| AnalysisError::InvalidParameter(e.to_string()));
    let result = condition_diagnostics(build, &diag.conditions, &config.run.lambdas, &diag.ns)?;
    write_file(out, "diagnostics.csv", |w| write_diagnostics_csv(w, &result.rows))?;
    for report in &result.reports {
        let name = report.condition.name();
        outcome.metric(format!("{name}.cauchy_gap"), report.cauchy_gap);
        outcome.metric(format!("{name}.lipschitz"), report.lipschitz);
        if let Some(bound) = diag.cauchy_max {
            outcome.checks.push(Check::at_most(format!("{name} cauchy gap"), report.cauchy_gap, bound));
        }
    }
    Ok(())
}

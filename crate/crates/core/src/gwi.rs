//! The branching chain with immigration, its exact mean and its rescalings.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DiscreteDist, DistError};

/// Guard added before flooring `n t` so that grid points `t = k / n` land on `k`.
pub const FLOOR_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GwiError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("population overflowed 64 bits at step {step}")]
    Overflow { step: usize },
    #[error("{0} mean is infinite")]
    InfiniteMean(&'static str),
    #[error("grid point {t} lies beyond the path horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("path has no immigration record")]
    MissingImmigration,
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Normalizing constants attached to the model of index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Level normalization of `Y_n / b_n`.
    pub b_n: f64,
    /// Fluctuation normalization of `Z_n`.
    pub c_n: f64,
    /// Declared limit of `n / c_n^2`, if any.
    pub gamma0: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GwiModel {
    pub offspring: DiscreteDist,
    pub immigration: DiscreteDist,
    pub n: u64,
    pub scaling: Scaling,
}

impl GwiModel {
    pub fn new(
        offspring: DiscreteDist,
        immigration: DiscreteDist,
        n: u64,
        scaling: Scaling,
    ) -> Result<Self, GwiError> {
        if n == 0 {
            return Err(GwiError::InvalidModel("n must be at least 1".into()));
        }
        for (name, v) in [("b_n", scaling.b_n), ("c_n", scaling.c_n)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GwiError::InvalidModel(format!("{name} = {v} must be positive")));
            }
        }
        Ok(Self { offspring, immigration, n, scaling })
    }

    /// Model with `b_n = c_n = 1`, for plain path simulation.
    pub fn unscaled(offspring: DiscreteDist, immigration: DiscreteDist, n: u64) -> Result<Self, GwiError> {
        Self::new(offspring, immigration, n, Scaling { b_n: 1.0, c_n: 1.0, gamma0: None })
    }

    pub fn offspring_mean(&self) -> Result<f64, GwiError> {
        self.offspring.mean().ok_or(GwiError::InfiniteMean("offspring"))
    }

    pub fn immigration_mean(&self) -> Result<f64, GwiError> {
        self.immigration.mean().ok_or(GwiError::InfiniteMean("immigration"))
    }

    /// `|n / c_n^2 - gamma0|` when `gamma0` is declared.
    pub fn scaling_gap(&self) -> Option<f64> {
        let n = self.n as f64;
        self.scaling.gamma0.map(|g| (n / (self.scaling.c_n * self.scaling.c_n) - g).abs())
    }
}

/// One realized trajectory `y(0..=N)` with `y(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    y: Vec<u64>,
    /// `eta[k - 1]` is the immigration of step `k`.
    eta: Option<Vec<u64>>,
    n: u64,
}

impl PathRecord {
    pub fn new(y: Vec<u64>, eta: Option<Vec<u64>>, n: u64) -> Result<Self, GwiError> {
        if y.first() != Some(&0) {
            return Err(GwiError::InvalidPath("path must start at 0".into()));
        }
        if let Some(eta) = &eta {
            if eta.len() + 1 != y.len() {
                return Err(GwiError::InvalidPath(format!(
                    "immigration record has {} entries for {} steps",
                    eta.len(),
                    y.len() - 1
                )));
            }
            if let Some(k) = (1..y.len()).find(|&k| y[k] < eta[k - 1]) {
                return Err(GwiError::InvalidPath(format!("y({k}) below its immigration")));
            }
        }
        Ok(Self { y, eta, n })
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn eta(&self) -> Option<&[u64]> {
        self.eta.as_deref()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of steps `N`.
    pub fn horizon(&self) -> usize {
        self.y.len() - 1
    }
}

/// Runs the chain for `horizon` steps. Per-path generation is sequential in `k`.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &GwiModel,
    horizon: usize,
    rng: &mut R,
    record_immigration: bool,
) -> Result<PathRecord, GwiError> {
    if horizon == 0 {
        return Err(GwiError::EmptyHorizon);
    }
    let mut y = Vec::with_capacity(horizon + 1);
    y.push(0u64);
    let mut eta = record_immigration.then(|| Vec::with_capacity(horizon));
    for step in 1..=horizon {
        let parents = y[step - 1];
        let children = match model.offspring.sample_iid_sum(parents, rng) {
            Ok(c) => c,
            Err(DistError::Overflow) => return Err(GwiError::Overflow { step }),
            Err(e) => return Err(e.into()),
        };
        let arrivals = model.immigration.sample(rng);
        if arrivals == u64::MAX {
            return Err(GwiError::Overflow { step });
        }
        let next = children.checked_add(arrivals).ok_or(GwiError::Overflow { step })?;
        y.push(next);
        if let Some(eta) = eta.as_mut() {
            eta.push(arrivals);
        }
    }
    Ok(PathRecord { y, eta, n: model.n })
}

/// `E[y(k)] = omega (m^k - 1) / (m - 1)`, or `k omega` when `m = 1`.
pub fn mean_path(model: &GwiModel, k: usize) -> Result<f64, GwiError> {
    let m = model.offspring_mean()?;
    let omega = model.immigration_mean()?;
    if k == 0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    if m == 1.0 {
        return Ok(kf * omega);
    }
    let growth = (kf * (m - 1.0).ln_1p()).exp_m1() / (m - 1.0);
    Ok(omega * growth)
}

/// Step index of time `t` on the `1/n` lattice.
pub fn grid_index(n: u64, t: f64) -> usize {
    (n as f64 * t + FLOOR_EPSILON).floor().max(0.0) as usize
}

fn checked_indices(path: &PathRecord, grid: &[f64]) -> Result<Vec<usize>, GwiError> {
    let horizon = path.horizon();
    grid.iter()
        .map(|&t| {
            let k = grid_index(path.n, t);
            if t < 0.0 || k > horizon {
                Err(GwiError::BeyondHorizon { t, horizon: horizon as f64 / path.n as f64 })
            } else {
                Ok(k)
            }
        })
        .collect()
}

/// `Z_n(t) = (y([n t]) - E y([n t])) / c_n` at each grid point.
pub fn rescaled_fluctuation(path: &PathRecord, model: &GwiModel, grid: &[f64]) -> Result<Vec<f64>, GwiError> {
    let idx = checked_indices(path, grid)?;
    idx.into_iter()
        .map(|k| Ok((path.y[k] as f64 - mean_path(model, k)?) / model.scaling.c_n))
        .collect()
}

/// `(Y_n(t) / b_n, Y'_n(t) / b_n)` where `Y'_n` is the cumulative immigration.
pub fn rescaled_level(
    path: &PathRecord,
    model: &GwiModel,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), GwiError> {
    let eta = path.eta.as_ref().ok_or(GwiError::MissingImmigration)?;
    let idx = checked_indices(path, grid)?;
    let mut cumulative = Vec::with_capacity(eta.len() + 1);
    let mut acc: u128 = 0;
    cumulative.push(0u128);
    for e in eta {
        acc += u128::from(*e);
        cumulative.push(acc);
    }
    let b = model.scaling.b_n;
    let level = idx.iter().map(|&k| path.y[k] as f64 / b).collect();
    let immigration = idx.iter().map(|&k| cumulative[k] as f64 / b).collect();
    Ok((level, immigration))
}

/// Writes `replicate,k,y,eta` rows; `eta` is empty when unrecorded and at `k = 0`.
pub fn write_paths_csv<'a, W, I>(mut out: W, paths: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (u64, &'a PathRecord)>,
{
    writeln!(out, "replicate,k,y,eta")?;
    for (replicate, path) in paths {
        for (k, y) in path.y.iter().enumerate() {
            match path.eta.as_ref().filter(|_| k > 0) {
                Some(eta) => writeln!(out, "{replicate},{k},{y},{}", eta[k - 1])?,
                None => writeln!(out, "{replicate},{k},{y},")?,
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream;

    fn det_model(offspring: u64, immigration: u64) -> GwiModel {
        GwiModel::unscaled(DiscreteDist::deterministic(offspring), DiscreteDist::deterministic(immigration), 4)
            .unwrap()
    }

    #[test]
    fn deterministic_paths() {
        let mut rng = stream(0, 0);
        let p = simulate_path(&det_model(1, 1), 4, &mut rng, true).unwrap();
        assert_eq!(p.y(), &[0, 1, 2, 3, 4]);
        assert_eq!(p.eta().unwrap(), &[1, 1, 1, 1]);
        let p = simulate_path(&det_model(0, 3), 2, &mut rng, false).unwrap();
        assert_eq!(p.y(), &[0, 3, 3]);
        assert!(p.eta().is_none());
    }

    #[test]
    fn zero_horizon_rejected() {
        let mut rng = stream(0, 0);
        assert_eq!(simulate_path(&det_model(1, 1), 0, &mut rng, false), Err(GwiError::EmptyHorizon));
    }

    #[test]
    fn supercritical_overflow_is_reported() {
        let model = det_model(2, 1);
        let mut rng = stream(0, 0);
        match simulate_path(&model, 100, &mut rng, false) {
            Err(GwiError::Overflow { step }) => assert!(step > 60 && step < 70),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn mean_path_examples() {
        let crit = GwiModel::unscaled(DiscreteDist::deterministic(1), DiscreteDist::deterministic(2), 1).unwrap();
        assert_eq!(mean_path(&crit, 5).unwrap(), 10.0);
        assert_eq!(mean_path(&crit, 0).unwrap(), 0.0);
        let sup = GwiModel::unscaled(
            DiscreteDist::explicit(vec![0.0, 0.9, 0.1]).unwrap(),
            DiscreteDist::deterministic(1),
            1,
        )
        .unwrap();
        assert!((mean_path(&sup, 2).unwrap() - 2.1).abs() < 1e-14);
        let heavy = GwiModel::unscaled(
            DiscreteDist::deterministic(1),
            DiscreteDist::stable_immigration(0.5, 0.5).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(mean_path(&heavy, 3), Err(GwiError::InfiniteMean("immigration")));
    }

    #[test]
    fn fluctuation_of_deterministic_model_vanishes() {
        let model = GwiModel::new(
            DiscreteDist::deterministic(1),
            DiscreteDist::deterministic(3),
            10,
            Scaling { b_n: 10.0, c_n: 2.0, gamma0: None },
        )
        .unwrap();
        let path = simulate_path(&model, 20, &mut stream(1, 0), true).unwrap();
        let z = rescaled_fluctuation(&path, &model, &[0.0, 0.3, 1.0, 2.0]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(matches!(
            rescaled_fluctuation(&path, &model, &[2.1]),
            Err(GwiError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn level_rescaling() {
        let n = 8;
        let model = GwiModel::new(
            DiscreteDist::deterministic(0),
            DiscreteDist::deterministic(1),
            n,
            Scaling { b_n: n as f64, c_n: 1.0, gamma0: None },
        )
        .unwrap();
        let path = simulate_path(&model, 8, &mut stream(1, 0), true).unwrap();
        let (level, imm) = rescaled_level(&path, &model, &[0.0, 1.0]).unwrap();
        assert_eq!((level[0], imm[0]), (0.0, 0.0));
        assert_eq!(imm[1], 1.0);
        let bare = simulate_path(&model, 8, &mut stream(1, 0), false).unwrap();
        assert_eq!(rescaled_level(&bare, &model, &[1.0]), Err(GwiError::MissingImmigration));
    }

    #[test]
    fn grid_index_lands_on_lattice() {
        assert_eq!(grid_index(10, 0.3), 3);
        assert_eq!(grid_index(3, 1.0 / 3.0 * 2.0), 2);
        assert_eq!(grid_index(1000, 0.999), 999);
    }

    #[test]
    fn path_validation() {
        assert!(PathRecord::new(vec![1, 2], None, 1).is_err());
        assert!(PathRecord::new(vec![0, 1], Some(vec![2]), 1).is_err());
        assert!(PathRecord::new(vec![0, 1, 2], Some(vec![1]), 1).is_err());
        assert!(PathRecord::new(vec![0, 2, 2], Some(vec![2, 0]), 1).is_ok());
    }

    #[test]
    fn csv_layout() {
        let p = PathRecord::new(vec![0, 2, 3], Some(vec![2, 1]), 2).unwrap();
        let q = PathRecord::new(vec![0, 1], None, 2).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, [(0, &p), (1, &q)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "replicate,k,y,eta\n0,0,0,\n0,1,2,2\n0,2,3,1\n1,0,0,\n1,1,1,\n"
        );
    }
}

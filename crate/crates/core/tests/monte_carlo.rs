//! Seeded Monte Carlo checks of the samplers and simulators against exact
//! moments and transforms. Tolerances are 5 standard errors unless stated.

use gwi_core::analysis::{cbi_laplace, empirical_laplace, ks_two_sample, mean_variance, Phi};
use gwi_core::dist::DiscreteDist;
use gwi_core::gwi::{mean_path, simulate_path, GwiModel};
use gwi_core::limit::{
    jump_ou_from_events, sample_jump_events, sample_stable_increment, simulate_cbi_stable, simulate_ou_diffusion,
    simulate_stable_ou, Atom, JumpSource, LimitSpec, PhiRate, SkewedStable, TimeGrid,
};
use gwi_core::mc::{stream, MonteCarlo};

const Z: f64 = 5.0;

fn within(empirical: f64, expected: f64, se: f64, what: &str) {
    assert!(
        (empirical - expected).abs() <= Z * se,
        "{what}: empirical {empirical}, expected {expected}, se {se}"
    );
}

#[test]
fn stable_tailed_sampler_frequencies() {
    let d = DiscreteDist::stable_tailed(1.0, 1.5, 0.25).unwrap();
    let mut rng = stream(11, 0);
    let n = 200_000;
    let mut counts = [0u64; 8];
    let mut beyond = 0u64;
    for _ in 0..n {
        let x = d.sample(&mut rng);
        if let Some(c) = counts.get_mut(x as usize) {
            *c += 1;
        }
        if x > 100 {
            beyond += 1;
        }
    }
    let nf = n as f64;
    for (k, c) in counts.iter().enumerate() {
        let p = d.pmf(k as u64);
        within(*c as f64 / nf, p, (p * (1.0 - p) / nf).sqrt(), &format!("P(X = {k})"));
    }
    let tail = d.tail_mass(100);
    within(beyond as f64 / nf, tail, (tail / nf).sqrt(), "P(X > 100)");
}

#[test]
fn iid_sum_matches_repeated_draws() {
    // Dual route: the sequential-binomial sum against a loop of single draws.
    let dists = [
        DiscreteDist::stable_tailed(1.0, 1.5, 0.25).unwrap(),
        DiscreteDist::stable_immigration(0.5, 0.5).unwrap(),
        DiscreteDist::geometric(0.3).unwrap(),
        DiscreteDist::jump_offspring(100).unwrap(),
    ];
    let (reps, count) = (20_000u64, 40u64);
    for (i, d) in dists.iter().enumerate() {
        let mut fast_rng = stream(12, i as u64);
        let mut slow_rng = stream(13, i as u64);
        let fast: Vec<f64> = (0..reps).map(|_| d.sample_iid_sum(count, &mut fast_rng).unwrap() as f64).collect();
        let slow: Vec<f64> = (0..reps)
            .map(|_| (0..count).map(|_| d.sample(&mut slow_rng)).sum::<u64>() as f64)
            .collect();
        // 0.1% critical value of the two-sample KS statistic.
        let crit = 1.95 * (2.0 / reps as f64).sqrt();
        let ks = ks_two_sample(&fast, &slow).unwrap();
        assert!(ks <= crit, "{d:?}: ks {ks} > {crit}");
    }
}

#[test]
fn path_mean_matches_recursion() {
    let model = GwiModel::unscaled(DiscreteDist::bernoulli(0.8).unwrap(), DiscreteDist::geometric(0.5).unwrap(), 20)
        .unwrap();
    let mc = MonteCarlo::new(14, 1);
    let paths = mc.run(20_000, |_, rng| simulate_path(&model, 20, rng, false).unwrap()).unwrap();
    for k in [1usize, 5, 20] {
        let values: Vec<f64> = paths.iter().map(|p| p.y()[k] as f64).collect();
        let (mean, var) = mean_variance(&values).unwrap();
        within(mean, mean_path(&model, k).unwrap(), (var / values.len() as f64).sqrt(), &format!("E y({k})"));
    }
}

#[test]
fn stable_increment_laplace() {
    let (alpha, dt) = (1.5, 0.5);
    let mut rng = stream(15, 0);
    let draws: Vec<f64> = (0..200_000).map(|_| sample_stable_increment(alpha, dt, &mut rng).unwrap()).collect();
    for p in empirical_laplace(&draws, &[0.25, 0.5, 1.0]).unwrap() {
        within(p.value, (dt * p.lambda.powf(alpha)).exp(), p.se, &format!("lambda {}", p.lambda));
    }
}

#[test]
fn subordinator_laplace_and_support() {
    let sampler = SkewedStable::new(0.5).unwrap();
    let mut rng = stream(16, 0);
    let draws: Vec<f64> = (0..200_000).map(|_| sampler.increment(0.8, 0.5, &mut rng)).collect();
    assert!(draws.iter().all(|x| *x >= 0.0));
    for p in empirical_laplace(&draws, &[0.25, 1.0, 4.0]).unwrap() {
        within(p.value, (-0.4 * p.lambda.sqrt()).exp(), p.se, &format!("lambda {}", p.lambda));
    }
}

#[test]
fn gaussian_index_has_variance_two_dt() {
    let mut rng = stream(17, 0);
    let draws: Vec<f64> = (0..100_000).map(|_| sample_stable_increment(2.0, 0.3, &mut rng).unwrap()).collect();
    let (mean, var) = mean_variance(&draws).unwrap();
    let n = draws.len() as f64;
    within(mean, 0.0, (0.6 / n).sqrt(), "mean");
    within(var, 0.6, 0.6 * (2.0 / n).sqrt(), "variance");
}

#[test]
fn ou_diffusion_variance() {
    // Var Z(1) = rho (1 - e^{2a}) / (-2a) for constant rho.
    let (a, rho) = (-1.0f64, 2.0);
    let grid = TimeGrid::unit(1e-3).unwrap();
    let mc = MonteCarlo::new(18, 1);
    let z1 = mc
        .run(20_000, |_, rng| simulate_ou_diffusion(a, &PhiRate::constant(rho), grid, rng).unwrap().terminal())
        .unwrap();
    let (_, var) = mean_variance(&z1).unwrap();
    let exact = rho * (1.0 - (2.0 * a).exp()) / (-2.0 * a);
    within(var, exact, exact * (2.0 / z1.len() as f64).sqrt(), "Var Z(1)");
}

#[test]
fn stable_ou_at_two_is_the_diffusion() {
    let grid = TimeGrid::unit(1e-2).unwrap();
    let rho1 = PhiRate { intercept: 0.5, slope: 0.5, phi: Phi { a: 0.3, omega: 1.0 } };
    let stable = simulate_stable_ou(0.3, 2.0, &rho1, grid, &mut stream(19, 0)).unwrap();
    let diffusion = simulate_ou_diffusion(0.3, &rho1.scaled(2.0), grid, &mut stream(19, 0)).unwrap();
    assert_eq!(stable, diffusion);
}

#[test]
fn stable_ou_laplace() {
    // a = 0: Z(1) = int rho1^{1/alpha} dX, so E exp(-lambda Z(1)) = exp(lambda^alpha int rho1).
    let alpha = 1.5;
    let rho1 = PhiRate { intercept: 0.5, slope: 0.5, phi: Phi { a: 0.0, omega: 1.0 } };
    let grid = TimeGrid::unit(1e-3).unwrap();
    let mc = MonteCarlo::new(20, 1);
    let z1 = mc.run(20_000, |_, rng| simulate_stable_ou(0.0, alpha, &rho1, grid, rng).unwrap().terminal()).unwrap();
    for p in empirical_laplace(&z1, &[0.25, 0.5]).unwrap() {
        within(p.value, (0.75 * p.lambda.powf(alpha)).exp(), p.se, &format!("lambda {}", p.lambda));
    }
}

#[test]
fn thinned_jump_counts_and_times() {
    let spec = LimitSpec::jumps(1.0, 1.0, vec![Atom::new(1.0, 2.0)], vec![Atom::new(2.0, 0.5), Atom::new(1.0, 1.0)]);
    let phi = spec.phi();
    let mut rng = stream(21, 0);
    let reps = 20_000;
    let (mut nu_count, mut mu_count, mut nu_big, mut mu_time) = (0usize, 0usize, 0usize, 0.0);
    for _ in 0..reps {
        for e in sample_jump_events(&spec, 1.0, &mut rng) {
            match e.source {
                JumpSource::Nu => {
                    nu_count += 1;
                    nu_big += usize::from(e.size == 2.0);
                }
                JumpSource::Mu => {
                    mu_count += 1;
                    mu_time += e.time;
                }
            }
        }
    }
    let r = reps as f64;
    within(nu_count as f64 / r, 1.5, (1.5 / r).sqrt(), "nu count");
    let mu_mean = 2.0 * phi.integral(1.0);
    within(mu_count as f64 / r, mu_mean, (mu_mean / r).sqrt(), "mu count");
    let share = nu_big as f64 / nu_count as f64;
    within(share, 1.0 / 3.0, ((2.0 / 9.0) / nu_count as f64).sqrt(), "nu size mix");
    // phi(t) = e^t - 1: the mean mu jump time is int t phi / int phi =
    // (1/2) / (e - 2), and its standard deviation is about 0.227.
    let mean_time = 0.5 / (std::f64::consts::E - 2.0);
    let time_sd = 0.23;
    within(mu_time / mu_count as f64, mean_time, time_sd / (mu_count as f64).sqrt(), "mu jump time");
}

#[test]
fn jump_ou_converges_under_grid_refinement() {
    // Same events, halving steps: the drift error is first order.
    let mut spec = LimitSpec::jumps(-0.5, 1.0, vec![Atom::new(1.0, 1.0)], vec![Atom::new(0.5, 2.0)]);
    spec.beta1 = 0.3;
    spec.beta2 = -0.2;
    let events = sample_jump_events(&spec, 1.0, &mut stream(22, 0));
    let terminal = |steps: usize| {
        let grid = TimeGrid::new(1.0 / steps as f64, steps).unwrap();
        jump_ou_from_events(&spec, events.clone(), grid, &mut stream(22, 1)).unwrap().terminal()
    };
    let reference = terminal(64_000);
    let errors: Vec<f64> = [500, 1000, 2000].iter().map(|s| (terminal(*s) - reference).abs()).collect();
    assert!(errors[2] < 5e-3, "{errors:?}");
    assert!(errors[1] < 0.75 * errors[0] && errors[2] < 0.75 * errors[1], "{errors:?}");
}

#[test]
fn cbi_simulator_matches_riccati_transform() {
    let (alpha, gamma, varpi) = (1.5, 0.5, 0.5);
    let grid = TimeGrid::unit(1e-3).unwrap();
    let mc = MonteCarlo::new(23, 1);
    let y1 = mc.run(4000, |_, rng| simulate_cbi_stable(alpha, gamma, varpi, grid, rng).unwrap().level.terminal()).unwrap();
    for p in empirical_laplace(&y1, &[0.5, 1.0, 2.0]).unwrap() {
        let exact = cbi_laplace(
            (0.0, 0.0),
            (p.lambda, 0.0),
            1.0,
            |l| -gamma * l.powf(alpha),
            |l| varpi * l.powf(alpha - 1.0),
            1e-4,
        )
        .unwrap();
        within(p.value, exact, p.se, &format!("lambda {}", p.lambda));
    }
}

#[test]
fn replicate_results_do_not_depend_on_workers() {
    let model = GwiModel::unscaled(
        DiscreteDist::stable_tailed(1.0, 1.5, 0.5).unwrap(),
        DiscreteDist::stable_immigration(0.5, 0.5).unwrap(),
        50,
    )
    .unwrap();
    let job = |workers| {
        MonteCarlo::new(24, workers)
            .run(64, |_, rng| simulate_path(&model, 50, rng, true).unwrap())
            .unwrap()
    };
    let one = job(1);
    assert_eq!(one, job(4));
    assert_eq!(one, job(8));
}

use fragchain::estimators::{
    alpha_loglik, estimate_beta, estimate_m1, estimate_mk, lifetime_pairs, mean_se, EstimatorConfig,
};
use fragchain::harness::{alpha_tagged_study, fit_rate, observe, run_replicates, run_study, Estimator, SigmaRule, StudyConfig};
use fragchain::measures::{moment_mk, pi_from_rho};
use fragchain::oracle::{make_perturbed_rho, oracle_check_lemma};
use fragchain::rng::{replicate_seed, stream, Domain};
use fragchain::simulator::DEFAULT_GAMMA0;
use fragchain::{simulate_tree, BinaryDislocationLaw, DislocationLaw, TestFunction};
use rand::Rng;

fn uniform() -> DislocationLaw {
    BinaryDislocationLaw::uniform().into()
}

fn config_for(law: &BinaryDislocationLaw) -> EstimatorConfig {
    EstimatorConfig::new(law.kappa1(), law.kappa2(), 0.9).unwrap()
}

#[test]
fn peaked_law_first_moment_near_log_two() {
    let rho = BinaryDislocationLaw::beta(1.0, 10.0).unwrap();
    let truth = moment_mk(&pi_from_rho(&rho).unwrap(), 1).unwrap();
    assert!((truth - std::f64::consts::LN_2).abs() < 0.01, "oracle {truth}");
    let cfg = config_for(&rho);
    let law: DislocationLaw = rho.into();
    let (_, v) = run_replicates(60, 21, |s| {
        estimate_m1(&observe(&law, 1e-4, 0.0, DEFAULT_GAMMA0, 0.0, s)?, &cfg)
    })
    .unwrap();
    let (m, se) = mean_se(&v);
    assert!((m - truth).abs() <= (3.0 * se).max(0.02), "{m} +- {se} vs {truth}");
}

#[test]
fn third_moment_of_uniform_splits() {
    let rho = BinaryDislocationLaw::uniform();
    let truth = moment_mk(&pi_from_rho(&rho).unwrap(), 3).unwrap();
    assert!((truth - 0.75).abs() < 1e-9);
    let cfg = config_for(&rho);
    let law = uniform();
    let (_, v) = run_replicates(100, 22, |s| {
        estimate_mk(&observe(&law, 1e-4, 0.0, DEFAULT_GAMMA0, 0.0, s)?, 3, &cfg)
    })
    .unwrap();
    let (m, se) = mean_se(&v);
    assert!((m - truth).abs() <= (3.0 * se).max(0.08), "{m} +- {se}");
}

#[test]
fn small_noise_barely_moves_moment_estimates() {
    let cfg = config_for(&BinaryDislocationLaw::uniform());
    let law = uniform();
    let eps: f64 = 1e-3;
    let seeds: Vec<u64> = (0..100).map(|i| replicate_seed(23, i)).collect();
    let clean: Vec<f64> = seeds
        .iter()
        .map(|&s| estimate_mk(&observe(&law, eps, 0.0, DEFAULT_GAMMA0, 0.0, s).unwrap(), 2, &cfg).unwrap())
        .collect();
    let noisy: Vec<f64> = seeds
        .iter()
        .map(|&s| estimate_mk(&observe(&law, eps, eps.powi(3), DEFAULT_GAMMA0, 0.0, s).unwrap(), 2, &cfg).unwrap())
        .collect();
    let (_, se) = mean_se(&clean);
    let worst = clean.iter().zip(&noisy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05 * se, "worst shift {worst} vs se {se}");
}

#[test]
fn density_estimate_is_local() {
    let cfg = config_for(&BinaryDislocationLaw::uniform());
    let law = uniform();
    let at = |a: f64| {
        run_replicates(60, 24, |s| estimate_beta(&observe(&law, 1e-4, 0.0, DEFAULT_GAMMA0, 0.0, s)?, a, &cfg))
            .unwrap()
            .1
    };
    let (lo, lo_se) = mean_se(&at(0.25));
    let (hi, hi_se) = mean_se(&at(0.75));
    assert!((lo - 0.5).abs() <= (3.0 * lo_se).max(0.1), "{lo} +- {lo_se}");
    assert!((hi - 1.5).abs() <= (3.0 * hi_se).max(0.1), "{hi} +- {hi_se}");
    assert!(hi - lo > 3.0 * (lo_se * lo_se + hi_se * hi_se).sqrt());
}

#[test]
fn homogeneous_tagged_estimate_shrinks() {
    let law = uniform();
    let (_, coarse) = alpha_tagged_study(&law, 0.0, 1e-4, 200, 25).unwrap();
    let (_, fine) = alpha_tagged_study(&law, 0.0, 1e-12, 200, 25).unwrap();
    let (mc, _) = mean_se(&coarse);
    let (mf, _) = mean_se(&fine);
    assert!(mf < mc && mf < 0.2, "{mc} -> {mf}");
}

#[test]
fn loglik_is_concave_on_simulated_data() {
    let law = uniform();
    for i in 0..100 {
        let obs = simulate_tree(&law, 0.02, 1.0, replicate_seed(26, i), true).unwrap();
        let pairs = lifetime_pairs(&obs);
        let grid: Vec<f64> = (0..=40).map(|j| 0.1 * j as f64).collect();
        let ll: Vec<f64> = grid.iter().map(|&a| alpha_loglik(&pairs, a).unwrap()).collect();
        for w in ll.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] < 1e-9 * w[1].abs().max(1.0));
        }
    }
}

#[test]
fn noise_rule_leaves_study_means() {
    let base = StudyConfig {
        eps: vec![1e-2, 1e-3, 1e-4],
        reps: 100,
        seed: 27,
        estimator: Estimator::Measure("id".into()),
        ..Default::default()
    };
    let noisy = StudyConfig {
        sigma: SigmaRule::EpsPow(3.0),
        ..base.clone()
    };
    let a = run_study(&base).unwrap();
    let b = run_study(&noisy).unwrap();
    for (x, y) in a.results.iter().zip(&b.results) {
        let mad = x
            .replicate_values
            .iter()
            .zip(&y.replicate_values)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / x.replicate_values.len() as f64;
        assert!(mad <= 3.0 * x.std_error, "eps {}: {mad} vs {}", x.epsilon, x.std_error);
    }
}

#[test]
fn jittered_power_law_slope() {
    let mut rng = stream(28, Domain::Path);
    let pts: Vec<(f64, f64)> = (0..8)
        .map(|i| {
            let e = 10f64.powf(-1.0 - 0.5 * i as f64);
            (e, e.powf(0.7) * (1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0)))
        })
        .collect();
    let fit = fit_rate(&pts).unwrap();
    assert!((fit.slope - 0.7).abs() <= 0.1, "{}", fit.slope);
}

#[test]
fn many_to_one_examples() {
    let law = uniform();
    let id = TestFunction::named("id").unwrap();
    let r = oracle_check_lemma(&law, 1e-2, &id, 100_000, 29).unwrap();
    assert!(r.z.abs() <= 3.0, "{r:?}");

    let one = TestFunction::named("one").unwrap();
    let r = oracle_check_lemma(&law, 0.05, &one, 1000, 29).unwrap();
    assert!((r.tree_mean - 1.0).abs() < 1e-12 && r.tree_se < 1e-14);
    assert_eq!(r.path_mean, 1.0);

    let dyadic = fragchain::registry::law_from_key("dyadic").unwrap();
    let sq = TestFunction::named("sq").unwrap();
    let r = oracle_check_lemma(&dyadic, 0.3, &sq, 100, 29).unwrap();
    assert!(r.exact());
    assert!((r.tree_mean - 0.0625).abs() < 1e-15);
}

#[test]
fn unperturbed_at_zero_threshold() {
    let rho0 = BinaryDislocationLaw::uniform();
    let p = make_perturbed_rho(&rho0, 2, 0.0, 0.5).unwrap();
    for i in 0..=100 {
        let a = 0.5 + 0.005 * i as f64;
        assert_eq!(p.law.rho(a), rho0.rho(a));
    }
}

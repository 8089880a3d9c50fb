//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! and then asserts. Criteria run one at a time so the runtime limits are
//! measured without contention.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use fragchain::estimators::mean_se;
use fragchain::harness::{alpha_mle_study, alpha_tagged_study, observe, run_study, Estimator, SigmaRule, StudyConfig};
use fragchain::measures::{limit_measure, pi_from_rho};
use fragchain::oracle::{ks_two_sample, oracle_check_lemma, two_point_experiment, StepSampler};
use fragchain::quadrature::{integrate_points, Tolerance};
use fragchain::registry::law_from_key;
use fragchain::rng::{replicate_seed, stream, Domain};
use fragchain::simulator::DEFAULT_GAMMA0;
use fragchain::{
    make_kernel, simulate_tree, BinaryDislocationLaw, DiscreteDislocationLaw, DislocationLaw, LevyDensity,
    TestFunction,
};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn study(law: &str, eps: &[f64], reps: usize, seed: u64, estimator: Estimator) -> StudyConfig {
    StudyConfig {
        law: law.into(),
        eps: eps.to_vec(),
        reps,
        seed,
        estimator,
        ..Default::default()
    }
}

#[test]
fn criterion_01_conservation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let laws: [DislocationLaw; 2] = [
        BinaryDislocationLaw::uniform().into(),
        DiscreteDislocationLaw::ternary_uniform_discrete().into(),
    ];
    let (worst, took) = timed(|| {
        let mut worst: f64 = 0.0;
        for law in &laws {
            for i in 0..100 {
                let obs = simulate_tree(law, 1e-3, 0.0, replicate_seed(1, i), false).unwrap();
                let excess = (obs.total_size() - 1.0).abs() - obs.mass_defect;
                worst = worst.max(excess);
            }
        }
        worst
    });
    let ok = worst <= 1e-12 && took < Duration::from_secs(10);
    report(1, "conservation", ok, &format!("max |sum - 1| - defect = {worst:.3e}, {took:.2?}"));
}

#[test]
fn criterion_02_empirical_measure_limit() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let law = BinaryDislocationLaw::uniform();
    let oracle = limit_measure(&pi_from_rho(&law).unwrap(), &TestFunction::named("id").unwrap()).unwrap();
    let cfg = study("binary-uniform", &[1e-3], 200, 2, Estimator::Measure("id".into()));
    let (out, took) = timed(|| run_study(&cfg).unwrap());
    let r = &out.results[0];
    let ok = (oracle - 2.0 / 3.0).abs() < 1e-10
        && (r.mean - oracle).abs() <= 3.0 * r.std_error
        && r.std_error < 0.01
        && took < Duration::from_secs(60);
    report(
        2,
        "empirical measure limit",
        ok,
        &format!("oracle {oracle:.10}, mean {:.5} se {:.5}, {took:.2?}", r.mean, r.std_error),
    );
}

#[test]
fn criterion_03_rate_trend() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = study("binary-uniform", &[1e-2, 1e-3, 1e-4], 200, 3, Estimator::Measure("id".into()));
    let (out, took) = timed(|| run_study(&cfg).unwrap());
    let mse: Vec<f64> = out.results.iter().map(|r| r.mse.unwrap()).collect();
    let decreasing = mse.windows(2).all(|w| w[1] < w[0]);
    let fit = out.fit.as_ref().unwrap().as_ref().unwrap();
    let ok = decreasing && fit.slope >= 0.4 && took < Duration::from_secs(300);
    report(
        3,
        "rate trend",
        ok,
        &format!("mse {}, slope {:.3} +- {:.3}, {took:.2?}", mse.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(" > "), fit.slope, fit.slope_se),
    );
}

#[test]
fn criterion_04_moment_estimators() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut lines = Vec::new();
    let mut ok = true;
    let (_, took) = timed(|| {
        for (k, tol) in [(1u32, 0.02), (2, 0.05)] {
            let cfg = study("binary-uniform", &[1e-2, 1e-4], 100, 4, Estimator::Moment(k));
            let out = run_study(&cfg).unwrap();
            let (coarse, fine) = (&out.results[0], &out.results[1]);
            let truth = fine.reference.unwrap();
            let close = (fine.mean - 0.5).abs() <= (3.0 * fine.std_error).max(tol) && (truth - 0.5).abs() < 1e-10;
            let better = fine.mse.unwrap() < coarse.mse.unwrap();
            ok &= close && better;
            lines.push(format!(
                "m{k}: {:.4} +- {:.4}, mse {:.2e} < {:.2e}",
                fine.mean,
                fine.std_error,
                fine.mse.unwrap(),
                coarse.mse.unwrap()
            ));
        }
    });
    ok &= took < Duration::from_secs(300);
    report(4, "moment estimators", ok, &format!("{}, {took:.2?}", lines.join("; ")));
}

#[test]
fn criterion_05_noise_robustness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let law: DislocationLaw = BinaryDislocationLaw::uniform().into();
    let eps = 1e-3;
    let sigma = SigmaRule::EpsPow(3.0).sigma(eps);
    let fns: Vec<TestFunction> = ["id", "one-minus", "sin"]
        .iter()
        .map(|k| TestFunction::named(k).unwrap())
        .collect();
    for g in &fns {
        let lip = (0..=10_000).map(|i| g.derivative(i as f64 / 10_000.0).unwrap().abs()).fold(0.0, f64::max);
        assert!(lip <= 1.0, "{} has |g'| up to {lip}", g.name());
    }
    let mut hits = vec![0usize; fns.len()];
    for i in 0..200 {
        let seed = replicate_seed(5, i);
        let clean = observe(&law, eps, 0.0, DEFAULT_GAMMA0, 0.0, seed).unwrap();
        let noisy = observe(&law, eps, sigma, DEFAULT_GAMMA0, 0.0, seed).unwrap();
        for (h, g) in hits.iter_mut().zip(&fns) {
            let d = fragchain::estimators::empirical_measure(&noisy, g)
                - fragchain::estimators::empirical_measure(&clean, g);
            if d.abs() <= 10.0 * sigma / eps {
                *h += 1;
            }
        }
    }
    let ok = hits.iter().all(|&h| h >= 190);
    report(5, "noise robustness", ok, &format!("within 10 sigma/eps: {hits:?} of 200"));
}

#[test]
fn criterion_06_kernel_cancellation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (worst, took) = timed(|| {
        let mut worst: f64 = 0.0;
        for order in 1..=6usize {
            let phi = make_kernel(order).unwrap();
            for k in 0..=order {
                let m = integrate_points(|x| x.powi(k as i32) * phi.eval(x), &[0.0, 0.5, 1.0], Tolerance::default())
                    .unwrap()
                    .value;
                let target = if k == 0 { 1.0 } else { 0.0 };
                worst = worst.max((m - target).abs());
            }
        }
        worst
    });
    let ok = worst <= 1e-10 && took < Duration::from_secs(1);
    report(6, "kernel cancellation", ok, &format!("worst moment error {worst:.2e}, {took:.2?}"));
}

#[test]
fn criterion_07_nonparametric_estimator() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut lines = Vec::new();
    let mut ok = true;
    let (_, took) = timed(|| {
        for a in [0.25, 0.5, 0.75] {
            let cfg = study("binary-uniform", &[1e-2, 1e-4], 100, 7, Estimator::Beta(a));
            let out = run_study(&cfg).unwrap();
            let (coarse, fine) = (&out.results[0], &out.results[1]);
            let truth = 2.0 * a;
            let close = (fine.mean - truth).abs() <= (3.0 * fine.std_error).max(0.1)
                && (fine.reference.unwrap() - truth).abs() < 1e-8;
            let better = fine.mse.unwrap() < coarse.mse.unwrap();
            ok &= close && better;
            lines.push(format!(
                "a={a}: {:.3} +- {:.3}, mse {:.2e} < {:.2e}",
                fine.mean,
                fine.std_error,
                fine.mse.unwrap(),
                coarse.mse.unwrap()
            ));
        }
    });
    ok &= took < Duration::from_secs(600);
    report(7, "nonparametric estimator", ok, &format!("{}, {took:.2?}", lines.join("; ")));
}

#[test]
fn criterion_08_oracle_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cases: [(&str, f64, &str); 10] = [
        ("binary-uniform", 0.1, "id"),
        ("binary-uniform", 0.05, "sq"),
        ("binary-uniform", 0.2, "sin"),
        ("binary-uniform", 0.02, "cube"),
        ("binary-beta(2,2)", 0.1, "id"),
        ("binary-beta(3,1.5)", 0.05, "one-minus"),
        ("ternary-uniform-discrete", 0.1, "id"),
        ("ternary-uniform-discrete", 0.03, "sq"),
        ("dyadic", 0.1, "id"),
        ("dyadic", 0.3, "sq"),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    let (_, took) = timed(|| {
        for (i, (key, eta, f)) in cases.iter().enumerate() {
            let law = law_from_key(key).unwrap();
            let g = TestFunction::named(f).unwrap();
            let r = oracle_check_lemma(&law, *eta, &g, 100_000, replicate_seed(8, i as u64)).unwrap();
            let pass = if *key == "dyadic" { r.exact() } else { r.z.abs() <= 4.0 };
            ok &= pass;
            lines.push(format!("{key}/{eta}/{f} z={:.2}", r.z));
        }
    });
    ok &= took < Duration::from_secs(300);
    report(8, "oracle equivalence", ok, &format!("{}, {took:.2?}", lines.join("; ")));
}

#[test]
fn criterion_09_first_passage_law() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let pi = LevyDensity::exponential(2.0).unwrap();
    let sampler = StepSampler::from_density(&pi).unwrap();
    let eta = 1e-3;
    let n = 100_000;
    let mut rng = stream(replicate_seed(9, 0), Domain::Path);
    let ratios: Vec<f64> = (0..n)
        .map(|_| sampler.first_passage(eta, &mut rng).unwrap().chi / eta)
        .collect();
    let (m, se) = mean_se(&ratios);
    let mut rng = stream(replicate_seed(9, 1), Domain::Path);
    let reference: Vec<f64> = (0..n).map(|_| rng.random::<f64>().sqrt()).collect();
    let (d, p) = ks_two_sample(&ratios, &reference);
    let ok = (m - 2.0 / 3.0).abs() <= 3.0 * se && p >= 0.01;
    report(
        9,
        "first-passage law",
        ok,
        &format!("mean {m:.5} +- {se:.5}, KS D={d:.4} p={p:.3}"),
    );
}

#[test]
fn criterion_10_two_point_experiment() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let rho0 = BinaryDislocationLaw::uniform();
    let mut ok = true;
    let mut lines = Vec::new();
    for k in [1u32, 2] {
        for eps in [1e-2, 1e-3, 1e-4] {
            let r = two_point_experiment(&rho0, k, eps, 0.1, 20, 10).unwrap();
            let shift_err = (r.moment_shift - r.predicted_shift).abs();
            let pass = r.pinsker_bound < 1.0 && r.max_term <= r.term_bound && shift_err <= 1e-6;
            ok &= pass;
            lines.push(format!(
                "k={k} eps={eps:e}: tv<={:.3} term {:.2e}/{:.2e} shift err {shift_err:.1e}",
                r.pinsker_bound, r.max_term, r.term_bound
            ));
        }
    }
    report(10, "two-point experiment", ok, &lines.join("; "));
}

#[test]
fn criterion_11_alpha_estimators() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let law: DislocationLaw = BinaryDislocationLaw::uniform().into();
    let (_, tagged) = alpha_tagged_study(&law, 1.0, 1e-6, 200, 11).unwrap();
    let inside = tagged.iter().filter(|x| (*x - 1.0).abs() <= 0.1).count();
    let mut ok = inside >= 180;
    let mut lines = vec![format!("tagged {inside}/200 within 0.1")];
    for alpha in [0.5, 1.0, 2.0] {
        let (_, est) = alpha_mle_study(&law, alpha, 1.5e-4, 10_000, 20, 11).unwrap();
        let worst = est.iter().map(|x| (x - alpha).abs()).fold(0.0, f64::max);
        ok &= worst <= 0.05;
        lines.push(format!("mle alpha={alpha} worst dev {worst:.4}"));
    }
    report(11, "alpha estimators", ok, &lines.join("; "));
}

#[test]
fn criterion_12_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfgs = [
        study("binary-uniform", &[1e-2, 1e-3, 1e-4], 40, 12, Estimator::Measure("id".into())),
        StudyConfig {
            sigma: SigmaRule::EpsPow(3.0),
            ..study("ternary-uniform-discrete", &[1e-2, 1e-3], 30, 12, Estimator::Measure("sin".into()))
        },
        study("binary-beta(2,2)", &[1e-2, 1e-3, 1e-4], 20, 12, Estimator::Moment(2)),
        study("binary-uniform", &[1e-2, 1e-3], 20, 12, Estimator::Beta(0.5)),
    ];
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let mut ok = true;
    for cfg in &cfgs {
        let a = run_study(cfg).unwrap().to_csv();
        let b = run_study(cfg).unwrap().to_csv();
        let c = single.install(|| run_study(cfg).unwrap().to_csv());
        let d = wide.install(|| run_study(cfg).unwrap().to_csv());
        ok &= a == b && a == c && a == d;
    }
    let law = law_from_key("binary-uniform").unwrap();
    let dump = |seed| {
        let obs = simulate_tree(&law, 1e-3, 1.0, seed, true).unwrap();
        let noisy = fragchain::add_noise(&obs, 1e-6, seed).unwrap();
        let mut buf = Vec::new();
        noisy.write_jsonl(&mut buf).unwrap();
        buf
    };
    ok &= dump(12) == dump(12);
    report(12, "determinism", ok, &format!("{} study configs and a noisy dump", cfgs.len()));
}

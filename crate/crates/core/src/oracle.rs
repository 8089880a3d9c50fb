//! Tagged-fragment oracles: the compound Poisson log-size process, the
//! many-to-one identity it satisfies against the frozen frontier, and the
//! two-point perturbation experiment.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::mean_se;
use crate::measures::{moment_mk, pi_from_rho, LevyDensity, StepLaw};
use crate::quadrature::{integrate_points, KahanSum, Tolerance};
use crate::rng::{replicate_seed, root_key, stream, Domain};
use crate::sampling::InverseCdf;
use crate::simulator::simulate_tree;
use crate::testfn::TestFunction;
use crate::{BinaryDislocationLaw, DislocationLaw};

/// Panels of the tabulated step CDF.
const STEP_TABLE_PANELS: usize = 8192;

/// Sampler of steps of the tagged log-size walk.
#[derive(Clone, Debug)]
pub enum StepSampler {
    Table(Arc<InverseCdf>),
    Atoms { x: Vec<f64>, cumulative: Vec<f64> },
}

impl StepSampler {
    pub fn new(step: &StepLaw) -> Result<Self> {
        match step {
            StepLaw::Continuous(pi) => Self::from_density(pi),
            StepLaw::Discrete(atoms) => {
                let mut acc = 0.0;
                let mut x = Vec::with_capacity(atoms.len());
                let mut cumulative = Vec::with_capacity(atoms.len());
                for &(v, w) in atoms {
                    if !(v > 0.0) || !(w >= 0.0) {
                        return Err(Error::SamplerFailure(format!("bad atom ({v}, {w})")));
                    }
                    acc += w;
                    x.push(v);
                    cumulative.push(acc);
                }
                if !((acc - 1.0).abs() < 1e-10) {
                    return Err(Error::SamplerFailure(format!("atom weights sum to {acc}")));
                }
                Ok(StepSampler::Atoms { x, cumulative })
            }
        }
    }

    pub fn from_density(pi: &LevyDensity) -> Result<Self> {
        let table = InverseCdf::build(|x| pi.eval(x), pi.breakpoints(), STEP_TABLE_PANELS)?;
        Ok(StepSampler::Table(Arc::new(table)))
    }

    pub fn from_law(law: &DislocationLaw) -> Result<Self> {
        Self::new(&law.step_law()?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepSampler::Table(t) => t.quantile(rng.random::<f64>()),
            StepSampler::Atoms { x, cumulative } => {
                let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let i = cumulative.partition_point(|&c| c <= u).min(x.len() - 1);
                x[i]
            }
        }
    }

    /// Run the walk with unit-rate exponential waits until it first exceeds
    /// `-log eta`.
    pub fn first_passage<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<SubordinatorPath> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidThreshold(eta));
        }
        let barrier = -eta.ln();
        let mut path = SubordinatorPath::default();
        let (mut t, mut z) = (0.0, 0.0);
        while z <= barrier {
            t += rng.sample::<f64, _>(rand_distr::Exp1);
            let step = self.sample(rng);
            z += step;
            path.jump_times.push(t);
            path.jump_sizes.push(step);
        }
        path.first_passage_time = t;
        path.overshoot = z - barrier;
        path.chi = (-z).exp();
        Ok(path)
    }
}

/// Compound Poisson log-size path stopped at first passage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubordinatorPath {
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub first_passage_time: f64,
    /// `zeta(T) + log eta`.
    pub overshoot: f64,
    /// `exp(-zeta(T))`.
    pub chi: f64,
}

/// One first-passage path for the step density `pi`.
pub fn sample_first_passage(pi: &LevyDensity, eta: f64, seed: u64) -> Result<SubordinatorPath> {
    let sampler = StepSampler::from_density(pi)?;
    sampler.first_passage(eta, &mut stream(root_key(seed), Domain::Path))
}

/// Both sides of the many-to-one identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub law: String,
    pub eta: f64,
    pub function: String,
    pub reps: usize,
    pub tree_mean: f64,
    pub tree_se: f64,
    pub path_mean: f64,
    pub path_se: f64,
    pub z: f64,
}

impl LemmaReport {
    /// Whether both sides agree exactly (to rounding) with no spread.
    pub fn exact(&self) -> bool {
        self.tree_se == 0.0 && self.path_se == 0.0 && (self.tree_mean - self.path_mean).abs() <= 1e-12
    }
}

/// Compare `E[sum_{v in U_eta} xi_v f(xi_v)]` from simulated trees with
/// `E[f(chi(T_eta))]` from first-passage paths.
pub fn oracle_check_lemma(
    law: &DislocationLaw,
    eta: f64,
    f: &TestFunction,
    reps: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replicates".into()));
    }
    let sampler = StepSampler::from_law(law)?;
    let tree_vals: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let obs = simulate_tree(law, eta, 0.0, replicate_seed(seed, i), false)?;
            Ok(obs
                .records
                .iter()
                .map(|r| r.size * f.eval(r.size))
                .sum::<KahanSum>()
                .value())
        })
        .collect::<Result<_>>()?;
    let path_vals: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(replicate_seed(seed, i), Domain::Path);
            Ok(f.eval(sampler.first_passage(eta, &mut rng)?.chi))
        })
        .collect::<Result<_>>()?;
    let (tm, ts) = mean_se(&tree_vals);
    let (pm, ps) = mean_se(&path_vals);
    let diff = tm - pm;
    let spread = (ts * ts + ps * ps).sqrt();
    let z = if spread > 0.0 {
        diff / spread
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(LemmaReport {
        law: law.name().to_string(),
        eta,
        function: f.name().to_string(),
        reps,
        tree_mean: tm,
        tree_se: ts,
        path_mean: pm,
        path_se: ps,
        z,
    })
}

/// `phi_k(a) = a log(1/a)^k + (1 - a) log(1/(1 - a))^k`, the weight turning
/// a binary density into the k-th step moment.
pub fn moment_weight(k: u32, a: f64) -> f64 {
    let part = |b: f64| if b <= 0.0 { 0.0 } else { b * (-b.ln()).powi(k as i32) };
    part(a) + part(1.0 - a)
}

/// Perturbed binary law with its oscillation metadata.
#[derive(Clone, Debug)]
pub struct PerturbedLaw {
    pub law: BinaryDislocationLaw,
    /// Frequency of the sine oscillation.
    pub frequency: u32,
    /// Amplitude `tau * inf rho0`.
    pub amplitude: f64,
    /// Correlation `r(k) = int psi phi_k`.
    pub r_k: f64,
}

/// Mean-zero oscillation `psi(a) = amp * sin(2 pi j (2a - 1))` on `[1/2, 1]`.
fn psi(amp: f64, j: u32, a: f64) -> f64 {
    if !(0.5..=1.0).contains(&a) {
        return 0.0;
    }
    amp * (2.0 * std::f64::consts::PI * j as f64 * (2.0 * a - 1.0)).sin()
}

fn quad_half(f: impl Fn(f64) -> f64, extra: &[f64]) -> Result<f64> {
    let mut pts = vec![0.5];
    pts.extend(extra.iter().copied().filter(|&b| b > 0.5 && b < 1.0));
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    Ok(integrate_points(
        f,
        &pts,
        Tolerance {
            abs: 1e-14,
            rel: 1e-13,
            max_panels: 8000,
        },
    )?
    .value)
}

/// `rho_eps = rho0 + sqrt(eps) psi_k` with `|psi_k| <= tau inf rho0` and a
/// frequency chosen so that `r(k)` is clearly nonzero.
pub fn make_perturbed_rho(rho0: &BinaryDislocationLaw, k: u32, epsilon: f64, tau: f64) -> Result<PerturbedLaw> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be >= 1".into()));
    }
    if !(tau >= 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in [0, 1), got {tau}")));
    }
    if !(epsilon >= 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let inf = rho0.lower_bound();
    if !(inf > 0.0) {
        return Err(Error::AssumptionDViolated(inf));
    }
    let amp = tau * inf;
    let mut chosen = None;
    for j in 1..=8u32 {
        let r = quad_half(|a| moment_weight(k, a) * psi(1.0, j, a), rho0.breakpoints())?;
        if r.abs() > 1e-10 {
            chosen = Some((j, r * amp));
            break;
        }
    }
    let (frequency, r_k) = chosen.ok_or_else(|| Error::InvalidParameter("no oscillation correlates with phi_k".into()))?;
    if epsilon == 0.0 || tau == 0.0 {
        return Ok(PerturbedLaw {
            law: rho0.clone(),
            frequency,
            amplitude: amp,
            r_k,
        });
    }
    let base = rho0.density_fn();
    let shift = epsilon.sqrt() * amp;
    let rho: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |a| base(a) + shift * psi(1.0, frequency, a));
    let law = BinaryDislocationLaw::from_density(
        format!("{}+perturbation", rho0.name()),
        rho,
        rho0.kappa1(),
        rho0.kappa2(),
        rho0.breakpoints(),
    )?;
    Ok(PerturbedLaw {
        law,
        frequency,
        amplitude: amp,
        r_k,
    })
}

/// Outcome of the two-point experiment at one `epsilon`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoPointReport {
    pub epsilon: f64,
    pub tau: f64,
    pub k: u32,
    pub n: u64,
    pub r_k: f64,
    /// `n * KL(rho0 || rho_eps)` by quadrature.
    pub kl: f64,
    /// Plug-in `sum_i log(rho0 / rho_eps)(U_i)` averaged over replicates.
    pub kl_plugin_mean: f64,
    pub kl_plugin_se: f64,
    /// `(sqrt 2 / 2) sqrt(kl)`.
    pub pinsker_bound: f64,
    /// `tau^2 eps n`.
    pub kl_ceiling: f64,
    /// `max_a |x - log(1 + x)|` with `x = (rho_eps - rho0) / rho0`.
    pub max_term: f64,
    /// `tau^2 eps`.
    pub term_bound: f64,
    pub moment_shift: f64,
    pub predicted_shift: f64,
}

/// Sample size `floor(4 / eps) + 1`.
pub fn two_point_sample_size(epsilon: f64) -> u64 {
    (4.0 / epsilon).floor() as u64 + 1
}

pub fn two_point_experiment(
    rho0: &BinaryDislocationLaw,
    k: u32,
    epsilon: f64,
    tau: f64,
    reps: usize,
    seed: u64,
) -> Result<TwoPointReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidThreshold(epsilon));
    }
    let pert = make_perturbed_rho(rho0, k, epsilon, tau)?;
    let n = two_point_sample_size(epsilon);
    let r0 = rho0.density_fn();
    let r1 = pert.law.density_fn();
    let log_ratio = {
        let (r0, r1) = (r0.clone(), r1.clone());
        move |a: f64| {
            let (p, q) = (r0(a), r1(a));
            if p > 0.0 {
                (p / q).ln()
            } else {
                0.0
            }
        }
    };
    let per_sample = {
        let (r0, lr) = (r0.clone(), log_ratio.clone());
        quad_half(move |a| r0(a) * lr(a), rho0.breakpoints())?
    };
    let kl = n as f64 * per_sample.max(0.0);
    let mut max_term: f64 = 0.0;
    for i in 0..=20_000 {
        let a = 0.5 + 0.5 * i as f64 / 20_000.0;
        let p = r0(a);
        if p > 0.0 {
            let x = (r1(a) - p) / p;
            max_term = max_term.max((x - x.ln_1p()).abs());
        }
    }
    let plugin: Vec<f64> = (0..reps.max(1) as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(replicate_seed(seed, i), Domain::Path);
            (0..n)
                .map(|_| log_ratio(rho0.sample(&mut rng)))
                .sum::<KahanSum>()
                .value()
        })
        .collect();
    let (kl_plugin_mean, kl_plugin_se) = mean_se(&plugin);
    let m0 = moment_mk(&pi_from_rho(rho0)?, k)?;
    let m1 = moment_mk(&pi_from_rho(&pert.law)?, k)?;
    Ok(TwoPointReport {
        epsilon,
        tau,
        k,
        n,
        r_k: pert.r_k,
        kl,
        kl_plugin_mean,
        kl_plugin_se,
        pinsker_bound: std::f64::consts::FRAC_1_SQRT_2 * kl.sqrt(),
        kl_ceiling: tau * tau * epsilon * n as f64,
        max_term,
        term_bound: tau * tau * epsilon,
        moment_shift: m1 - m0,
        predicted_shift: pert.r_k * epsilon.sqrt(),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Tail `P(K > lambda)` of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DiscreteDislocationLaw;

    #[test]
    fn lattice_walk_is_forced() {
        let s = StepSampler::from_law(&DiscreteDislocationLaw::dyadic().into()).unwrap();
        let mut rng = stream(1, Domain::Path);
        for _ in 0..20 {
            let p = s.first_passage(0.3, &mut rng).unwrap();
            assert!((p.chi - 0.25).abs() < 1e-15);
            assert!(p.overshoot >= 0.0);
            assert_eq!(p.jump_sizes.len(), 2);
        }
    }

    #[test]
    fn exponential_overshoot_mean() {
        let pi = LevyDensity::exponential(2.0).unwrap();
        let s = StepSampler::from_density(&pi).unwrap();
        let mut rng = stream(5, Domain::Path);
        let eta = 0.05;
        let vals: Vec<f64> = (0..20_000)
            .map(|_| s.first_passage(eta, &mut rng).unwrap().chi / eta)
            .collect();
        let (m, se) = mean_se(&vals);
        assert!((m - 2.0 / 3.0).abs() < 4.0 * se, "{m} +- {se}");
    }

    #[test]
    fn single_path_invariants() {
        let pi = LevyDensity::exponential(2.0).unwrap();
        let p = sample_first_passage(&pi, 0.01, 3).unwrap();
        assert!(p.overshoot >= 0.0 && p.chi < 0.01);
        assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.first_passage_time, *p.jump_times.last().unwrap());
    }

    #[test]
    fn perturbation_is_a_density() {
        let rho0 = BinaryDislocationLaw::uniform();
        for &eps in &[0.0, 1e-2, 0.5] {
            let p = make_perturbed_rho(&rho0, 2, eps, 0.3).unwrap();
            p.law.validate().unwrap();
            for i in 0..=100 {
                let a = 0.5 + 0.005 * i as f64;
                assert!(p.law.rho(a) >= 0.7 * 2.0 - 1e-12);
            }
        }
        assert!(make_perturbed_rho(&BinaryDislocationLaw::beta(2.0, 2.0).unwrap(), 1, 0.1, 0.1).is_err());
    }

    #[test]
    fn zero_tau_gives_zero_kl() {
        let r = two_point_experiment(&BinaryDislocationLaw::uniform(), 1, 1e-2, 0.0, 3, 1).unwrap();
        assert_eq!(r.kl, 0.0);
        assert_eq!(r.kl_plugin_mean, 0.0);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert!((d - 0.2).abs() < 2e-3);
        assert!(p < 1e-10);
    }
}

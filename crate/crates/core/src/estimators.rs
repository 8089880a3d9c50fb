//! Empirical measures of the frozen frontier and the estimators built on
//! them: moments of the step law, the pointwise log-scale density, and the
//! self-similarity index.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::StepSampler;
use crate::quadrature::KahanSum;
use crate::simulator::{ObservationSet, DEFAULT_GAMMA0};
use crate::testfn::{localize_kernel, make_cutoff, make_kernel, make_moment_testfn, TestFunction};

/// Margin kept below the class bounds when picking default rate parameters.
pub const MU_MARGIN: f64 = 0.01;

/// Smallest tolerated denominator in the moment estimators.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Bandwidth rule `gamma(eps) = scale * eps^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaRule {
    pub scale: f64,
    pub exponent: f64,
}

impl GammaRule {
    pub fn gamma(&self, epsilon: f64) -> f64 {
        self.scale * epsilon.powf(self.exponent)
    }
}

/// Default scale of the moment bandwidth rule.
pub const MOMENT_GAMMA_SCALE: f64 = 0.1;
/// Default scale of the density bandwidth rule.
pub const BETA_GAMMA_SCALE: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    pub s: f64,
    pub kernel_order: usize,
    pub gamma0: f64,
    pub moment_mu: f64,
    pub beta_mu: f64,
    pub moment_rule: GammaRule,
    pub beta_rule: GammaRule,
}

impl EstimatorConfig {
    /// Defaults for declared class orders `kappa1`, `kappa2` and smoothness `s`.
    pub fn new(kappa1: f64, kappa2: f64, s: f64) -> Result<Self> {
        if !(kappa1 > 1.0 && kappa2 > 1.0 - 1e-12 && s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need kappa1 > 1, kappa2 >= 1, s > 0 (got {kappa1}, {kappa2}, {s})"
            )));
        }
        if kappa1 <= kappa2.max(1.0) {
            log::warn!("kappa1 = {kappa1} does not exceed max(1, kappa2 = {kappa2}); moment rates not covered");
        }
        let moment_mu = (kappa1 - MU_MARGIN).min(1.0);
        let beta_mu = (kappa1 / 2.0 - MU_MARGIN).min(1.0);
        let kernel_order = s.floor() as usize + 1;
        Ok(EstimatorConfig {
            kappa1,
            kappa2,
            s,
            kernel_order,
            gamma0: DEFAULT_GAMMA0,
            moment_mu,
            beta_mu,
            moment_rule: GammaRule {
                scale: MOMENT_GAMMA_SCALE,
                exponent: moment_mu / ((moment_mu + 1.0) * (2.0 * kappa2 + 1.0)),
            },
            beta_rule: GammaRule {
                scale: BETA_GAMMA_SCALE,
                exponent: beta_mu / ((beta_mu + 1.0) * (2.0 * s + 3.0)),
            },
        })
    }

    pub fn moment_gamma(&self, epsilon: f64) -> Result<f64> {
        let g = self.moment_rule.gamma(epsilon);
        if !(g > 0.0 && g < 0.5) {
            return Err(Error::InvalidGamma(g));
        }
        Ok(g)
    }

    pub fn beta_gamma(&self, epsilon: f64) -> Result<f64> {
        let g = self.beta_rule.gamma(epsilon);
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::InvalidGamma(g));
        }
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_order as f64 <= self.s {
            return Err(Error::InvalidParameter(format!(
                "kernel order {} must exceed smoothness {}",
                self.kernel_order, self.s
            )));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma0 {} outside (0, 1)", self.gamma0)));
        }
        Ok(())
    }
}

/// Mass-weighted sum `sum_u xi_u g(xi_u / eps)` over the frontier.
///
/// With `sigma > 0` the noisy sizes are used and records below
/// `gamma0 * eps` are dropped.
pub fn empirical_measure(obs: &ObservationSet, g: &TestFunction) -> f64 {
    let eps = obs.epsilon;
    let mut sum = KahanSum::default();
    if obs.sigma > 0.0 {
        let cut = obs.gamma0 * eps;
        for r in &obs.records {
            if r.noisy_size >= cut {
                sum.add(r.noisy_size * g.eval(r.noisy_size / eps));
            }
        }
    } else {
        for r in &obs.records {
            sum.add(r.size * g.eval(r.size / eps));
        }
    }
    sum.value()
}

fn guarded(den: f64) -> Result<f64> {
    if !(den.abs() >= DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(den)
}

/// `1 / E(g_gamma)` with the cutoff derivative at the configured bandwidth.
pub fn estimate_m1(obs: &ObservationSet, cfg: &EstimatorConfig) -> Result<f64> {
    let gamma = cfg.moment_gamma(obs.epsilon)?;
    estimate_m1_at(obs, gamma)
}

pub fn estimate_m1_at(obs: &ObservationSet, gamma: f64) -> Result<f64> {
    let (_, g) = make_cutoff(gamma)?;
    Ok(1.0 / guarded(empirical_measure(obs, &g))?)
}

/// `E(g~_gamma) / E(g_gamma)` estimating the k-th moment of the step law.
pub fn estimate_mk(obs: &ObservationSet, k: u32, cfg: &EstimatorConfig) -> Result<f64> {
    let gamma = cfg.moment_gamma(obs.epsilon)?;
    estimate_mk_at(obs, k, gamma)
}

pub fn estimate_mk_at(obs: &ObservationSet, k: u32, gamma: f64) -> Result<f64> {
    let (_, g) = make_cutoff(gamma)?;
    let gt = make_moment_testfn(k, gamma)?;
    let den = guarded(empirical_measure(obs, &g))?;
    Ok(empirical_measure(obs, &gt) / den)
}

/// Pointwise estimate of the log-scale density at `a`.
pub fn estimate_beta(obs: &ObservationSet, a: f64, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    let m1 = estimate_m1(obs, cfg)?;
    let gamma = cfg.beta_gamma(obs.epsilon)?;
    estimate_beta_at(obs, a, gamma, cfg.kernel_order, m1)
}

/// Density estimate with explicit bandwidth, kernel order and first moment.
pub fn estimate_beta_at(obs: &ObservationSet, a: f64, gamma: f64, order: usize, m1: f64) -> Result<f64> {
    let phi = make_kernel(order)?;
    let (_, integrand) = localize_kernel(&phi, a, gamma)?;
    Ok(m1 * empirical_measure(obs, &integrand))
}

/// `log T / log(1/eps)`: the tagged splitting time scales like `eps^-alpha`.
pub fn estimate_alpha_tagged(t_eps: f64, epsilon: f64) -> Result<f64> {
    if !(t_eps > 0.0 && t_eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("tagged time must be positive, got {t_eps}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidThreshold(epsilon));
    }
    Ok(t_eps.ln() / (-epsilon.ln()))
}

/// First time the tagged fragment drops below `epsilon`: the sum over its
/// visited sizes `chi >= eps` of exponential holding times with rate `chi^alpha`.
pub fn simulate_tagged_time<R: Rng + ?Sized>(
    steps: &StepSampler,
    alpha: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidThreshold(epsilon));
    }
    let barrier = -epsilon.ln();
    let mut log_size = 0.0;
    let mut t = KahanSum::default();
    while log_size <= barrier {
        let hold: f64 = rng.sample(rand_distr::Exp1);
        // size^-alpha = exp(alpha * log_size) with log_size = -log(size)
        t.add(hold * (alpha * log_size).exp());
        log_size += steps.sample(rng);
    }
    Ok(t.value())
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no (size, lifetime) pairs".into()));
    }
    for &(x, z) in pairs {
        if !(x > 0.0 && x <= 1.0) || !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad pair ({x}, {z})")));
        }
    }
    Ok(())
}

/// Log-likelihood `sum_i [alpha log xi_i - xi_i^alpha zeta_i]` of lifetimes
/// that are exponential with rate `xi^alpha`.
pub fn alpha_loglik(pairs: &[(f64, f64)], alpha: f64) -> Result<f64> {
    check_pairs(pairs)?;
    Ok(loglik(pairs, alpha))
}

fn loglik(pairs: &[(f64, f64)], alpha: f64) -> f64 {
    pairs
        .iter()
        .map(|&(x, z)| {
            let lx = x.ln();
            alpha * lx - (alpha * lx).exp() * z
        })
        .sum::<KahanSum>()
        .value()
}

/// Maximizer of [`alpha_loglik`] over `[lo, hi]` by golden-section search.
pub fn alpha_mle(pairs: &[(f64, f64)], lo: f64, hi: f64) -> Result<f64> {
    check_pairs(pairs)?;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty search interval [{lo}, {hi}]")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (loglik(pairs, c), loglik(pairs, d));
    while b - a > 1e-10 * (1.0 + a.abs() + b.abs()) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = loglik(pairs, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = loglik(pairs, d);
        }
    }
    Ok(0.5 * (a + b))
}

/// `(size, lifetime)` pairs of the frozen records that carry a lifetime.
pub fn lifetime_pairs(obs: &ObservationSet) -> Vec<(f64, f64)> {
    obs.records
        .iter()
        .filter_map(|r| r.lifetime.map(|z| (r.size, z)))
        .collect()
}

/// Replicate values of one estimator with summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub label: String,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub replicate_values: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    pub reference: Option<f64>,
    pub mse: Option<f64>,
}

impl ExperimentResult {
    pub fn new(label: impl Into<String>, epsilon: f64, seeds: Vec<u64>, values: Vec<f64>, reference: Option<f64>) -> Self {
        let (mean, std_error) = mean_se(&values);
        let mse = reference.map(|r| {
            values.iter().map(|v| (v - r) * (v - r)).sum::<KahanSum>().value() / values.len() as f64
        });
        ExperimentResult {
            label: label.into(),
            epsilon,
            seeds,
            replicate_values: values,
            mean,
            std_error,
            reference,
            mse,
        }
    }

    /// Whether the reference lies within `z` standard errors of the mean.
    pub fn within(&self, z: f64) -> bool {
        self.reference
            .is_some_and(|r| (self.mean - r).abs() <= z * self.std_error)
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().copied().sum::<KahanSum>().value() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<KahanSum>()
        .value()
        / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::simulate_tree;
    use crate::{BinaryDislocationLaw, DislocationLaw};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_built_measure() {
        let obs = ObservationSet::from_sizes(0.7, &[0.6, 0.4]).unwrap();
        let id = TestFunction::named("id").unwrap();
        assert!((empirical_measure(&obs, &id) - 26.0 / 35.0).abs() < 1e-15);
    }

    #[test]
    fn unit_function_gives_total_mass() {
        let law: DislocationLaw = BinaryDislocationLaw::uniform().into();
        let obs = simulate_tree(&law, 1e-3, 0.0, 4, false).unwrap();
        let one = TestFunction::named("one").unwrap();
        assert!((empirical_measure(&obs, &one) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator_guard() {
        // all mass far below the ramp region of g_gamma
        let obs = ObservationSet::from_sizes(0.5, &[0.01; 100]).unwrap();
        assert!(matches!(estimate_m1_at(&obs, 0.1), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn reciprocal_consistency() {
        let law: DislocationLaw = BinaryDislocationLaw::uniform().into();
        let obs = simulate_tree(&law, 1e-3, 0.0, 8, false).unwrap();
        let gamma = 0.05;
        let m1 = estimate_m1_at(&obs, gamma).unwrap();
        let (_, g) = make_cutoff(gamma).unwrap();
        assert!((m1 * empirical_measure(&obs, &g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tagged_estimator_identity() {
        let eps: f64 = 1e-3;
        assert!((estimate_alpha_tagged(eps.powf(-1.5), eps).unwrap() - 1.5).abs() < 1e-12);
        assert!(estimate_alpha_tagged(0.0, eps).is_err());
        assert!(estimate_alpha_tagged(1.0, 1.5).is_err());
    }

    #[test]
    fn loglik_unit_pair() {
        for alpha in [0.0, 0.5, 3.0] {
            assert_eq!(alpha_loglik(&[(1.0, 1.0)], alpha).unwrap(), -1.0);
        }
        assert!(alpha_loglik(&[(0.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn mle_recovers_rate_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let x: f64 = rng.random_range(1e-4..1.0);
                let z: f64 = rng.sample::<f64, _>(rand_distr::Exp1) / x.powf(1.0);
                (x, z)
            })
            .collect();
        let a = alpha_mle(&pairs, 0.0, 10.0).unwrap();
        assert!((a - 1.0).abs() < 0.05, "{a}");
    }

    #[test]
    fn config_defaults() {
        let cfg = EstimatorConfig::new(2.0, 1.0, 1.5).unwrap();
        assert_eq!(cfg.moment_mu, 1.0);
        assert!((cfg.beta_mu - 0.99).abs() < 1e-15);
        assert!((cfg.moment_rule.exponent - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(cfg.kernel_order, 2);
        cfg.validate().unwrap();
        assert!(EstimatorConfig::new(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn mean_se_basic() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let r = ExperimentResult::new("x", 0.1, vec![1, 2], vec![1.0, 3.0], Some(2.0));
        assert_eq!(r.mse, Some(1.0));
        assert!(r.within(1.0));
    }
}

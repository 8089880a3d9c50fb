//! Replicate studies over a threshold grid, log-log rate fits, and
//! reproducible CSV reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    alpha_mle, empirical_measure, estimate_alpha_tagged, estimate_beta, estimate_m1, estimate_mk, lifetime_pairs,
    simulate_tagged_time, EstimatorConfig, ExperimentResult,
};
use crate::measures::{beta_from_pi, limit_measure, moment_mk, pi_from_rho};
use crate::oracle::StepSampler;
use crate::registry::{law_from_key, testfn_from_key};
use crate::rng::{replicate_seed, stream, Domain};
use crate::simulator::{add_noise_with_gamma0, simulate_tree, ObservationSet, DEFAULT_GAMMA0};
use crate::DislocationLaw;

/// Noise level as a function of the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaRule {
    Zero,
    /// `sigma = eps^p`.
    EpsPow(f64),
    Fixed(f64),
}

impl SigmaRule {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("eps^") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad sigma exponent `{p}`")))?;
            if !(p > 1.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!("sigma exponent must exceed 1, got {p}")));
            }
            return Ok(SigmaRule::EpsPow(p));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad sigma rule `{s}`")))?;
        if v == 0.0 {
            Ok(SigmaRule::Zero)
        } else if v > 0.0 && v.is_finite() {
            Ok(SigmaRule::Fixed(v))
        } else {
            Err(Error::InvalidParameter(format!("sigma must be >= 0, got {v}")))
        }
    }

    pub fn sigma(&self, epsilon: f64) -> f64 {
        match *self {
            SigmaRule::Zero => 0.0,
            SigmaRule::EpsPow(p) => epsilon.powf(p),
            SigmaRule::Fixed(v) => v,
        }
    }
}

impl std::fmt::Display for SigmaRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaRule::Zero => write!(f, "0"),
            SigmaRule::EpsPow(p) => write!(f, "eps^{p}"),
            SigmaRule::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Quantity computed on each replicate.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    /// Empirical measure of a test function.
    Measure(String),
    /// k-th moment of the step law.
    Moment(u32),
    /// Log-scale density at a point.
    Beta(f64),
}

/// Study description; parsed from flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub law: String,
    pub eps: Vec<f64>,
    pub sigma: SigmaRule,
    pub reps: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub alpha: f64,
    pub gamma0: f64,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub s: f64,
    pub kernel_order: Option<usize>,
    pub moment_scale: Option<f64>,
    pub beta_scale: Option<f64>,
    pub out: Option<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            law: "binary-uniform".into(),
            eps: vec![1e-2, 1e-3],
            sigma: SigmaRule::Zero,
            reps: 100,
            seed: 1,
            estimator: Estimator::Measure("id".into()),
            alpha: 0.0,
            gamma0: DEFAULT_GAMMA0,
            kappa1: None,
            kappa2: None,
            s: 0.9,
            kernel_order: None,
            moment_scale: None,
            beta_scale: None,
            out: None,
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("bad value `{v}` for `{key}`")))
}

impl StudyConfig {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = StudyConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut estimator = "measure".to_string();
        let (mut func, mut k, mut a) = (None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|s| s == key) {
                return Err(Error::parse(line_no, format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            cfg.set(line_no, key, value, &mut estimator, &mut func, &mut k, &mut a)?;
        }
        cfg.estimator = match estimator.as_str() {
            "measure" => Estimator::Measure(func.unwrap_or_else(|| "id".into())),
            "moment" => Estimator::Moment(k.unwrap_or(1)),
            "beta" => Estimator::Beta(a.ok_or_else(|| Error::parse(0, "beta estimator needs `a`"))?),
            other => return Err(Error::parse(0, format!("unknown estimator `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(clippy::too_many_arguments)]
    fn set(
        &mut self,
        line: usize,
        key: &str,
        v: &str,
        estimator: &mut String,
        func: &mut Option<String>,
        k: &mut Option<u32>,
        a: &mut Option<f64>,
    ) -> Result<()> {
        match key {
            "law" => self.law = v.to_string(),
            "eps" => {
                self.eps = v
                    .split(',')
                    .map(|t| num::<f64>(line, key, t.trim()))
                    .collect::<Result<_>>()?
            }
            "sigma" => self.sigma = SigmaRule::parse(v).map_err(|e| Error::parse(line, e.to_string()))?,
            "reps" => self.reps = num(line, key, v)?,
            "seed" => self.seed = num(line, key, v)?,
            "estimator" => *estimator = v.to_string(),
            "fn" => *func = Some(v.to_string()),
            "k" => *k = Some(num(line, key, v)?),
            "a" => *a = Some(num(line, key, v)?),
            "alpha" => self.alpha = num(line, key, v)?,
            "gamma0" => self.gamma0 = num(line, key, v)?,
            "kappa1" => self.kappa1 = Some(num(line, key, v)?),
            "kappa2" => self.kappa2 = Some(num(line, key, v)?),
            "s" => self.s = num(line, key, v)?,
            "kernel_order" => self.kernel_order = Some(num(line, key, v)?),
            "moment_scale" => self.moment_scale = Some(num(line, key, v)?),
            "beta_scale" => self.beta_scale = Some(num(line, key, v)?),
            "out" => self.out = Some(v.to_string()),
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::InvalidParameter("every eps must lie in (0, 1)".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("eps grid must be strictly decreasing".into()));
        }
        if self.reps < 2 {
            return Err(Error::InvalidParameter("reps must be >= 2".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be >= 0".into()));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return Err(Error::InvalidParameter("gamma0 must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let eps: Vec<String> = self.eps.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(s, "law={}", self.law);
        let _ = writeln!(s, "eps={}", eps.join(","));
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "reps={}", self.reps);
        let _ = writeln!(s, "seed={}", self.seed);
        match &self.estimator {
            Estimator::Measure(f) => {
                let _ = writeln!(s, "estimator=measure\nfn={f}");
            }
            Estimator::Moment(k) => {
                let _ = writeln!(s, "estimator=moment\nk={k}");
            }
            Estimator::Beta(a) => {
                let _ = writeln!(s, "estimator=beta\na={a}");
            }
        }
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "gamma0={}", self.gamma0);
        let opt = |v: Option<f64>| v.map(|x| x.to_string());
        for (key, val) in [
            ("kappa1", opt(self.kappa1)),
            ("kappa2", opt(self.kappa2)),
            ("s", Some(self.s.to_string())),
            ("kernel_order", self.kernel_order.map(|n| n.to_string())),
            ("moment_scale", opt(self.moment_scale)),
            ("beta_scale", opt(self.beta_scale)),
            ("out", self.out.clone()),
        ] {
            if let Some(v) = val {
                let _ = writeln!(s, "{key}={v}");
            }
        }
        s
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Estimator settings from the law's declared orders and any overrides.
    pub fn estimator_config(&self, law: &DislocationLaw) -> Result<EstimatorConfig> {
        let (k1, k2) = match law {
            DislocationLaw::Binary(b) => (b.kappa1(), b.kappa2()),
            DislocationLaw::Discrete(_) => (f64::INFINITY, 1.0),
        };
        let mut cfg = EstimatorConfig::new(self.kappa1.unwrap_or(k1), self.kappa2.unwrap_or(k2), self.s)?;
        cfg.gamma0 = self.gamma0;
        if let Some(n) = self.kernel_order {
            cfg.kernel_order = n;
        }
        if let Some(sc) = self.moment_scale {
            cfg.moment_rule.scale = sc;
        }
        if let Some(sc) = self.beta_scale {
            cfg.beta_rule.scale = sc;
        }
        Ok(cfg)
    }
}

/// Ground truth for the configured estimator, when the law admits one.
pub fn reference_value(law: &DislocationLaw, estimator: &Estimator) -> Result<Option<f64>> {
    let DislocationLaw::Binary(b) = law else {
        return Ok(None);
    };
    let pi = pi_from_rho(b)?;
    Ok(Some(match estimator {
        Estimator::Measure(f) => limit_measure(&pi, &testfn_from_key(f)?)?,
        Estimator::Moment(k) => moment_mk(&pi, *k)?,
        Estimator::Beta(a) => beta_from_pi(&pi).eval(*a)?,
    }))
}

/// Observation set of replicate `seed` at threshold `epsilon`.
pub fn observe(law: &DislocationLaw, epsilon: f64, sigma: f64, gamma0: f64, alpha: f64, seed: u64) -> Result<ObservationSet> {
    let obs = simulate_tree(law, epsilon, alpha, seed, false)?;
    if sigma > 0.0 {
        add_noise_with_gamma0(&obs, sigma, seed, gamma0)
    } else {
        Ok(obs)
    }
}

/// Evaluate `f` on replicate seeds `0..reps` under `root` in parallel,
/// returning values in replicate order.
pub fn run_replicates<F>(reps: usize, root: u64, f: F) -> Result<(Vec<u64>, Vec<f64>)>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let seeds: Vec<u64> = (0..reps as u64).map(|i| replicate_seed(root, i)).collect();
    let values = seeds.par_iter().map(|&s| f(s)).collect::<Result<Vec<f64>>>()?;
    Ok((seeds, values))
}

/// Least-squares line through `(log eps, log mse)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub log_eps: Vec<f64>,
    pub log_mse: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(e, m)) = points.iter().find(|&&(e, m)| !(e > 0.0 && m > 0.0)) {
        return Err(Error::DegenerateFit(format!("non-positive point ({e}, {m})")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all thresholds equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let slope_se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(RateFit {
        log_eps: x,
        log_mse: y,
        slope,
        slope_se,
        intercept,
    })
}

/// Results of [`run_study`].
#[derive(Debug)]
pub struct StudyOutcome {
    pub config: StudyConfig,
    pub results: Vec<ExperimentResult>,
    pub fit: Option<Result<RateFit>>,
    /// Set when a threshold could not be completed; earlier results are kept.
    pub aborted: Option<Error>,
}

fn estimate_once(
    law: &DislocationLaw,
    cfg: &StudyConfig,
    ecfg: &EstimatorConfig,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    let obs = observe(law, epsilon, cfg.sigma.sigma(epsilon), cfg.gamma0, cfg.alpha, seed)?;
    match &cfg.estimator {
        Estimator::Measure(f) => Ok(empirical_measure(&obs, &testfn_from_key(f)?)),
        Estimator::Moment(1) => estimate_m1(&obs, ecfg),
        Estimator::Moment(k) => estimate_mk(&obs, *k, ecfg),
        Estimator::Beta(a) => estimate_beta(&obs, *a, ecfg),
    }
}

/// Run every replicate at every threshold and fit the MSE rate.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let law = law_from_key(&cfg.law)?;
    let ecfg = cfg.estimator_config(&law)?;
    let reference = reference_value(&law, &cfg.estimator)?;
    let mut results = Vec::new();
    let mut aborted = None;
    for &eps in &cfg.eps {
        // one root per threshold keeps cells independent
        let root = replicate_seed(cfg.seed, eps.to_bits());
        match run_replicates(cfg.reps, root, |s| estimate_once(&law, cfg, &ecfg, eps, s)) {
            Ok((seeds, values)) => {
                results.push(ExperimentResult::new(estimator_label(&cfg.estimator), eps, seeds, values, reference))
            }
            Err(e @ Error::BudgetExceeded { .. }) => {
                log::warn!("stopping at eps = {eps}: {e}");
                aborted = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let fit = (results.len() >= 3 && reference.is_some()).then(|| {
        let pts: Vec<(f64, f64)> = results.iter().map(|r| (r.epsilon, r.mse.unwrap_or(0.0))).collect();
        fit_rate(&pts)
    });
    Ok(StudyOutcome {
        config: cfg.clone(),
        results,
        fit,
        aborted,
    })
}

fn estimator_label(e: &Estimator) -> String {
    match e {
        Estimator::Measure(f) => format!("measure:{f}"),
        Estimator::Moment(k) => format!("moment:{k}"),
        Estimator::Beta(a) => format!("beta:{a}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Comment header echoing the config, its hash and the root seed.
pub fn config_header(cfg: &StudyConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={}", cfg.hash());
    let _ = writeln!(s, "# root_seed={}", cfg.seed);
    for line in cfg.to_kv().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

impl StudyOutcome {
    /// CSV with `# key=value` header comments, replicate rows, then summary
    /// and fit comments.
    pub fn to_csv(&self) -> String {
        let mut s = config_header(&self.config);
        s.push_str("epsilon,replicate,seed,value\n");
        for r in &self.results {
            for (i, (seed, v)) in r.seeds.iter().zip(&r.replicate_values).enumerate() {
                let _ = writeln!(s, "{},{i},{seed},{v}", r.epsilon);
            }
        }
        for r in &self.results {
            let _ = writeln!(
                s,
                "# summary epsilon={} mean={} std_error={} reference={} mse={}",
                r.epsilon,
                r.mean,
                r.std_error,
                opt(r.reference),
                opt(r.mse)
            );
        }
        match &self.fit {
            Some(Ok(f)) => {
                let _ = writeln!(s, "# fit slope={} slope_se={} intercept={}", f.slope, f.slope_se, f.intercept);
            }
            Some(Err(e)) => {
                let _ = writeln!(s, "# fit failed: {e}");
            }
            None => {}
        }
        if let Some(e) = &self.aborted {
            let _ = writeln!(s, "# aborted: {e}");
        }
        s
    }
}

/// Tagged-time estimates of `alpha`, one per replicate.
pub fn alpha_tagged_study(law: &DislocationLaw, alpha: f64, epsilon: f64, reps: usize, seed: u64) -> Result<(Vec<u64>, Vec<f64>)> {
    let steps = StepSampler::from_law(law)?;
    run_replicates(reps, seed, |s| {
        let mut rng = stream(s, Domain::Path);
        estimate_alpha_tagged(simulate_tagged_time(&steps, alpha, epsilon, &mut rng)?, epsilon)
    })
}

/// Maximum-likelihood estimates of `alpha` from the first `pairs` frozen
/// (size, lifetime) records of each replicate tree at threshold `epsilon`.
pub fn alpha_mle_study(
    law: &DislocationLaw,
    alpha: f64,
    epsilon: f64,
    pairs: usize,
    reps: usize,
    seed: u64,
) -> Result<(Vec<u64>, Vec<f64>)> {
    run_replicates(reps, seed, |s| {
        let obs = simulate_tree(law, epsilon, alpha, s, true)?;
        let data = lifetime_pairs(&obs);
        if data.len() < pairs {
            return Err(Error::InvalidParameter(format!(
                "tree at eps = {epsilon} has {} records, fewer than {pairs}",
                data.len()
            )));
        }
        alpha_mle(&data[..pairs], 0.0, 20.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4].iter().map(|&e| (e, e)).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(f.slope_se < 1e-12);
        assert!(fit_rate(&pts[..2]).is_err());
        assert!(fit_rate(&[(1e-2, 0.0), (1e-3, 1.0), (1e-4, 1.0)]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = "law = binary-uniform\neps = 1e-2, 1e-3\nsigma = eps^3 # noisy\nreps = 10\nseed = 5\nestimator = moment\nk = 2\n";
        let cfg = StudyConfig::parse(text).unwrap();
        assert_eq!(cfg.sigma, SigmaRule::EpsPow(3.0));
        assert_eq!(cfg.estimator, Estimator::Moment(2));
        let again = StudyConfig::parse(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(StudyConfig::parse("bogus = 1"), Err(Error::UnknownKey(_))));
        assert!(StudyConfig::parse("eps = 1e-3, 1e-2").is_err());
        assert!(StudyConfig::parse("reps = 1").is_err());
        assert!(StudyConfig::parse("reps = 3\nreps = 4").is_err());
        assert!(StudyConfig::parse("no equals sign").is_err());
        assert!(StudyConfig::parse("estimator = beta").is_err());
    }

    #[test]
    fn small_study_is_reproducible() {
        let cfg = StudyConfig {
            eps: vec![0.1, 0.05, 0.02],
            reps: 8,
            ..Default::default()
        };
        let a = run_study(&cfg).unwrap().to_csv();
        let b = run_study(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with("# config_hash="));
        assert!(a.contains("# fit slope="));
    }

    #[test]
    fn sigma_rules() {
        assert_eq!(SigmaRule::parse("0").unwrap(), SigmaRule::Zero);
        assert_eq!(SigmaRule::parse("1e-6").unwrap(), SigmaRule::Fixed(1e-6));
        assert!((SigmaRule::EpsPow(3.0).sigma(0.1) - 1e-3).abs() < 1e-18);
        assert!(SigmaRule::parse("-1").is_err());
        assert!(SigmaRule::parse("eps^0.5").is_err());
    }
}

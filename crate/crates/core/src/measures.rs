//! Dislocation laws and the deterministic transforms linking the binary
//! split density `rho`, the tagged-fragment step density `pi` and its
//! logarithmic-scale form `beta`, plus the quadrature ground truths used by
//! every estimator check.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_points, Tolerance};
use crate::sampling::InverseCdf;
use crate::testfn::TestFunction;

/// Shared, thread-safe real function.
pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const PARTITION_TOL: f64 = 1e-12;
const RHO_TOL: f64 = 1e-10;
const PI_TOL: f64 = 1e-8;

/// Non-increasing finite sequence of fragment sizes summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct MassPartition {
    sizes: Vec<f64>,
}

impl MassPartition {
    /// Sorts `sizes` non-increasingly and checks conservation.
    pub fn new(mut sizes: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidParameter("empty mass partition".into()));
        }
        if sizes.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "fragment sizes must lie in (0, 1]: {sizes:?}"
            )));
        }
        sizes.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sizes.iter().sum();
        if (total - 1.0).abs() > PARTITION_TOL {
            return Err(Error::InvalidParameter(format!(
                "mass partition sums to {total}, not 1"
            )));
        }
        Ok(MassPartition { sizes })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    /// The trivial partition `(1, 0, ...)`, which a dislocation law may not charge.
    pub fn is_trivial(&self) -> bool {
        self.sizes.len() == 1
    }
}

#[derive(Clone)]
enum BinarySampler {
    Uniform,
    Beta(rand_distr::Beta<f64>),
    Table(Arc<InverseCdf>),
}

/// Binary conservative dislocation law: a split of a unit mass produces
/// `(U, 1 - U)` with `U` drawn from the density `rho` on `[1/2, 1]`.
#[derive(Clone)]
pub struct BinaryDislocationLaw {
    name: String,
    rho: DensityFn,
    lower_bound: f64,
    kappa1: f64,
    kappa2: f64,
    breakpoints: Vec<f64>,
    sampler: BinarySampler,
}

impl fmt::Debug for BinaryDislocationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryDislocationLaw")
            .field("name", &self.name)
            .field("lower_bound", &self.lower_bound)
            .field("kappa1", &self.kappa1)
            .field("kappa2", &self.kappa2)
            .finish()
    }
}

impl BinaryDislocationLaw {
    /// `rho = 2` on `[1/2, 1]`; the tagged step law is Exp(2).
    pub fn uniform() -> Self {
        BinaryDislocationLaw {
            name: "binary-uniform".into(),
            rho: Arc::new(|a| if (0.5..=1.0).contains(&a) { 2.0 } else { 0.0 }),
            lower_bound: 2.0,
            kappa1: 2.0,
            kappa2: 1.0,
            breakpoints: vec![0.5, 1.0],
            sampler: BinarySampler::Uniform,
        }
    }

    /// Beta(p, q) density rescaled from `[0, 1]` to `[1/2, 1]`.
    ///
    /// Restricted to `p, q >= 1` so the density is bounded. The tagged step
    /// density then decays like `exp(-(q + 1) x)` and behaves as `x^(q - 1)`
    /// at the origin, which fixes the declared class orders.
    pub fn beta(p: f64, q: f64) -> Result<Self> {
        if !(p >= 1.0 && q >= 1.0 && p.is_finite() && q.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "binary-beta needs finite p, q >= 1 (got {p}, {q})"
            )));
        }
        let kernel = move |t: f64| t.powf(p - 1.0) * (1.0 - t).powf(q - 1.0);
        let norm = integrate_points(kernel, &[0.0, 0.5, 1.0], Tolerance::abs(1e-15))?.value;
        let rho: DensityFn = Arc::new(move |a| {
            if (0.5..=1.0).contains(&a) {
                2.0 * kernel(2.0 * a - 1.0) / norm
            } else {
                0.0
            }
        });
        let lower_bound = if p == 1.0 && q == 1.0 { 2.0 } else { 0.0 };
        let sampler = rand_distr::Beta::new(p, q)
            .map_err(|e| Error::InvalidParameter(format!("beta sampler: {e}")))?;
        let law = BinaryDislocationLaw {
            name: format!("binary-beta({p},{q})"),
            rho,
            lower_bound,
            kappa1: q + 1.0,
            kappa2: q,
            breakpoints: vec![0.5, 0.75, 1.0],
            sampler: BinarySampler::Beta(sampler),
        };
        law.validate()?;
        Ok(law)
    }

    /// Arbitrary density on `[1/2, 1]`, sampled through a tabulated inverse CDF.
    ///
    /// `breakpoints` lists kinks of `rho` inside `[1/2, 1]`; the end points are
    /// added automatically. `kappa1`/`kappa2` are declared class orders of the
    /// induced step density; they are trusted metadata.
    pub fn from_density(
        name: impl Into<String>,
        rho: DensityFn,
        kappa1: f64,
        kappa2: f64,
        breakpoints: &[f64],
    ) -> Result<Self> {
        let mut pts = vec![0.5];
        pts.extend(breakpoints.iter().copied().filter(|&b| b > 0.5 && b < 1.0));
        pts.push(1.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let rho_eval = rho.clone();
        let table = InverseCdf::build(move |a| rho_eval(a), &pts, 2048)?;
        let lower_bound = grid_infimum(&*rho, 0.5, 1.0);
        let law = BinaryDislocationLaw {
            name: name.into(),
            rho,
            lower_bound,
            kappa1,
            kappa2,
            breakpoints: pts,
            sampler: BinarySampler::Table(Arc::new(table)),
        };
        law.validate()?;
        Ok(law)
    }

    /// Piecewise-linear density through the points `(a, rho(a))`.
    ///
    /// The abscissae must start at 1/2, end at 1 and increase strictly. The
    /// ordinates are rescaled so the interpolant integrates to one exactly.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidDensity("need at least two tabulated points".into()));
        }
        for (i, &(a, r)) in points.iter().enumerate() {
            if !a.is_finite() || !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidDensity(format!("bad point #{i}: ({a}, {r})")));
            }
        }
        if (points[0].0 - 0.5).abs() > 1e-12 || (points[points.len() - 1].0 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(
                "tabulated density must cover exactly [1/2, 1]".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidDensity("abscissae must increase strictly".into()));
        }
        let area: f64 = points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum();
        if !(area > 0.0) {
            return Err(Error::InvalidDensity("tabulated density has zero mass".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1 / area).collect();
        let (xs_eval, ys_eval) = (xs.clone(), ys.clone());
        let rho: DensityFn = Arc::new(move |a| linear_interp(&xs_eval, &ys_eval, a));
        let kappa2 = if ys[ys.len() - 1] > 0.0 { 1.0 } else { 2.0 };
        let kappa1 = kappa2 + 1.0;
        let mut law = Self::from_density("tabulated", rho, kappa1, kappa2, &xs)?;
        law.lower_bound = ys.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(law)
    }

    /// Parse `a,rho` rows (optional header, `#` comments) into a tabulated law.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(r), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(lineno + 1, "expected two comma-separated columns"));
            };
            match (a.parse::<f64>(), r.parse::<f64>()) {
                (Ok(a), Ok(r)) => points.push((a, r)),
                _ if points.is_empty() => continue, // header row
                _ => return Err(Error::parse(lineno + 1, format!("non-numeric row `{line}`"))),
            }
        }
        Self::tabulated(&points)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Density of the larger fragment; zero outside `[1/2, 1]`.
    pub fn rho(&self, a: f64) -> f64 {
        if (0.5..=1.0).contains(&a) {
            (self.rho)(a)
        } else {
            0.0
        }
    }

    pub fn density_fn(&self) -> DensityFn {
        self.rho.clone()
    }

    /// Infimum of `rho` over `[1/2, 1]`; the perturbation construction needs it positive.
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Checks that `rho` integrates to one.
    pub fn validate(&self) -> Result<()> {
        let mass = integrate_points(|a| self.rho(a), &self.breakpoints, Tolerance::abs(1e-13))?.value;
        if (mass - 1.0).abs() > RHO_TOL {
            return Err(Error::InvalidDensity(format!(
                "rho integrates to {mass} on [1/2, 1]"
            )));
        }
        Ok(())
    }

    /// Draw the larger fragment fraction `U` in `[1/2, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            BinarySampler::Uniform => 0.5 + 0.5 * rng.random::<f64>(),
            BinarySampler::Beta(b) => 0.5 + 0.5 * b.sample(rng),
            BinarySampler::Table(t) => t.quantile(rng.random::<f64>()),
        }
    }
}

fn linear_interp(xs: &[f64], ys: &[f64], a: f64) -> f64 {
    if a < xs[0] || a > xs[xs.len() - 1] {
        return 0.0;
    }
    let j = xs.partition_point(|&x| x <= a);
    if j == 0 {
        return ys[0];
    }
    if j >= xs.len() {
        return ys[ys.len() - 1];
    }
    let t = (a - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

fn grid_infimum(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    (0..=4000)
        .map(|i| f(lo + (hi - lo) * i as f64 / 4000.0))
        .fold(f64::INFINITY, f64::min)
}

/// Dislocation law with finitely many atoms.
#[derive(Clone, Debug)]
pub struct DiscreteDislocationLaw {
    name: String,
    atoms: Vec<(MassPartition, f64)>,
    cumulative: Vec<f64>,
}

impl DiscreteDislocationLaw {
    pub fn new(name: impl Into<String>, atoms: Vec<(MassPartition, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("discrete law without atoms".into()));
        }
        if atoms.iter().any(|(_, p)| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidParameter("atom probabilities must lie in (0, 1]".into()));
        }
        if atoms.iter().any(|(s, _)| s.is_trivial()) {
            return Err(Error::InvalidParameter(
                "dislocation law may not charge the trivial partition (1, 0, ...)".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PARTITION_TOL {
            return Err(Error::InvalidParameter(format!("atom probabilities sum to {total}")));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(DiscreteDislocationLaw {
            name: name.into(),
            atoms,
            cumulative,
        })
    }

    /// Deterministic halving.
    pub fn dyadic() -> Self {
        let half = MassPartition::new(vec![0.5, 0.5]).expect("valid partition");
        Self::new("dyadic", vec![(half, 1.0)]).expect("valid law")
    }

    /// Mixture of three ternary splits:
    /// `(1/3, 1/3, 1/3)` w.p. 1/2, `(1/2, 1/3, 1/6)` and `(1/2, 1/4, 1/4)` w.p. 1/4 each.
    pub fn ternary_uniform_discrete() -> Self {
        let third = 1.0 / 3.0;
        let atoms = vec![
            (MassPartition::new(vec![third, third, 1.0 - 2.0 * third]).unwrap(), 0.5),
            (MassPartition::new(vec![0.5, third, 0.5 - third]).unwrap(), 0.25),
            (MassPartition::new(vec![0.5, 0.25, 0.25]).unwrap(), 0.25),
        ];
        Self::new("ternary-uniform-discrete", atoms).expect("valid law")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn atoms(&self) -> &[(MassPartition, f64)] {
        &self.atoms
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &MassPartition {
        let u = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.atoms[i.min(self.atoms.len() - 1)].0
    }

    /// Atoms `(x, weight)` of the tagged step law `sum_i s_i delta_{-log s_i}`.
    pub fn step_atoms(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (part, p) in &self.atoms {
            for &s in part.sizes() {
                let x = -s.ln();
                match out.iter_mut().find(|(y, _)| (y - x).abs() < 1e-14) {
                    Some(entry) => entry.1 += p * s,
                    None => out.push((x, p * s)),
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Any dislocation law accepted by the simulator.
#[derive(Clone, Debug)]
pub enum DislocationLaw {
    Binary(BinaryDislocationLaw),
    Discrete(DiscreteDislocationLaw),
}

impl DislocationLaw {
    pub fn name(&self) -> &str {
        match self {
            DislocationLaw::Binary(b) => b.name(),
            DislocationLaw::Discrete(d) => d.name(),
        }
    }

    /// Fill `out` with the relative child sizes of one split, largest first.
    pub fn split_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self {
            DislocationLaw::Binary(b) => {
                let u = b.sample(rng);
                out.push(u);
                out.push(1.0 - u);
            }
            DislocationLaw::Discrete(d) => out.extend_from_slice(d.sample(rng).sizes()),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, DislocationLaw::Binary(_))
    }

    /// Step law of the tagged fragment's log-size random walk.
    pub fn step_law(&self) -> Result<StepLaw> {
        match self {
            DislocationLaw::Binary(b) => Ok(StepLaw::Continuous(pi_from_rho(b)?)),
            DislocationLaw::Discrete(d) => Ok(StepLaw::Discrete(d.step_atoms())),
        }
    }
}

impl From<BinaryDislocationLaw> for DislocationLaw {
    fn from(b: BinaryDislocationLaw) -> Self {
        DislocationLaw::Binary(b)
    }
}

impl From<DiscreteDislocationLaw> for DislocationLaw {
    fn from(d: DiscreteDislocationLaw) -> Self {
        DislocationLaw::Discrete(d)
    }
}

/// Step distribution of the tagged log-size walk.
#[derive(Clone, Debug)]
pub enum StepLaw {
    Continuous(LevyDensity),
    /// `(x, weight)` atoms with weights summing to one.
    Discrete(Vec<(f64, f64)>),
}

/// Probability density of the tagged fragment's log-size steps on `[0, inf)`.
///
/// `kappa1` is the declared exponential-moment order (finite `E[exp(k X)]`
/// for `k < kappa1`), `kappa2` the declared order at the origin
/// (`x^(1 - kappa2) pi(x)` bounded near 0). Integrals run on
/// `[0, cutoff]` with `exp(-kappa1 * cutoff)` below 1e-14.
#[derive(Clone)]
pub struct LevyDensity {
    pi: DensityFn,
    kappa1: f64,
    kappa2: f64,
    cutoff: f64,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for LevyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyDensity")
            .field("kappa1", &self.kappa1)
            .field("kappa2", &self.kappa2)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl LevyDensity {
    /// Wraps `pi` and checks it integrates to one.
    pub fn new(pi: DensityFn, kappa1: f64, kappa2: f64, interior: &[f64]) -> Result<Self> {
        if !(kappa1 > 0.0) || !(kappa2 > 0.0) {
            return Err(Error::InvalidParameter("class orders must be positive".into()));
        }
        let cutoff = if kappa1.is_finite() {
            (36.0 / kappa1).max(1.0)
        } else {
            40.0
        };
        Self::with_cutoff(pi, kappa1, kappa2, cutoff, interior)
    }

    pub fn with_cutoff(
        pi: DensityFn,
        kappa1: f64,
        kappa2: f64,
        cutoff: f64,
        interior: &[f64],
    ) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad cutoff {cutoff}")));
        }
        let mut breakpoints = vec![0.0];
        breakpoints.extend(interior.iter().copied().filter(|&x| x > 0.0 && x < cutoff));
        breakpoints.push(cutoff);
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let density = LevyDensity {
            pi,
            kappa1,
            kappa2,
            cutoff,
            breakpoints,
        };
        density.validate()?;
        Ok(density)
    }

    /// `pi(x) = rate * exp(-rate x)`.
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter("rate must be positive".into()));
        }
        Self::new(
            Arc::new(move |x| if x >= 0.0 { rate * (-rate * x).exp() } else { 0.0 }),
            rate,
            1.0,
            &[],
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            (self.pi)(x)
        }
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Sorted integration breakpoints, from 0 to the cutoff.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn mass(&self) -> Result<f64> {
        Ok(integrate_points(|x| self.eval(x), &self.breakpoints, Tolerance::abs(1e-13))?.value)
    }

    /// Mass on `[cutoff, 2 cutoff]`, a proxy for the neglected tail.
    pub fn tail_mass(&self) -> Result<f64> {
        Ok(integrate_points(
            |x| self.eval(x),
            &[self.cutoff, 2.0 * self.cutoff],
            Tolerance::abs(1e-15),
        )?
        .value)
    }

    fn validate(&self) -> Result<()> {
        let mass = self.mass()?;
        if (mass - 1.0).abs() > PI_TOL {
            return Err(Error::InvalidDensity(format!("pi integrates to {mass}")));
        }
        let tail = self.tail_mass()?;
        if tail > 1e-10 {
            return Err(Error::InvalidDensity(format!(
                "tail mass {tail:.3e} beyond the cutoff contradicts kappa1 = {}",
                self.kappa1
            )));
        }
        Ok(())
    }
}

/// Logarithmic-scale step density `beta(a) = pi(-log a) / a` on `(0, 1)`.
#[derive(Clone)]
pub struct BetaDensity {
    beta: DensityFn,
    kappa1: f64,
    kappa2: f64,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for BetaDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BetaDensity")
            .field("kappa1", &self.kappa1)
            .field("kappa2", &self.kappa2)
            .finish()
    }
}

impl BetaDensity {
    /// Evaluate on `(0, 1)`.
    pub fn eval(&self, a: f64) -> Result<f64> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Domain {
                value: a,
                domain: "(0, 1)",
            });
        }
        Ok((self.beta)(a))
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }
}

/// Step density of the tagged fragment for a binary law:
/// `pi(x) = exp(-2x) (rho(exp(-x)) 1{x <= log 2} + rho(1 - exp(-x)) 1{x > log 2})`.
pub fn pi_from_rho(law: &BinaryDislocationLaw) -> Result<LevyDensity> {
    law.validate()?;
    let rho = law.density_fn();
    let pi: DensityFn = Arc::new(move |x: f64| {
        if x < 0.0 {
            return 0.0;
        }
        let e = (-x).exp();
        let r = if x <= LN_2 {
            rho(e)
        } else {
            rho(-(-x).exp_m1())
        };
        e * e * r
    });
    // images of rho's kinks on both branches
    let mut interior = vec![LN_2];
    for &b in law.breakpoints() {
        if b > 0.5 && b < 1.0 {
            interior.push(-b.ln());
            interior.push(-(1.0 - b).ln());
        }
    }
    // the exponential tail only starts on the second branch
    let k1 = law.kappa1();
    let cutoff = if k1.is_finite() { (LN_2 + 36.0 / k1).max(1.0) } else { 40.0 };
    LevyDensity::with_cutoff(pi, k1, law.kappa2(), cutoff, &interior)
}

/// `beta(a) = a^(-1) pi(-log a)`.
pub fn beta_from_pi(pi: &LevyDensity) -> BetaDensity {
    let p = pi.clone();
    let breakpoints = pi
        .breakpoints()
        .iter()
        .rev()
        .map(|&x| (-x).exp())
        .filter(|&a| a > 0.0 && a < 1.0)
        .collect();
    BetaDensity {
        beta: Arc::new(move |a: f64| p.eval(-a.ln()) / a),
        kappa1: pi.kappa1(),
        kappa2: pi.kappa2(),
        breakpoints,
    }
}

/// Inverse of [`beta_from_pi`]: `pi(x) = exp(-x) beta(exp(-x))`.
pub fn pi_from_beta(beta: &BetaDensity) -> Result<LevyDensity> {
    let b = beta.beta.clone();
    let interior: Vec<f64> = beta.breakpoints().iter().map(|&a| -a.ln()).collect();
    LevyDensity::new(
        Arc::new(move |x: f64| {
            if x < 0.0 {
                0.0
            } else {
                let a = (-x).exp();
                if a >= 1.0 {
                    // x = 0 exactly: take the limit from inside (0, 1)
                    b(1.0 - f64::EPSILON)
                } else {
                    a * b(a)
                }
            }
        }),
        beta.kappa1(),
        beta.kappa2(),
        &interior,
    )
}

/// `m_k(pi) = int_0^inf x^k pi(x) dx` by adaptive quadrature.
pub fn moment_mk(pi: &LevyDensity, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be >= 1".into()));
    }
    let integrand = |x: f64| x.powi(k as i32) * pi.eval(x);
    let tail = integrate_points(integrand, &[pi.cutoff(), 2.0 * pi.cutoff()], Tolerance::abs(1e-15))?
        .value;
    if tail > 1e-9 || !tail.is_finite() {
        return Err(Error::DivergentMoment { k, tail });
    }
    let r = integrate_points(
        integrand,
        pi.breakpoints(),
        Tolerance {
            abs: 1e-12,
            rel: 1e-13,
            max_panels: 8000,
        },
    )?;
    if r.abs_error > 1e-9 {
        return Err(Error::Quadrature(r.abs_error));
    }
    Ok(r.value)
}

/// Same moment through the logarithmic scale: `int_0^1 log(1/a)^k beta(a) da`.
pub fn moment_mk_beta(beta: &BetaDensity, k: u32) -> Result<f64> {
    let mut pts = vec![0.0];
    pts.extend(beta.breakpoints().iter().copied());
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let r = integrate_points(
        |a: f64| {
            if a <= 0.0 || a >= 1.0 {
                0.0
            } else {
                (-a.ln()).powi(k as i32) * (beta.beta)(a)
            }
        },
        &pts,
        Tolerance {
            abs: 1e-12,
            rel: 1e-13,
            max_panels: 8000,
        },
    )?;
    Ok(r.value)
}

/// Limit of the empirical measure:
/// `E(g) = (1 / m_1) int_0^inf g(exp(-x)) pi((x, inf)) dx`.
pub fn limit_measure(pi: &LevyDensity, g: &TestFunction) -> Result<f64> {
    let m1 = moment_mk(pi, 1)?;
    if m1 < 1e-12 {
        return Err(Error::ZeroMean(m1));
    }
    let cutoff = pi.cutoff();
    let inner_tol = Tolerance {
        abs: 1e-14,
        rel: 1e-13,
        max_panels: 2000,
    };
    let tail = |x: f64| -> f64 {
        let mut pts = vec![x];
        pts.extend(pi.breakpoints().iter().copied().filter(|&b| b > x));
        integrate_points(|y| pi.eval(y), &pts, inner_tol)
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
    };
    let mut pts: Vec<f64> = pi.breakpoints().to_vec();
    for a in g.breakpoints() {
        if a > 0.0 && a < 1.0 {
            let x = -a.ln();
            if x < cutoff {
                pts.push(x);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let r = integrate_points(
        |x| {
            let gv = g.eval((-x).exp());
            if gv == 0.0 {
                0.0
            } else {
                gv * tail(x)
            }
        },
        &pts,
        Tolerance {
            abs: 1e-11,
            rel: 1e-12,
            max_panels: 8000,
        },
    )?;
    if !r.value.is_finite() {
        return Err(Error::Quadrature(f64::NAN));
    }
    Ok(r.value / m1)
}

//! Test functions fed to the empirical measure: smooth cutoffs, the moment
//! test functions derived from them, and compactly supported kernels with
//! vanishing moments.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Largest supported kernel order.
pub const MAX_KERNEL_ORDER: usize = 10;

/// Slope constant of the cubic smoothstep ramp: `max |d/dt (3t^2 - 2t^3)| = 3/2`.
pub const RAMP_SLOPE: f64 = 1.5;

/// Bounded function on `[0, 1]`, zero outside its support.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    f: RealFn,
    df: Option<RealFn>,
    sup_norm: f64,
    derivative_sup: Option<f64>,
    support: (f64, f64),
    meta: Vec<(String, f64)>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("derivative_sup", &self.derivative_sup)
            .field("support", &self.support)
            .finish()
    }
}

impl TestFunction {
    /// Wrap `f` with support `[lo, hi]`; the sup-norm bound is measured on a
    /// dense grid with a 2% margin.
    pub fn new(name: impl Into<String>, f: RealFn, support: (f64, f64)) -> Self {
        let sup_norm = grid_sup(&*f, support);
        TestFunction {
            name: name.into(),
            f,
            df: None,
            sup_norm,
            derivative_sup: None,
            support: (support.0.max(0.0), support.1.min(1.0)),
            meta: Vec::new(),
        }
    }

    /// Attach an analytic derivative; its sup-norm is measured like the value's.
    pub fn with_derivative(mut self, df: RealFn) -> Self {
        self.derivative_sup = Some(grid_sup(&*df, self.support));
        self.df = Some(df);
        self
    }

    /// Replace the measured sup-norm with a known analytic bound.
    pub fn with_sup_norm(mut self, bound: f64) -> Self {
        self.sup_norm = bound;
        self
    }

    pub fn with_derivative_sup(mut self, bound: f64) -> Self {
        self.derivative_sup = Some(bound);
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: f64) -> Self {
        self.meta.push((key.into(), value));
        self
    }

    /// Built-in named functions: `one`, `id`, `sq`, `cube`, `one-minus`, `sin`.
    pub fn named(key: &str) -> Result<Self> {
        let unit = (0.0, 1.0);
        let tf = match key {
            "one" => TestFunction::new("one", Arc::new(|_| 1.0), unit)
                .with_derivative(Arc::new(|_| 0.0)),
            "id" => TestFunction::new("id", Arc::new(|a| a), unit).with_derivative(Arc::new(|_| 1.0)),
            "sq" => TestFunction::new("sq", Arc::new(|a| a * a), unit)
                .with_derivative(Arc::new(|a| 2.0 * a)),
            "cube" => TestFunction::new("cube", Arc::new(|a| a * a * a), unit)
                .with_derivative(Arc::new(|a| 3.0 * a * a)),
            "one-minus" => TestFunction::new("one-minus", Arc::new(|a| 1.0 - a), unit)
                .with_derivative(Arc::new(|_| -1.0)),
            "sin" => TestFunction::new("sin", Arc::new(f64::sin), unit)
                .with_derivative(Arc::new(f64::cos)),
            other => return Err(Error::UnknownKey(other.to_string())),
        };
        Ok(tf)
    }

    /// Value at `a`; zero outside `[0, 1]` and outside the support.
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        if a < self.support.0 || a > self.support.1 {
            0.0
        } else {
            (self.f)(a)
        }
    }

    pub fn derivative(&self, a: f64) -> Option<f64> {
        let df = self.df.as_ref()?;
        Some(if a < self.support.0 || a > self.support.1 {
            0.0
        } else {
            df(a)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn derivative_sup(&self) -> Option<f64> {
        self.derivative_sup
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn support_width(&self) -> f64 {
        self.support.1 - self.support.0
    }

    /// Points where the function may fail to be smooth (support edges).
    pub fn breakpoints(&self) -> Vec<f64> {
        vec![self.support.0, self.support.1]
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// `sum_i c_i g_i`, supported on the hull of the supports.
    pub fn linear_combination(terms: &[(f64, TestFunction)]) -> Self {
        let parts: Vec<(f64, TestFunction)> = terms.to_vec();
        let lo = parts.iter().map(|(_, g)| g.support.0).fold(1.0, f64::min);
        let hi = parts.iter().map(|(_, g)| g.support.1).fold(0.0, f64::max);
        let bound: f64 = parts.iter().map(|(c, g)| c.abs() * g.sup_norm).sum();
        let eval_parts = parts.clone();
        TestFunction::new(
            "combination",
            Arc::new(move |a| eval_parts.iter().map(|(c, g)| c * g.eval(a)).sum()),
            (lo, hi),
        )
        .with_sup_norm(bound)
    }
}

fn grid_sup(f: &dyn Fn(f64) -> f64, support: (f64, f64)) -> f64 {
    let (lo, hi) = (support.0.max(0.0), support.1.min(1.0));
    if hi <= lo {
        return 0.0;
    }
    const N: usize = 40_000;
    let mut best: f64 = 0.0;
    for i in 0..=N {
        let v = f(lo + (hi - lo) * i as f64 / N as f64);
        if v.is_finite() {
            best = best.max(v.abs());
        }
    }
    // log-spaced probes catch logarithmic growth near the origin
    if lo == 0.0 {
        for i in 0..=2000 {
            let a = 10f64.powf(-12.0 + 12.0 * i as f64 / 2000.0) * hi;
            let v = f(a);
            if v.is_finite() {
                best = best.max(v.abs());
            }
        }
    }
    best * 1.02
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Ramp value `f_gamma(a)`: 1 on `[0, 1 - gamma]`, smoothstep down to 0 at 1.
fn ramp(gamma: f64, a: f64) -> f64 {
    if a <= 1.0 - gamma {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        smoothstep((1.0 - a) / gamma)
    }
}

fn ramp_prime(gamma: f64, a: f64) -> f64 {
    if a <= 1.0 - gamma || a >= 1.0 {
        0.0
    } else {
        let t = (1.0 - a) / gamma;
        -6.0 * t * (1.0 - t) / gamma
    }
}

fn ramp_second(gamma: f64, a: f64) -> f64 {
    if a <= 1.0 - gamma || a >= 1.0 {
        0.0
    } else {
        let t = (1.0 - a) / gamma;
        (6.0 - 12.0 * t) / (gamma * gamma)
    }
}

fn check_gamma(gamma: f64, upper: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < upper) {
        return Err(Error::InvalidGamma(gamma));
    }
    Ok(())
}

/// Cutoff pair `(f_gamma, g_gamma)` with `g_gamma(a) = -a f_gamma'(a)`.
///
/// `f_gamma` is C^1, equal to 1 on `[0, 1 - gamma]` and 0 at 1, with
/// `|f_gamma'| <= 1.5 / gamma`.
pub fn make_cutoff(gamma: f64) -> Result<(TestFunction, TestFunction)> {
    check_gamma(gamma, 1.0)?;
    let f = TestFunction::new(format!("cutoff({gamma})"), Arc::new(move |a| ramp(gamma, a)), (0.0, 1.0))
        .with_derivative(Arc::new(move |a| ramp_prime(gamma, a)))
        .with_sup_norm(1.0)
        .with_derivative_sup(RAMP_SLOPE / gamma)
        .with_meta("ramp_constant", RAMP_SLOPE)
        .with_meta("gamma", gamma);
    let g = TestFunction::new(
        format!("cutoff-derivative({gamma})"),
        Arc::new(move |a| -a * ramp_prime(gamma, a)),
        (1.0 - gamma, 1.0),
    )
    .with_derivative(Arc::new(move |a| -ramp_prime(gamma, a) - a * ramp_second(gamma, a)))
    .with_sup_norm(RAMP_SLOPE / gamma)
    .with_meta("gamma", gamma);
    Ok((f, g))
}

/// Moment test function `g~(a) = -a h'(a)` for `h(a) = f_gamma(1 - a) log(1/a)^k`:
///
/// `g~(a) = a f_gamma'(1 - a) log(1/a)^k + k f_gamma(1 - a) log(1/a)^(k-1)`.
///
/// The first term lives on `[0, gamma]` (narrow support), the second is the
/// smooth part; their sup-norms are recorded as `narrow_part_sup` and
/// `smooth_part_sup`.
pub fn make_moment_testfn(k: u32, gamma: f64) -> Result<TestFunction> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be >= 1".into()));
    }
    check_gamma(gamma, 0.5)?;
    let kf = k as f64;
    let narrow = move |a: f64| {
        if a <= 0.0 || a > 1.0 {
            0.0
        } else {
            a * ramp_prime(gamma, 1.0 - a) * (-a.ln()).powi(k as i32)
        }
    };
    let smooth = move |a: f64| {
        if a <= 0.0 || a > 1.0 {
            0.0
        } else {
            let w = ramp(gamma, 1.0 - a);
            if w == 0.0 {
                0.0
            } else {
                kf * w * (-a.ln()).powi(k as i32 - 1)
            }
        }
    };
    let narrow_sup = grid_sup(&narrow, (0.0, gamma));
    let smooth_sup = grid_sup(&smooth, (0.0, 1.0));
    Ok(TestFunction::new(
        format!("moment-testfn({k},{gamma})"),
        Arc::new(move |a| narrow(a) + smooth(a)),
        (0.0, 1.0),
    )
    .with_meta("k", kf)
    .with_meta("gamma", gamma)
    .with_meta("narrow_part_width", gamma)
    .with_meta("narrow_part_sup", narrow_sup)
    .with_meta("smooth_part_sup", smooth_sup))
}

/// Bump `B(x) = exp(-1 / (x (1 - x)))` on `(0, 1)` and its derivative.
fn bump(x: f64) -> (f64, f64) {
    if x <= 0.0 || x >= 1.0 {
        return (0.0, 0.0);
    }
    let q = x * (1.0 - x);
    let b = (-1.0 / q).exp();
    (b, b * (1.0 - 2.0 * x) / (q * q))
}

/// Shifted Legendre polynomials `P_j(2x - 1)` and their x-derivatives.
fn legendre(order: usize, x: f64, vals: &mut [f64], ders: &mut [f64]) {
    let y = 2.0 * x - 1.0;
    vals[0] = 1.0;
    ders[0] = 0.0;
    if order >= 1 {
        vals[1] = y;
        ders[1] = 1.0;
    }
    for n in 1..order {
        let nf = n as f64;
        vals[n + 1] = ((2.0 * nf + 1.0) * y * vals[n] - nf * vals[n - 1]) / (nf + 1.0);
        ders[n + 1] = ders[n - 1] + (2.0 * nf + 1.0) * vals[n];
    }
    for d in ders.iter_mut().take(order + 1) {
        *d *= 2.0;
    }
}

/// Coefficients of the kernel polynomial in the shifted Legendre basis.
#[derive(Debug)]
struct KernelPoly {
    order: usize,
    coeffs: Vec<f64>,
}

impl KernelPoly {
    fn solve(order: usize) -> Result<Self> {
        let n = order + 1;
        let tol = Tolerance {
            abs: 1e-18,
            rel: 1e-15,
            max_panels: 4000,
        };
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = integrate(
                    |x| {
                        let mut vals = [0.0; MAX_KERNEL_ORDER + 1];
                        let mut ders = [0.0; MAX_KERNEL_ORDER + 1];
                        legendre(order, x, &mut vals, &mut ders);
                        vals[i] * vals[j] * bump(x).0
                    },
                    0.0,
                    1.0,
                    tol,
                )?
                .value;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        // int q(x) phi(x) dx = q(0) for every polynomial q of degree <= order
        let rhs = DVector::from_iterator(n, (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
        let coeffs = gram
            .lu()
            .solve(&rhs)
            .ok_or(Error::IllConditioned(order))?;
        Ok(KernelPoly {
            order,
            coeffs: coeffs.iter().copied().collect(),
        })
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let (b, db) = bump(x);
        if b == 0.0 {
            return (0.0, 0.0);
        }
        let mut vals = [0.0; MAX_KERNEL_ORDER + 1];
        let mut ders = [0.0; MAX_KERNEL_ORDER + 1];
        legendre(self.order, x, &mut vals, &mut ders);
        let (mut p, mut dp) = (0.0, 0.0);
        for (j, c) in self.coeffs.iter().enumerate() {
            p += c * vals[j];
            dp += c * ders[j];
        }
        (p * b, dp * b + p * db)
    }
}

fn kernel_poly(order: usize) -> Result<Arc<KernelPoly>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<KernelPoly>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().expect("kernel cache poisoned").get(&order) {
        return Ok(p.clone());
    }
    let poly = Arc::new(KernelPoly::solve(order)?);
    cache
        .lock()
        .expect("kernel cache poisoned")
        .insert(order, poly.clone());
    Ok(poly)
}

/// Smooth kernel supported in `(0, 1)` with `int phi = 1` and
/// `int a^k phi(a) da = 0` for `k = 1..=order`.
///
/// Built as `p(x) exp(-1 / (x (1 - x)))` with `p` of degree `order`.
pub fn make_kernel(order: usize) -> Result<TestFunction> {
    if order > MAX_KERNEL_ORDER {
        return Err(Error::IllConditioned(order));
    }
    let poly = kernel_poly(order)?;
    let (pv, pd) = (poly.clone(), poly);
    Ok(TestFunction::new(
        format!("kernel({order})"),
        Arc::new(move |x| pv.eval(x).0),
        (0.0, 1.0),
    )
    .with_derivative(Arc::new(move |x| pd.eval(x).1))
    .with_meta("order", order as f64))
}

/// Rescale a kernel to `phi_{gamma,a}(x) = phi((x - a) / gamma) / gamma` and
/// build the estimator integrand `x -> -x phi_{gamma,a}'(x)`.
pub fn localize_kernel(phi: &TestFunction, a: f64, gamma: f64) -> Result<(TestFunction, TestFunction)> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain {
            value: a,
            domain: "(0, 1)",
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    let (lo, hi) = (a + gamma * phi.support().0, a + gamma * phi.support().1);
    if lo < 0.0 || hi > 1.0 {
        return Err(Error::SupportOverflow { lo, hi });
    }
    let Some(phi_sup_d) = phi.derivative_sup() else {
        return Err(Error::InvalidParameter("kernel needs an analytic derivative".into()));
    };
    let (p1, p2, p3) = (phi.clone(), phi.clone(), phi.clone());
    let local = TestFunction::new(
        format!("{}@{a}/{gamma}", phi.name()),
        Arc::new(move |x| p1.eval((x - a) / gamma) / gamma),
        (lo, hi),
    )
    .with_derivative(Arc::new(move |x| p2.derivative((x - a) / gamma).unwrap_or(0.0) / (gamma * gamma)))
    .with_sup_norm(phi.sup_norm() / gamma)
    .with_derivative_sup(phi_sup_d / (gamma * gamma));
    let integrand = TestFunction::new(
        format!("-x*d{}@{a}/{gamma}", phi.name()),
        Arc::new(move |x| -x * p3.derivative((x - a) / gamma).unwrap_or(0.0) / (gamma * gamma)),
        (lo, hi),
    )
    .with_sup_norm(hi * phi_sup_d / (gamma * gamma))
    .with_meta("gamma", gamma)
    .with_meta("a", a);
    Ok((local, integrand))
}

//! Tabulated inverse-CDF sampling for arbitrary densities.

use crate::error::{Error, Result};
use crate::quadrature::{gk15, integrate, Tolerance};

/// Inverse-CDF table with cubic Hermite interpolation of the CDF.
///
/// Node values of the CDF come from Gauss–Kronrod panels; the density at the
/// nodes supplies the Hermite slopes, so the interpolated CDF is accurate to
/// fourth order in the panel width.
#[derive(Clone, Debug)]
pub struct InverseCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    total: f64,
}

impl InverseCdf {
    /// Tabulate `density` over the sorted `breakpoints` with roughly
    /// `panels` panels in total.
    pub fn build<F: Fn(f64) -> f64>(density: F, breakpoints: &[f64], panels: usize) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::SamplerFailure("need at least two breakpoints".into()));
        }
        let span = breakpoints[breakpoints.len() - 1] - breakpoints[0];
        if !(span > 0.0) || !span.is_finite() {
            return Err(Error::SamplerFailure("empty support".into()));
        }
        let mut x = vec![breakpoints[0]];
        for w in breakpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b < a {
                return Err(Error::SamplerFailure("breakpoints not sorted".into()));
            }
            if b == a {
                continue;
            }
            let n = (((b - a) / span) * panels as f64).ceil().max(16.0) as usize;
            for i in 1..=n {
                x.push(if i == n { b } else { a + (b - a) * i as f64 / n as f64 });
            }
        }
        // density values at the nodes, taken one-sided at the segment ends
        let pdf: Vec<f64> = x
            .iter()
            .map(|&t| {
                let v = density(t);
                if v.is_finite() {
                    v.max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        let mut cdf = Vec::with_capacity(x.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in x.windows(2) {
            let (mut mass, err) = gk15(&density, w[0], w[1]);
            if err > 1e-13 {
                mass = integrate(&density, w[0], w[1], Tolerance::abs(1e-14))
                    .map(|r| r.value)
                    .unwrap_or(mass);
            }
            if !(mass >= -1e-15) || !mass.is_finite() {
                return Err(Error::SamplerFailure(format!(
                    "negative or non-finite mass {mass} on [{}, {}]",
                    w[0], w[1]
                )));
            }
            acc += mass.max(0.0);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::SamplerFailure("density has zero mass".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::SamplerFailure("tabulated CDF not monotone".into()));
        }
        Ok(InverseCdf { x, cdf, pdf, total: acc })
    }

    /// Total mass of the tabulated density before normalization.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn support(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Normalized CDF at `t`.
    pub fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t <= lo {
            return 0.0;
        }
        if t >= hi {
            return 1.0;
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return self.cdf[i] / self.total,
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        self.hermite(i, s) / self.total
    }

    fn hermite(&self, i: usize, s: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let (m0, m1) = (h * self.pdf[i], h * self.pdf[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * f0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * f1
            + (s3 - s2) * m1
    }

    /// Quantile function at `u` in [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.total;
        let n = self.cdf.len();
        // first node with cdf > target
        let j = self.cdf.partition_point(|&c| c <= target);
        if j == 0 {
            return self.x[0];
        }
        if j >= n {
            return self.x[n - 1];
        }
        let i = j - 1;
        let (c0, c1) = (self.cdf[i], self.cdf[i + 1]);
        if c1 <= c0 {
            return self.x[i];
        }
        let h = self.x[i + 1] - self.x[i];
        // safeguarded Newton on the Hermite cubic
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut s = (target - c0) / (c1 - c0);
        for _ in 0..40 {
            let val = self.hermite(i, s) - target;
            if val > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let s2 = s * s;
            let deriv = (6.0 * s2 - 6.0 * s) * c0
                + (3.0 * s2 - 4.0 * s + 1.0) * h * self.pdf[i]
                + (-6.0 * s2 + 6.0 * s) * c1
                + (3.0 * s2 - 2.0 * s) * h * self.pdf[i + 1];
            let mut next = if deriv > 0.0 { s - val / deriv } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-15 {
                s = next;
                break;
            }
            s = next;
        }
        self.x[i] + h * s
    }
}

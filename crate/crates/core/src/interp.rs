//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson slopes).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "interpolation needs at least two (x, y) pairs of equal length, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("abscissae must be strictly increasing".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("interpolation data must be finite".into()));
        }
        let slopes = fritsch_carlson(&x, &y);
        Ok(Pchip { x, y, slopes })
    }

    /// Cubic Hermite interpolant with caller-supplied slopes.
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let base = Pchip::new(x, y)?;
        if slopes.len() != base.x.len() || slopes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("slopes must be finite and match the knots one-to-one".into()));
        }
        Ok(Pchip { slopes, ..base })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Hermite slopes at the knots.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn interval(&self, t: f64) -> usize {
        let idx = self.x.partition_point(|&k| k <= t);
        idx.clamp(1, self.x.len() - 1) - 1
    }

    /// Value and first derivative of the interpolant; clamped to the end
    /// segments outside the knot range.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let value =
            (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        let deriv = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (value, deriv)
    }
}

fn fritsch_carlson(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

// One-sided three-point end condition, shape-preserving.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

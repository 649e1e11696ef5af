//! Quantile map `G⁻¹ ∘ F` on the line, computed independently of the mass
//! tables: tail integrals by adaptive Simpson after the substitution
//! `s = x + c·w/(1 − w)`, inversion by Illinois false position.

use crate::error::{Error, Result};
use crate::extparam::{theta, theta_value, ExtParam};
use crate::potentials::PotentialSpec;
use crate::quadrature::{adaptive_simpson, log_add_exp};

use super::{MapDomain, RadialMap};

const SIMPSON_REL_TOL: f64 = 1e-13;
const SIMPSON_DEPTH: u32 = 48;
const MODE_SCAN_HALF_WIDTH: f64 = 50.0;
const MODE_SCAN_POINTS: usize = 10_001;

/// Log-density `−Θ_p(U(x))` on the line.
#[derive(Debug, Clone)]
struct LineDensity {
    u: PotentialSpec,
    p: ExtParam,
}

impl LineDensity {
    fn lf(&self, x: f64) -> f64 {
        let v = -theta_value(self.p, self.u.eval_signed(x).value);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn dlf(&self, x: f64) -> f64 {
        let j = self.u.eval_signed(x);
        match theta(self.p, j.value) {
            Ok(t) => -t.first * j.first,
            Err(_) => 0.0,
        }
    }

    fn mode(&self) -> f64 {
        let h = 2.0 * MODE_SCAN_HALF_WIDTH / (MODE_SCAN_POINTS - 1) as f64;
        (0..MODE_SCAN_POINTS)
            .map(|i| -MODE_SCAN_HALF_WIDTH + h * i as f64)
            .fold((0.0, f64::INFINITY), |(bx, bu), x| {
                let u = self.u.eval_signed(x).value;
                if u < bu {
                    (x, u)
                } else {
                    (bx, bu)
                }
            })
            .0
    }
}

/// Distribution tails of `e^{−Θ_p(U)}` on the line, in log space.
#[derive(Debug, Clone)]
struct LineCdf {
    density: LineDensity,
    mode: f64,
    ln_z: f64,
}

impl LineCdf {
    fn new(u: &PotentialSpec, p: ExtParam) -> Result<Self> {
        u.validate()?;
        if u.dimension != 1 {
            return Err(Error::InvalidInput(format!(
                "quantile map needs one-dimensional potentials, got n = {}",
                u.dimension
            )));
        }
        let density = LineDensity { u: u.clone(), p };
        let mode = density.mode();
        let mut cdf = LineCdf { density, mode, ln_z: 0.0 };
        cdf.ln_z = log_add_exp(cdf.raw_tail(mode, 1.0)?, cdf.raw_tail(-mode, -1.0)?);
        if !cdf.ln_z.is_finite() {
            return Err(Error::DivergentIntegral(format!("normalization of {} is not finite", u.describe())));
        }
        Ok(cdf)
    }

    /// `log ∫_x^∞ e^{lf(σs)} ds`, unnormalized; `σ = −1` gives lower tails.
    fn raw_tail(&self, x: f64, sign: f64) -> Result<f64> {
        let m = sign * self.mode;
        if x >= m {
            self.tail_past_mode(x, sign)
        } else {
            let reference = self.density.lf(self.mode);
            let bulk = adaptive_simpson(
                |s| (self.density.lf(sign * s) - reference).exp(),
                x,
                m,
                SIMPSON_REL_TOL,
                SIMPSON_DEPTH,
            )?;
            Ok(log_add_exp(reference + bulk.ln(), self.tail_past_mode(m, sign)?))
        }
    }

    fn tail_past_mode(&self, x: f64, sign: f64) -> Result<f64> {
        let reference = self.density.lf(sign * x);
        let slope = self.density.dlf(sign * x).abs();
        let spread = (x - sign * self.mode).abs().max(1.0);
        let c = if slope > 0.0 { (1.0 / slope).min(spread) } else { spread };
        let g = |w: f64| {
            let w = w.min(1.0 - 1e-12);
            let s = x + c * w / (1.0 - w);
            c / ((1.0 - w) * (1.0 - w)) * (self.density.lf(sign * s) - reference).exp()
        };
        let v = adaptive_simpson(g, 0.0, 1.0, SIMPSON_REL_TOL, SIMPSON_DEPTH)?;
        if !(v > 0.0) {
            return Err(Error::Quadrature(format!("tail integral at {x} vanished")));
        }
        Ok(reference + v.ln())
    }

    /// Normalized log mass of `(x, ∞)` when `upper`, of `(−∞, x)` otherwise.
    fn log_side(&self, x: f64, upper: bool) -> Result<f64> {
        let raw = if upper { self.raw_tail(x, 1.0)? } else { self.raw_tail(-x, -1.0)? };
        Ok(raw - self.ln_z)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        self.density.lf(x) - self.ln_z
    }
}

/// Independent 1D quantile-map solver.
#[derive(Debug, Clone)]
pub struct QuantileSolver {
    source: LineCdf,
    target: LineCdf,
}

impl QuantileSolver {
    pub fn new(v: &PotentialSpec, w: &PotentialSpec, d: ExtParam, big_d: ExtParam) -> Result<Self> {
        d.check_against_dimension(1, "d")?;
        big_d.check_against_dimension(1, "D")?;
        Ok(QuantileSolver { source: LineCdf::new(v, d)?, target: LineCdf::new(w, big_d)? })
    }

    /// `(T(x), T'(x), residual)`.
    pub fn solve(&self, x: f64) -> Result<(f64, f64, f64)> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("point must be finite, got {x}")));
        }
        let upper = x >= self.source.mode;
        let target_mass = self.source.log_side(x, upper)?;
        let g = |y: f64| -> Result<f64> {
            let m = self.target.log_side(y, upper)?;
            Ok(if upper { target_mass - m } else { m - target_mass })
        };
        let y = illinois(g, self.target.mode)?;
        let residual = (self.target.log_side(y, upper)?).exp() - target_mass.exp();
        let t_prime = (self.source.log_pdf(x) - self.target.log_pdf(y)).exp();
        Ok((y, t_prime, residual))
    }

    pub fn map(&self, x_grid: &[f64]) -> Result<RadialMap> {
        if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("map grid must be strictly increasing".into()));
        }
        let mut m = RadialMap {
            n: 1,
            domain: MapDomain::Line,
            r_grid: x_grid.to_vec(),
            t: Vec::with_capacity(x_grid.len()),
            t_prime: Vec::with_capacity(x_grid.len()),
            residuals: Vec::with_capacity(x_grid.len()),
        };
        for &x in x_grid {
            let (t, tp, res) = self.solve(x)?;
            m.t.push(t);
            m.t_prime.push(tp);
            m.residuals.push(res);
        }
        Ok(m)
    }
}

/// Monotone map `G⁻¹ ∘ F` between `e^{−Θ_d(V)}` and `e^{−Θ_D(W)}` on the line.
pub fn quantile_map_1d(
    v: &PotentialSpec,
    w: &PotentialSpec,
    d: ExtParam,
    big_d: ExtParam,
    x_grid: &[f64],
) -> Result<RadialMap> {
    QuantileSolver::new(v, w, d, big_d)?.map(x_grid)
}

/// Root of the increasing function `g`, bracketed by doubling steps from
/// `start`, then Illinois false position.
fn illinois(g: impl Fn(f64) -> Result<f64>, start: f64) -> Result<f64> {
    const LIMIT: f64 = 1e30;
    let g0 = g(start)?;
    if g0 == 0.0 {
        return Ok(start);
    }
    let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
    let (mut a, mut ga) = (start, g0);
    let mut step = 1.0;
    let (mut b, mut gb) = loop {
        let b = start + dir * step;
        let gb = g(b)?;
        if gb.signum() != ga.signum() || gb == 0.0 {
            break (b, gb);
        }
        (a, ga) = (b, gb);
        step *= 2.0;
        if step > LIMIT {
            return Err(Error::BracketFailure(format!("quantile inversion found no sign change within {LIMIT}")));
        }
    };
    for _ in 0..300 {
        if gb == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            return Ok(b);
        }
        let mut c = b - gb * (b - a) / (gb - ga);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if !(c > lo && c < hi) {
            c = 0.5 * (a + b);
        }
        let gc = g(c)?;
        if gc.signum() != gb.signum() {
            (a, ga) = (b, gb);
        } else {
            ga *= 0.5;
        }
        (b, gb) = (c, gc);
    }
    // Noise in `g` can stall the last bits; the bracket is already tight.
    Ok(b)
}

//! Cumulative mass tables for densities `exp(−Θ_p(U))`.
//!
//! Everything is kept in log space: Gaussian tails at moderate radii are far
//! below the smallest positive double, and polynomial tails must keep full
//! relative precision out to radii ~1e20. A half-line table stores
//! `log ∫_0^k g` and `log ∫_k^∞ g` on geometric knots; off-knot queries add
//! one exact panel integral to the nearest knot value.

use crate::error::{Error, Result};
use crate::extparam::{theta_value, ExtParam};
use crate::potentials::{ln_unit_ball_volume, NormConstant, PotentialSpec};
use crate::quadrature::{integrate, log_add_exp, log_sub_exp, Tolerance};

const FIRST_KNOT: f64 = 1e-6;
const KNOT_RATIO: f64 = 1.189_207_115_002_721; // 2^(1/4)
const LAST_KNOT: f64 = 1e30;
/// Knots stop once the log-density is this far below its peak.
const LOG_DEPTH: f64 = 4000.0;
/// Integrand must fall below 1e-16 × peak by this radius.
const DECAY_RADIUS: f64 = 1e10;
const LN_DECAY: f64 = -36.841_361_487_904_734; // ln(1e-16)
/// Decay lengths per far-tail panel.
const TAIL_PANEL_DECAY_LENGTHS: f64 = 40.0;
const MAX_TAIL_PANELS: usize = 600;

const PANEL_TOL: Tolerance = Tolerance { rel: 1e-13, abs: 0.0, max_intervals: 600 };

/// `s ↦ log(s^power · exp(−Θ_p(U(sign·s))))` on `s ≥ 0`.
#[derive(Debug, Clone)]
pub(crate) struct LogDensity {
    spec: PotentialSpec,
    p: ExtParam,
    power: f64,
    sign: f64,
}

impl LogDensity {
    #[inline]
    pub(crate) fn eval(&self, s: f64) -> f64 {
        let th = theta_value(self.p, self.spec.value_at(self.sign * s));
        if self.power == 0.0 {
            -th
        } else {
            self.power * s.ln() - th
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HalfLineMass {
    density: LogDensity,
    knots: Vec<f64>,
    log_head: Vec<f64>,
    log_tail: Vec<f64>,
    log_total: f64,
    max_rel_error: f64,
}

impl HalfLineMass {
    fn new(density: LogDensity) -> Result<Self> {
        let lg0 = density.eval(0.0);
        if lg0.is_nan() {
            return Err(domain_error(&density, 0.0));
        }
        let mut knots = vec![FIRST_KNOT];
        let mut peak = lg0.max(density.eval(FIRST_KNOT));
        let mut checked_decay = false;
        loop {
            let k = *knots.last().expect("non-empty");
            let lg = density.eval(k);
            if lg.is_nan() {
                return Err(domain_error(&density, k));
            }
            peak = peak.max(lg);
            if !checked_decay && k >= DECAY_RADIUS {
                checked_decay = true;
                if lg - peak > LN_DECAY {
                    return Err(Error::DivergentIntegral(format!(
                        "integrand at r = {k:.3e} is still {:.3e} of its peak",
                        (lg - peak).exp()
                    )));
                }
            }
            if k >= LAST_KNOT || (k > 1.0 && lg < peak - LOG_DEPTH) {
                break;
            }
            knots.push(k * KNOT_RATIO);
        }
        let mut max_rel_error: f64 = 0.0;
        let mut panel = |a: f64, b: f64| -> Result<f64> {
            let (v, rel) = log_integral_with_error(&density, a, b)?;
            max_rel_error = max_rel_error.max(rel);
            Ok(v)
        };
        let first = panel(0.0, FIRST_KNOT)?;
        let panels: Vec<f64> = knots.windows(2).map(|w| panel(w[0], w[1])).collect::<Result<_>>()?;
        let mut log_head = Vec::with_capacity(knots.len());
        log_head.push(first);
        for lp in &panels {
            let last = *log_head.last().expect("non-empty");
            log_head.push(log_add_exp(last, *lp));
        }
        let far = direct_tail(&density, *knots.last().expect("non-empty"))?;
        let mut log_tail = vec![far; knots.len()];
        for i in (0..panels.len()).rev() {
            log_tail[i] = log_add_exp(log_tail[i + 1], panels[i]);
        }
        let log_total = log_add_exp(log_head[0], log_tail[0]);
        if !log_total.is_finite() {
            return Err(Error::DivergentIntegral(format!("total mass evaluates to {}", log_total.exp())));
        }
        Ok(HalfLineMass { density, knots, log_head, log_tail, log_total, max_rel_error: max_rel_error.max(1e-15) })
    }

    pub(crate) fn log_density(&self, s: f64) -> f64 {
        self.density.eval(s)
    }

    pub(crate) fn log_total(&self) -> f64 {
        self.log_total
    }

    /// `log ∫_x^∞ g`.
    pub(crate) fn log_tail(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(self.log_total);
        }
        let last = *self.knots.last().expect("non-empty");
        if x >= last {
            return if x == last {
                Ok(*self.log_tail.last().expect("non-empty"))
            } else {
                direct_tail(&self.density, x)
            };
        }
        if x < self.knots[0] {
            return Ok(log_add_exp(self.log_tail[0], log_integral(&self.density, x, self.knots[0])?));
        }
        let j = self.knots.partition_point(|&k| k < x);
        if self.knots[j] == x {
            Ok(self.log_tail[j])
        } else {
            Ok(log_add_exp(self.log_tail[j], log_integral(&self.density, x, self.knots[j])?))
        }
    }

    /// `log ∫_0^x g`.
    pub(crate) fn log_head(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let last = *self.knots.last().expect("non-empty");
        if x > last {
            let tail = self.log_tail(x)?;
            return Ok(log_sub_exp(self.log_total, tail.min(self.log_total)));
        }
        if x < self.knots[0] {
            return log_integral(&self.density, 0.0, x);
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        if self.knots[i] == x {
            Ok(self.log_head[i])
        } else {
            Ok(log_add_exp(self.log_head[i], log_integral(&self.density, self.knots[i], x)?))
        }
    }

    /// Smallest `t` with `log ∫_t^∞ g ≤ target`.
    pub(crate) fn solve_tail(&self, target: f64) -> Result<f64> {
        if target >= self.log_total {
            return Ok(0.0);
        }
        let last_tail = *self.log_tail.last().expect("non-empty");
        let (lo, hi) = if target > self.log_tail[0] {
            (0.0, self.knots[0])
        } else if target <= last_tail {
            let mut lo = *self.knots.last().expect("non-empty");
            let mut hi = 2.0 * lo;
            let mut steps = 0;
            while direct_tail(&self.density, hi)? > target {
                lo = hi;
                hi *= 2.0;
                steps += 1;
                if steps > 2000 || !hi.is_finite() {
                    return Err(Error::BracketFailure(format!("tail mass exp({target}) not reached by radius {lo:e}")));
                }
            }
            (lo, hi)
        } else {
            let j = self.log_tail.partition_point(|&t| t >= target);
            (self.knots[j - 1], self.knots[j])
        };
        bisect(lo, hi, |t| Ok(self.log_tail(t)? > target))
    }

    /// Smallest `t` with `log ∫_0^t g ≥ target`.
    pub(crate) fn solve_head(&self, target: f64) -> Result<f64> {
        if target >= self.log_total {
            return Err(Error::BracketFailure(format!("head mass exp({target}) exceeds the total mass")));
        }
        let last_head = *self.log_head.last().expect("non-empty");
        let (lo, hi) = if target < self.log_head[0] {
            (0.0, self.knots[0])
        } else if target >= last_head {
            return self.solve_tail(log_sub_exp(self.log_total, target));
        } else {
            let j = self.log_head.partition_point(|&h| h < target);
            (self.knots[j - 1], self.knots[j])
        };
        bisect(lo, hi, |t| Ok(self.log_head(t)? < target))
    }
}

fn domain_error(density: &LogDensity, s: f64) -> Error {
    Error::Domain(format!(
        "U({}) = {} violates U > -p for p = {}",
        density.sign * s,
        density.spec.value_at(density.sign * s),
        density.p
    ))
}

/// Bisection on a monotone predicate: `go_right(t)` is true left of the root.
/// Geometric midpoints while the bracket spans more than a factor of two.
fn bisect(mut lo: f64, mut hi: f64, mut go_right: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi > 2.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if go_right(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn log_integral(density: &LogDensity, a: f64, b: f64) -> Result<f64> {
    log_integral_with_error(density, a, b).map(|(v, _)| v)
}

/// `log ∫_a^b g` with the integrand rescaled by its largest sampled value.
fn log_integral_with_error(density: &LogDensity, a: f64, b: f64) -> Result<(f64, f64)> {
    if b <= a {
        return Ok((f64::NEG_INFINITY, 0.0));
    }
    let mut reference = f64::NEG_INFINITY;
    for k in 0..=8 {
        let v = density.eval(a + (b - a) * k as f64 / 8.0);
        if v.is_nan() {
            return Err(domain_error(density, a + (b - a) * k as f64 / 8.0));
        }
        reference = reference.max(v);
    }
    if reference == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, 0.0));
    }
    let r = integrate(|s| (density.eval(s) - reference).exp(), a, b, PANEL_TOL).map_err(|e| match e {
        Error::Quadrature(msg) if msg.contains("non-finite") => {
            Error::Domain(format!("density undefined inside [{a}, {b}]: {msg}"))
        }
        other => other,
    })?;
    if r.value <= 0.0 {
        return Ok((f64::NEG_INFINITY, 0.0));
    }
    Ok((reference + r.value.ln(), r.abs_error / r.value))
}

/// Panel width past `a`: `a` itself for slowly decaying integrands, a fixed
/// number of decay lengths `1/|(log g)'(a)|` for fast ones.
fn tail_panel_width(density: &LogDensity, a: f64) -> f64 {
    let h = 1e-6 * a;
    let slope = (density.eval(a) - density.eval(a + h)) / h;
    if slope > 0.0 {
        (TAIL_PANEL_DECAY_LENGTHS / slope).clamp(1e-9 * a, a)
    } else {
        a
    }
}

/// `log ∫_x^∞ g` by panels of growing width, closed with a geometric estimate of the
/// remainder once consecutive panels shrink by a steady ratio.
fn direct_tail(density: &LogDensity, x: f64) -> Result<f64> {
    let mut a = x;
    let mut acc = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for _ in 0..MAX_TAIL_PANELS {
        let b = if a == 0.0 { 1.0 } else { a + tail_panel_width(density, a) };
        if !b.is_finite() {
            break;
        }
        let lp = log_integral(density, a, b)?;
        acc = log_add_exp(acc, lp);
        if lp == f64::NEG_INFINITY && acc > f64::NEG_INFINITY {
            return Ok(acc);
        }
        if let Some(pp) = prev {
            let q = (lp - pp).exp();
            if q < 0.9 {
                let rest = lp + (q / (1.0 - q)).ln();
                if rest < acc + LN_DECAY - 2.0 {
                    return Ok(log_add_exp(acc, rest));
                }
            }
        }
        prev = Some(lp);
        a = b;
    }
    Err(Error::DivergentIntegral(format!("tail from r = {x:e} does not converge")))
}

/// Mass bookkeeping for a radial density in `ℝⁿ` or a density on the line.
#[derive(Debug, Clone)]
pub(crate) enum DensityMass {
    Radial { n: usize, half: HalfLineMass },
    Line { plus: HalfLineMass, minus: HalfLineMass },
}

impl DensityMass {
    pub(crate) fn new(u: &PotentialSpec, p: ExtParam) -> Result<Self> {
        u.validate()?;
        if u.is_radial() {
            let half =
                HalfLineMass::new(LogDensity { spec: u.clone(), p, power: (u.dimension - 1) as f64, sign: 1.0 })?;
            Ok(DensityMass::Radial { n: u.dimension, half })
        } else {
            let side = |sign: f64| HalfLineMass::new(LogDensity { spec: u.clone(), p, power: 0.0, sign });
            Ok(DensityMass::Line { plus: side(1.0)?, minus: side(-1.0)? })
        }
    }

    pub(crate) fn ln_z(&self) -> f64 {
        match self {
            DensityMass::Radial { n, half } => (*n as f64).ln() + ln_unit_ball_volume(*n) + half.log_total(),
            DensityMass::Line { plus, minus } => log_add_exp(plus.log_total(), minus.log_total()),
        }
    }

    pub(crate) fn normalization(&self) -> NormConstant {
        let z = self.ln_z().exp();
        let rel = match self {
            DensityMass::Radial { half, .. } => half.max_rel_error,
            DensityMass::Line { plus, minus } => plus.max_rel_error.max(minus.max_rel_error),
        };
        NormConstant { z, abs_error: z * rel }
    }

    /// `log Ψ(r)`: log of the normalized mass outside the ball of radius `r`.
    pub(crate) fn log_outside(&self, r: f64) -> Result<f64> {
        if r <= 0.0 {
            return Ok(0.0);
        }
        match self {
            DensityMass::Radial { half, .. } => Ok(half.log_tail(r)? - half.log_total()),
            DensityMass::Line { plus, minus } => Ok(log_add_exp(plus.log_tail(r)?, minus.log_tail(r)?) - self.ln_z()),
        }
    }

    pub(crate) fn half_line(&self) -> Option<&HalfLineMass> {
        match self {
            DensityMass::Radial { half, .. } => Some(half),
            DensityMass::Line { .. } => None,
        }
    }
}

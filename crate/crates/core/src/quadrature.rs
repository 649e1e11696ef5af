//! One-dimensional quadrature: adaptive Gauss–Kronrod (7/15 points) on finite
//! intervals, plus an adaptive Simpson rule kept as an independent second
//! route for oracle checks.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-10, abs: 0.0, max_intervals: 400 }
    }
}

/// One G7/K15 pass on `[a, b]`: returns (kronrod estimate, error estimate).
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        res_k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let value = res_k * half;
    let err = ((res_k - res_g) * half).abs();
    (value, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// error falls below `max(abs, rel·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, abs_error: 0.0, evaluations: 0 });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite interval [{a}, {b}]")));
    }
    let (value, err) = gk15(&mut f, a, b);
    let mut evaluations = 15;
    if !value.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mut total = value;
    let mut total_err = err;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });
    while total_err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_intervals {
            // Rounding-limited: accept if the error is tiny relative to the result.
            if total_err <= 1e3 * f64::EPSILON * total.abs() {
                break;
            }
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}] after {} intervals (estimate {total}, error {total_err})",
                heap.len()
            )));
        }
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval at machine resolution; cannot refine further.
            heap.push(seg);
            break;
        }
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        evaluations += 30;
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(Error::Quadrature(format!("non-finite integrand on [{}, {}]", seg.a, seg.b)));
        }
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2 });
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let (value, abs_error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
    Ok(QuadResult { value, abs_error, evaluations })
}

/// Recursive adaptive Simpson rule with Richardson correction.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, max_depth: u32) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Coarse magnitude estimate sets the absolute target.
    let mut scale = whole.abs();
    for k in 1..16 {
        let x = a + (b - a) * k as f64 / 16.0;
        scale = scale.max(f(x).abs() * (b - a) / 16.0);
    }
    let eps = (rel_tol * scale).max(f64::MIN_POSITIVE);
    let value = simpson_step(&mut f, a, b, fa, fm, fb, whole, eps, max_depth);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Quadrature(format!("adaptive Simpson produced {value} on [{a}, {b}]")))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// `log(e^a + e^b)` without overflow; `-inf` acts as the identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(e^a − e^b)` for `a ≥ b`.
#[inline]
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

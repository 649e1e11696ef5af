//! Structural constants of a potential at `(p, R)`:
//!
//! ```text
//! c⁽⁰⁾ = [sup_{B_R} (p + |x|²)/(p + U)]⁻¹
//! C⁽⁰⁾ =  sup_{B_R} (p + U)/(p + |x|²)
//! C⁽¹⁾ =  sup_{B_R} (|∇U| / (√p + |x|))²
//! ```
//!
//! and the global aggregates 𝔮, 𝔠, 𝔈, 𝔏 built from them at `p = n`.
//! Suprema come from a log-spaced scan with golden-section refinement, from an
//! expanding window when `R = ∞`, or from closed forms for quadratics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extparam::{ExtParam, Radius};
use crate::potentials::{Jet, PotentialSpec, Profile};

const GRID_POINTS: usize = 2048;
const ANNULUS_POINTS: usize = 32;
const STABLE_DOUBLINGS: usize = 3;
const WINDOW_TOL: f64 = 1e-8;
const WINDOW_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructuralConstants {
    pub c0: f64,
    #[serde(rename = "C0")]
    pub big_c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub p: ExtParam,
    pub radius: Radius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// 𝔮, 𝔠, 𝔈, 𝔏 of a potential at `p = n`, `R = ∞`. Only `c_frak` is used
/// for a source and only `e_frak` for a target; both are always filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalAggregates {
    pub role: Role,
    pub q: f64,
    pub c_frak: f64,
    pub e_frak: f64,
    pub l_frak: f64,
}

/// All three constants on `B_R`.
pub fn structural(u: &PotentialSpec, p: ExtParam, radius: Radius) -> Result<StructuralConstants> {
    let (c0, big_c0) = zeroth_order(u, p, radius)?;
    let c1 = first_order(u, p, radius)?;
    Ok(StructuralConstants { c0, big_c0, c1, p, radius })
}

/// `(c⁽⁰⁾, C⁽⁰⁾)` on `B_R`. At `p = ∞` both equal 1 for finite `R` and are
/// undefined on the whole space.
pub fn zeroth_order(u: &PotentialSpec, p: ExtParam, radius: Radius) -> Result<(f64, f64)> {
    u.validate()?;
    check_radius(radius)?;
    let q = match (p, radius) {
        (ExtParam::Infinite, ExtParam::Finite(_)) => return Ok((1.0, 1.0)),
        (ExtParam::Infinite, ExtParam::Infinite) => {
            return Err(Error::ConventionUndefined(
                "zeroth-order constants at p = inf are only defined on balls of finite radius".into(),
            ))
        }
        (ExtParam::Finite(q), _) => q,
    };
    if let Profile::Quadratic { a } = u.profile {
        let edge = match radius {
            ExtParam::Finite(r) => (q + a * r * r) / (q + r * r),
            ExtParam::Infinite => a,
        };
        return Ok((edge.min(1.0), edge.max(1.0)));
    }
    let (inv_c0, big_c0) = scan_zeroth_order(u, q, radius)?;
    Ok((1.0 / inv_c0, big_c0))
}

/// `C⁽¹⁾` on `B_R`; zero at `p = ∞`.
pub fn first_order(u: &PotentialSpec, p: ExtParam, radius: Radius) -> Result<f64> {
    u.validate()?;
    check_radius(radius)?;
    let q = match p {
        ExtParam::Infinite => return Ok(0.0),
        ExtParam::Finite(q) => q,
    };
    if let Profile::Quadratic { a } = u.profile {
        return Ok(match radius {
            ExtParam::Finite(r) => (2.0 * a * r / (q.sqrt() + r)).powi(2),
            ExtParam::Infinite => 4.0 * a * a,
        });
    }
    scan_first_order(u, q, radius)
}

/// Aggregates at `p = n` over the whole space.
pub fn aggregates(u: &PotentialSpec, n: usize, role: Role) -> Result<GlobalAggregates> {
    if u.dimension != n {
        return Err(Error::InvalidInput(format!("potential has dimension {} but n = {n}", u.dimension)));
    }
    let s = structural(u, ExtParam::Finite(n as f64), ExtParam::Infinite)?;
    let c_frak = s.c0.min(1.0);
    let e_frak = s.big_c0.max(1.0);
    Ok(GlobalAggregates { role, q: e_frak / c_frak, c_frak, e_frak, l_frak: s.c1 })
}

fn check_radius(radius: Radius) -> Result<()> {
    match radius {
        ExtParam::Finite(r) if !(r.is_finite() && r >= 0.0) => {
            Err(Error::InvalidInput(format!("radius must be nonnegative, got {r}")))
        }
        _ => Ok(()),
    }
}

fn scale(q: f64) -> f64 {
    q.sqrt().max(1.0)
}

fn checked_jet(u: &PotentialSpec, q: f64, x: f64) -> Result<Jet> {
    let j = u.eval_signed(x);
    if !(q + j.value > 1e-300) || j.value.is_nan() {
        return Err(Error::Domain(format!("U({x}) = {} violates U > -p for p = {q}", j.value)));
    }
    Ok(j)
}

/// Evaluates `g` at `r` and, for one-dimensional potentials, at `−r`,
/// keeping the larger value.
fn both_sides(u: &PotentialSpec, r: f64, g: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
    let v = g(r)?;
    if u.is_radial() || r == 0.0 {
        Ok(v)
    } else {
        Ok(v.max(g(-r)?))
    }
}

/// `(sup (p+r²)/(p+U), sup (p+U)/(p+r²))` on `B_R`.
pub(crate) fn scan_zeroth_order(u: &PotentialSpec, q: f64, radius: Radius) -> Result<(f64, f64)> {
    let down = |x: f64| -> Result<f64> {
        let j = checked_jet(u, q, x)?;
        Ok((q + x * x) / (q + j.value))
    };
    let up = |x: f64| -> Result<f64> {
        let j = checked_jet(u, q, x)?;
        Ok((q + j.value) / (q + x * x))
    };
    let a = sup_on_ball(&|r| both_sides(u, r, &down), radius, scale(q))?;
    let b = sup_on_ball(&|r| both_sides(u, r, &up), radius, scale(q))?;
    Ok((a, b))
}

pub(crate) fn scan_first_order(u: &PotentialSpec, q: f64, radius: Radius) -> Result<f64> {
    let sq = q.sqrt();
    let grad = |x: f64| -> Result<f64> {
        let j = checked_jet(u, q, x)?;
        Ok((j.first.abs() / (sq + x.abs())).powi(2))
    };
    sup_on_ball(&|r| both_sides(u, r, &grad), radius, scale(q))
}

fn sup_on_ball(f: &dyn Fn(f64) -> Result<f64>, radius: Radius, scale: f64) -> Result<f64> {
    match radius {
        ExtParam::Finite(r) => sup_on_interval(f, r, scale),
        ExtParam::Infinite => sup_expanding(f, scale),
    }
}

fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = hi / lo;
    (0..points).map(|i| if i + 1 == points { hi } else { lo * ratio.powf(i as f64 / (points - 1) as f64) }).collect()
}

fn sup_on_interval(f: &dyn Fn(f64) -> Result<f64>, hi: f64, scale: f64) -> Result<f64> {
    let lo = 1e-6 * scale;
    let mut grid = vec![0.0];
    if hi > lo {
        grid.extend(log_space(lo, hi, GRID_POINTS));
    } else {
        grid.push(hi);
    }
    sup_on_grid(f, &grid)
}

/// Grid maximum followed by golden-section refinement on the neighbouring
/// cells.
fn sup_on_grid(f: &dyn Fn(f64) -> Result<f64>, grid: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, &x) in grid.iter().enumerate() {
        let v = f(x)?;
        if v.is_nan() {
            return Err(Error::Domain(format!("structural ratio undefined at r = {x}")));
        }
        if v > best {
            best = v;
            arg = i;
        }
    }
    let a = grid[arg.saturating_sub(1)];
    let b = grid[(arg + 1).min(grid.len() - 1)];
    if b > a {
        best = best.max(golden_max(f, a, b)?);
    }
    Ok(best)
}

fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..100 {
        if b - a <= 1e-13 * b.abs().max(1e-300) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        }
    }
    Ok(f1.max(f2))
}

/// Sup over `[0, ∞)`: scan `[0, 10·scale]`, then add doubling annuli until
/// three consecutive doublings move the sup by less than `1e-8` relative.
fn sup_expanding(f: &dyn Fn(f64) -> Result<f64>, scale: f64) -> Result<f64> {
    let mut w = 10.0 * scale;
    let mut best = sup_on_interval(f, w, scale)?;
    let mut stable = 0;
    while stable < STABLE_DOUBLINGS {
        if w >= WINDOW_LIMIT * scale {
            return Err(Error::NoConvergence(format!("supremum still growing at r = {w:.3e} (last value {best:.6e})")));
        }
        let annulus = log_space(w, 2.0 * w, ANNULUS_POINTS + 1);
        let next = best.max(sup_on_grid(f, &annulus)?);
        let change = if next <= best {
            0.0
        } else if best > 0.0 {
            (next - best) / best
        } else {
            f64::INFINITY
        };
        stable = if change < WINDOW_TOL { stable + 1 } else { 0 };
        best = next;
        w *= 2.0;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{HessBound, RadialTable};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn tabulated(f: impl Fn(f64) -> (f64, f64)) -> PotentialSpec {
        let r: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
        let (u, du): (Vec<f64>, Vec<f64>) = r.iter().map(|&x| f(x)).unzip();
        let t = RadialTable::new(r, u, Some(du)).unwrap();
        PotentialSpec::tabulated(1, t, HessBound::Unbounded, HessBound::Unbounded).unwrap()
    }

    #[test]
    fn quadratic_reference_is_one() {
        let u = PotentialSpec::quadratic(2, 1.0).unwrap();
        for &p in &[2.0, 7.5, 300.0] {
            for r in [ExtParam::Finite(0.3), ExtParam::Finite(40.0), ExtParam::Infinite] {
                let s = structural(&u, ExtParam::Finite(p), r).unwrap();
                assert_eq!((s.c0, s.big_c0), (1.0, 1.0));
            }
        }
    }

    #[test]
    fn ratio_maximized_at_the_boundary() {
        let u = PotentialSpec::quadratic(1, 2.0).unwrap();
        let s = structural(&u, ExtParam::Finite(4.0), ExtParam::Finite(2.0)).unwrap();
        assert!((s.big_c0 - 1.5).abs() < 1e-15);
        assert_eq!(s.c0, 1.0);
        let (inv_c0, big_c0) = scan_zeroth_order(&u, 4.0, ExtParam::Finite(2.0)).unwrap();
        assert!((big_c0 - 1.5).abs() < 1e-12);
        assert!((inv_c0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_constant_scan_matches_limit() {
        let u = PotentialSpec::quadratic(1, 1.0).unwrap();
        assert_eq!(first_order(&u, ExtParam::Finite(1.0), ExtParam::Infinite).unwrap(), 4.0);
        let scanned = scan_first_order(&u, 1.0, ExtParam::Infinite).unwrap();
        assert!(rel(scanned, 4.0) < 1e-5, "{scanned}");
    }

    #[test]
    fn scan_agrees_with_closed_forms_on_balls() {
        let u = PotentialSpec::quadratic(3, 0.4).unwrap();
        for &(p, r) in &[(3.0, 0.01), (3.0, 1.7), (12.0, 30.0)] {
            let rad = ExtParam::Finite(r);
            let (c0, big_c0) = zeroth_order(&u, ExtParam::Finite(p), rad).unwrap();
            let (inv, sup) = scan_zeroth_order(&u, p, rad).unwrap();
            assert!(rel(1.0 / inv, c0) < 1e-12 && rel(sup, big_c0) < 1e-12);
            let c1 = first_order(&u, ExtParam::Finite(p), rad).unwrap();
            assert!(rel(scan_first_order(&u, p, rad).unwrap(), c1) < 1e-12);
        }
    }

    #[test]
    fn endpoint_conventions() {
        let u = PotentialSpec::quadratic(1, 3.0).unwrap();
        let s = structural(&u, ExtParam::Infinite, ExtParam::Finite(5.0)).unwrap();
        assert_eq!((s.c0, s.big_c0, s.c1), (1.0, 1.0, 0.0));
        assert!(matches!(structural(&u, ExtParam::Infinite, ExtParam::Infinite), Err(Error::ConventionUndefined(_))));
        assert_eq!(first_order(&u, ExtParam::Infinite, ExtParam::Infinite).unwrap(), 0.0);
    }

    #[test]
    fn super_quadratic_growth_does_not_converge() {
        let u = PotentialSpec::one_dim_custom(
            "quartic",
            |x| Jet { value: x.powi(4), first: 4.0 * x.powi(3), second: 12.0 * x * x },
            HessBound::Unbounded,
            HessBound::Bounded(0.0),
        );
        assert!(matches!(zeroth_order(&u, ExtParam::Finite(1.0), ExtParam::Infinite), Err(Error::NoConvergence(_))));
    }

    #[test]
    fn domain_violation_is_reported() {
        let u = tabulated(|x| (x * x - 3.0, 2.0 * x));
        assert!(matches!(structural(&u, ExtParam::Finite(2.0), ExtParam::Finite(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn one_dim_scans_both_half_lines() {
        // a(x − s)² with s = 1: on B_1 the gradient ratio peaks at x = −1.
        let u = PotentialSpec::shifted_quadratic(1.0, 1.0).unwrap();
        let c1 = first_order(&u, ExtParam::Finite(1.0), ExtParam::Finite(1.0)).unwrap();
        assert!(rel(c1, 4.0) < 1e-12, "{c1}");
        let (c0, big_c0) = zeroth_order(&u, ExtParam::Finite(1.0), ExtParam::Finite(1.0)).unwrap();
        // (1 + (x−1)²)/(1 + x²) = 1 + (1 − 2x)/(1 + x²) on [−1, 1]: interior max
        // (3 + √5)/2 at x = (1 − √5)/2, min 1/2 at x = 1.
        assert!(rel(big_c0, (3.0 + 5f64.sqrt()) / 2.0) < 1e-12);
        assert!(rel(c0, 0.5) < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let g = aggregates(&PotentialSpec::quadratic(1, 1.0).unwrap(), 1, Role::Source).unwrap();
        assert_eq!((g.q, g.c_frak, g.l_frak), (1.0, 1.0, 4.0));
        let g = aggregates(&PotentialSpec::quadratic(1, 2.0).unwrap(), 1, Role::Target).unwrap();
        assert_eq!((g.e_frak, g.q), (2.0, 2.0));
        let g = aggregates(&PotentialSpec::quadratic(3, 1.0).unwrap(), 3, Role::Source).unwrap();
        assert_eq!((g.q, g.c_frak, g.l_frak), (1.0, 1.0, 4.0));
        let t = tabulated(|x| (2.0 * x * x, 4.0 * x));
        let g = aggregates(&t, 1, Role::Target).unwrap();
        assert!(rel(g.e_frak, 2.0) < 1e-6 && rel(g.l_frak, 16.0) < 1e-5);
    }

    #[test]
    fn gradient_constant_nonincreasing_in_p() {
        for &a in &[0.5, 1.0, 3.0] {
            for n in 1..=3usize {
                let u = PotentialSpec::quadratic(n, a).unwrap();
                let nf = n as f64;
                for r in [ExtParam::Finite(2.0), ExtParam::Finite(50.0)] {
                    let vals: Vec<f64> = [nf, 2.0 * nf, 10.0 * nf]
                        .iter()
                        .map(|&p| first_order(&u, ExtParam::Finite(p), r).unwrap())
                        .collect();
                    assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{vals:?}");
                }
            }
        }
    }

    #[test]
    fn constants_monotone_in_radius() {
        // Sub-quadratic near the origin, super-quadratic further out.
        let u = tabulated(|x| {
            (
                x * x + 0.3 * x.powi(4) / (1.0 + x * x) - 0.5 * x * x / (1.0 + x * x),
                2.0 * x + 0.3 * (4.0 * x.powi(3) + 2.0 * x.powi(5)) / (1.0 + x * x).powi(2) - x / (1.0 + x * x).powi(2),
            )
        });
        let mut prev: Option<StructuralConstants> = None;
        for &r in &[0.5, 1.0, 2.0, 4.0, 8.0] {
            let s = structural(&u, ExtParam::Finite(1.5), ExtParam::Finite(r)).unwrap();
            if let Some(p) = prev {
                assert!(s.c0 <= p.c0 * (1.0 + 1e-12));
                assert!(s.big_c0 >= p.big_c0 * (1.0 - 1e-12));
                assert!(s.c1 >= p.c1 * (1.0 - 1e-12));
            }
            assert!(s.c0 <= s.big_c0);
            prev = Some(s);
        }
    }

    proptest! {
        #[test]
        fn ratios_move_toward_one_as_p_grows(
            a in 0.1f64..5.0, x in 0.0f64..100.0, p1 in 1.0f64..50.0, dp in 0.0f64..500.0
        ) {
            let u = a * x * x;
            let p2 = p1 + dp;
            let dev = |p: f64| ((p + u) / (p + x * x) - 1.0).abs();
            prop_assert!(dev(p2) <= dev(p1) * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn zeroth_order_constants_move_toward_one(a in 0.1f64..5.0, p1 in 1.0f64..20.0, k in 1.0f64..50.0, r in 0.1f64..30.0) {
            let u = PotentialSpec::quadratic(1, a).unwrap();
            let rad = ExtParam::Finite(r);
            let (c1_lo, c1_hi) = zeroth_order(&u, ExtParam::Finite(p1), rad).unwrap();
            let (c2_lo, c2_hi) = zeroth_order(&u, ExtParam::Finite(p1 * k), rad).unwrap();
            prop_assert!(c2_hi <= c1_hi.max(1.0) * (1.0 + 1e-14));
            prop_assert!(c2_lo >= c1_lo.min(1.0) * (1.0 - 1e-14));
        }
    }
}

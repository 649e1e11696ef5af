//! Monotone transport maps between radial densities and on the line.
//!
//! For radial `V`, `W` the Brenier map is `T(x) = t(|x|) x/|x|` where `t`
//! balances tail masses:
//!
//! ```text
//! Z_W⁻¹ ∫_t^∞ s^{n−1} e^{−Θ_D(W(s))} ds = Z_V⁻¹ ∫_r^∞ s^{n−1} e^{−Θ_d(V(s))} ds.
//! ```
//!
//! The Hessian eigenvalues of the Brenier potential are `t'(r)` (radial) and
//! `t(r)/r` (tangential, multiplicity `n − 1`).

mod quantile;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extparam::{theta, ExtParam, Radius};
use crate::mass::{DensityMass, HalfLineMass};
use crate::potentials::PotentialSpec;

pub use quantile::{quantile_map_1d, QuantileSolver};

/// Below this radius `t(r)/r` is replaced by its limit `t'(0)`.
const SMALL_R: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapDomain {
    /// Abscissae are radii `r > 0`.
    Radial,
    /// Abscissae are signed points of the line.
    Line,
}

/// A sampled monotone map with its derivative and mass-balance residuals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialMap {
    pub n: usize,
    pub domain: MapDomain,
    pub r_grid: Vec<f64>,
    pub t: Vec<f64>,
    pub t_prime: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RadialMap {
    pub fn len(&self) -> usize {
        self.r_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_grid.is_empty()
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.t.windows(2).all(|w| w[1] > w[0]) && self.t_prime.iter().all(|&v| v > 0.0)
    }

    /// CSV with columns `r, t, t_prime, residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io { path: "<map csv>".into(), message: e.to_string() };
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["r", "t", "t_prime", "residual"]).map_err(io)?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:.16e}", self.r_grid[i]),
                format!("{:.16e}", self.t[i]),
                format!("{:.16e}", self.t_prime[i]),
                format!("{:.16e}", self.residuals[i]),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<map csv>".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Radial,
    Tangential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub argmax_r: f64,
    pub component: Component,
}

/// `n` log-spaced points over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(Error::InvalidInput(format!(
            "log grid needs 0 < lo < hi and at least two points, got [{lo}, {hi}] with {n}"
        )));
    }
    let ratio = (hi / lo).ln();
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo * (ratio * i as f64 / (n - 1) as f64).exp() }).collect())
}

/// 400 log-spaced radii over `[10⁻³ s, 50 s]` with `s = max(1, √d)`.
pub fn default_grid(d: ExtParam) -> Vec<f64> {
    let s = match d {
        ExtParam::Finite(d) => d.sqrt().max(1.0),
        ExtParam::Infinite => 1.0,
    };
    log_grid(1e-3 * s, 50.0 * s, 400).expect("valid default grid")
}

/// Mass tables of a radial source/target pair, shared by every map
/// evaluation.
#[derive(Debug, Clone)]
pub struct TransportSolver {
    v: PotentialSpec,
    w: PotentialSpec,
    d: ExtParam,
    big_d: ExtParam,
    n: usize,
    source: DensityMass,
    target: DensityMass,
}

/// One solved point of the radial map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub t: f64,
    pub t_prime: f64,
    pub residual: f64,
}

impl TransportSolver {
    /// `d > D` is allowed here: the map exists even when no bound applies.
    pub fn new(v: &PotentialSpec, w: &PotentialSpec, d: ExtParam, big_d: ExtParam, n: usize) -> Result<Self> {
        if !(v.is_radial() && w.is_radial()) {
            return Err(Error::InvalidInput(
                "radial transport needs radial profiles; use the quantile map for general 1D potentials".into(),
            ));
        }
        if v.dimension != n || w.dimension != n {
            return Err(Error::InvalidInput(format!(
                "potential dimensions ({}, {}) do not match n = {n}",
                v.dimension, w.dimension
            )));
        }
        d.check_against_dimension(n, "d")?;
        big_d.check_against_dimension(n, "D")?;
        Ok(TransportSolver {
            v: v.clone(),
            w: w.clone(),
            d,
            big_d,
            n,
            source: DensityMass::new(v, d)?,
            target: DensityMass::new(w, big_d)?,
        })
    }

    pub fn source_potential(&self) -> &PotentialSpec {
        &self.v
    }

    pub fn target_potential(&self) -> &PotentialSpec {
        &self.w
    }

    pub fn parameters(&self) -> (ExtParam, ExtParam) {
        (self.d, self.big_d)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    fn halves(&self) -> (&HalfLineMass, &HalfLineMass) {
        (self.source.half_line().expect("radial source"), self.target.half_line().expect("radial target"))
    }

    /// Solves the balance at one radius. The tail side is used while the
    /// source mass outside `B_r` is at most one half, the ball side otherwise,
    /// so neither side suffers cancellation.
    pub fn solve(&self, r: f64) -> Result<MapPoint> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
        }
        let (src, tgt) = self.halves();
        let (lv, lw) = (src.log_total(), tgt.log_total());
        let log_psi = src.log_tail(r)? - lv;
        let (t, residual) = if log_psi <= 0.5f64.ln() {
            let t = tgt.solve_tail(log_psi + lw)?;
            (t, (tgt.log_tail(t)? - lw).exp() - log_psi.exp())
        } else {
            let log_head = src.log_head(r)? - lv;
            let t = tgt.solve_head(log_head + lw)?;
            (t, log_head.exp() - (tgt.log_head(t)? - lw).exp())
        };
        let t_prime = (lw - lv + src.log_density(r) - tgt.log_density(t)).exp();
        Ok(MapPoint { t, t_prime, residual })
    }

    pub fn map(&self, r_grid: &[f64]) -> Result<RadialMap> {
        if r_grid.windows(2).any(|w| !(w[1] > w[0])) || r_grid.first().is_some_and(|&r| r <= 0.0) {
            return Err(Error::InvalidInput("map grid must be positive and strictly increasing".into()));
        }
        let mut m = RadialMap {
            n: self.n,
            domain: MapDomain::Radial,
            r_grid: r_grid.to_vec(),
            t: Vec::with_capacity(r_grid.len()),
            t_prime: Vec::with_capacity(r_grid.len()),
            residuals: Vec::with_capacity(r_grid.len()),
        };
        for &r in r_grid {
            let p = self.solve(r)?;
            m.t.push(p.t);
            m.t_prime.push(p.t_prime);
            m.residuals.push(p.residual);
        }
        Ok(m)
    }

    /// Largest Hessian eigenvalue of the Brenier potential at radius `r`.
    fn eigenvalue(&self, r: f64) -> Result<(f64, Component)> {
        let p = self.solve(r)?;
        Ok(top_eigenvalue(self.n, r, p.t, p.t_prime))
    }
}

fn top_eigenvalue(n: usize, r: f64, t: f64, t_prime: f64) -> (f64, Component) {
    if n == 1 {
        return (t_prime, Component::Radial);
    }
    let tangential = if r < SMALL_R { t_prime } else { t / r };
    if tangential > t_prime {
        (tangential, Component::Tangential)
    } else {
        (t_prime, Component::Radial)
    }
}

/// Radial Brenier map sampled on `r_grid`.
pub fn radial_map(
    v: &PotentialSpec,
    w: &PotentialSpec,
    d: ExtParam,
    big_d: ExtParam,
    n: usize,
    r_grid: &[f64],
) -> Result<RadialMap> {
    TransportSolver::new(v, w, d, big_d, n)?.map(r_grid)
}

/// Sup of the Hessian eigenvalues over grid points inside `B_R`.
pub fn lipschitz_empirical(map: &RadialMap, radius: Radius) -> Result<LipschitzEstimate> {
    let inside = |x: f64| match radius {
        ExtParam::Finite(r) => x.abs() <= r,
        ExtParam::Infinite => true,
    };
    let mut best: Option<LipschitzEstimate> = None;
    for i in 0..map.len() {
        let x = map.r_grid[i];
        if !inside(x) {
            continue;
        }
        let (value, component) = match map.domain {
            MapDomain::Radial => top_eigenvalue(map.n, x, map.t[i], map.t_prime[i]),
            MapDomain::Line => (map.t_prime[i], Component::Radial),
        };
        if best.is_none_or(|b| value > b.value) {
            best = Some(LipschitzEstimate { value, argmax_r: x, component });
        }
    }
    best.ok_or_else(|| Error::EmptyWindow(format!("no grid point inside the ball of radius {radius}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares slope of `log t` against `log r` over `[r_min, r_max]`.
pub fn slope_fit(map: &RadialMap, r_min: f64, r_max: f64) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = map
        .r_grid
        .iter()
        .zip(&map.t)
        .filter(|(r, t)| **r >= r_min && **r <= r_max && **r > 0.0 && **t > 0.0)
        .map(|(r, t)| (r.ln(), t.ln()))
        .collect();
    if pts.len() < 20 {
        return Err(Error::EmptyWindow(format!(
            "slope fit over [{r_min}, {r_max}] needs at least 20 grid points, found {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    Ok(SlopeFit { slope, r2, points: pts.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slack {
    pub inequality: String,
    /// Right-hand side minus left-hand side.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondVariationReport {
    pub maximizer: f64,
    pub image: f64,
    pub lambda: f64,
    pub component: Component,
    pub slacks: Vec<Slack>,
    /// Set when the inequalities do not apply (e.g. `d > D`).
    pub skipped: Option<String>,
}

impl SecondVariationReport {
    pub fn pass(&self) -> bool {
        self.slacks.iter().all(|s| s.pass)
    }
}

pub const SLACK_TOLERANCE: f64 = -1e-6;

fn slack(name: impl Into<String>, value: f64) -> Slack {
    Slack { inequality: name.into(), slack: value, pass: value >= SLACK_TOLERANCE }
}

/// Evaluates the maximum-principle inequalities at the empirical maximizer of
/// the Hessian eigenvalue inside `B_R`: grid argmax, then one golden-section
/// refinement on the neighbouring cells.
pub fn second_variation_check(
    solver: &TransportSolver,
    map: &RadialMap,
    radius: Radius,
) -> Result<SecondVariationReport> {
    let est = lipschitz_empirical(map, radius)?;
    let i = map.r_grid.iter().position(|&r| r == est.argmax_r).expect("argmax is a grid point");
    let lo = map.r_grid[i.saturating_sub(1)];
    let mut hi = map.r_grid[(i + 1).min(map.len() - 1)];
    if let ExtParam::Finite(r) = radius {
        hi = hi.min(r);
    }
    let (mut x_bar, mut lambda, mut component) = (est.argmax_r, est.value, est.component);
    if hi > lo {
        let (x, v, c) = golden_argmax(|r| solver.eigenvalue(r), lo, hi)?;
        if v > lambda {
            (x_bar, lambda, component) = (x, v, c);
        }
    }
    let t_bar = solver.solve(x_bar)?.t;
    let (d, big_d) = solver.parameters();
    let mut report =
        SecondVariationReport { maximizer: x_bar, image: t_bar, lambda, component, slacks: Vec::new(), skipped: None };
    if d > big_d {
        report.skipped = Some(format!("d = {d} > D = {big_d}: the inequalities need d <= D"));
        return Ok(report);
    }
    let vj = solver.source_potential().eval_signed(x_bar);
    let wj = solver.target_potential().eval_signed(t_bar);
    let (v1, v11, w1, w11) = match component {
        Component::Radial => (vj.first, vj.second, wj.first, wj.second),
        Component::Tangential => (0.0, vj.first / x_bar, 0.0, wj.first / t_bar),
    };
    let th_v = theta(d, vj.value)?;
    let th_w = theta(big_d, wj.value)?;
    let inv_d = match d {
        ExtParam::Finite(d) => 1.0 / d,
        ExtParam::Infinite => 0.0,
    };
    let l = lambda;
    let exact = th_w.first * w11 * l * l - th_v.first * v11 - 2.0 * th_v.second * v1 * v1
        + (th_w.first * th_w.first * inv_d + th_w.second) * w1 * w1 * l * l
        - 2.0 * th_v.first * th_w.first * inv_d * v1 * w1 * l;
    report.slacks.push(slack("exact", -exact));
    match (d, big_d) {
        (ExtParam::Finite(df), ExtParam::Finite(dd)) => {
            if w11 > 0.0 {
                for eps in [0.1, 0.5, 0.9] {
                    let rhs = df / dd * (dd + wj.value) / (df + vj.value) * v11 / (1.0 - eps)
                        + v1 * v1 * w1 * w1 / (w11 * (df + vj.value).powi(2)) / (eps * (1.0 - eps));
                    report.slacks.push(slack(format!("master eps={eps}"), rhs - w11 * l * l));
                }
            }
        }
        (ExtParam::Finite(df), ExtParam::Infinite) => {
            report.slacks.push(slack("endpoint", v11 - (1.0 + vj.value / df) * w11 * l * l));
        }
        (ExtParam::Infinite, _) => {
            report.slacks.push(slack("caffarelli", v11 - w11 * l * l));
        }
    }
    Ok(report)
}

fn golden_argmax(f: impl Fn(f64) -> Result<(f64, Component)>, mut a: f64, mut b: f64) -> Result<(f64, f64, Component)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..80 {
        if b - a <= 1e-12 * b {
            break;
        }
        if f1.0 < f2.0 {
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
    Ok(if f1.0 >= f2.0 { (x1, f1.0, f1.1) } else { (x2, f2.0, f2.1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{HessBound, RadialTable};

    fn quad(n: usize, a: f64) -> PotentialSpec {
        PotentialSpec::quadratic(n, a).unwrap()
    }

    fn f(x: f64) -> ExtParam {
        ExtParam::Finite(x)
    }

    #[test]
    fn identity_between_equal_measures() {
        for (n, p) in [(1, f(1.0)), (2, f(2.0)), (3, ExtParam::Infinite)] {
            let v = quad(n, 1.0);
            let m = radial_map(&v, &v, p, p, n, &default_grid(p)).unwrap();
            for i in 0..m.len() {
                assert!((m.t[i] - m.r_grid[i]).abs() <= 1e-10 * m.r_grid[i], "n = {n}");
                assert!((m.t_prime[i] - 1.0).abs() <= 1e-9);
            }
            assert!(m.max_abs_residual() <= 1e-12);
            let l = lipschitz_empirical(&m, ExtParam::Infinite).unwrap();
            assert!((l.value - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_scaling_doubles() {
        let v = quad(1, 1.0);
        let w = quad(1, 0.25);
        let inf = ExtParam::Infinite;
        let m = radial_map(&v, &w, inf, inf, 1, &default_grid(inf)).unwrap();
        for i in 0..m.len() {
            assert!((m.t[i] / m.r_grid[i] - 2.0).abs() < 1e-7 * 2.0, "r = {}", m.r_grid[i]);
            assert!((m.t_prime[i] - 2.0).abs() < 1e-7 * 2.0);
        }
        let l = lipschitz_empirical(&m, ExtParam::Finite(3.0)).unwrap();
        assert!((l.value - 2.0).abs() < 1e-7);
    }

    #[test]
    fn gaussian_scaling_in_higher_dimension_is_isotropic() {
        let v = quad(3, 1.0);
        let w = quad(3, 0.25);
        let inf = ExtParam::Infinite;
        let m = radial_map(&v, &w, inf, inf, 3, &default_grid(inf)).unwrap();
        for i in 0..m.len() {
            assert!((m.t[i] / m.r_grid[i] - 2.0).abs() < 1e-7 * 2.0, "r = {}", m.r_grid[i]);
        }
    }

    #[test]
    fn counterexample_slope() {
        let v = quad(1, 1.0);
        let grid = log_grid(1e-2, 1e4, 600).unwrap();
        let m = radial_map(&v, &v, f(2.0), f(1.0), 1, &grid).unwrap();
        let fit = slope_fit(&m, 1e2, 1e4).unwrap();
        assert!((fit.slope - 3.0).abs() < 0.05, "{fit:?}");
        assert!(m.is_strictly_increasing());
        assert!(m.max_abs_residual() <= 1e-7);
    }

    #[test]
    fn slope_fit_ignores_scaling() {
        let grid = log_grid(1.0, 100.0, 50).unwrap();
        let map = |c: f64| RadialMap {
            n: 1,
            domain: MapDomain::Radial,
            r_grid: grid.clone(),
            t: grid.iter().map(|r| c * r.powf(1.7)).collect(),
            t_prime: grid.iter().map(|r| 1.7 * c * r.powf(0.7)).collect(),
            residuals: vec![0.0; grid.len()],
        };
        let a = slope_fit(&map(1.0), 1.0, 100.0).unwrap();
        let b = slope_fit(&map(40.0), 1.0, 100.0).unwrap();
        assert!((a.slope - 1.7).abs() < 1e-12 && (b.slope - 1.7).abs() < 1e-12);
        assert!((a.r2 - 1.0).abs() < 1e-12);
        assert!(matches!(slope_fit(&map(1.0), 200.0, 300.0), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn lipschitz_window() {
        let v = quad(1, 1.0);
        let m = radial_map(&v, &v, f(1.0), f(1.0), 1, &[0.5, 1.0, 2.0]).unwrap();
        assert!(matches!(lipschitz_empirical(&m, f(0.1)), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn tangential_eigenvalue_dominates_for_concave_maps() {
        // A heavier-tailed source pushed to a Gaussian: t is concave, t/r > t'.
        let v = quad(2, 1.0);
        let m = radial_map(&v, &v, f(2.0), ExtParam::Infinite, 2, &default_grid(f(2.0))).unwrap();
        let l = lipschitz_empirical(&m, ExtParam::Infinite).unwrap();
        assert_eq!(l.component, Component::Tangential);
    }

    #[test]
    fn csv_columns() {
        let v = quad(1, 1.0);
        let m = radial_map(&v, &v, f(1.0), f(1.0), 1, &[0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,t,t_prime,residual"));
        assert!(lines.next().unwrap().starts_with("5.0000000000000000e-1,"));
    }

    #[test]
    fn second_variation_on_identity_balances() {
        let v = quad(1, 1.0);
        let s = TransportSolver::new(&v, &v, f(1.0), f(1.0), 1).unwrap();
        let m = s.map(&default_grid(f(1.0))).unwrap();
        let rep = second_variation_check(&s, &m, f(1.0)).unwrap();
        assert!(rep.pass(), "{rep:#?}");
        assert!((rep.lambda - 1.0).abs() < 1e-8);
        assert_eq!(rep.slacks.len(), 4);
        assert!(rep.slacks[0].slack.abs() < 1e-6);
    }

    #[test]
    fn second_variation_caffarelli_is_sharp() {
        let v = quad(1, 1.0);
        let w = quad(1, 0.25);
        let inf = ExtParam::Infinite;
        let s = TransportSolver::new(&v, &w, inf, inf, 1).unwrap();
        let m = s.map(&default_grid(inf)).unwrap();
        let rep = second_variation_check(&s, &m, f(5.0)).unwrap();
        assert!(rep.pass(), "{rep:#?}");
        assert!(rep.slacks.iter().all(|s| s.slack.abs() < 1e-6));
    }

    #[test]
    fn second_variation_skipped_for_counterexample() {
        let v = quad(1, 1.0);
        let s = TransportSolver::new(&v, &v, f(2.0), f(1.0), 1).unwrap();
        let m = s.map(&default_grid(f(2.0))).unwrap();
        let rep = second_variation_check(&s, &m, f(10.0)).unwrap();
        assert!(rep.skipped.is_some() && rep.slacks.is_empty());
    }

    #[test]
    fn tabulated_profile_matches_quadratic() {
        let r: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.02).collect();
        let u: Vec<f64> = r.iter().map(|x| x * x).collect();
        let du: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let t = RadialTable::new(r, u, Some(du)).unwrap();
        let tab = PotentialSpec::tabulated(1, t, HessBound::Bounded(2.0), HessBound::Bounded(2.0)).unwrap();
        let grid = log_grid(0.01, 10.0, 50).unwrap();
        let a = radial_map(&tab, &quad(1, 0.5), f(3.0), f(3.0), 1, &grid).unwrap();
        let b = radial_map(&quad(1, 1.0), &quad(1, 0.5), f(3.0), f(3.0), 1, &grid).unwrap();
        for i in 0..grid.len() {
            assert!((a.t[i] - b.t[i]).abs() < 1e-8 * b.t[i]);
        }
    }

    #[test]
    fn one_dim_potentials_are_rejected() {
        let s = PotentialSpec::shifted_quadratic(1.0, 1.0).unwrap();
        assert!(TransportSolver::new(&s, &s, f(1.0), f(1.0), 1).is_err());
    }
}

//! Potentials `U` entering the densities `Z⁻¹ exp(−Θ_p(U))`: radial profiles
//! (quadratic or tabulated) and general one-dimensional potentials, their
//! declared Hessian bounds, and normalization constants.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::extparam::ExtParam;
use crate::interp::Pchip;
use crate::mass::DensityMass;

/// A declared a.e. bound on Hessian eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HessBound {
    Bounded(f64),
    Unbounded,
}

impl Serialize for HessBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HessBound::Bounded(v) => s.serialize_f64(*v),
            HessBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl HessBound {
    pub fn value(self) -> Option<f64> {
        match self {
            HessBound::Bounded(v) => Some(v),
            HessBound::Unbounded => None,
        }
    }
}

/// Value and first two derivatives of a scalar profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// A radial profile `u(r)` sampled on `0 = r_0 < r_1 < … < r_N`.
///
/// `u'` is interpolated by a monotone cubic. `u` uses cubic Hermite
/// interpolation with the tabulated `u'` as slopes when a derivative column
/// is given, and a monotone cubic otherwise. Past `r_N` the profile continues as its quadratic Taylor polynomial at `r_N`.
#[derive(Clone)]
pub struct RadialTable {
    u: Pchip,
    du: Pchip,
    source: Option<PathBuf>,
}

impl fmt::Debug for RadialTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialTable")
            .field("knots", &self.u.knots().len())
            .field("r_max", &self.r_max())
            .field("source", &self.source)
            .finish()
    }
}

impl PartialEq for RadialTable {
    fn eq(&self, other: &Self) -> bool {
        self.u == other.u && self.du == other.du
    }
}

impl RadialTable {
    pub fn new(r: Vec<f64>, u: Vec<f64>, du: Option<Vec<f64>>) -> Result<Self> {
        if r.first().copied() != Some(0.0) {
            return Err(Error::InvalidInput("tabulated radial profile must start at r = 0".into()));
        }
        let (u, du_samples) = match du {
            Some(d) => (Pchip::with_slopes(r.clone(), u, d.clone())?, d),
            None => {
                let u = Pchip::new(r.clone(), u)?;
                let d = u.slopes().to_vec();
                (u, d)
            }
        };
        let du = Pchip::new(r, du_samples)?;
        Ok(RadialTable { u, du, source: None })
    }

    /// Reads a CSV with a header row and columns `r, u[, u']`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let io_err = |message: String| Error::Io { path: path.to_path_buf(), message };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| io_err(e.to_string()))?;
        let columns = reader.headers().map_err(|e| io_err(e.to_string()))?.len();
        if !(columns == 2 || columns == 3) {
            return Err(io_err(format!("expected 2 or 3 columns (r, u[, u']), found {columns}")));
        }
        let (mut r, mut u, mut du) = (Vec::new(), Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| io_err(e.to_string()))?;
            let parse = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| io_err(format!("row {}: column {}: {e}", line + 2, i + 1)))
            };
            r.push(parse(0)?);
            u.push(parse(1)?);
            if columns == 3 {
                du.push(parse(2)?);
            }
        }
        let mut table = RadialTable::new(r, u, (columns == 3).then_some(du)).map_err(|e| io_err(e.to_string()))?;
        table.source = Some(path.to_path_buf());
        Ok(table)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn r_max(&self) -> f64 {
        *self.u.knots().last().expect("at least two knots")
    }

    pub fn knots(&self) -> &[f64] {
        self.u.knots()
    }

    pub fn eval(&self, r: f64) -> Jet {
        let r = r.abs();
        let r_max = self.r_max();
        if r <= r_max {
            let (value, _) = self.u.eval(r);
            let (first, second) = self.du.eval(r);
            Jet { value, first, second }
        } else {
            let (u_end, _) = self.u.eval(r_max);
            let (du_end, ddu_end) = self.du.eval(r_max);
            let h = r - r_max;
            Jet { value: u_end + du_end * h + 0.5 * ddu_end * h * h, first: du_end + ddu_end * h, second: ddu_end }
        }
    }
}

/// A general potential on the line.
#[derive(Clone)]
pub enum OneDimPotential {
    /// `a·(x − shift)²`.
    ShiftedQuadratic { a: f64, shift: f64 },
    /// Caller-supplied `x ↦ (U, U', U'')`.
    Custom { label: String, f: Arc<dyn Fn(f64) -> Jet + Send + Sync> },
}

impl fmt::Debug for OneDimPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OneDimPotential::ShiftedQuadratic { a, shift } => {
                f.debug_struct("ShiftedQuadratic").field("a", a).field("shift", shift).finish()
            }
            OneDimPotential::Custom { label, .. } => f.debug_struct("Custom").field("label", label).finish(),
        }
    }
}

impl PartialEq for OneDimPotential {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (OneDimPotential::ShiftedQuadratic { a, shift }, OneDimPotential::ShiftedQuadratic { a: b, shift: s }) => {
                a == b && shift == s
            }
            (OneDimPotential::Custom { label: l1, f: f1 }, OneDimPotential::Custom { label: l2, f: f2 }) => {
                l1 == l2 && Arc::ptr_eq(f1, f2)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `U(x) = a|x|²`.
    Quadratic {
        a: f64,
    },
    RadialTabulated(Arc<RadialTable>),
    /// Only valid in dimension one.
    OneDim(OneDimPotential),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub dimension: usize,
    pub profile: Profile,
    /// Declared upper bound on the Hessian eigenvalues.
    pub hess_upper: HessBound,
    /// Declared lower bound on the Hessian eigenvalues.
    pub hess_lower: HessBound,
}

/// A point where a declared Hessian bound fails on the sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianViolation {
    pub x: f64,
    pub eigenvalue: f64,
    pub declared: f64,
    pub which: &'static str,
}

impl PotentialSpec {
    pub fn quadratic(dimension: usize, a: f64) -> Result<Self> {
        check_dimension(dimension)?;
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidInput(format!("quadratic coefficient must be positive, got {a}")));
        }
        Ok(PotentialSpec {
            dimension,
            profile: Profile::Quadratic { a },
            hess_upper: HessBound::Bounded(2.0 * a),
            hess_lower: HessBound::Bounded(2.0 * a),
        })
    }

    pub fn tabulated(
        dimension: usize,
        table: RadialTable,
        hess_upper: HessBound,
        hess_lower: HessBound,
    ) -> Result<Self> {
        check_dimension(dimension)?;
        Ok(PotentialSpec { dimension, profile: Profile::RadialTabulated(Arc::new(table)), hess_upper, hess_lower })
    }

    pub fn shifted_quadratic(a: f64, shift: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0 && shift.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "shifted quadratic needs a > 0 and a finite shift, got a = {a}, shift = {shift}"
            )));
        }
        Ok(PotentialSpec {
            dimension: 1,
            profile: Profile::OneDim(OneDimPotential::ShiftedQuadratic { a, shift }),
            hess_upper: HessBound::Bounded(2.0 * a),
            hess_lower: HessBound::Bounded(2.0 * a),
        })
    }

    pub fn one_dim_custom(
        label: impl Into<String>,
        f: impl Fn(f64) -> Jet + Send + Sync + 'static,
        hess_upper: HessBound,
        hess_lower: HessBound,
    ) -> Self {
        PotentialSpec {
            dimension: 1,
            profile: Profile::OneDim(OneDimPotential::Custom { label: label.into(), f: Arc::new(f) }),
            hess_upper,
            hess_lower,
        }
    }

    pub fn with_hessian_bounds(mut self, upper: HessBound, lower: HessBound) -> Self {
        self.hess_upper = upper;
        self.hess_lower = lower;
        self
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.profile, Profile::OneDim(_))
    }

    /// Evaluates the radial profile `u(r)`; fails for one-dimensional
    /// potentials, which have no radial representation.
    pub fn eval_radial(&self, r: f64) -> Result<Jet> {
        match &self.profile {
            Profile::Quadratic { a } => Ok(Jet { value: a * r * r, first: 2.0 * a * r, second: 2.0 * a }),
            Profile::RadialTabulated(table) => Ok(table.eval(r)),
            Profile::OneDim(_) => Err(Error::InvalidInput("one-dimensional potential has no radial profile".into())),
        }
    }

    /// Evaluates `U` at a signed point of the line (dimension one, or the
    /// radial profile read along a ray).
    pub fn eval_signed(&self, x: f64) -> Jet {
        match &self.profile {
            Profile::Quadratic { a } => Jet { value: a * x * x, first: 2.0 * a * x, second: 2.0 * a },
            Profile::RadialTabulated(table) => {
                let j = table.eval(x.abs());
                Jet { first: j.first * x.signum(), ..j }
            }
            Profile::OneDim(OneDimPotential::ShiftedQuadratic { a, shift }) => {
                let y = x - shift;
                Jet { value: a * y * y, first: 2.0 * a * y, second: 2.0 * a }
            }
            Profile::OneDim(OneDimPotential::Custom { f, .. }) => f(x),
        }
    }

    /// `U` value only, at a point of norm/position `x`.
    #[inline]
    pub(crate) fn value_at(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Quadratic { a } => a * x * x,
            _ => self.eval_signed(x).value,
        }
    }

    pub fn describe(&self) -> String {
        match &self.profile {
            Profile::Quadratic { a } => format!("quadratic(a={a})"),
            Profile::RadialTabulated(t) => match t.source() {
                Some(p) => format!("tabulated({})", p.display()),
                None => format!("tabulated({} knots)", t.knots().len()),
            },
            Profile::OneDim(OneDimPotential::ShiftedQuadratic { a, shift }) => {
                format!("shifted_quadratic(a={a}, shift={shift})")
            }
            Profile::OneDim(OneDimPotential::Custom { label, .. }) => format!("custom({label})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dimension(self.dimension)?;
        if matches!(self.profile, Profile::OneDim(_)) && self.dimension != 1 {
            return Err(Error::InvalidInput(format!("one-dimensional potential used in dimension {}", self.dimension)));
        }
        for (name, b) in [("hess_upper", self.hess_upper), ("hess_lower", self.hess_lower)] {
            if let HessBound::Bounded(v) = b {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("{name} must be finite, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Compares the declared Hessian bounds with the Hessian eigenvalues on a
    /// log-spaced grid over `[0, r_max]`. Off-grid validity stays the
    /// caller's responsibility.
    pub fn hessian_spot_check(&self, r_max: f64, points: usize) -> Vec<HessianViolation> {
        let mut out = Vec::new();
        let upper = self.hess_upper.value();
        let lower = self.hess_lower.value();
        let check = |x: f64, eig: f64, out: &mut Vec<HessianViolation>| {
            let slack = 1e-9 * eig.abs().max(1.0);
            if let Some(u) = upper {
                if eig > u + slack {
                    out.push(HessianViolation { x, eigenvalue: eig, declared: u, which: "upper" });
                }
            }
            if let Some(l) = lower {
                if eig < l - slack {
                    out.push(HessianViolation { x, eigenvalue: eig, declared: l, which: "lower" });
                }
            }
        };
        let grid = spot_grid(r_max, points);
        if self.is_radial() {
            for &r in &grid {
                let j = self.eval_signed(r);
                check(r, j.second, &mut out);
                if self.dimension > 1 && r > 0.0 {
                    check(r, j.first / r, &mut out);
                }
            }
        } else {
            for &r in &grid {
                for x in [r, -r] {
                    check(x, self.eval_signed(x).second, &mut out);
                }
            }
        }
        out
    }
}

fn spot_grid(r_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let lo = (r_max * 1e-6).max(1e-12);
    let mut g = vec![0.0];
    g.extend((0..points).map(|i| lo * (r_max / lo).powf(i as f64 / (points - 1) as f64)));
    g
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidInput("dimension must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Value of a normalization constant with its quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormConstant {
    pub z: f64,
    pub abs_error: f64,
}

/// `Z_{U,p} = ∫ exp(−Θ_p(U(x))) dx` over `ℝⁿ`.
pub fn normalization(u: &PotentialSpec, p: ExtParam) -> Result<NormConstant> {
    let mass = DensityMass::new(u, p)?;
    Ok(mass.normalization())
}

/// `ω_n`, the volume of the unit ball in `ℝⁿ`.
pub fn unit_ball_volume(n: usize) -> f64 {
    ln_unit_ball_volume(n).exp()
}

pub fn ln_unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// `log I_p` where `I_p = ∫_{ℝⁿ} (1 + |z|²/p)^{−p} dz = (pπ)^{n/2} Γ(p − n/2)/Γ(p)`.
pub fn ln_reference_integral(n: usize, p: f64) -> Result<f64> {
    if !(p.is_finite() && p >= n as f64) || n == 0 {
        return Err(Error::Domain(format!("reference integral needs p >= n >= 1, got n = {n}, p = {p}")));
    }
    let h = n as f64 / 2.0;
    Ok(h * (p * PI).ln() + ln_gamma(p - h) - ln_gamma(p))
}

pub fn reference_integral(n: usize, p: f64) -> Result<f64> {
    ln_reference_integral(n, p).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn ball_volumes() {
        assert!(rel(unit_ball_volume(1), 2.0) < 1e-14);
        assert!(rel(unit_ball_volume(2), PI) < 1e-14);
        assert!(rel(unit_ball_volume(3), 4.0 * PI / 3.0) < 1e-14);
    }

    #[test]
    fn reference_integral_closed_forms() {
        assert!(rel(reference_integral(1, 1.0).unwrap(), PI) < 1e-13);
        assert!(rel(reference_integral(2, 2.0).unwrap(), 2.0 * PI) < 1e-13);
        assert!(rel(reference_integral(1, 1e6).unwrap(), PI.sqrt()) < 1e-5);
        assert!(reference_integral(3, 2.0).is_err());
    }

    #[test]
    fn reference_integral_matches_quadrature() {
        for n in 1..=3 {
            for &p in &[n as f64, n as f64 + 0.5, 2.0 * n as f64, 7.0] {
                let z = normalization(&PotentialSpec::quadratic(n, 1.0).unwrap(), ExtParam::Finite(p)).unwrap();
                let i = reference_integral(n, p).unwrap();
                assert!(rel(z.z, i) < 1e-8, "n = {n}, p = {p}: {} vs {i}", z.z);
            }
        }
    }

    #[test]
    fn reference_integral_decreases_in_p() {
        for n in 1..=3usize {
            let nf = n as f64;
            let mut ps = vec![nf, nf + 1.0, 2.0 * nf, 10.0 * nf, 100.0 * nf];
            ps.dedup();
            let vals: Vec<f64> = ps.iter().map(|&p| reference_integral(n, p).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        }
    }

    #[test]
    fn reference_integral_two_sided_bounds() {
        for &n in &[1usize, 2, 3, 5] {
            let nf = n as f64;
            let base = unit_ball_volume(n) * nf.powf(nf / 2.0);
            assert!(reference_integral(n, nf).unwrap() <= 2.0 * base);
            let mut p = nf;
            while p <= 200.0 {
                assert!(reference_integral(n, p).unwrap() >= E.powf(-nf) * base);
                p += 0.5;
            }
        }
    }

    #[test]
    fn normalization_examples() {
        let q1 = PotentialSpec::quadratic(1, 1.0).unwrap();
        assert!(rel(normalization(&q1, ExtParam::Finite(1.0)).unwrap().z, PI) < 1e-9);
        assert!(rel(normalization(&q1, ExtParam::Infinite).unwrap().z, PI.sqrt()) < 1e-9);
        let q2 = PotentialSpec::quadratic(2, 1.0).unwrap();
        assert!(rel(normalization(&q2, ExtParam::Finite(2.0)).unwrap().z, 2.0 * PI) < 1e-9);
    }

    #[test]
    fn normalization_of_shifted_potential_is_translation_invariant() {
        let s = PotentialSpec::shifted_quadratic(1.0, 3.0).unwrap();
        let z = normalization(&s, ExtParam::Finite(1.0)).unwrap();
        assert!(rel(z.z, PI) < 1e-9);
    }

    #[test]
    fn divergent_normalization_is_reported() {
        // u(r) = log(1 + r) grows too slowly: exp(−u) ~ 1/r is not integrable.
        let f = |x: f64| Jet {
            value: (1.0 + x.abs()).ln(),
            first: x.signum() / (1.0 + x.abs()),
            second: -1.0 / (1.0 + x.abs()).powi(2),
        };
        let u = PotentialSpec::one_dim_custom("log", f, HessBound::Bounded(0.0), HessBound::Unbounded);
        assert!(matches!(normalization(&u, ExtParam::Infinite), Err(Error::DivergentIntegral(_))));
    }

    #[test]
    fn domain_violation_is_reported() {
        let f = |x: f64| Jet { value: x * x - 5.0, first: 2.0 * x, second: 2.0 };
        let u = PotentialSpec::one_dim_custom("dip", f, HessBound::Bounded(2.0), HessBound::Bounded(2.0));
        assert!(matches!(normalization(&u, ExtParam::Finite(2.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn tabulated_quadratic_matches_closed_form() {
        let r: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let u: Vec<f64> = r.iter().map(|x| x * x).collect();
        let du: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let t = RadialTable::new(r, u, Some(du)).unwrap();
        let spec = PotentialSpec::tabulated(1, t, HessBound::Bounded(2.0), HessBound::Bounded(2.0)).unwrap();
        for &x in &[0.0, 0.37, 3.3, 19.99, 25.0] {
            let j = spec.eval_radial(x).unwrap();
            assert!((j.value - x * x).abs() < 1e-6 * (1.0 + x * x), "{x}: {}", j.value);
            assert!((j.first - 2.0 * x).abs() < 1e-6 * (1.0 + x));
        }
        assert!(spec.hessian_spot_check(20.0, 200).is_empty());
        let z = normalization(&spec, ExtParam::Finite(1.0)).unwrap();
        assert!(rel(z.z, PI) < 1e-6);
    }

    #[test]
    fn tabulated_must_start_at_origin() {
        assert!(RadialTable::new(vec![0.5, 1.0], vec![0.0, 1.0], None).is_err());
    }

    #[test]
    fn spot_check_flags_wrong_declarations() {
        let q = PotentialSpec::quadratic(2, 1.0)
            .unwrap()
            .with_hessian_bounds(HessBound::Bounded(1.0), HessBound::Bounded(3.0));
        let v = q.hessian_spot_check(5.0, 50);
        assert!(v.iter().any(|h| h.which == "upper"));
        assert!(v.iter().any(|h| h.which == "lower"));
    }
}

//! Closed-form constants and Hessian bounds for the Brenier map from
//! `ρ_{V,d}` to `ρ_{W,D}`.
//!
//! Every bound has the shape `√(A + B) + √B`. The regimes are
//!
//! * `global`: uniform in `n, d, D`, built from the `p = n` aggregates;
//! * `finite_global_sharp`: the finite-parameter global estimate with `K`, `M`;
//! * `local`: on `B_R` with the Fathi radius and growth factor;
//! * `endpoint_poly_log`: `D = ∞`, `d < ∞` on `B_R`;
//! * `caffarelli`: `d = D = ∞`, giving `√(C_V⁽²⁾/c_W⁽²⁾)`.

use std::collections::BTreeMap;
use std::f64::consts::{E, LN_10};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::constants::{aggregates, first_order, zeroth_order, Role};
use crate::error::{Error, Result};
use crate::extparam::{ExtParam, Radius};
use crate::mass::DensityMass;
use crate::potentials::{ln_reference_integral, ln_unit_ball_volume, PotentialSpec};

/// A nonnegative extended real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PlusInfinity,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PlusInfinity => None,
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a.min(b)),
            (ExtReal::PlusInfinity, x) | (x, ExtReal::PlusInfinity) => x,
        }
    }

    /// Product with a positive real; `+∞` absorbs.
    pub fn scale(self, c: f64) -> ExtReal {
        assert!(c > 0.0, "ExtReal scaling needs a positive factor, got {c}");
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(v * c),
            ExtReal::PlusInfinity => ExtReal::PlusInfinity,
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::PlusInfinity) => Some(Less),
            (ExtReal::PlusInfinity, ExtReal::Finite(_)) => Some(Greater),
            (ExtReal::PlusInfinity, ExtReal::PlusInfinity) => Some(Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PlusInfinity => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::PlusInfinity => s.serialize_str("inf"),
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal::Finite(v)
    }
}

/// `√(A + B) + √B`.
pub fn combine(a: f64, b: ExtReal) -> ExtReal {
    match b {
        ExtReal::Finite(b) => ExtReal::Finite((a + b).sqrt() + b.sqrt()),
        ExtReal::PlusInfinity => ExtReal::PlusInfinity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Global,
    Local,
    EndpointPolyLog,
    Caffarelli,
    FiniteGlobalSharp,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Global => "global",
            Regime::Local => "local",
            Regime::EndpointPolyLog => "endpoint_poly_log",
            Regime::Caffarelli => "caffarelli",
            Regime::FiniteGlobalSharp => "finite_global_sharp",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Regime::Global, Regime::Local, Regime::EndpointPolyLog, Regime::Caffarelli, Regime::FiniteGlobalSharp]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime '{s}'")))
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    #[serde(rename = "V")]
    pub v: String,
    #[serde(rename = "W")]
    pub w: String,
    pub n: usize,
    pub d: ExtParam,
    #[serde(rename = "D")]
    pub big_d: ExtParam,
    #[serde(rename = "R")]
    pub radius: Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub regime: Regime,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: ExtReal,
    pub bound: ExtReal,
    /// Every intermediate constant, keyed by its symbol name.
    pub constants: BTreeMap<String, ExtReal>,
    pub scenario: BoundInputs,
}

impl BoundReport {
    fn new(regime: Regime, a: f64, b: ExtReal, constants: BTreeMap<String, ExtReal>, scenario: BoundInputs) -> Self {
        BoundReport { regime, a, b, bound: combine(a, b), constants, scenario }
    }
}

/// `Γ_{d,D}`.
pub fn gamma(d: ExtParam, big_d: ExtParam) -> Result<ExtReal> {
    check_order(d, big_d)?;
    Ok(match (d, big_d) {
        (_, ExtParam::Infinite) => ExtReal::Finite(0.0),
        (ExtParam::Finite(d), ExtParam::Finite(dd)) if d == dd => ExtReal::PlusInfinity,
        (ExtParam::Finite(d), ExtParam::Finite(dd)) => ExtReal::Finite(((2.0 * d - dd) / (dd - d)).max(0.0)),
        (ExtParam::Infinite, ExtParam::Finite(_)) => unreachable!("order checked above"),
    })
}

fn check_order(d: ExtParam, big_d: ExtParam) -> Result<()> {
    if d > big_d {
        Err(Error::InvalidOrder { d: d.to_string(), big_d: big_d.to_string() })
    } else {
        Ok(())
    }
}

/// `Ψ_{W,D}(r)`: the normalized target mass outside `B_r`.
pub fn tail_mass(w: &PotentialSpec, big_d: ExtParam, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Ok(1.0);
    }
    Ok(DensityMass::new(w, big_d)?.log_outside(r)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthData {
    pub s: f64,
    pub m_frak: f64,
    pub fathi_radius: f64,
    pub growth_factor: f64,
}

/// `s_{d,R}`, `𝔪_{d,R}`, the Fathi radius `R_{d,D}(R)` and `G_{d,D}(R)`.
pub fn growth_data(
    v: &PotentialSpec,
    w: &PotentialSpec,
    d: f64,
    big_d: ExtParam,
    radius: f64,
    n: usize,
) -> Result<GrowthData> {
    check_dimensions(v, w, n)?;
    let dp = ExtParam::finite(d)?;
    dp.check_against_dimension(n, "d")?;
    big_d.check_against_dimension(n, "D")?;
    check_order(dp, big_d)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidInput(format!("R must be positive and finite, got {radius}")));
    }
    let s = radius.max(d.sqrt());
    let ln_z_v = DensityMass::new(v, dp)?.ln_z();
    let (_, c0_big) = zeroth_order(v, dp, ExtParam::Finite(10.0 * s)).map_err(Error::void_if_infinite)?;
    let nf = n as f64;
    let ln_m =
        ln_unit_ball_volume(n) + nf * (3.0 * s).ln() - ln_z_v - d * c0_big.ln() - d * (100.0 * s * s / d).ln_1p();
    let m_frak = ln_m.exp();
    if m_frak > 1.0 {
        return Err(Error::MFrakOverflow(m_frak));
    }
    let target = DensityMass::new(w, big_d)?;
    let fathi_radius = 3.0 * invert_outside_mass(&target, ln_m)?;
    let growth_factor = match big_d {
        ExtParam::Finite(dd) => 1.0 + fathi_radius * fathi_radius / dd,
        ExtParam::Infinite => 1.0,
    };
    Ok(GrowthData { s, m_frak, fathi_radius, growth_factor })
}

/// `inf{r ≥ 0 : log Ψ(r) ≤ ln_m}` by doubling from `r = 1` and bisection.
fn invert_outside_mass(mass: &DensityMass, ln_m: f64) -> Result<f64> {
    if ln_m >= 0.0 {
        return Ok(0.0);
    }
    let above = |r: f64| -> Result<bool> { Ok(mass.log_outside(r)? > ln_m) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while above(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::BracketFailure(format!("outside mass never drops below exp({ln_m})")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if above(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalFactors {
    pub lambda: f64,
    pub xi: f64,
    pub growth: Option<GrowthData>,
    /// `C⁽⁰⁾_{W,D}` and `C⁽¹⁾_{W,D}` on the ball of the Fathi radius.
    pub c0_big_w: Option<f64>,
    pub c1_w: Option<f64>,
    pub gamma: ExtReal,
}

/// `Λ_{d,D}(R)` and `Ξ_{d,D}(R)`.
pub fn local_factors(
    v: &PotentialSpec,
    w: &PotentialSpec,
    d: f64,
    big_d: ExtParam,
    radius: f64,
    n: usize,
) -> Result<LocalFactors> {
    let g = gamma(ExtParam::finite(d)?, big_d)?;
    let dd = match big_d {
        ExtParam::Infinite => {
            check_dimensions(v, w, n)?;
            return Ok(LocalFactors { lambda: 1.0, xi: 0.0, growth: None, c0_big_w: None, c1_w: None, gamma: g });
        }
        ExtParam::Finite(dd) => dd,
    };
    let growth = growth_data(v, w, d, big_d, radius, n)?;
    let ball = ExtParam::Finite(growth.fathi_radius);
    let (_, c0_big_w) = zeroth_order(w, big_d, ball).map_err(Error::void_if_infinite)?;
    let c1_w = first_order(w, big_d, ball).map_err(Error::void_if_infinite)?;
    let c_w2 = hess_lower(w)?;
    let xi = ExtReal::Finite(dd / d * c1_w / c0_big_w).min(g.scale(c_w2));
    Ok(LocalFactors {
        lambda: c0_big_w * growth.growth_factor,
        xi: xi.value().expect("first argument is finite"),
        growth: Some(growth),
        c0_big_w: Some(c0_big_w),
        c1_w: Some(c1_w),
        gamma: g,
    })
}

fn check_dimensions(v: &PotentialSpec, w: &PotentialSpec, n: usize) -> Result<()> {
    if v.dimension != n || w.dimension != n {
        return Err(Error::InvalidInput(format!(
            "potential dimensions ({}, {}) do not match n = {n}",
            v.dimension, w.dimension
        )));
    }
    Ok(())
}

fn check_parameters(v: &PotentialSpec, w: &PotentialSpec, n: usize, d: ExtParam, big_d: ExtParam) -> Result<()> {
    check_dimensions(v, w, n)?;
    d.check_against_dimension(n, "d")?;
    big_d.check_against_dimension(n, "D")?;
    check_order(d, big_d)
}

/// Declared `C_V⁽²⁾`; must be finite and positive.
fn hess_upper(v: &PotentialSpec) -> Result<f64> {
    match v.hess_upper.value() {
        Some(c) if c > 0.0 => Ok(c),
        Some(c) => Err(Error::VoidBound(format!("C_V2 = {c} must be positive"))),
        None => Err(Error::VoidBound("C_V2 is unbounded".into())),
    }
}

/// Declared `c_W⁽²⁾`; must be positive.
fn hess_lower(w: &PotentialSpec) -> Result<f64> {
    match w.hess_lower.value() {
        Some(c) if c > 0.0 => Ok(c),
        Some(c) => Err(Error::VoidBound(format!("c_W2 = {c} must be positive"))),
        None => Err(Error::VoidBound("c_W2 is not declared".into())),
    }
}

fn inputs(v: &PotentialSpec, w: &PotentialSpec, n: usize, d: ExtParam, big_d: ExtParam, radius: Radius) -> BoundInputs {
    BoundInputs { v: v.describe(), w: w.describe(), n, d, big_d, radius }
}

struct Provenance(BTreeMap<String, ExtReal>);

impl Provenance {
    fn new() -> Self {
        Provenance(BTreeMap::new())
    }

    fn put(&mut self, key: &str, value: impl Into<ExtReal>) {
        self.0.insert(key.to_string(), value.into());
    }
}

/// Localized estimate on `B_R`, including the `D = ∞` and `d = D = ∞` endpoints.
pub fn local_bound(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d: ExtParam,
    big_d: ExtParam,
    radius: f64,
) -> Result<BoundReport> {
    check_parameters(v, w, n, d, big_d)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidInput(format!("R must be positive and finite, got {radius}")));
    }
    let c_v2 = hess_upper(v)?;
    let c_w2 = hess_lower(w)?;
    let scenario = inputs(v, w, n, d, big_d, ExtParam::Finite(radius));
    let mut k = Provenance::new();
    k.put("C_V2", c_v2);
    k.put("c_W2", c_w2);
    let df = match d {
        ExtParam::Infinite => {
            let a = c_v2 / c_w2;
            k.put("Lambda", 1.0);
            k.put("Xi", 0.0);
            k.put("c0_V(R)", 1.0);
            return Ok(BoundReport::new(Regime::Caffarelli, a, 0.0.into(), k.0, scenario));
        }
        ExtParam::Finite(df) => df,
    };
    let (c0_v, _) = zeroth_order(v, d, ExtParam::Finite(radius)).map_err(Error::void_if_infinite)?;
    k.put("c0_V(R)", c0_v);
    let f = local_factors(v, w, df, big_d, radius, n)?;
    k.put("Lambda", f.lambda);
    k.put("Xi", f.xi);
    k.put("Gamma", f.gamma);
    if let Some(g) = f.growth {
        k.put("s", g.s);
        k.put("m_frak", g.m_frak);
        k.put("R_fathi", g.fathi_radius);
        k.put("G", g.growth_factor);
    }
    if let Some(c) = f.c0_big_w {
        k.put("C0_W(R_fathi)", c);
    }
    if let Some(c) = f.c1_w {
        k.put("C1_W(R_fathi)", c);
    }
    let a = c_v2 * f.lambda / (c_w2 * c0_v);
    let b = if f.xi > 0.0 {
        let c1_v = first_order(v, d, ExtParam::Infinite).map_err(Error::void_if_infinite)?;
        k.put("C1_V", c1_v);
        4.0 * c1_v * f.lambda * f.xi / (c_w2 * c_w2 * c0_v * c0_v)
    } else {
        0.0
    };
    let regime = if big_d.is_infinite() { Regime::EndpointPolyLog } else { Regime::Local };
    Ok(BoundReport::new(regime, a, b.into(), k.0, scenario))
}

/// Dimension-free global estimate.
pub fn global_bound(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d: ExtParam,
    big_d: ExtParam,
) -> Result<BoundReport> {
    check_parameters(v, w, n, d, big_d)?;
    let c_v2 = hess_upper(v)?;
    let c_w2 = hess_lower(w)?;
    let av = aggregates(v, n, Role::Source).map_err(Error::void_if_infinite)?;
    let aw = aggregates(w, n, Role::Target).map_err(Error::void_if_infinite)?;
    let m_glob = 1e6 * (av.q * aw.q).powi(2);
    let a = c_v2 * aw.e_frak * m_glob / (c_w2 * av.c_frak);
    let b = 8.0 * av.l_frak * aw.l_frak * m_glob / (c_w2 * c_w2 * av.c_frak * av.c_frak);
    let mut k = Provenance::new();
    k.put("C_V2", c_v2);
    k.put("c_W2", c_w2);
    k.put("q_V", av.q);
    k.put("q_W", aw.q);
    k.put("c_frak_V", av.c_frak);
    k.put("C_frak_W", aw.e_frak);
    k.put("L_V", av.l_frak);
    k.put("L_W", aw.l_frak);
    k.put("M_glob", m_glob);
    let scenario = inputs(v, w, n, d, big_d, ExtParam::Infinite);
    Ok(BoundReport::new(Regime::Global, a, b.into(), k.0, scenario))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

/// `log` of the bracket inside `K_{d,D,n}`, given the two zeroth-order ratios.
fn ln_k_bracket(n: usize, d: f64, big_d: f64, ratio_v: f64, ratio_w: f64) -> Result<f64> {
    let nf = n as f64;
    Ok(d * ratio_v.ln() + big_d * ratio_w.ln() + d * 1.25f64.ln() + 2.0 * d * LN_10 - nf * 3f64.ln()
        + big_d * (big_d / d).ln()
        + ln_reference_integral(n, d)?
        - ln_reference_integral(n, big_d)?)
}

fn growth_constants_from_ratios(n: usize, d: f64, big_d: f64, ratio_v: f64, ratio_w: f64) -> Result<GrowthConstants> {
    let ln_k = 3f64.ln() + ln_k_bracket(n, d, big_d, ratio_v, ratio_w)? / (2.0 * big_d - n as f64);
    let k = ln_k.exp();
    Ok(GrowthConstants { k, m: d / big_d * k * k })
}

fn finite_order(n: usize, d: f64, big_d: f64) -> Result<()> {
    ExtParam::finite(d)?.check_against_dimension(n, "d")?;
    ExtParam::finite(big_d)?.check_against_dimension(n, "D")?;
    check_order(ExtParam::Finite(d), ExtParam::Finite(big_d))
}

/// `K_{d,D,n}` and `M_{d,D,n}`, in log space.
pub fn finite_growth_constants(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d: f64,
    big_d: f64,
) -> Result<GrowthConstants> {
    check_dimensions(v, w, n)?;
    finite_order(n, d, big_d)?;
    let (c0_v, c0_big_v) = zeroth_order(v, ExtParam::Finite(d), ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    let (c0_w, c0_big_w) =
        zeroth_order(w, ExtParam::Finite(big_d), ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    growth_constants_from_ratios(n, d, big_d, c0_big_v / c0_v, c0_big_w / c0_w)
}

/// Finite-parameter global estimate with the growth constant `M_{d,D,n}`.
pub fn finite_global_sharp_bound(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d: f64,
    big_d: f64,
) -> Result<BoundReport> {
    check_dimensions(v, w, n)?;
    finite_order(n, d, big_d)?;
    let c_v2 = hess_upper(v)?;
    let c_w2 = hess_lower(w)?;
    let (dp, ddp) = (ExtParam::Finite(d), ExtParam::Finite(big_d));
    let (c0_v, c0_big_v) = zeroth_order(v, dp, ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    let (c0_w, c0_big_w) = zeroth_order(w, ddp, ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    let c1_v = first_order(v, dp, ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    let c1_w = first_order(w, ddp, ExtParam::Infinite).map_err(Error::void_if_infinite)?;
    let gc = growth_constants_from_ratios(n, d, big_d, c0_big_v / c0_v, c0_big_w / c0_w)?;
    let g = gamma(dp, ddp)?;
    let one_m = 1.0 + gc.m;
    let a = c_v2 * c0_big_w * one_m / (c_w2 * c0_v);
    let inner = ExtReal::Finite(c1_w * big_d / d * one_m).min(g.scale(c_w2 * c0_big_w * one_m));
    let b = match inner {
        ExtReal::Finite(x) => ExtReal::Finite(4.0 * c1_v / (c_w2 * c_w2 * c0_v * c0_v) * x),
        ExtReal::PlusInfinity => unreachable!("first argument of the min is finite"),
    };
    let mut k = Provenance::new();
    k.put("C_V2", c_v2);
    k.put("c_W2", c_w2);
    k.put("c0_V", c0_v);
    k.put("C0_V", c0_big_v);
    k.put("c0_W", c0_w);
    k.put("C0_W", c0_big_w);
    k.put("C1_V", c1_v);
    k.put("C1_W", c1_w);
    k.put("K", gc.k);
    k.put("M", gc.m);
    k.put("Gamma", g);
    let scenario = inputs(v, w, n, dp, ddp, ExtParam::Infinite);
    Ok(BoundReport::new(Regime::FiniteGlobalSharp, a, b, k.0, scenario))
}

/// One inequality of the uniform-`M` chain at one triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStep {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleReport {
    pub n: usize,
    pub d: f64,
    #[serde(rename = "D")]
    pub big_d: f64,
    pub q_v: f64,
    pub q_w: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub steps: Vec<ChainStep>,
}

impl TripleReport {
    pub fn pass(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    /// Triple-independent facts: `125000e² < 924000`, the `τ` maximization,
    /// the two-sided `I_p` bounds.
    pub global_steps: Vec<ChainStep>,
    pub triples: Vec<TripleReport>,
    /// Largest `1 + M` seen; informational.
    pub max_one_plus_m: f64,
}

impl UniformityReport {
    pub fn pass(&self) -> bool {
        self.global_steps.iter().all(|s| s.pass) && self.triples.iter().all(TripleReport::pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityGrid {
    pub n_values: Vec<usize>,
    pub d_values: Vec<f64>,
    pub big_d_values: Vec<f64>,
}

impl UniformityGrid {
    /// All `(n, d, D)` with `n ≤ d ≤ D`.
    pub fn triples(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &d in &self.d_values {
                for &dd in &self.big_d_values {
                    if n as f64 <= d && d <= dd {
                        out.push((n, d, dd));
                    }
                }
            }
        }
        out
    }
}

/// Relative tolerance for steps that hold with equality at `n = d = D`.
const CHAIN_TOL: f64 = 1e-12;

fn step(name: &'static str, lhs: f64, rhs: f64) -> ChainStep {
    ChainStep { name, lhs, rhs, pass: lhs <= rhs * (1.0 + CHAIN_TOL) }
}

/// Compares logarithms and reports the exponentiated sides.
fn log_step(name: &'static str, ln_lhs: f64, ln_rhs: f64) -> ChainStep {
    ChainStep { name, lhs: ln_lhs.exp(), rhs: ln_rhs.exp(), pass: ln_lhs <= ln_rhs + CHAIN_TOL * ln_rhs.abs().max(1.0) }
}

fn tau_value(tau: f64) -> f64 {
    9f64.ln() + (2.0 * 125f64.ln() - 2.0 * tau * 3f64.ln()) / (2.0 - tau)
}

/// Checks each step of `1 + M_{d,D,n} ≤ 10⁶ 𝔮_V² 𝔮_W²` on every triple of the
/// grid. `pair(n)` supplies `(V, W)` in dimension `n`.
pub fn mglob_uniformity_check(
    grid: &UniformityGrid,
    pair: &dyn Fn(usize) -> Result<(PotentialSpec, PotentialSpec)>,
) -> Result<UniformityReport> {
    let mut global_steps = vec![step("125000e^2 < 924000", 125000.0 * E * E, 924000.0)];
    let taus: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
    let increasing = taus.windows(2).all(|w| tau_value(w[1]) >= tau_value(w[0]));
    global_steps.push(ChainStep {
        name: "tau function increasing on (0, 1]",
        lhs: if increasing { 0.0 } else { 1.0 },
        rhs: 0.0,
        pass: increasing,
    });
    let at_one = tau_value(1.0);
    global_steps.push(ChainStep {
        name: "tau function at 1 equals log 15625",
        lhs: at_one,
        rhs: 15625f64.ln(),
        pass: (at_one - 15625f64.ln()).abs() <= 1e-12,
    });

    let mut triples = Vec::new();
    let mut max_one_plus_m: f64 = 0.0;
    let mut by_n: BTreeMap<usize, (PotentialSpec, PotentialSpec, f64, f64)> = BTreeMap::new();
    for (n, d, dd) in grid.triples() {
        if let std::collections::btree_map::Entry::Vacant(slot) = by_n.entry(n) {
            let (v, w) = pair(n)?;
            let qv = aggregates(&v, n, Role::Source).map_err(Error::void_if_infinite)?.q;
            let qw = aggregates(&w, n, Role::Target).map_err(Error::void_if_infinite)?.q;
            let nf = n as f64;
            let base = ln_unit_ball_volume(n) + nf / 2.0 * nf.ln();
            global_steps.push(log_step("I_n <= 2 omega_n n^(n/2)", ln_reference_integral(n, nf)?, 2f64.ln() + base));
            slot.insert((v, w, qv, qw));
        }
        let (v, w, qv, qw) = by_n.get(&n).expect("inserted above");
        let nf = n as f64;
        let expo = 2.0 * dd - nf;
        let (c0_v, c0_big_v) =
            zeroth_order(v, ExtParam::Finite(d), ExtParam::Infinite).map_err(Error::void_if_infinite)?;
        let (c0_w, c0_big_w) =
            zeroth_order(w, ExtParam::Finite(dd), ExtParam::Infinite).map_err(Error::void_if_infinite)?;
        let (rv, rw) = (c0_big_v / c0_v, c0_big_w / c0_w);
        let gc = growth_constants_from_ratios(n, d, dd, rv, rw)?;
        let q2 = (qv * qw).powi(2);
        let ln3 = 3f64.ln();
        let ln_first = 9f64.ln() + 2.0 / expo * (d * 1.25f64.ln() + 2.0 * d * LN_10 - nf * ln3);
        let ln_middle = 9f64.ln() + 2.0 / expo * (dd * 125f64.ln() - nf * ln3);
        let ln_id = ln_reference_integral(n, d)?;
        let ln_idd = ln_reference_integral(n, dd)?;
        let base = ln_unit_ball_volume(n) + nf / 2.0 * nf.ln();
        let steps = vec![
            log_step(
                "(C0/c0)_V^(2d/(2D-n)) (C0/c0)_W^(2D/(2D-n)) <= q_V^2 q_W^2",
                2.0 * d / expo * rv.ln() + 2.0 * dd / expo * rw.ln(),
                q2.ln(),
            ),
            log_step("(d/D)(D/d)^(2D/(2D-n)) <= 2", (d / dd).ln() + 2.0 * dd / expo * (dd / d).ln(), 2f64.ln()),
            log_step("9[(5/4)^d 10^(2d) 3^(-n)]^(2/(2D-n)) <= 9[125^D 3^(-n)]^(2/(2D-n))", ln_first, ln_middle),
            log_step("9[125^D 3^(-n)]^(2/(2D-n)) <= 15625", ln_middle, 15625f64.ln()),
            log_step("I_D >= e^(-n) omega_n n^(n/2)", -nf + base, ln_idd),
            log_step("(I_d/I_D)^(2/(2D-n)) <= 4e^2", 2.0 / expo * (ln_id - ln_idd), (4.0 * E * E).ln()),
            step("M <= 125000 e^2 q_V^2 q_W^2", gc.m, 125000.0 * E * E * q2),
            step("1 + M <= 10^6 q_V^2 q_W^2", 1.0 + gc.m, 1e6 * q2),
        ];
        max_one_plus_m = max_one_plus_m.max(1.0 + gc.m);
        triples.push(TripleReport { n, d, big_d: dd, q_v: *qv, q_w: *qw, k: gc.k, m: gc.m, steps });
    }
    Ok(UniformityReport { global_steps, triples, max_one_plus_m })
}

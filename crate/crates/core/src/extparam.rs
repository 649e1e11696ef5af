//! Extended parameters `p ∈ [n, +∞]` and the transform
//! `Θ_p(t) = p·log(1 + t/p)` with the log-concave endpoint `Θ_∞(t) = t`.
//!
//! The infinite endpoint is a dedicated variant. No IEEE infinity is ever fed
//! into a formula: every endpoint convention is an explicit branch.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;

/// Smallest admissible gap `p + t` for finite `p`.
const DOMAIN_GUARD: f64 = 1e-300;

/// A parameter in `(0, +∞]`.
///
/// Also used for radii, where `Infinite` stands for the whole space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtParam {
    Finite(f64),
    Infinite,
}

/// Radii share the representation of extended parameters.
pub type Radius = ExtParam;

impl ExtParam {
    pub fn finite(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(ExtParam::Finite(value))
        } else {
            Err(Error::InvalidInput(format!("extended parameter must be a positive finite number or inf, got {value}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtParam::Infinite)
    }

    pub fn as_finite(self) -> Option<f64> {
        match self {
            ExtParam::Finite(v) => Some(v),
            ExtParam::Infinite => None,
        }
    }

    /// Checks `p ≥ n` for use as a source or target parameter.
    pub fn check_against_dimension(self, n: usize, name: &str) -> Result<()> {
        match self {
            ExtParam::Finite(p) if p < n as f64 => {
                Err(Error::InvalidInput(format!("parameter {name} = {p} must satisfy {name} >= n = {n}")))
            }
            ExtParam::Finite(p) if !(p.is_finite() && p > 0.0) => {
                Err(Error::InvalidInput(format!("parameter {name} = {p} is not a positive finite number")))
            }
            _ => Ok(()),
        }
    }
}

impl PartialOrd for ExtParam {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtParam::Finite(a), ExtParam::Finite(b)) => a.partial_cmp(b),
            (ExtParam::Finite(_), ExtParam::Infinite) => Some(Ordering::Less),
            (ExtParam::Infinite, ExtParam::Finite(_)) => Some(Ordering::Greater),
            (ExtParam::Infinite, ExtParam::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for ExtParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtParam::Finite(v) => write!(f, "{v}"),
            ExtParam::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtParam {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtParam::Finite(v) => serializer.serialize_f64(*v),
            ExtParam::Infinite => serializer.serialize_str("inf"),
        }
    }
}

struct ExtParamVisitor;

impl<'de> Visitor<'de> for ExtParamVisitor {
    type Value = ExtParam;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a positive number or the string \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ExtParam, E> {
        ExtParam::finite(v).map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ExtParam, E> {
        self.visit_f64(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ExtParam, E> {
        self.visit_f64(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ExtParam, E> {
        if v.trim().eq_ignore_ascii_case("inf") {
            Ok(ExtParam::Infinite)
        } else {
            Err(E::custom(format!("expected a number or \"inf\", got \"{v}\"")))
        }
    }
}

impl<'de> Deserialize<'de> for ExtParam {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_any(ExtParamVisitor)
    }
}

/// `Θ_p(t)` together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaEval {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Evaluates `Θ_p`, `Θ'_p`, `Θ''_p` at `t`. Requires `t > −p` for finite `p`.
pub fn theta(p: ExtParam, t: f64) -> Result<ThetaEval> {
    match p {
        ExtParam::Infinite => Ok(ThetaEval { value: t, first: 1.0, second: 0.0 }),
        ExtParam::Finite(q) => {
            if !(t + q > DOMAIN_GUARD) {
                return Err(Error::Domain(format!("potential value {t} violates U > -p with p = {q}")));
            }
            let gap = q + t;
            Ok(ThetaEval { value: q * (t / q).ln_1p(), first: q / gap, second: -q / (gap * gap) })
        }
    }
}

/// `Θ_p(t)` alone; NaN outside the domain. Used inside integrands, where the
/// domain has already been validated on a grid.
#[inline]
pub(crate) fn theta_value(p: ExtParam, t: f64) -> f64 {
    match p {
        ExtParam::Infinite => t,
        ExtParam::Finite(q) => {
            if t + q > DOMAIN_GUARD {
                q * (t / q).ln_1p()
            } else {
                f64::NAN
            }
        }
    }
}

/// `exp(−Θ_p(U(x)))` at a point with norm `x_norm` (radial or 1D potentials).
pub fn unnormalized_density(u: &PotentialSpec, p: ExtParam, x_norm: f64) -> Result<f64> {
    let value = u.eval_radial(x_norm)?.value;
    Ok((-theta(p, value)?.value).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_is_identity() {
        let th = theta(ExtParam::Infinite, 5.0).unwrap();
        assert_eq!(th, ThetaEval { value: 5.0, first: 1.0, second: 0.0 });
    }

    #[test]
    fn origin_values() {
        let th = theta(ExtParam::Finite(2.0), 0.0).unwrap();
        assert_eq!(th.value, 0.0);
        assert_eq!(th.first, 1.0);
        assert_eq!(th.second, -0.5);
    }

    #[test]
    fn p_one_t_one() {
        let th = theta(ExtParam::Finite(1.0), 1.0).unwrap();
        assert!((th.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(th.first, 0.5);
        assert_eq!(th.second, -0.25);
    }

    #[test]
    fn domain_violation() {
        assert!(matches!(theta(ExtParam::Finite(2.0), -2.0), Err(Error::Domain(_))));
        assert!(matches!(theta(ExtParam::Finite(2.0), -3.0), Err(Error::Domain(_))));
        assert!(theta(ExtParam::Finite(2.0), -1.999).is_ok());
        assert!(theta_value(ExtParam::Finite(1.0), -1.0).is_nan());
    }

    #[test]
    fn precision_near_the_pole() {
        // p·log(1 + t/p) with t/p tiny must not lose digits.
        let th = theta(ExtParam::Finite(1e6), 1e-10).unwrap();
        assert!((th.value - 1e-10).abs() < 1e-24);
    }

    #[test]
    fn ordering_is_total() {
        use ExtParam::*;
        assert!(Finite(1.0) < Finite(2.0));
        assert!(Finite(1e300) < Infinite);
        assert!(Infinite > Finite(3.0));
        assert_eq!(Infinite.partial_cmp(&Infinite), Some(Ordering::Equal));
    }

    #[test]
    fn dimension_check() {
        assert!(ExtParam::Finite(0.5).check_against_dimension(1, "d").is_err());
        assert!(ExtParam::Finite(3.0).check_against_dimension(3, "d").is_ok());
        assert!(ExtParam::Infinite.check_against_dimension(7, "D").is_ok());
    }

    #[test]
    fn theta_converges_to_identity() {
        for &t in &[0.1, 1.0, 5.0, 30.0] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=60 {
                let p = 10f64.powf(k as f64 / 10.0);
                let v = theta(ExtParam::Finite(p), t).unwrap().value;
                assert!(v >= prev - 1e-12, "not monotone at p = {p}");
                assert!((v - t).abs() <= t * t / (2.0 * p) + 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn serde_accepts_inf_spelling() {
        let p: ExtParam = serde_json::from_str("\"INF\"").unwrap();
        assert_eq!(p, ExtParam::Infinite);
        let p: ExtParam = serde_json::from_str("3").unwrap();
        assert_eq!(p, ExtParam::Finite(3.0));
        assert!(serde_json::from_str::<ExtParam>("\"infinity\"").is_err());
        assert!(serde_json::from_str::<ExtParam>("-1.0").is_err());
        assert_eq!(serde_json::to_string(&ExtParam::Infinite).unwrap(), "\"inf\"");
    }

    #[test]
    fn first_derivative_identity() {
        for &p in &[1.0, 2.5, 17.0, 1e5] {
            for &t in &[-0.5, 0.0, 0.3, 4.0, 1e3] {
                let th = theta(ExtParam::Finite(p), t).unwrap();
                assert!((th.first * (p + t) - p).abs() <= 1e-12 * p);
                assert!(th.first > 0.0);
            }
        }
    }
}

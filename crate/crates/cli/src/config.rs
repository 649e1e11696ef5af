//! TOML scenario and sweep files.
//!
//! ```toml
//! [scenario]
//! name = "identity"
//! n = 1
//! d = 1
//! D = 1
//! R = 1
//!
//! [scenario.V]
//! family = "quadratic"
//! a = 1.0
//!
//! [scenario.W]
//! family = "quadratic"
//! a = 1.0
//! ```
//!
//! `[[scenario]]` arrays hold several scenarios; `[sweep.uniformity]`,
//! `[sweep.limit_d]` and `[sweep.caffarelli]` describe sweeps. `d`, `D`, `R`
//! and Hessian bounds accept `"inf"` (any case).

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use brenier_bounds::potentials::OneDimPotential;
use brenier_bounds::verify::{Expected, Scenario, SolverSettings};
use brenier_bounds::{ExtParam, HessBound, PotentialSpec, Profile, RadialTable};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    /// A single `[scenario]` table is read as a one-element list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenario: Vec<ScenarioBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBlock {
    pub name: String,
    pub n: usize,
    pub d: ExtParam,
    #[serde(rename = "D")]
    pub big_d: ExtParam,
    #[serde(rename = "R")]
    pub radius: ExtParam,
    #[serde(rename = "V")]
    pub v: PotentialBlock,
    #[serde(rename = "W")]
    pub w: PotentialBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Quadratic,
    Tabulated,
    Onedim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialBlock {
    pub family: Family,
    /// Coefficient of `a|x|²` (quadratic) or `a(x − shift)²` (onedim).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    /// CSV with columns `r, u[, u']`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hess_upper: Option<HessValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hess_lower: Option<HessValue>,
}

/// A Hessian bound: a number, or `"inf"` for no bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessValue(pub HessBound);

impl Serialize for HessValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            HessBound::Bounded(v) => s.serialize_f64(v),
            HessBound::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for HessValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = HessValue;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<HessValue, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(HessValue(HessBound::Bounded(v)))
                } else {
                    Err(E::custom(format!("Hessian bound must be a non-negative number, got {v}")))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<HessValue, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<HessValue, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<HessValue, E> {
                if v.trim().eq_ignore_ascii_case("inf") {
                    Ok(HessValue(HessBound::Unbounded))
                } else {
                    Err(E::custom(format!("expected a number or \"inf\", got \"{v}\"")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominance_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_regime: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniformity: Option<UniformitySweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_d: Option<LimitDSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caffarelli: Option<CaffarelliSweep>,
}

/// `1 + M ≤ 10⁶` chain over `n ≤ d ≤ D`. Without explicit lists `d` and `D`
/// run over the integers `1..=max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformitySweep {
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(default, rename = "D", skip_serializing_if = "Option::is_none")]
    pub big_d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<u32>,
    #[serde(default, rename = "V", skip_serializing_if = "Option::is_none")]
    pub v: Option<PotentialBlock>,
    #[serde(default, rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<PotentialBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDSweep {
    pub n: usize,
    pub d: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "D")]
    pub big_d: Vec<f64>,
    #[serde(default, rename = "V", skip_serializing_if = "Option::is_none")]
    pub v: Option<PotentialBlock>,
    #[serde(default, rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<PotentialBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaffarelliSweep {
    pub n: usize,
    pub d: Vec<f64>,
    #[serde(rename = "R")]
    pub radius: Vec<f64>,
    #[serde(default, rename = "V", skip_serializing_if = "Option::is_none")]
    pub v: Option<PotentialBlock>,
    #[serde(default, rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<PotentialBlock>,
}

/// A parsed file with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub file: ConfigFile,
}

impl LoadedConfig {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.file
            .scenario
            .iter()
            .map(|b| b.to_scenario(self.base_dir()).with_context(|| format!("scenario '{}'", b.name)))
            .collect()
    }
}

/// Parses TOML text. In strict mode unknown keys are errors; otherwise
/// they are returned as warnings.
pub fn parse(text: &str, strict: bool) -> Result<(ConfigFile, Vec<String>)> {
    let mut table: toml::Table = text.parse().map_err(|e| anyhow!("{e}"))?;
    if let Some(single @ toml::Value::Table(_)) = table.get("scenario").cloned() {
        table.insert("scenario".into(), toml::Value::Array(vec![single]));
    }
    let mut unknown = Vec::new();
    let file: ConfigFile = serde_ignored::deserialize(toml::Value::Table(table), |path| unknown.push(path.to_string()))
        .map_err(|e| anyhow!("{e}"))?;
    if strict && !unknown.is_empty() {
        bail!("unknown key(s): {}", unknown.join(", "));
    }
    Ok((file, unknown.into_iter().map(|k| format!("ignoring unknown key {k}")).collect()))
}

pub fn load(path: &Path, strict: bool) -> Result<(LoadedConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (file, warnings) = parse(&text, strict).with_context(|| format!("parsing {}", path.display()))?;
    Ok((LoadedConfig { path: path.to_path_buf(), file }, warnings))
}

/// A single file, or every `*.toml` in a directory in name order.
pub fn load_all(path: &Path, strict: bool) -> Result<(Vec<LoadedConfig>, Vec<String>)> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading directory {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut configs = Vec::new();
    let mut warnings = Vec::new();
    for f in files {
        let (c, w) = load(&f, strict)?;
        configs.push(c);
        warnings.extend(w);
    }
    Ok((configs, warnings))
}

pub fn to_toml(file: &ConfigFile) -> Result<String> {
    toml::to_string(file).map_err(|e| anyhow!("serializing config: {e}"))
}

impl PotentialBlock {
    pub fn quadratic(a: f64) -> Self {
        PotentialBlock {
            family: Family::Quadratic,
            a: Some(a),
            shift: None,
            csv: None,
            hess_upper: None,
            hess_lower: None,
        }
    }

    pub fn build(&self, n: usize, base: &Path) -> Result<PotentialSpec> {
        let need_a = || self.a.ok_or_else(|| anyhow!("{:?} potential needs a coefficient 'a'", self.family));
        let spec = match self.family {
            Family::Quadratic => {
                if self.csv.is_some() || self.shift.is_some() {
                    bail!("quadratic potential takes only 'a' and Hessian bounds");
                }
                PotentialSpec::quadratic(n, need_a()?)?
            }
            Family::Onedim => {
                if n != 1 {
                    bail!("onedim potential requires n = 1, got n = {n}");
                }
                if self.csv.is_some() {
                    bail!("onedim potential takes 'a' and 'shift'");
                }
                PotentialSpec::shifted_quadratic(need_a()?, self.shift.unwrap_or(0.0))?
            }
            Family::Tabulated => {
                if self.a.is_some() || self.shift.is_some() {
                    bail!("tabulated potential takes 'csv' and Hessian bounds");
                }
                let rel = self.csv.as_ref().ok_or_else(|| anyhow!("tabulated potential needs 'csv'"))?;
                let table = RadialTable::from_csv(&base.join(rel))?;
                PotentialSpec::tabulated(n, table, HessBound::Unbounded, HessBound::Unbounded)?
            }
        };
        let upper = self.hess_upper.map(|h| h.0).unwrap_or(spec.hess_upper);
        let lower = self.hess_lower.map(|h| h.0).unwrap_or(spec.hess_lower);
        Ok(spec.with_hessian_bounds(upper, lower))
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        let mut b = match &spec.profile {
            Profile::Quadratic { a } => PotentialBlock::quadratic(*a),
            Profile::RadialTabulated(t) => PotentialBlock {
                family: Family::Tabulated,
                a: None,
                shift: None,
                csv: Some(
                    t.source().ok_or_else(|| anyhow!("tabulated potential was not loaded from a file"))?.to_path_buf(),
                ),
                hess_upper: None,
                hess_lower: None,
            },
            Profile::OneDim(OneDimPotential::ShiftedQuadratic { a, shift }) => PotentialBlock {
                family: Family::Onedim,
                a: Some(*a),
                shift: Some(*shift),
                csv: None,
                hess_upper: None,
                hess_lower: None,
            },
            Profile::OneDim(OneDimPotential::Custom { label, .. }) => {
                bail!("custom potential '{label}' has no config representation")
            }
        };
        b.hess_upper = Some(HessValue(spec.hess_upper));
        b.hess_lower = Some(HessValue(spec.hess_lower));
        Ok(b)
    }
}

impl ScenarioBlock {
    pub fn to_scenario(&self, base: &Path) -> Result<Scenario> {
        let mut s = Scenario::new(
            self.name.clone(),
            self.v.build(self.n, base).context("potential V")?,
            self.w.build(self.n, base).context("potential W")?,
            self.n,
            self.d,
            self.big_d,
            self.radius,
        );
        if let Some(b) = &self.solver {
            let d = SolverSettings::default();
            s.settings = SolverSettings {
                grid_points: b.grid_points.unwrap_or(d.grid_points),
                r_min: b.r_min,
                r_max: b.r_max,
                residual_tol: b.residual_tol.unwrap_or(d.residual_tol),
                dominance_tol: b.dominance_tol.unwrap_or(d.dominance_tol),
            };
        }
        if let Some(e) = &self.expected {
            let d = Expected::default();
            s.expected = Some(Expected {
                lipschitz: e.lipschitz,
                lipschitz_tol: e.lipschitz_tol.unwrap_or(d.lipschitz_tol),
                bound: e.bound,
                bound_regime: e.bound_regime.as_deref().map(str::parse).transpose()?,
                bound_rel_tol: e.bound_rel_tol.unwrap_or(d.bound_rel_tol),
                slope: e.slope,
                slope_window: e.slope_window.map(|[a, b]| (a, b)).unwrap_or(d.slope_window),
                slope_tol: e.slope_tol.unwrap_or(d.slope_tol),
            });
        }
        s.validate()?;
        Ok(s)
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        let st = &s.settings;
        Ok(ScenarioBlock {
            name: s.name.clone(),
            n: s.n,
            d: s.d,
            big_d: s.big_d,
            radius: s.radius,
            v: PotentialBlock::from_spec(&s.v)?,
            w: PotentialBlock::from_spec(&s.w)?,
            solver: Some(SolverBlock {
                grid_points: Some(st.grid_points),
                r_min: st.r_min,
                r_max: st.r_max,
                residual_tol: Some(st.residual_tol),
                dominance_tol: Some(st.dominance_tol),
            }),
            expected: s.expected.as_ref().map(|e| ExpectedBlock {
                lipschitz: e.lipschitz,
                lipschitz_tol: Some(e.lipschitz_tol),
                bound: e.bound,
                bound_regime: e.bound_regime.map(|r| r.as_str().to_string()),
                bound_rel_tol: Some(e.bound_rel_tol),
                slope: e.slope,
                slope_window: Some([e.slope_window.0, e.slope_window.1]),
                slope_tol: Some(e.slope_tol),
            }),
        })
    }
}

/// Sweep potentials default to `|x|²`.
pub fn sweep_potential(block: &Option<PotentialBlock>, n: usize, base: &Path) -> Result<PotentialSpec> {
    block.clone().unwrap_or_else(|| PotentialBlock::quadratic(1.0)).build(n, base)
}

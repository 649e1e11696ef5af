//! Scenario-level verification: theoretical bounds against the empirical
//! Lipschitz constant of the transport map, plus the limit-regime sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{
    finite_global_sharp_bound, global_bound, local_bound, local_factors, BoundReport, ExtReal, Regime,
};
use crate::constants::zeroth_order;
use crate::error::{Error, Result};
use crate::extparam::{ExtParam, Radius};
use crate::potentials::PotentialSpec;
use crate::transport::{
    lipschitz_empirical, log_grid, second_variation_check, slope_fit, LipschitzEstimate, QuantileSolver, RadialMap,
    Slack, SlopeFit, TransportSolver,
};

/// Grid and tolerance settings for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSettings {
    pub grid_points: usize,
    /// Defaults to `10⁻³·s` with `s = max(1, √d)`.
    pub r_min: Option<f64>,
    /// Defaults to `max(50·s, R)`.
    pub r_max: Option<f64>,
    pub residual_tol: f64,
    pub dominance_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { grid_points: 400, r_min: None, r_max: None, residual_tol: 1e-7, dominance_tol: 1e-9 }
    }
}

/// Optional expected values with tolerances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expected {
    pub lipschitz: Option<f64>,
    pub lipschitz_tol: f64,
    pub bound: Option<f64>,
    /// Regime the expected bound refers to; the tightest bound when absent.
    pub bound_regime: Option<Regime>,
    pub bound_rel_tol: f64,
    pub slope: Option<f64>,
    pub slope_window: (f64, f64),
    pub slope_tol: f64,
}

impl Default for Expected {
    fn default() -> Self {
        Expected {
            lipschitz: None,
            lipschitz_tol: 1e-6,
            bound: None,
            bound_regime: None,
            bound_rel_tol: 1e-6,
            slope: None,
            slope_window: (1e2, 1e4),
            slope_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub v: PotentialSpec,
    pub w: PotentialSpec,
    pub n: usize,
    pub d: ExtParam,
    pub big_d: ExtParam,
    pub radius: Radius,
    pub settings: SolverSettings,
    pub expected: Option<Expected>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        v: PotentialSpec,
        w: PotentialSpec,
        n: usize,
        d: ExtParam,
        big_d: ExtParam,
        radius: Radius,
    ) -> Self {
        Scenario { name: name.into(), v, w, n, d, big_d, radius, settings: SolverSettings::default(), expected: None }
    }

    /// Dimension consistency and `n ≤ d`, `n ≤ D`. The order `d ≤ D` is not
    /// required: the map exists without it and the bounds report themselves
    /// inapplicable.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidInput("scenario name is empty".into()));
        }
        if self.v.dimension != self.n || self.w.dimension != self.n {
            return Err(Error::InvalidInput(format!(
                "potential dimensions ({}, {}) do not match n = {}",
                self.v.dimension, self.w.dimension, self.n
            )));
        }
        self.v.validate()?;
        self.w.validate()?;
        self.d.check_against_dimension(self.n, "d")?;
        self.big_d.check_against_dimension(self.n, "D")?;
        if let ExtParam::Finite(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::InvalidInput(format!("R must be positive, got {r}")));
            }
        }
        let s = &self.settings;
        if s.grid_points < 2 {
            return Err(Error::InvalidInput("grid needs at least two points".into()));
        }
        if !(s.residual_tol > 0.0 && s.dominance_tol >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        match self.d {
            ExtParam::Finite(d) => d.sqrt().max(1.0),
            ExtParam::Infinite => 1.0,
        }
    }

    /// Finite stand-in `50·max(1, √d)` for the whole space in empirical checks
    /// of global bounds.
    pub fn proxy_radius(&self) -> f64 {
        50.0 * self.scale()
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        let s = self.scale();
        let lo = self.settings.r_min.unwrap_or(1e-3 * s);
        let hi = self.settings.r_max.unwrap_or_else(|| match self.radius {
            ExtParam::Finite(r) => (50.0 * s).max(r),
            ExtParam::Infinite => 50.0 * s,
        });
        let radial = log_grid(lo, hi, self.settings.grid_points)?;
        if self.v.is_radial() && self.w.is_radial() {
            return Ok(radial);
        }
        let half = log_grid(lo, hi, self.settings.grid_points.div_ceil(2).max(2))?;
        Ok(half.iter().rev().map(|x| -x).chain(std::iter::once(0.0)).chain(half.iter().copied()).collect())
    }

    /// Radial map when both potentials are radial, quantile map on the line
    /// otherwise.
    pub fn build_map(&self) -> Result<(RadialMap, Option<TransportSolver>)> {
        let grid = self.grid()?;
        if self.v.is_radial() && self.w.is_radial() {
            let solver = TransportSolver::new(&self.v, &self.w, self.d, self.big_d, self.n)?;
            Ok((solver.map(&grid)?, Some(solver)))
        } else {
            Ok((QuantileSolver::new(&self.v, &self.w, self.d, self.big_d)?.map(&grid)?, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Empirical {
    /// Estimate inside `B_R` (absent for `R = ∞`).
    pub local: Option<LipschitzEstimate>,
    /// Estimate inside the proxy ball `B_{50·max(1, √d)}`.
    pub global: LipschitzEstimate,
    pub proxy_radius: f64,
    pub max_residual: f64,
    pub grid_points: usize,
    pub slope: Option<SlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub regime: Regime,
    pub window: Radius,
    pub bound: ExtReal,
    pub empirical: f64,
    /// `bound − empirical`.
    pub margin: ExtReal,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub bounds: Vec<BoundReport>,
    pub empirical: Option<Empirical>,
    pub margins: Vec<Margin>,
    pub slacks: Vec<Slack>,
    /// Point where the second-variation inequalities were evaluated.
    pub maximizer: Option<f64>,
    pub checks: Vec<Check>,
    pub errors: Vec<FieldError>,
    /// Components that do not apply to this scenario.
    pub notes: Vec<String>,
    pub pass: bool,
    pub reason: Option<String>,
    pub wall_time_s: f64,
}

impl VerifyReport {
    fn new(name: &str) -> Self {
        VerifyReport {
            scenario: name.to_string(),
            bounds: Vec::new(),
            empirical: None,
            margins: Vec::new(),
            slacks: Vec::new(),
            maximizer: None,
            checks: Vec::new(),
            errors: Vec::new(),
            notes: Vec::new(),
            pass: false,
            reason: None,
            wall_time_s: 0.0,
        }
    }

    fn error(&mut self, field: &str, e: Error) {
        self.errors.push(FieldError { field: field.to_string(), message: e.to_string() });
    }

    pub fn bound(&self, regime: Regime) -> Option<&BoundReport> {
        self.bounds.iter().find(|b| b.regime == regime)
    }

    fn finish(&mut self, start: Instant) {
        let mut reasons: Vec<String> = self.errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
        reasons.extend(
            self.margins
                .iter()
                .filter(|m| !m.pass)
                .map(|m| format!("{} bound {} below empirical {}", m.regime, m.bound, m.empirical)),
        );
        reasons.extend(self.slacks.iter().filter(|s| !s.pass).map(|s| format!("{} slack {:e}", s.inequality, s.slack)));
        reasons.extend(self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)));
        self.pass = reasons.is_empty();
        self.reason = (!reasons.is_empty()).then(|| reasons.join("; "));
        self.wall_time_s = start.elapsed().as_secs_f64();
    }
}

fn window_of(regime: Regime, s: &Scenario) -> Radius {
    match regime {
        Regime::Local | Regime::EndpointPolyLog | Regime::Caffarelli => s.radius,
        Regime::Global | Regime::FiniteGlobalSharp => ExtParam::Finite(s.proxy_radius()),
    }
}

/// Runs every applicable bound, builds the map and compares. Component
/// errors are recorded per field; the report always comes back.
pub fn run_scenario(s: &Scenario) -> VerifyReport {
    let start = Instant::now();
    let mut rep = VerifyReport::new(&s.name);
    if let Err(e) = s.validate() {
        rep.error("scenario", e);
        rep.finish(start);
        return rep;
    }

    let mut attempts: Vec<(&str, Result<BoundReport>)> = vec![("global", global_bound(&s.v, &s.w, s.n, s.d, s.big_d))];
    match s.radius {
        ExtParam::Finite(r) => attempts.push(("local", local_bound(&s.v, &s.w, s.n, s.d, s.big_d, r))),
        ExtParam::Infinite => rep.notes.push("local: not computed for R = inf".into()),
    }
    match (s.d, s.big_d) {
        (ExtParam::Finite(d), ExtParam::Finite(dd)) => {
            attempts.push(("finite_global_sharp", finite_global_sharp_bound(&s.v, &s.w, s.n, d, dd)))
        }
        _ => rep.notes.push("finite_global_sharp: needs finite d and D".into()),
    }
    for (field, result) in attempts {
        match result {
            Ok(b) => rep.bounds.push(b),
            Err(e @ Error::InvalidOrder { .. }) => rep.notes.push(format!("{field}: not applicable: {e}")),
            Err(e) => rep.error(field, e),
        }
    }

    let (map, solver) = match s.build_map() {
        Ok(m) => m,
        Err(e) => {
            rep.error("map", e);
            rep.finish(start);
            return rep;
        }
    };
    let proxy = s.proxy_radius();
    let global = match lipschitz_empirical(&map, ExtParam::Finite(proxy)) {
        Ok(g) => g,
        Err(e) => {
            rep.error("empirical", e);
            rep.finish(start);
            return rep;
        }
    };
    let local = match s.radius {
        ExtParam::Finite(_) => match lipschitz_empirical(&map, s.radius) {
            Ok(l) => Some(l),
            Err(e) => {
                rep.error("empirical_local", e);
                None
            }
        },
        ExtParam::Infinite => None,
    };
    let max_residual = map.max_abs_residual();
    rep.checks.push(Check::new(
        "mass_balance",
        max_residual <= s.settings.residual_tol,
        format!("max |residual| = {max_residual:e}, tolerance {:e}", s.settings.residual_tol),
    ));
    rep.checks.push(Check::new("monotone", map.is_strictly_increasing(), "t and t' increasing/positive"));

    for b in &rep.bounds {
        let window = window_of(b.regime, s);
        let emp = match window {
            ExtParam::Finite(r) if r == proxy => Some(global.value),
            _ => local.map(|l| l.value),
        };
        let Some(emp) = emp else { continue };
        let (margin, pass) = match b.bound {
            ExtReal::Finite(x) => (ExtReal::Finite(x - emp), x - emp >= -s.settings.dominance_tol),
            ExtReal::PlusInfinity => (ExtReal::PlusInfinity, true),
        };
        rep.margins.push(Margin { regime: b.regime, window, bound: b.bound, empirical: emp, margin, pass });
    }

    if let Some(solver) = &solver {
        let window = match s.radius {
            ExtParam::Finite(_) => s.radius,
            ExtParam::Infinite => ExtParam::Finite(proxy),
        };
        match second_variation_check(solver, &map, window) {
            Ok(sv) => {
                rep.maximizer = Some(sv.maximizer);
                if let Some(why) = sv.skipped {
                    rep.notes.push(format!("second variation: {why}"));
                }
                rep.slacks = sv.slacks;
            }
            Err(e) => rep.error("second_variation", e),
        }
    } else {
        rep.notes.push("second variation: evaluated for radial maps only".into());
    }

    let mut slope = None;
    if let Some(exp) = &s.expected {
        if let Some(want) = exp.lipschitz {
            let got = local.unwrap_or(global).value;
            rep.checks.push(Check::new(
                "expected_lipschitz",
                (got - want).abs() <= exp.lipschitz_tol,
                format!("empirical {got}, expected {want} ± {:e}", exp.lipschitz_tol),
            ));
        }
        if let Some(want) = exp.bound {
            let got = match exp.bound_regime {
                Some(r) => rep.bound(r).map(|b| b.bound),
                None => rep.bounds.iter().map(|b| b.bound).reduce(ExtReal::min),
            };
            let (pass, detail) = match got {
                Some(ExtReal::Finite(g)) => (
                    (g - want).abs() <= exp.bound_rel_tol * want.abs(),
                    format!("bound {g}, expected {want} (rel {:e})", exp.bound_rel_tol),
                ),
                Some(ExtReal::PlusInfinity) => (false, format!("bound is inf, expected {want}")),
                None => (false, "no such bound was computed".to_string()),
            };
            rep.checks.push(Check::new("expected_bound", pass, detail));
        }
        if let Some(want) = exp.slope {
            let (lo, hi) = exp.slope_window;
            match slope_fit(&map, lo, hi) {
                Ok(fit) => {
                    rep.checks.push(Check::new(
                        "expected_slope",
                        (fit.slope - want).abs() <= exp.slope_tol,
                        format!("slope {} over [{lo}, {hi}], expected {want} ± {}", fit.slope, exp.slope_tol),
                    ));
                    slope = Some(fit);
                }
                Err(e) => rep.error("slope", e),
            }
        }
    }

    rep.empirical = Some(Empirical { local, global, proxy_radius: proxy, max_residual, grid_points: map.len(), slope });
    rep.finish(start);
    rep
}

/// Runs scenarios on a pool of `jobs` workers; report order matches input.
pub fn run_scenarios(scenarios: &[Scenario], jobs: usize) -> Vec<VerifyReport> {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| scenarios.par_iter().map(run_scenario).collect()),
        Err(_) => scenarios.iter().map(run_scenario).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DSweepRow {
    #[serde(rename = "D")]
    pub big_d: f64,
    pub fathi_radius: f64,
    pub growth_factor: f64,
    pub lambda: f64,
    pub xi: f64,
    pub bound: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DSweepReport {
    pub d: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub rows: Vec<DSweepRow>,
    /// Local bound at `D = ∞`.
    pub endpoint_bound: ExtReal,
    pub checks: Vec<Check>,
}

impl DSweepReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Fathi radii up to this value count as bounded even when they shrink by
/// more than half across the sweep.
pub const FATHI_RADIUS_CAP: f64 = 100.0;

/// Local bound and its ingredients as `D` grows with `d`, `R` fixed.
pub fn limit_sweep_d(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d: f64,
    radius: f64,
    big_d_list: &[f64],
) -> Result<DSweepReport> {
    if big_d_list.is_empty() {
        return Err(Error::InvalidInput("D list is empty".into()));
    }
    let dp = ExtParam::finite(d)?;
    let mut rows = Vec::with_capacity(big_d_list.len());
    for &dd in big_d_list {
        let ddp = ExtParam::finite(dd)?;
        let f = local_factors(v, w, d, ddp, radius, n)?;
        let g = f.growth.expect("finite D has growth data");
        let b = local_bound(v, w, n, dp, ddp, radius)?;
        rows.push(DSweepRow {
            big_d: dd,
            fathi_radius: g.fathi_radius,
            growth_factor: g.growth_factor,
            lambda: f.lambda,
            xi: f.xi,
            bound: b.bound,
        });
    }
    let endpoint_bound = local_bound(v, w, n, dp, ExtParam::Infinite, radius)?.bound;
    let last = rows.last().expect("non-empty");
    let mut checks = Vec::new();
    let xi_ok = rows.iter().filter(|r| r.big_d >= 2.0 * d).all(|r| r.xi == 0.0);
    checks.push(Check::new("xi_zero_once_D_ge_2d", xi_ok, "Xi = 0 for every D >= 2d"));
    let max_fathi = rows.iter().map(|r| r.fathi_radius).fold(0.0, f64::max);
    checks.push(Check::new(
        "fathi_radius_bounded",
        max_fathi <= 2.0 * last.fathi_radius || max_fathi <= FATHI_RADIUS_CAP,
        format!("max {max_fathi}, at largest D {}", last.fathi_radius),
    ));
    checks.push(Check::new(
        "growth_factor_to_one",
        (1.0..=1.5).contains(&last.growth_factor),
        format!("G = {} at D = {}", last.growth_factor, last.big_d),
    ));
    checks.push(Check::new(
        "lambda_to_one",
        (last.lambda - 1.0).abs() <= 0.05,
        format!("Lambda = {} at D = {}", last.lambda, last.big_d),
    ));
    let (pass, detail) = match (last.bound, endpoint_bound) {
        (ExtReal::Finite(b), ExtReal::Finite(e)) => ((b - e).abs() <= 0.05 * e, format!("bound {b} vs endpoint {e}")),
        _ => (false, "bound not finite".to_string()),
    };
    checks.push(Check::new("bound_to_endpoint", pass, detail));
    Ok(DSweepReport { d, radius, rows, endpoint_bound, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaffarelliRow {
    pub d: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub c0_v: f64,
    pub bound: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaffarelliSweepReport {
    /// `√(C_V⁽²⁾/c_W⁽²⁾)`.
    pub target: f64,
    /// Ordered by `R`, then `d`. Reading the table by `d` first gives the
    /// other limit order.
    pub rows: Vec<CaffarelliRow>,
    pub final_gap: f64,
    pub checks: Vec<Check>,
}

impl CaffarelliSweepReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Endpoint bound at `D = ∞` over `(d, R)`; converges to the Caffarelli
/// constant as `d → ∞` and then `R` grows.
pub fn limit_sweep_caffarelli(
    v: &PotentialSpec,
    w: &PotentialSpec,
    n: usize,
    d_list: &[f64],
    r_list: &[f64],
) -> Result<CaffarelliSweepReport> {
    if d_list.is_empty() || r_list.is_empty() {
        return Err(Error::InvalidInput("d and R lists must be non-empty".into()));
    }
    let caff = local_bound(v, w, n, ExtParam::Infinite, ExtParam::Infinite, r_list[0])?;
    let target = caff.bound.value().expect("Caffarelli bound is finite");
    let mut rows = Vec::new();
    for &r in r_list {
        for &d in d_list {
            let dp = ExtParam::finite(d)?;
            let (c0_v, _) = zeroth_order(v, dp, ExtParam::Finite(r))?;
            let b = local_bound(v, w, n, dp, ExtParam::Infinite, r)?;
            rows.push(CaffarelliRow { d, radius: r, c0_v, bound: b.bound });
        }
    }
    let mut checks = Vec::new();
    let mut monotone = true;
    for &r in r_list {
        let mut col: Vec<&CaffarelliRow> = rows.iter().filter(|x| x.radius == r).collect();
        col.sort_by(|a, b| a.d.total_cmp(&b.d));
        monotone &= col.windows(2).all(|p| p[1].c0_v >= p[0].c0_v - 1e-12);
    }
    checks.push(Check::new("c0_increasing_in_d", monotone, "c0_V,d(R) non-decreasing in d at every R"));
    let d_max = d_list.iter().copied().fold(f64::MIN, f64::max);
    let r_max = r_list.iter().copied().fold(f64::MIN, f64::max);
    let last = rows.iter().find(|x| x.d == d_max && x.radius == r_max).expect("grid corner");
    let final_gap = match last.bound {
        ExtReal::Finite(b) => (b - target).abs() / target,
        ExtReal::PlusInfinity => f64::INFINITY,
    };
    checks.push(Check::new(
        "final_gap_below_1pct",
        final_gap < 0.01,
        format!("gap {final_gap:e} at d = {d_max}, R = {r_max}"),
    ));
    Ok(CaffarelliSweepReport { target, rows, final_gap, checks })
}

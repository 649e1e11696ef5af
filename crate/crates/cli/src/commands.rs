//! Subcommand implementations. Scenarios run on a worker pool; results are
//! collected in input order and written from this thread.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use brenier_bounds::bounds::{TripleReport, UniformityReport};
use brenier_bounds::transport::{slope_fit, MapDomain, SlopeFit};
use brenier_bounds::verify::{limit_sweep_caffarelli, limit_sweep_d, CaffarelliSweepReport, Check, DSweepReport};
use brenier_bounds::{
    finite_global_sharp_bound, global_bound, lipschitz_empirical, local_bound, mglob_uniformity_check, run_scenarios,
    BoundReport, Error, ExtParam, ExtReal, LipschitzEstimate, PotentialSpec, RadialMap, Scenario, UniformityGrid,
    VerifyReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, sweep_potential, Format, LoadedConfig};
use crate::output::{ext, file_stem, num, opt, OutputDir};
use crate::{core_exit_code, exit, Cli, Command};

/// Loaded configs and resolved output settings.
pub struct Run {
    pub configs: Vec<LoadedConfig>,
    pub out_root: PathBuf,
    pub format: Format,
    pub jobs: usize,
}

impl Run {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let g = &cli.global;
        let path = g.config.as_ref().ok_or_else(|| anyhow!("--config PATH is required"))?;
        let (configs, warnings) = config::load_all(path, g.strict)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        let block = configs.iter().find_map(|c| c.file.output.clone().map(|o| (c.base_dir().to_path_buf(), o)));
        let out_root = match (&g.out, &block) {
            (Some(o), _) => o.clone(),
            (None, Some((base, b))) if b.dir.is_some() => base.join(b.dir.as_ref().expect("checked")),
            _ => PathBuf::from("out"),
        };
        let format = g.format.or_else(|| block.and_then(|(_, b)| b.format)).unwrap_or(Format::Both);
        let jobs = g
            .jobs
            .filter(|&j| j > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        Ok(Run { configs, out_root, format, jobs })
    }

    /// Every scenario across the loaded files, with unique file stems.
    fn scenarios(&self) -> Result<Vec<Scenario>> {
        let mut all = Vec::new();
        let mut stems = BTreeSet::new();
        for c in &self.configs {
            for s in c.scenarios()? {
                if !stems.insert(file_stem(&s.name)) {
                    bail!("duplicate scenario name '{}' (in {})", s.name, c.path.display());
                }
                all.push(s);
            }
        }
        Ok(all)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build().map_err(|e| anyhow!("thread pool: {e}"))
    }

    fn par_map<T: Send>(&self, scenarios: &[Scenario], f: impl Fn(&Scenario) -> T + Sync + Send) -> Result<Vec<T>> {
        Ok(self.pool()?.install(|| scenarios.par_iter().map(f).collect()))
    }

    fn out(&self) -> Result<OutputDir> {
        OutputDir::create(&self.out_root)
    }
}

pub fn dispatch(cli: &Cli) -> Result<u8> {
    let run = Run::from_cli(cli)?;
    match cli.command {
        Command::Bounds => bounds(&run),
        Command::Transport => transport(&run),
        Command::Verify => verify(&run),
        Command::Sweep => sweep(&run),
    }
}

fn non_empty(scenarios: &[Scenario]) -> Result<()> {
    if scenarios.is_empty() {
        bail!("no scenarios found");
    }
    Ok(())
}

/// Global bound always; local for finite `R`; the finite-parameter sharp
/// bound when `d` and `D` are both finite.
pub fn scenario_bounds(s: &Scenario) -> std::result::Result<Vec<BoundReport>, Error> {
    let mut out = vec![global_bound(&s.v, &s.w, s.n, s.d, s.big_d)?];
    if let ExtParam::Finite(r) = s.radius {
        out.push(local_bound(&s.v, &s.w, s.n, s.d, s.big_d, r)?);
    }
    if let (ExtParam::Finite(d), ExtParam::Finite(dd)) = (s.d, s.big_d) {
        out.push(finite_global_sharp_bound(&s.v, &s.w, s.n, d, dd)?);
    }
    Ok(out)
}

fn bounds(run: &Run) -> Result<u8> {
    let scenarios = run.scenarios()?;
    non_empty(&scenarios)?;
    let results = run.par_map(&scenarios, scenario_bounds)?;
    let out = run.out()?;
    let mut code = exit::PASS;
    for (s, r) in scenarios.iter().zip(results) {
        let stem = file_stem(&s.name);
        match r {
            Ok(reports) => {
                for b in &reports {
                    println!("{}\t{}\t{}", s.name, b.regime, b.bound);
                }
                if run.format.json() {
                    out.json(&format!("{stem}.bounds.json"), &reports)?;
                }
                if run.format.csv() {
                    let rows: Vec<Vec<String>> =
                        reports.iter().map(|b| vec![b.regime.to_string(), num(b.a), ext(b.b), ext(b.bound)]).collect();
                    out.csv(&format!("{stem}.bounds.csv"), &["regime", "A", "B", "bound"], &rows)?;
                }
            }
            Err(e) => {
                eprintln!("error: scenario '{}': {e}", s.name);
                code = code.max(core_exit_code(&e));
            }
        }
    }
    Ok(code)
}

#[derive(Debug, Serialize)]
pub struct TransportReport {
    pub scenario: String,
    pub domain: MapDomain,
    pub n: usize,
    pub d: ExtParam,
    #[serde(rename = "D")]
    pub big_d: ExtParam,
    #[serde(rename = "R")]
    pub radius: ExtParam,
    pub grid_points: usize,
    pub max_residual: f64,
    /// Estimate inside `B_R`; absent for `R = inf`.
    pub lipschitz_local: Option<LipschitzEstimate>,
    pub proxy_radius: f64,
    /// Estimate inside the proxy ball.
    pub lipschitz_global: LipschitzEstimate,
    /// Log-log slope of `t(r)` over `[1e2, 1e4]` when the grid covers it.
    pub slope: Option<SlopeFit>,
    /// Embedded only when no CSV is written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<RadialMap>,
}

pub fn transport_for(s: &Scenario) -> std::result::Result<(RadialMap, TransportReport), Error> {
    let (map, _) = s.build_map()?;
    let max_residual = map.max_abs_residual();
    if !(max_residual <= s.settings.residual_tol) {
        return Err(Error::NoConvergence(format!(
            "mass-balance residual {max_residual:e} exceeds tolerance {:e}",
            s.settings.residual_tol
        )));
    }
    let lipschitz_local = match s.radius {
        ExtParam::Finite(_) => Some(lipschitz_empirical(&map, s.radius)?),
        ExtParam::Infinite => None,
    };
    let proxy_radius = s.proxy_radius();
    let lipschitz_global = lipschitz_empirical(&map, ExtParam::Finite(proxy_radius))?;
    let covers = map.domain == MapDomain::Radial && map.r_grid.last().is_some_and(|&r| r >= 1e4);
    let slope = if covers { slope_fit(&map, 1e2, 1e4).ok() } else { None };
    let report = TransportReport {
        scenario: s.name.clone(),
        domain: map.domain,
        n: s.n,
        d: s.d,
        big_d: s.big_d,
        radius: s.radius,
        grid_points: map.len(),
        max_residual,
        lipschitz_local,
        proxy_radius,
        lipschitz_global,
        slope,
        map: None,
    };
    Ok((map, report))
}

fn transport(run: &Run) -> Result<u8> {
    let scenarios = run.scenarios()?;
    non_empty(&scenarios)?;
    let results = run.par_map(&scenarios, transport_for)?;
    let out = run.out()?;
    let mut code = exit::PASS;
    for (s, r) in scenarios.iter().zip(results) {
        let stem = file_stem(&s.name);
        match r {
            Ok((map, mut report)) => {
                let local = report.lipschitz_local.map(|l| l.value.to_string()).unwrap_or_else(|| "-".into());
                println!(
                    "{}\tlocal {}\tglobal {}\tresidual {:e}",
                    s.name, local, report.lipschitz_global.value, report.max_residual
                );
                if run.format.csv() {
                    let mut w = out.open(&format!("{stem}.map.csv"))?;
                    map.write_csv(&mut w)?;
                } else {
                    report.map = Some(map);
                }
                if run.format.json() {
                    out.json(&format!("{stem}.lipschitz.json"), &report)?;
                }
            }
            Err(e) => {
                eprintln!("error: scenario '{}': {e}", s.name);
                code = code.max(core_exit_code(&e));
            }
        }
    }
    Ok(code)
}

/// The tightest bound with its margin, over all dominance comparisons.
fn tightest(r: &VerifyReport) -> Option<(String, ExtReal, ExtReal)> {
    r.margins
        .iter()
        .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap_or(std::cmp::Ordering::Equal))
        .map(|m| (m.regime.to_string(), m.bound, m.margin))
}

fn short(x: ExtReal, f: impl Fn(f64) -> String) -> String {
    x.value().map(f).unwrap_or_else(|| "inf".into())
}

/// The report as JSON without its wall-clock time, so output files depend
/// on the config alone.
fn deterministic_json(r: &VerifyReport) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(r)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_time_s");
    }
    Ok(v)
}

fn verify(run: &Run) -> Result<u8> {
    let scenarios = run.scenarios()?;
    let has_sweeps = run.configs.iter().any(|c| c.file.sweep.is_some());
    if scenarios.is_empty() && !has_sweeps {
        bail!("no scenarios found");
    }
    let reports = run_scenarios(&scenarios, run.jobs);
    let out = run.out()?;
    let mut all_pass = true;
    let mut rows = Vec::new();
    if !reports.is_empty() {
        println!(
            "{:<32} {:<5} {:>14} {:>22} {:>14} {:>10}",
            "scenario", "pass", "empirical", "tightest bound", "margin", "residual"
        );
    }
    for r in &reports {
        all_pass &= r.pass;
        let emp = r.empirical.as_ref();
        let local = emp.and_then(|e| e.local.map(|l| l.value));
        let global = emp.map(|e| e.global.value);
        let residual = emp.map(|e| e.max_residual);
        let t = tightest(r);
        let shown = local.or(global).map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        let (regime, bound, margin) = match &t {
            Some((g, b, m)) => (g.as_str(), short(*b, |v| format!("{v:.6}")), short(*m, |v| format!("{v:.3e}"))),
            None => ("-", "-".into(), "-".into()),
        };
        let bound_txt = format!("{bound} ({regime})");
        let res_txt = residual.map(|v| format!("{v:.1e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<32} {:<5} {:>14} {:>22} {:>14} {:>10}",
            r.scenario,
            if r.pass { "PASS" } else { "FAIL" },
            shown,
            bound_txt,
            margin,
            res_txt
        );
        if let Some(reason) = &r.reason {
            println!("    {reason}");
        }
        if run.format.json() {
            out.json(&format!("{}.verify.json", file_stem(&r.scenario)), &deterministic_json(r)?)?;
        }
        rows.push(vec![
            r.scenario.clone(),
            r.pass.to_string(),
            opt(local),
            opt(global),
            t.as_ref().map(|x| x.0.clone()).unwrap_or_default(),
            t.as_ref().map(|x| ext(x.1)).unwrap_or_default(),
            t.as_ref().map(|x| ext(x.2)).unwrap_or_default(),
            opt(residual),
            r.reason.clone().unwrap_or_default(),
        ]);
    }
    if run.format.csv() && !rows.is_empty() {
        out.csv(
            "summary.csv",
            &[
                "scenario",
                "pass",
                "empirical_local",
                "empirical_global",
                "tightest_regime",
                "tightest_bound",
                "min_margin",
                "max_residual",
                "reason",
            ],
            &rows,
        )?;
    }
    if has_sweeps {
        all_pass &= run_sweeps(run, &out)?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("verify: {} of {} scenarios passed", reports.len() - failed, reports.len());
    Ok(if all_pass { exit::PASS } else { exit::VERIFY })
}

fn sweep(run: &Run) -> Result<u8> {
    if run.configs.iter().all(|c| c.file.sweep.is_none()) {
        bail!("no sweeps found");
    }
    let out = run.out()?;
    Ok(if run_sweeps(run, &out)? { exit::PASS } else { exit::VERIFY })
}

fn print_checks(kind: &str, checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {kind} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.pass)
}

fn ext_param(x: f64) -> Result<ExtParam> {
    Ok(ExtParam::finite(x)?)
}

/// Runs every sweep block; returns whether all asserted properties hold.
fn run_sweeps(run: &Run, out: &OutputDir) -> Result<bool> {
    let with_sweeps: Vec<&LoadedConfig> = run.configs.iter().filter(|c| c.file.sweep.is_some()).collect();
    let prefixed = with_sweeps.len() > 1;
    let mut pass = true;
    for c in with_sweeps {
        let sweep = c.file.sweep.as_ref().expect("filtered");
        let base = c.base_dir();
        let prefix = if prefixed {
            format!("{}.", file_stem(&c.path.file_stem().unwrap_or_default().to_string_lossy()))
        } else {
            String::new()
        };
        let name = |kind: &str, ext: &str| format!("{prefix}{kind}.{ext}");
        if let Some(u) = &sweep.uniformity {
            let report = uniformity(u, base)?;
            pass &=
                report_uniformity(&report, out, run.format, &name("uniformity", "csv"), &name("uniformity", "json"))?;
        }
        if let Some(l) = &sweep.limit_d {
            let v = sweep_potential(&l.v, l.n, base)?;
            let w = sweep_potential(&l.w, l.n, base)?;
            let report = limit_sweep_d(&v, &w, l.n, l.d, l.radius, &l.big_d)?;
            pass &= report_limit_d(&report, out, run.format, &name("limit_d", "csv"), &name("limit_d", "json"))?;
        }
        if let Some(k) = &sweep.caffarelli {
            let v = sweep_potential(&k.v, k.n, base)?;
            let w = sweep_potential(&k.w, k.n, base)?;
            let report = limit_sweep_caffarelli(&v, &w, k.n, &k.d, &k.radius)?;
            pass &=
                report_caffarelli(&report, out, run.format, &name("caffarelli", "csv"), &name("caffarelli", "json"))?;
        }
    }
    Ok(pass)
}

fn uniformity(u: &config::UniformitySweep, base: &Path) -> Result<UniformityReport> {
    if u.n.is_empty() {
        bail!("uniformity sweep needs at least one n");
    }
    let max = u.max.unwrap_or(50);
    let range: Vec<f64> = (1..=max).map(f64::from).collect();
    let grid = UniformityGrid {
        n_values: u.n.clone(),
        d_values: u.d.clone().unwrap_or_else(|| range.clone()),
        big_d_values: u.big_d.clone().unwrap_or(range),
    };
    for &x in grid.d_values.iter().chain(&grid.big_d_values) {
        ext_param(x)?;
    }
    if grid.triples().is_empty() {
        bail!("uniformity sweep has no triple with n <= d <= D");
    }
    let mut pairs: BTreeMap<usize, (PotentialSpec, PotentialSpec)> = BTreeMap::new();
    for &n in &u.n {
        pairs.insert(n, (sweep_potential(&u.v, n, base)?, sweep_potential(&u.w, n, base)?));
    }
    let pair =
        |n: usize| pairs.get(&n).cloned().ok_or_else(|| Error::InvalidInput(format!("no potentials for n = {n}")));
    Ok(mglob_uniformity_check(&grid, &pair)?)
}

fn report_uniformity(r: &UniformityReport, out: &OutputDir, format: Format, csv: &str, json: &str) -> Result<bool> {
    let failed: Vec<&TripleReport> = r.triples.iter().filter(|t| !t.pass()).collect();
    let global_ok = r.global_steps.iter().all(|s| s.pass);
    for s in r.global_steps.iter().filter(|s| !s.pass) {
        println!("FAIL uniformity {}: {} > {}", s.name, s.lhs, s.rhs);
    }
    for t in failed.iter().take(10) {
        println!("FAIL uniformity triple n = {}, d = {}, D = {}", t.n, t.d, t.big_d);
    }
    println!(
        "{} uniformity: {} triples, {} failing, max 1 + M = {:.6e} (limit 1e6 q_V^2 q_W^2)",
        if r.pass() { "PASS" } else { "FAIL" },
        r.triples.len(),
        failed.len(),
        r.max_one_plus_m
    );
    if format.csv() {
        let rows: Vec<Vec<String>> = r
            .triples
            .iter()
            .map(|t| {
                vec![
                    t.n.to_string(),
                    num(t.d),
                    num(t.big_d),
                    num(t.q_v),
                    num(t.q_w),
                    num(t.k),
                    num(t.m),
                    num(1.0 + t.m),
                    t.pass().to_string(),
                ]
            })
            .collect();
        out.csv(csv, &["n", "d", "D", "q_V", "q_W", "K", "M", "one_plus_M", "pass"], &rows)?;
    }
    if format.json() {
        out.json(json, r)?;
    }
    Ok(global_ok && failed.is_empty())
}

fn report_limit_d(r: &DSweepReport, out: &OutputDir, format: Format, csv: &str, json: &str) -> Result<bool> {
    println!("limit_d: d = {}, R = {}, endpoint bound {}", r.d, r.radius, r.endpoint_bound);
    for row in &r.rows {
        println!(
            "    D = {:<10} G = {:.6} Lambda = {:.6} Xi = {:.3e} bound = {}",
            row.big_d, row.growth_factor, row.lambda, row.xi, row.bound
        );
    }
    let pass = print_checks("limit_d", &r.checks);
    if format.csv() {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|x| {
                vec![num(x.big_d), num(x.fathi_radius), num(x.growth_factor), num(x.lambda), num(x.xi), ext(x.bound)]
            })
            .collect();
        out.csv(csv, &["D", "fathi_radius", "growth_factor", "lambda", "xi", "bound"], &rows)?;
    }
    if format.json() {
        out.json(json, r)?;
    }
    Ok(pass)
}

fn report_caffarelli(
    r: &CaffarelliSweepReport,
    out: &OutputDir,
    format: Format,
    csv: &str,
    json: &str,
) -> Result<bool> {
    println!("caffarelli: target {}, final gap {:.3e}", r.target, r.final_gap);
    let pass = print_checks("caffarelli", &r.checks);
    if format.csv() {
        let rows: Vec<Vec<String>> =
            r.rows.iter().map(|x| vec![num(x.d), num(x.radius), num(x.c0_v), ext(x.bound)]).collect();
        out.csv(csv, &["d", "R", "c0_V", "bound"], &rows)?;
    }
    if format.json() {
        out.json(json, r)?;
    }
    Ok(pass)
}

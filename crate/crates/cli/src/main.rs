//! `riverlcp`: solve water-release market equilibria, run the scenario
//! sweep and the capital deferment study.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use riverlcp::basin::{builtin_basin, load_basin, BasinConfig, BasinError};
use riverlcp::formulations::{
    solve_no_market_recursive, EquilibriumSolution, FormulationError, MarketStructure, SolveOptions, SolverKind, StartPoint,
};
use riverlcp::metrics::{display_quantities, DisplayQuantities};
use riverlcp::scenarios::{
    classify_scenarios, default_installation_years, generate_scenarios, render_table, resolve_scenario, run_deferment,
    run_scenario, run_sweep, solve_with_fallback, write_csv, SweepOptions,
};
use riverlcp::theory::{common_prices, theorem2_instances, verify_theorem3, verify_theorem4};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "riverlcp", version, about = "Equilibria of water-release markets on a river")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Solve one basin under one market structure.
    Solve(SolveArgs),
    /// Solve every scenario of the three-node factorial design.
    Sweep(SweepArgs),
    /// Welfare against installation year of the basin's capital project.
    Deferment(DefermentArgs),
    /// Build and verify the closed-form two-player equilibria on generated basins.
    CheckTheorem2(Theorem2Args),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SolveArgs {
    /// Built-in basin name or path to a basin JSON file.
    #[arg(long, default_value = "three_node_baseline")]
    basin: String,
    /// Apply a scenario (name or id) of the factorial design to the basin first.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "gcm")]
    structure: MarketStructure,
    /// `fb` or `lemke`. Without it FB-Newton runs and Lemke is tried if it fails.
    #[arg(long)]
    solver: Option<SolverKind>,
    /// Scalar start value for every variable, or a JSON file holding a start vector.
    #[arg(long, default_value = "1")]
    start: String,
    #[arg(long, default_value = "riverlcp-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SweepArgs {
    #[arg(long, default_value = "three_node_baseline")]
    basin: String,
    /// Run only the first N scenario ids.
    #[arg(long)]
    limit: Option<usize>,
    /// Run a single scenario (name or id).
    #[arg(long)]
    scenario: Option<String>,
    /// With --scenario, also write per-player flow profiles.
    #[arg(long, requires = "scenario")]
    detail: bool,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long, default_value = "1")]
    start: f64,
    #[arg(long, default_value = "riverlcp-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DefermentArgs {
    #[arg(long, default_value = "duck_river")]
    basin: String,
    /// Installation years; defaults to every period start but the last.
    #[arg(long, value_delimiter = ',')]
    years: Vec<u32>,
    #[arg(long, default_value = "riverlcp-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Theorem2Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value = "riverlcp-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RerunArgs {
    /// Manifest file, or a directory containing one.
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Written next to every output set; `rerun` reproduces the outputs from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    basin: Option<String>,
    structure: Option<String>,
    solver: Option<String>,
    start: Option<String>,
    seeds: Vec<u64>,
    out: PathBuf,
    tool_version: String,
    invocation: Command,
}

/// Error categories with stable exit codes.
#[derive(Debug)]
enum Failure {
    Input(String),
    Schema(String),
    NotConverged(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) | Failure::Schema(m) | Failure::NotConverged(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Input(_) => ("InputError", 2),
                Failure::Schema(_) => ("SchemaError", 2),
                Failure::NotConverged(_) => ("NonConvergence", 3),
            };
        }
        if let Some(b) = cause.downcast_ref::<BasinError>() {
            return (if matches!(b, BasinError::Schema { .. }) { "SchemaError" } else { "InputError" }, 2);
        }
        if let Some(FormulationError::StartLength { .. } | FormulationError::Basin(_)) = cause.downcast_ref() {
            return ("InputError", 2);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return ("InputError", 2);
        }
    }
    ("InternalError", 1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            report_error("UsageError", 2, msg.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            report_error(kind, code, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}

fn report_error(kind: &str, code: u8, message: &str) {
    let doc = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{doc}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Deferment(a) => cmd_deferment(&a),
        Command::CheckTheorem2(a) => cmd_theorem2(&a),
        Command::Rerun(a) => cmd_rerun(&a),
    }
}

fn resolve_basin(name: &str) -> Result<BasinConfig> {
    if let Some(cfg) = builtin_basin(name) {
        return Ok(cfg);
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(Failure::Schema(format!("{name:?} is neither a built-in basin nor a readable file")).into());
    }
    let doc = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(load_basin(&doc).with_context(|| format!("loading {}", path.display()))?)
}

fn with_scenario(cfg: BasinConfig, scenario: Option<&str>) -> Result<BasinConfig> {
    match scenario {
        None => Ok(cfg),
        Some(s) => {
            let spec = resolve_scenario(s).ok_or_else(|| Failure::Input(format!("unknown scenario {s:?}")))?;
            Ok(spec.apply(&cfg)?)
        }
    }
}

fn parse_start(start: &str) -> Result<StartPoint> {
    if let Ok(v) = start.parse::<f64>() {
        return Ok(StartPoint::Uniform(v));
    }
    let doc = fs::read_to_string(start).map_err(|e| Failure::Input(format!("start {start:?}: {e}")))?;
    let v: Vec<f64> = serde_json::from_str(&doc).map_err(|e| Failure::Input(format!("start file {start}: {e}")))?;
    Ok(StartPoint::Vector(v))
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_file(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(out, name, s)
}

fn manifest(command: &Command) -> RunManifest {
    let mut m = RunManifest {
        command: String::new(),
        basin: None,
        structure: None,
        solver: None,
        start: None,
        seeds: Vec::new(),
        out: PathBuf::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: command.clone(),
    };
    let solver = |s: &Option<SolverKind>| Some(s.map_or("fb+lemke", |k| if k == SolverKind::Lemke { "lemke" } else { "fb" }).to_string());
    match command {
        Command::Solve(a) => {
            m.command = "solve".into();
            m.basin = Some(a.basin.clone());
            m.structure = Some(a.structure.name().into());
            m.solver = solver(&a.solver);
            m.start = Some(a.start.clone());
            m.out = a.out.clone();
        }
        Command::Sweep(a) => {
            m.command = "sweep".into();
            m.basin = Some(a.basin.clone());
            m.solver = solver(&a.solver);
            m.start = Some(a.start.to_string());
            m.out = a.out.clone();
        }
        Command::Deferment(a) => {
            m.command = "deferment".into();
            m.basin = Some(a.basin.clone());
            m.solver = solver(&None);
            m.out = a.out.clone();
        }
        Command::CheckTheorem2(a) => {
            m.command = "check-theorem2".into();
            m.seeds = (0..a.count as u64).map(|k| a.seed.wrapping_add(k)).collect();
            m.out = a.out.clone();
        }
        Command::Rerun(_) => m.command = "rerun".into(),
    }
    m
}

fn solver_options(solver: Option<SolverKind>, start: StartPoint) -> SweepOptions {
    SweepOptions {
        solve: SolveOptions { solver, start, ..Default::default() },
        lemke_fallback: solver.is_none(),
        threads: None,
    }
}

fn display_csv(cfg: &BasinConfig, d: &DisplayQuantities, label: Option<&str>) -> String {
    let mut s = String::new();
    if label.is_none() {
        s.push_str("player,name,period,inflow_with_market,inflow_without_market,freely_available_inflow,purchased,max_usable_inflow,resource_utilization\n");
    }
    for (i, p) in cfg.players.iter().enumerate() {
        for t in 0..cfg.periods {
            if let Some(l) = label {
                let _ = write!(s, "{l},");
            }
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                i + 1,
                p.name,
                t + 1,
                d.inflow_with_market[i][t],
                d.inflow_without_market[i][t],
                d.freely_available_inflow[i][t],
                d.purchased[i][t],
                d.max_usable_inflow[i][t],
                d.resource_utilization[i][t]
            );
        }
    }
    s
}

fn welfare_csv(cfg: &BasinConfig, sol: &EquilibriumSolution, base: &EquilibriumSolution) -> String {
    let mut s = String::from("player,name,welfare,no_market_welfare,reward\n");
    for (i, p) in cfg.players.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", i + 1, p.name, sol.welfare[i], base.welfare[i], sol.welfare[i] - base.welfare[i]);
    }
    s
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let cfg = with_scenario(resolve_basin(&a.basin)?, a.scenario.as_deref())?;
    let opts = solver_options(a.solver, parse_start(&a.start)?);
    let (sol, used) = solve_with_fallback(&cfg, a.structure, &opts)?;
    let base = solve_no_market_recursive(&cfg)?;
    prepare_out(&a.out)?;
    write_json(&a.out, "solution.json", &sol)?;
    write_file(&a.out, "welfare.csv", welfare_csv(&cfg, &sol, &base))?;

    let mut diag = serde_json::json!({
        "structure": a.structure.name(),
        "solver": used,
        "converged": sol.converged(),
        "report": sol.report.as_ref().map(|r| serde_json::json!({
            "status": r.status, "residual": r.residual, "iterations": r.iterations
        })),
    });
    match display_quantities(&cfg, &sol) {
        Ok(d) => write_file(&a.out, "display.csv", display_csv(&cfg, &d, None))?,
        Err(e) => diag["display_error"] = e.to_string().into(),
    }
    if a.structure == MarketStructure::Gcm && sol.converged() {
        diag["theorem3_findings"] = serde_json::to_value(verify_theorem3(&cfg, &sol)?)?;
        diag["theorem4_findings"] = serde_json::to_value(verify_theorem4(&cfg, &sol)?)?;
        diag["common_prices"] = serde_json::to_value(common_prices(&cfg, &sol)?)?;
    }
    write_json(&a.out, "diagnostics.json", &diag)?;
    write_json(&a.out, MANIFEST, &manifest(&Command::Solve(a.clone())))?;

    println!("{} welfare {:.6}", a.structure, sol.total_welfare());
    if !sol.converged() {
        let r = sol.report.as_ref();
        bail!(Failure::NotConverged(format!(
            "{} solve did not converge (residual {:e})",
            a.structure,
            r.map_or(f64::NAN, |r| r.residual)
        )));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let base = resolve_basin(&a.basin)?;
    let mut specs = generate_scenarios();
    if let Some(s) = &a.scenario {
        specs = vec![resolve_scenario(s).ok_or_else(|| Failure::Input(format!("unknown scenario {s:?}")))?];
    }
    if let Some(n) = a.limit {
        specs.truncate(n);
    }
    let opts = solver_options(a.solver, StartPoint::Uniform(a.start));
    let summary = run_sweep(&base, &specs, &opts).map_err(|e| Failure::Input(e.to_string()))?;
    prepare_out(&a.out)?;
    let mut csv = Vec::new();
    write_csv(&summary.rows, &mut csv)?;
    write_file(&a.out, "scenarios.csv", csv)?;
    let doc = serde_json::json!({ "summary": summary, "classification": classify_scenarios(&summary) });
    write_json(&a.out, "summary.json", &doc)?;
    let table = render_table(&summary);
    write_file(&a.out, "table.txt", &table)?;

    if a.detail {
        let spec = specs[0];
        let out = run_scenario(&base, &spec, &opts)?;
        let mut s = String::from("structure,player,name,period,inflow_with_market,inflow_without_market,freely_available_inflow,purchased,max_usable_inflow,resource_utilization\n");
        for sol in [&out.no_market, &out.gcm, &out.csm] {
            let d = display_quantities(&out.cfg, sol)?;
            s.push_str(&display_csv(&out.cfg, &d, Some(sol.structure.name())));
        }
        write_file(&a.out, "profile.csv", s)?;
        write_json(&a.out, "detail.json", &out)?;
    }
    write_json(&a.out, MANIFEST, &manifest(&Command::Sweep(a.clone())))?;

    print!("{table}");
    if summary.failures > 0 {
        bail!(Failure::NotConverged(format!("{} of {} scenarios failed", summary.failures, summary.scenarios)));
    }
    Ok(())
}

fn cmd_deferment(a: &DefermentArgs) -> Result<()> {
    let cfg = resolve_basin(&a.basin)?;
    let years = if a.years.is_empty() { default_installation_years(&cfg)? } else { a.years.clone() };
    let study = run_deferment(&cfg, &years, &SweepOptions::default()).map_err(|e| Failure::Input(e.to_string()))?;
    prepare_out(&a.out)?;
    let mut w = String::from("year,welfare_gcm,welfare_csm,welfare_no_market,structure_gap,converged\n");
    for y in &study.years {
        let _ = writeln!(w, "{},{},{},{},{},{}", y.year, y.welfare_gcm, y.welfare_csm, y.welfare_no_market, y.structure_gap, y.converged);
    }
    write_file(&a.out, "welfare_by_year.csv", &w)?;
    let mut c = String::from("installation_year,player,period_start_year,consumption,nominal_demand,lambda_sup\n");
    for r in &study.consumption {
        let _ = writeln!(
            c,
            "{},{},{},{},{},{}",
            r.installation_year, r.player, r.period_start_year, r.consumption, r.nominal_demand, r.lambda_sup
        );
    }
    write_file(&a.out, "consumption.csv", c)?;
    let prices: Vec<_> = study.years.iter().map(|y| serde_json::json!({ "year": y.year, "common_prices": y.common_prices })).collect();
    write_json(&a.out, "common_prices.json", &prices)?;
    write_json(&a.out, MANIFEST, &manifest(&Command::Deferment(a.clone())))?;

    print!("{w}");
    if let (Some(m), Some(n)) = (study.best_market_year(), study.best_no_market_year()) {
        println!("best installation year: market {m}, no market {n}");
    }
    if study.years.iter().any(|y| !y.converged) {
        bail!(Failure::NotConverged("a market solve did not converge".into()));
    }
    Ok(())
}

fn cmd_theorem2(a: &Theorem2Args) -> Result<()> {
    prepare_out(&a.out)?;
    let mut s = String::from("seed,players,u,d,verbatim_holds,flow_consistent_holds,residual\n");
    let (mut built, mut worst) = (0usize, 0.0f64);
    for inst in theorem2_instances(a.seed, a.count) {
        let r = riverlcp::theory::check_theorem2(&inst.cfg, inst.u, inst.d)?;
        if let Some(res) = r.residual {
            built += 1;
            worst = worst.max(res);
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            inst.seed,
            inst.cfg.num_players(),
            inst.u + 1,
            inst.d + 1,
            r.verbatim_holds(),
            r.flow_consistent_holds(),
            r.residual.map_or(String::new(), |x| x.to_string())
        );
    }
    write_file(&a.out, "theorem2.csv", s)?;
    write_json(&a.out, MANIFEST, &manifest(&Command::CheckTheorem2(a.clone())))?;
    println!("constructed {built}/{} equilibria, worst residual {worst:e}", a.count);
    Ok(())
}

fn cmd_rerun(a: &RerunArgs) -> Result<()> {
    let path = if a.manifest.is_dir() { a.manifest.join(MANIFEST) } else { a.manifest.clone() };
    let doc = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&doc).with_context(|| format!("parsing {}", path.display()))?;
    let mut command = m.invocation;
    if let Some(out) = &a.out {
        match &mut command {
            Command::Solve(x) => x.out = out.clone(),
            Command::Sweep(x) => x.out = out.clone(),
            Command::Deferment(x) => x.out = out.clone(),
            Command::CheckTheorem2(x) => x.out = out.clone(),
            Command::Rerun(_) => {}
        }
    }
    if matches!(command, Command::Rerun(_)) {
        bail!(Failure::Input("a manifest cannot record a rerun".into()));
    }
    run(command)
}

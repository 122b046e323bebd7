//! Solving every scenario under the three structures and aggregating the
//! comparison statistics.

use super::ScenarioSpec;
use crate::basin::{BasinConfig, BasinError};
use crate::formulations::{
    solve, solve_no_market_recursive, EquilibriumSolution, FormulationError, MarketStructure, SolveOptions,
    SolverKind,
};
use crate::lcp::SolveStatus;
use crate::metrics::{rewards, MetricsError, MetricsReport, IMPUTATION_TOL};
use crate::theory::{verify_theorem3, verify_theorem4, TheoryError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Effective characteristic values within this distance ($M) are a tie.
pub const TIE_TOL: f64 = 1e-6;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RIVERLCP_THREADS";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Basin(#[from] BasinError),
    #[error("{structure} did not converge (status {status:?}, residual {residual:e})")]
    NotConverged { structure: MarketStructure, status: SolveStatus, residual: f64 },
    #[error("no scenarios to run")]
    Empty,
    #[error("thread pool: {0}")]
    Threads(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Options of the first solve attempt.
    pub solve: SolveOptions,
    /// Retry with Lemke when the first attempt does not converge.
    pub lemke_fallback: bool,
    /// Worker threads; `None` reads [`THREADS_ENV`] and otherwise uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { solve: SolveOptions::default(), lemke_fallback: true, threads: None }
    }
}

/// Solves with the configured solver and falls back to Lemke when that does not converge.
pub fn solve_with_fallback(
    cfg: &BasinConfig,
    structure: MarketStructure,
    opts: &SweepOptions,
) -> Result<(EquilibriumSolution, SolverKind), FormulationError> {
    let first_kind = opts.solve.solver.unwrap_or(SolverKind::FbNewton);
    let first = solve(cfg, structure, &opts.solve)?;
    if first.converged() || !opts.lemke_fallback || first_kind == SolverKind::Lemke {
        return Ok((first, first_kind));
    }
    let lemke = SolveOptions { solver: Some(SolverKind::Lemke), ..opts.solve.clone() };
    match solve(cfg, structure, &lemke) {
        Ok(sol) if sol.converged() => Ok((sol, SolverKind::Lemke)),
        _ => Ok((first, first_kind)),
    }
}

/// Everything computed for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub cfg: BasinConfig,
    /// Sequential No-Market solution, the reward baseline.
    pub no_market: EquilibriumSolution,
    /// No-Market solved as an LCP, for cross-checking.
    pub no_market_lcp: EquilibriumSolution,
    pub gcm: EquilibriumSolution,
    pub csm: EquilibriumSolution,
    pub gcm_solver: SolverKind,
    pub csm_solver: SolverKind,
    pub gcm_metrics: MetricsReport,
    pub csm_metrics: MetricsReport,
}

impl ScenarioOutcome {
    /// Structure with the larger effective characteristic value, `None` on a tie.
    pub fn preferred(&self) -> Option<MarketStructure> {
        let (g, c) = (self.gcm_metrics.effective_v(), self.csm_metrics.effective_v());
        if (g - c).abs() <= TIE_TOL {
            None
        } else if g > c {
            Some(MarketStructure::Gcm)
        } else {
            Some(MarketStructure::Csm)
        }
    }
}

fn status(sol: &EquilibriumSolution) -> (SolveStatus, f64) {
    sol.report.as_ref().map_or((SolveStatus::Converged, 0.0), |r| (r.status, r.residual))
}

/// Solves the three structures of one scenario.
pub fn run_scenario(base: &BasinConfig, spec: &ScenarioSpec, opts: &SweepOptions) -> Result<ScenarioOutcome, SweepError> {
    let cfg = spec.apply(base)?;
    let no_market = solve_no_market_recursive(&cfg)?;
    let (no_market_lcp, _) = solve_with_fallback(&cfg, MarketStructure::NoMarket, opts)?;
    let (gcm, gcm_solver) = solve_with_fallback(&cfg, MarketStructure::Gcm, opts)?;
    let (csm, csm_solver) = solve_with_fallback(&cfg, MarketStructure::Csm, opts)?;
    let gcm_metrics = rewards(&gcm, &no_market)?;
    let csm_metrics = rewards(&csm, &no_market)?;
    Ok(ScenarioOutcome {
        spec: *spec,
        cfg,
        no_market,
        no_market_lcp,
        gcm,
        csm,
        gcm_solver,
        csm_solver,
        gcm_metrics,
        csm_metrics,
    })
}

fn solver_name(k: SolverKind) -> &'static str {
    match k {
        SolverKind::FbNewton => "fb",
        SolverKind::Lemke => "lemke",
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::RayTermination => "ray",
        SolveStatus::MaxIterations => "max_iterations",
    }
}

/// One CSV line of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub id: usize,
    pub c_cu: String,
    pub demand_t1: String,
    pub demand_t2: String,
    pub lf: String,
    pub v_gcm: f64,
    pub v_csm: f64,
    pub r1_gcm: f64,
    pub r2_gcm: f64,
    pub r3_gcm: f64,
    pub r1_csm: f64,
    pub r2_csm: f64,
    pub r3_csm: f64,
    pub imputation_gcm: bool,
    pub imputation_csm: bool,
    /// `gcm`, `csm`, `tie` or empty when the scenario failed.
    pub preferred: String,
    /// Effective value of the preferred structure minus that of the other.
    pub gap: f64,
    pub status_gcm: String,
    pub status_csm: String,
    pub status_none: String,
    pub solver_gcm: String,
    pub solver_csm: String,
    pub residual_gcm: f64,
    pub residual_csm: f64,
    pub residual_none: f64,
    /// Largest per-player welfare difference between the LCP and sequential No-Market solutions.
    pub no_market_gap: f64,
    /// Largest per-player welfare difference between Lemke and FB-Newton No-Market solutions.
    pub no_market_solver_gap: f64,
    pub theorem3_findings: usize,
    pub theorem4_findings: usize,
    pub error: String,
}

impl ScenarioRow {
    fn failed(spec: &ScenarioSpec, err: &SweepError) -> Self {
        let nan = f64::NAN;
        let mut row = ScenarioRow::blank(spec);
        row.v_gcm = nan;
        row.v_csm = nan;
        row.gap = nan;
        row.no_market_gap = nan;
        row.no_market_solver_gap = nan;
        row.error = err.to_string();
        row
    }

    fn blank(spec: &ScenarioSpec) -> Self {
        let s = |l: &[super::Level; 3]| l.iter().map(|x| x.letter()).collect::<String>();
        ScenarioRow {
            id: spec.id,
            c_cu: s(&spec.c_cu),
            demand_t1: s(&spec.demand_t1),
            demand_t2: s(&spec.demand_t2),
            lf: s(&spec.lf),
            v_gcm: 0.0,
            v_csm: 0.0,
            r1_gcm: 0.0,
            r2_gcm: 0.0,
            r3_gcm: 0.0,
            r1_csm: 0.0,
            r2_csm: 0.0,
            r3_csm: 0.0,
            imputation_gcm: false,
            imputation_csm: false,
            preferred: String::new(),
            gap: 0.0,
            status_gcm: String::new(),
            status_csm: String::new(),
            status_none: String::new(),
            solver_gcm: String::new(),
            solver_csm: String::new(),
            residual_gcm: 0.0,
            residual_csm: 0.0,
            residual_none: 0.0,
            no_market_gap: 0.0,
            no_market_solver_gap: 0.0,
            theorem3_findings: 0,
            theorem4_findings: 0,
            error: String::new(),
        }
    }

    pub fn failed_scenario(&self) -> bool {
        !self.error.is_empty()
    }

    pub fn all_converged(&self) -> bool {
        !self.failed_scenario() && [&self.status_gcm, &self.status_csm, &self.status_none].iter().all(|s| *s == "converged")
    }

    /// Smallest reward of the preferred structure (of GCM on a tie).
    pub fn preferred_min_reward(&self) -> f64 {
        let g = self.r1_gcm.min(self.r2_gcm).min(self.r3_gcm);
        let c = self.r1_csm.min(self.r2_csm).min(self.r3_csm);
        if self.preferred == "csm" {
            c
        } else {
            g
        }
    }
}

fn max_welfare_gap(a: &EquilibriumSolution, b: &EquilibriumSolution) -> f64 {
    a.welfare.iter().zip(&b.welfare).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Builds the CSV row of a solved scenario, running the solver and theorem cross-checks.
pub fn scenario_row(out: &ScenarioOutcome, opts: &SweepOptions) -> Result<ScenarioRow, SweepError> {
    let mut row = ScenarioRow::blank(&out.spec);
    let (g, c) = (&out.gcm_metrics, &out.csm_metrics);
    row.v_gcm = g.v;
    row.v_csm = c.v;
    [row.r1_gcm, row.r2_gcm, row.r3_gcm] = [g.rewards[0], g.rewards[1], g.rewards[2]];
    [row.r1_csm, row.r2_csm, row.r3_csm] = [c.rewards[0], c.rewards[1], c.rewards[2]];
    row.imputation_gcm = g.is_imputation;
    row.imputation_csm = c.is_imputation;
    row.preferred = out.preferred().map_or("tie".to_string(), |s| s.name().to_string());
    row.gap = (g.effective_v() - c.effective_v()).abs();
    let (sg, rg) = status(&out.gcm);
    let (sc, rc) = status(&out.csm);
    let (sn, rn) = status(&out.no_market_lcp);
    row.status_gcm = status_name(sg).into();
    row.status_csm = status_name(sc).into();
    row.status_none = status_name(sn).into();
    row.solver_gcm = solver_name(out.gcm_solver).into();
    row.solver_csm = solver_name(out.csm_solver).into();
    row.residual_gcm = rg;
    row.residual_csm = rc;
    row.residual_none = rn;
    row.no_market_gap = max_welfare_gap(&out.no_market_lcp, &out.no_market);

    let fb = solve(&out.cfg, MarketStructure::NoMarket, &SolveOptions { solver: Some(SolverKind::FbNewton), ..opts.solve.clone() })?;
    let lemke = solve(&out.cfg, MarketStructure::NoMarket, &SolveOptions { solver: Some(SolverKind::Lemke), ..opts.solve.clone() })?;
    row.no_market_solver_gap =
        if fb.converged() && lemke.converged() { max_welfare_gap(&fb, &lemke) } else { f64::NAN };

    if out.gcm.converged() {
        row.theorem3_findings = verify_theorem3(&out.cfg, &out.gcm)?.len();
        row.theorem4_findings = verify_theorem4(&out.cfg, &out.gcm)?.len();
    }
    Ok(row)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureStats {
    pub preferred: usize,
    /// Share of non-tied, non-failed scenarios in which this structure is preferred (percent).
    pub pct_higher: f64,
    /// Mean and sample standard deviation of the effective value over its preferred scenarios.
    pub mean_v: f64,
    pub std_v: f64,
    /// Mean and sample standard deviation of the gap over its preferred scenarios.
    pub mean_gap: f64,
    pub std_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenarios: usize,
    /// Scenarios with an error or a structure that did not converge.
    pub failures: usize,
    pub ties: usize,
    pub gcm: StructureStats,
    pub csm: StructureStats,
    /// Scenarios whose preferred structure leaves every player no worse off.
    pub imputation_exists: usize,
    pub max_no_market_gap: f64,
    pub max_no_market_solver_gap: f64,
    pub theorem3_findings: usize,
    pub theorem4_findings: usize,
    #[serde(skip)]
    pub rows: Vec<ScenarioRow>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Aggregates rows into the comparison statistics.
pub fn summarize(rows: Vec<ScenarioRow>) -> SweepSummary {
    let ok: Vec<&ScenarioRow> = rows.iter().filter(|r| r.all_converged()).collect();
    let decided = ok.iter().filter(|r| r.preferred != "tie").count();
    let stats = |name: &str| {
        let pref: Vec<&&ScenarioRow> = ok.iter().filter(|r| r.preferred == name).collect();
        let v: Vec<f64> = pref
            .iter()
            .map(|r| if name == "gcm" { if r.imputation_gcm { r.v_gcm } else { 0.0 } } else if r.imputation_csm { r.v_csm } else { 0.0 })
            .collect();
        let gaps: Vec<f64> = pref.iter().map(|r| r.gap).collect();
        let (mean_v, std_v) = mean_std(&v);
        let (mean_gap, std_gap) = mean_std(&gaps);
        StructureStats {
            preferred: pref.len(),
            pct_higher: if decided > 0 { 100.0 * pref.len() as f64 / decided as f64 } else { f64::NAN },
            mean_v,
            std_v,
            mean_gap,
            std_gap,
        }
    };
    let fold_max = |f: fn(&ScenarioRow) -> f64| ok.iter().map(|r| f(r)).fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    SweepSummary {
        scenarios: rows.len(),
        failures: rows.len() - ok.len(),
        ties: ok.iter().filter(|r| r.preferred == "tie").count(),
        gcm: stats("gcm"),
        csm: stats("csm"),
        imputation_exists: ok.iter().filter(|r| r.preferred_min_reward() >= -IMPUTATION_TOL).count(),
        max_no_market_gap: fold_max(|r| r.no_market_gap),
        max_no_market_solver_gap: fold_max(|r| r.no_market_solver_gap),
        theorem3_findings: ok.iter().map(|r| r.theorem3_findings).sum(),
        theorem4_findings: ok.iter().map(|r| r.theorem4_findings).sum(),
        rows,
    }
}

fn thread_count(opts: &SweepOptions) -> Option<usize> {
    opts.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())).filter(|&n| n > 0)
}

/// Solves every scenario (in parallel, rows in input order) and aggregates.
/// Per-scenario failures are recorded in the rows, not returned.
pub fn run_sweep(base: &BasinConfig, specs: &[ScenarioSpec], opts: &SweepOptions) -> Result<SweepSummary, SweepError> {
    if specs.is_empty() {
        return Err(SweepError::Empty);
    }
    let work = || -> Vec<ScenarioRow> {
        specs
            .par_iter()
            .map(|spec| {
                run_scenario(base, spec, opts)
                    .and_then(|out| scenario_row(&out, opts))
                    .unwrap_or_else(|e| ScenarioRow::failed(spec, &e))
            })
            .collect()
    };
    let rows = match thread_count(opts) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SweepError::Threads(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(summarize(rows))
}

pub fn write_csv<W: Write>(rows: &[ScenarioRow], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Plain-text rendering of the comparison table.
pub fn render_table(s: &SweepSummary) -> String {
    let mut t = String::new();
    t.push_str(&format!("{:<26}{:>12}{:>12}\n", "Metric", "GCM", "CSM"));
    let line = |t: &mut String, name: &str, g: String, c: String| t.push_str(&format!("{name:<26}{g:>12}{c:>12}\n"));
    line(&mut t, "% higher v(N)", format!("{:.2}%", s.gcm.pct_higher), format!("{:.2}%", s.csm.pct_higher));
    line(&mut t, "average v(N)", format!("${:.2}", s.gcm.mean_v), format!("${:.2}", s.csm.mean_v));
    line(&mut t, "std. dev v(N)", format!("${:.2}", s.gcm.std_v), format!("${:.2}", s.csm.std_v));
    line(&mut t, "average gap v(N)", format!("${:.2}", s.gcm.mean_gap), format!("${:.2}", s.csm.mean_gap));
    line(&mut t, "std. dev gap v(N)", format!("${:.2}", s.gcm.std_gap), format!("${:.2}", s.csm.std_gap));
    t.push_str(&format!(
        "\nscenarios {}  failures {}  ties {}  imputation exists {}/{}\n",
        s.scenarios,
        s.failures,
        s.ties,
        s.imputation_exists,
        s.scenarios - s.failures
    ));
    t
}

/// Checks of the qualitative claims about which scenarios favour which structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub gcm_preferred: usize,
    /// GCM-preferred scenarios where player 3 has low period-1 and high period-2 demand.
    pub gcm_growth_pattern: usize,
    /// `gcm_growth_pattern / gcm_preferred`; 1 when nothing is GCM-preferred.
    pub gcm_growth_fraction: f64,
    /// Spearman correlation of the best effective value with how strongly period-2
    /// demand rises downstream.
    pub rho_demand_downstream: f64,
    /// Spearman correlation of the best effective value with how strongly losses rise upstream.
    pub rho_losses_upstream: f64,
}

fn level_rank(c: char) -> i32 {
    match c {
        'L' => 0,
        'M' => 1,
        _ => 2,
    }
}

/// Concordant minus discordant player pairs: +3 when the levels increase downstream.
fn downstream_trend(levels: &str) -> f64 {
    let l: Vec<i32> = levels.chars().map(level_rank).collect();
    let mut s = 0;
    for i in 0..l.len() {
        for j in i + 1..l.len() {
            s += (l[j] - l[i]).signum();
        }
    }
    s as f64
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn classify_scenarios(summary: &SweepSummary) -> Classification {
    let ok: Vec<&ScenarioRow> = summary.rows.iter().filter(|r| r.all_converged()).collect();
    let gcm: Vec<&&ScenarioRow> = ok.iter().filter(|r| r.preferred == "gcm").collect();
    let growth = gcm.iter().filter(|r| r.demand_t1.ends_with('L') && r.demand_t2.ends_with('H')).count();
    let best: Vec<f64> = ok
        .iter()
        .map(|r| {
            let g = if r.imputation_gcm { r.v_gcm } else { 0.0 };
            let c = if r.imputation_csm { r.v_csm } else { 0.0 };
            g.max(c)
        })
        .collect();
    let demand: Vec<f64> = ok.iter().map(|r| downstream_trend(&r.demand_t2)).collect();
    let losses: Vec<f64> = ok.iter().map(|r| -downstream_trend(&r.lf)).collect();
    Classification {
        gcm_preferred: gcm.len(),
        gcm_growth_pattern: growth,
        gcm_growth_fraction: if gcm.is_empty() { 1.0 } else { growth as f64 / gcm.len() as f64 },
        rho_demand_downstream: spearman(&best, &demand),
        rho_losses_upstream: spearman(&best, &losses),
    }
}

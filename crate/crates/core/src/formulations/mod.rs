//! Market structures as mixed LCPs, welfare evaluation, and the sequential
//! No-Market solver.

mod assemble;
mod recursive;

pub use recursive::solve_no_market_recursive;

use crate::basin::{BasinConfig, BasinError};
use crate::lcp::{
    solve_fb_newton, solve_lemke_with, LcpError, LemkeOptions, MlcpProblem, NewtonOptions, SolveReport, Symbol,
    VarKey,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarketStructure {
    /// General commodity market: bilateral purchases priced at the seller.
    Gcm,
    /// Cost-sharing market: purchases priced at the buyer, sellers paid by every downstream price.
    Csm,
    NoMarket,
}

impl MarketStructure {
    pub const ALL: [MarketStructure; 3] = [MarketStructure::Gcm, MarketStructure::Csm, MarketStructure::NoMarket];

    pub fn name(self) -> &'static str {
        match self {
            MarketStructure::Gcm => "gcm",
            MarketStructure::Csm => "csm",
            MarketStructure::NoMarket => "none",
        }
    }
}

impl fmt::Display for MarketStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MarketStructure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gcm" => Ok(MarketStructure::Gcm),
            "csm" => Ok(MarketStructure::Csm),
            "none" | "nomarket" | "no-market" | "no_market" => Ok(MarketStructure::NoMarket),
            other => Err(format!("unknown market structure {other:?} (expected gcm, csm or none)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error(transparent)]
    Lcp(#[from] LcpError),
    #[error(transparent)]
    Basin(#[from] BasinError),
    #[error("missing value for {0}")]
    MissingValue(String),
    #[error("player {player} has no feasible withdrawal in period {period} (upper bound {bound})")]
    InfeasiblePlayer { player: usize, period: usize, bound: f64 },
    #[error("start vector has length {got}, problem has {expected} variables")]
    StartLength { expected: usize, got: usize },
}

pub fn build_gcm(cfg: &BasinConfig) -> MlcpProblem {
    assemble::build(cfg, MarketStructure::Gcm)
}

pub fn build_csm(cfg: &BasinConfig) -> MlcpProblem {
    assemble::build(cfg, MarketStructure::Csm)
}

pub fn build_no_market(cfg: &BasinConfig) -> MlcpProblem {
    assemble::build(cfg, MarketStructure::NoMarket)
}

pub fn build(cfg: &BasinConfig, structure: MarketStructure) -> MlcpProblem {
    assemble::build(cfg, structure)
}

/// Variable values keyed by model identity.
pub type Values = BTreeMap<VarKey, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEntry {
    #[serde(flatten)]
    pub key: VarKey,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub structure: MarketStructure,
    #[serde(with = "values_as_list")]
    pub values: Values,
    pub welfare: Vec<f64>,
    /// Solver report; absent for the sequential No-Market solver.
    pub report: Option<SolveReport>,
}

mod values_as_list {
    use super::{ValueEntry, Values};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Values, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<ValueEntry> = v.iter().map(|(k, &value)| ValueEntry { key: *k, value }).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Values, D::Error> {
        let list = Vec::<ValueEntry>::deserialize(d)?;
        Ok(list.into_iter().map(|e| (e.key, e.value)).collect())
    }
}

impl EquilibriumSolution {
    /// Builds a solution from a solver report on `p`, recomputing welfare from the primal values.
    pub fn from_report(
        cfg: &BasinConfig,
        structure: MarketStructure,
        p: &MlcpProblem,
        report: SolveReport,
    ) -> Result<Self, FormulationError> {
        let values: Values = p.vars().iter().map(|v| (v.key, report.z[v.id])).collect();
        let welfare = welfare(cfg, structure, &values)?;
        Ok(EquilibriumSolution { structure, values, welfare, report: Some(report) })
    }

    /// Value of a variable; zero when the variable does not exist in this structure.
    pub fn get(&self, symbol: Symbol, player: usize, period: usize) -> f64 {
        self.values.get(&VarKey::new(symbol, player, period)).copied().unwrap_or(0.0)
    }

    pub fn get_class(&self, symbol: Symbol, player: usize, class: usize, period: usize) -> f64 {
        self.values.get(&VarKey::new(symbol, player, period).with_class(class)).copied().unwrap_or(0.0)
    }

    /// GCM purchase of `buyer` from `seller`.
    pub fn purchase(&self, buyer: usize, seller: usize, period: usize) -> f64 {
        self.values
            .get(&VarKey::new(Symbol::Purchase, buyer, period).with_partner(seller))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total purchases of `player` in `period` (sum over sellers for GCM).
    pub fn total_purchase(&self, player: usize, period: usize) -> f64 {
        self.values
            .iter()
            .filter(|(k, _)| k.symbol == Symbol::Purchase && k.player == player && k.period == period)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn converged(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.converged())
    }

    pub fn total_welfare(&self) -> f64 {
        self.welfare.iter().sum()
    }
}

fn need(values: &Values, key: VarKey) -> Result<f64, FormulationError> {
    values.get(&key).copied().ok_or_else(|| FormulationError::MissingValue(key.to_string()))
}

/// Discounted objective of each player evaluated at `values`.
pub fn welfare(cfg: &BasinConfig, structure: MarketStructure, values: &Values) -> Result<Vec<f64>, FormulationError> {
    let d = cfg.discounts();
    let ni = cfg.num_players();
    let mut out = vec![0.0; ni];
    for (i, p) in cfg.players.iter().enumerate() {
        let mut total = 0.0;
        for t in 0..cfg.periods {
            let q = need(values, VarKey::new(Symbol::Demand, i, t))?;
            let ws = need(values, VarKey::new(Symbol::StorageRelease, i, t))?;
            let cap = need(values, VarKey::new(Symbol::Capacity, i, t))?;
            let mut v = p.alpha(t) * q - 0.5 * p.beta[t] * q * q - p.c_ops[t] * q - p.c_sr[t] * ws - p.c_cap[t] * cap;
            if structure != MarketStructure::NoMarket {
                let mut lr = 0.0;
                for c in 0..cfg.classes {
                    let l = need(values, VarKey::new(Symbol::LossReduction, i, t).with_class(c))?;
                    lr += l;
                    v -= p.c_cu[c][t] * l;
                }
                let price = |k: usize| need(values, VarKey::new(Symbol::Price, k, t));
                match structure {
                    MarketStructure::Gcm => {
                        v += price(i)? * (lr + ws);
                        for j in 0..i {
                            let wp = need(values, VarKey::new(Symbol::Purchase, i, t).with_partner(j))?;
                            v -= price(j)? * wp;
                        }
                    }
                    MarketStructure::Csm => {
                        for k in i + 1..ni {
                            v += price(k)? * (lr + ws);
                        }
                        if i > 0 {
                            v -= price(i)? * need(values, VarKey::new(Symbol::Purchase, i, t))?;
                        }
                    }
                    MarketStructure::NoMarket => unreachable!(),
                }
            }
            total += d[t] * v;
        }
        out[i] = total;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    FbNewton,
    Lemke,
}

impl FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fb" | "newton" => Ok(SolverKind::FbNewton),
            "lemke" => Ok(SolverKind::Lemke),
            other => Err(format!("unknown solver {other:?} (expected fb or lemke)")),
        }
    }
}

/// Starting point of the Newton iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StartPoint {
    /// Every variable set to the same value.
    Uniform(f64),
    Vector(Vec<f64>),
}

impl Default for StartPoint {
    fn default() -> Self {
        StartPoint::Uniform(1.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub solver: Option<SolverKind>,
    pub start: StartPoint,
    pub newton: NewtonOptions,
    pub lemke: LemkeOptions,
}

impl SolveOptions {
    pub fn with_start(start: f64) -> Self {
        SolveOptions { start: StartPoint::Uniform(start), ..Default::default() }
    }
}

/// Assembles and solves one structure. Non-convergence is reported in the
/// solution's report rather than as an error.
pub fn solve(cfg: &BasinConfig, structure: MarketStructure, opts: &SolveOptions) -> Result<EquilibriumSolution, FormulationError> {
    let p = build(cfg, structure);
    let report = match opts.solver.unwrap_or(SolverKind::FbNewton) {
        SolverKind::FbNewton => {
            let start = match &opts.start {
                StartPoint::Uniform(v) => vec![*v; p.n()],
                StartPoint::Vector(v) => {
                    if v.len() != p.n() {
                        return Err(FormulationError::StartLength { expected: p.n(), got: v.len() });
                    }
                    v.clone()
                }
            };
            solve_fb_newton(&p, &start, &opts.newton)?
        }
        SolverKind::Lemke => solve_lemke_with(&p, &opts.lemke)?,
    };
    EquilibriumSolution::from_report(cfg, structure, &p, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basin::builtin_basin;
    use crate::lcp::{residual, Sign};

    fn baseline() -> BasinConfig {
        builtin_basin("three_node_baseline").unwrap()
    }

    fn count(p: &MlcpProblem, s: Symbol) -> usize {
        p.vars().iter().filter(|v| v.key.symbol == s).count()
    }

    #[test]
    fn variable_counts() {
        let cfg = baseline();
        assert_eq!(build_gcm(&cfg).n(), 90);
        assert_eq!(build_csm(&cfg).n(), 88);
        assert_eq!(build_no_market(&cfg).n(), 54);
    }

    #[test]
    fn family_sizes() {
        let cfg = baseline();
        let (ni, nt, nc) = (3, 2, 2);
        let g = build_gcm(&cfg);
        for s in [
            Symbol::WithdrawalIncrement,
            Symbol::StorageRelease,
            Symbol::Demand,
            Symbol::Capacity,
            Symbol::GammaFlow,
            Symbol::GammaCap,
            Symbol::LambdaSup,
            Symbol::LambdaAug,
            Symbol::MinOutflow,
            Symbol::Price,
        ] {
            assert_eq!(count(&g, s), ni * nt, "{s}");
        }
        assert_eq!(count(&g, Symbol::LossReduction), ni * nt * nc);
        assert_eq!(count(&g, Symbol::GammaLoss), ni * nt * nc);
        // Upstream pairs (1,0), (2,0), (2,1) per period.
        assert_eq!(count(&g, Symbol::Purchase), 3 * nt);
        let c = build_csm(&cfg);
        assert_eq!(count(&c, Symbol::Purchase), 2 * nt);
        let n = build_no_market(&cfg);
        for s in [Symbol::LossReduction, Symbol::GammaLoss, Symbol::Purchase, Symbol::Price] {
            assert_eq!(count(&n, s), 0);
        }
        for p in [&g, &c, &n] {
            for v in p.vars() {
                assert_eq!(v.sign, v.key.symbol.default_sign());
            }
            assert_eq!(p.vars().iter().filter(|v| v.sign == Sign::Free).count(), 3 * ni * nt);
        }
    }

    #[test]
    fn single_player_has_no_purchases() {
        let mut cfg = baseline();
        cfg.players.truncate(1);
        let g = build_gcm(&cfg);
        assert_eq!(count(&g, Symbol::Purchase), 0);
        let c = build_csm(&cfg);
        assert_eq!(count(&c, Symbol::Purchase), 0);
        // Price rows of a lone CSM player are empty.
        for v in c.vars().iter().filter(|v| v.key.symbol == Symbol::Price) {
            assert_eq!(c.matrix().row(v.id).count(), 0);
            assert_eq!(c.q()[v.id], 0.0);
            assert!((0..c.n()).all(|r| c.matrix().get(r, v.id) == 0.0));
        }
        // GCM price row: supply only.
        for v in g.vars().iter().filter(|v| v.key.symbol == Symbol::Price) {
            let cols: Vec<Symbol> = g.matrix().row(v.id).map(|(j, _)| g.vars()[j].key.symbol).collect();
            assert!(cols.iter().all(|s| matches!(s, Symbol::LossReduction | Symbol::StorageRelease)));
        }
    }

    #[test]
    fn single_player_single_period_no_market() {
        // Ample inflow: Q = (alpha - c_ops)/beta and the flow multiplier is zero.
        let mut cfg = baseline();
        cfg.players.truncate(1);
        cfg.periods = 1;
        let p0 = &mut cfg.players[0];
        for v in [&mut p0.c_ops, &mut p0.c_cap, &mut p0.c_sr, &mut p0.r_fc, &mut p0.a_req, &mut p0.demand, &mut p0.beta] {
            v.truncate(1);
        }
        for m in [&mut p0.c_cu, &mut p0.lf] {
            for row in m.iter_mut() {
                row.truncate(1);
            }
        }
        cfg.validate().unwrap();
        let sol = solve(&cfg, MarketStructure::NoMarket, &SolveOptions::default()).unwrap();
        assert!(sol.converged());
        let alpha = cfg.players[0].alpha(0);
        assert!((sol.get(Symbol::Demand, 0, 0) - (alpha - 1.0) / 3.0).abs() < 1e-8);
        assert!(sol.get(Symbol::GammaFlow, 0, 0).abs() < 1e-8);
        assert!(sol.get(Symbol::Capacity, 0, 0).abs() < 1e-9);
        assert!(sol.get(Symbol::StorageRelease, 0, 0).abs() < 1e-9);
        // Welfare is the quadratic maximum.
        assert!((sol.welfare[0] - (alpha - 1.0).powi(2) / 6.0).abs() < 1e-7);
    }

    #[test]
    fn welfare_with_zero_demand_is_capital_only() {
        let mut cfg = baseline();
        cfg.players[1].c_cap = vec![2.0, 3.0];
        let p = build_gcm(&cfg);
        let mut values: Values = p.vars().iter().map(|v| (v.key, 0.0)).collect();
        values.insert(VarKey::new(Symbol::Capacity, 1, 0), 1.5);
        values.insert(VarKey::new(Symbol::Capacity, 1, 1), 1.5);
        let w = welfare(&cfg, MarketStructure::Gcm, &values).unwrap();
        let d = cfg.discounts();
        assert_eq!(w[0], 0.0);
        assert!((w[1] + d[0] * 2.0 * 1.5 + d[1] * 3.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn welfare_reports_missing_symbols() {
        let cfg = baseline();
        let values = Values::new();
        assert!(matches!(welfare(&cfg, MarketStructure::NoMarket, &values), Err(FormulationError::MissingValue(_))));
    }

    #[test]
    fn one_period_reduction_matches_short_kkt() {
        // One period, one class, no capital: after eliminating W^D = Q the
        // GCM rows reduce to the short KKT system.
        let mut cfg = baseline();
        cfg.periods = 1;
        cfg.classes = 1;
        for p in cfg.players.iter_mut() {
            for v in [&mut p.c_ops, &mut p.c_cap, &mut p.c_sr, &mut p.r_fc, &mut p.a_req, &mut p.demand, &mut p.beta] {
                v.truncate(1);
            }
            p.c_cu = vec![vec![p.c_cu[0][0]]];
            p.lf = vec![vec![0.15]];
            p.c_sr = vec![1e3];
        }
        cfg.validate().unwrap();
        let g = build_gcm(&cfg);
        let id = |s: Symbol, i: usize| g.vars().iter().find(|v| v.key.symbol == s && v.key.player == i && v.key.partner.is_none()).unwrap().id;
        let m = g.matrix();
        for i in 0..3 {
            let p = &cfg.players[i];
            // Q row: c_ops - alpha + beta Q - lambda + gamma_flow; W^D row: lambda - lf gamma_loss.
            let q = id(Symbol::Demand, i);
            assert_eq!(m.get(q, q), p.beta[0]);
            assert_eq!(g.q()[q], p.c_ops[0] - p.alpha(0));
            assert_eq!(m.get(q, id(Symbol::GammaFlow, i)), 1.0);
            let wd = id(Symbol::WithdrawalIncrement, i);
            assert_eq!(m.get(wd, id(Symbol::GammaLoss, i)), -0.15);
            // L^R row: c_cu - pi + gamma_loss.
            let lr = id(Symbol::LossReduction, i);
            assert_eq!(g.q()[lr], p.c_cu[0][0]);
            assert_eq!(m.get(lr, id(Symbol::Price, i)), -1.0);
            assert_eq!(m.get(lr, id(Symbol::GammaLoss, i)), 1.0);
            // gamma_loss row: lf W^D - L^R.
            let gl = id(Symbol::GammaLoss, i);
            assert_eq!(m.get(gl, wd), 0.15);
            assert_eq!(m.get(gl, lr), -1.0);
            // Flow row: n + sum W^P - r_fc - Q + O^min_{i-1}.
            let gf = id(Symbol::GammaFlow, i);
            assert_eq!(g.q()[gf], p.n - p.r_fc[0]);
            assert_eq!(m.get(gf, q), -1.0);
            // O^min row: O^min = n - lf W^D + O^min_{i-1}.
            let om = id(Symbol::MinOutflow, i);
            assert_eq!(m.get(om, wd), 0.15);
            assert_eq!(g.q()[om], -p.n);
            if i > 0 {
                assert_eq!(m.get(gf, id(Symbol::MinOutflow, i - 1)), 1.0);
                assert_eq!(m.get(om, id(Symbol::MinOutflow, i - 1)), -1.0);
            }
        }
    }

    #[test]
    fn solution_serializes() {
        let cfg = baseline();
        let sol = solve(&cfg, MarketStructure::NoMarket, &SolveOptions::default()).unwrap();
        let text = serde_json::to_string(&sol).unwrap();
        let back: EquilibriumSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.values, sol.values);
        assert!(residual(&build_no_market(&cfg), &sol.report.as_ref().unwrap().z) <= 1e-9);
    }
}

//! Cooperative-game view of a market equilibrium: rewards against the
//! No-Market baseline, the characteristic function, the imputation test and
//! the flow quantities used to explain resource utilization.

use crate::basin::BasinConfig;
use crate::formulations::{EquilibriumSolution, MarketStructure};
use crate::lcp::Symbol;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rewards at or above `-IMPUTATION_TOL` ($M) count as nonnegative.
pub const IMPUTATION_TOL: f64 = 1e-6;

/// Market activity (MGD) below this is treated as no participation.
pub const ACTIVITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("baseline must be a No-Market solution, got {0}")]
    BaselineStructure(MarketStructure),
    #[error("solutions disagree on the number of players ({market} vs {base})")]
    PlayerCount { market: usize, base: usize },
    #[error("resource utilization undefined for player {player} in period {period}: {which} is zero")]
    DegenerateUtilization { player: usize, period: usize, which: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub structure: MarketStructure,
    /// Welfare gain of each player over the No-Market baseline.
    pub rewards: Vec<f64>,
    /// Characteristic function value: sum of all rewards.
    pub v: f64,
    /// Sum of rewards over players active in the market only.
    pub v_participating: f64,
    pub participating: Vec<bool>,
    pub is_imputation: bool,
}

impl MetricsReport {
    pub fn min_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `v` when the rewards form an imputation, zero otherwise. A structure
    /// some player would veto brings no welfare improvement.
    pub fn effective_v(&self) -> f64 {
        if self.is_imputation {
            self.v
        } else {
            0.0
        }
    }
}

/// Rewards of `market` relative to the No-Market solution `base` of the same basin.
pub fn rewards(market: &EquilibriumSolution, base: &EquilibriumSolution) -> Result<MetricsReport, MetricsError> {
    if base.structure != MarketStructure::NoMarket {
        return Err(MetricsError::BaselineStructure(base.structure));
    }
    if market.welfare.len() != base.welfare.len() {
        return Err(MetricsError::PlayerCount { market: market.welfare.len(), base: base.welfare.len() });
    }
    let rewards: Vec<f64> = market.welfare.iter().zip(&base.welfare).map(|(m, b)| m - b).collect();
    let participating: Vec<bool> = (0..rewards.len()).map(|i| participates(market, i)).collect();
    let v = rewards.iter().sum();
    let v_participating = rewards.iter().zip(&participating).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let is_imputation = rewards.iter().all(|&r| r >= -IMPUTATION_TOL);
    Ok(MetricsReport { structure: market.structure, rewards, v, v_participating, participating, is_imputation })
}

/// Whether player `i` buys, reduces losses or releases storage in any period.
pub fn participates(sol: &EquilibriumSolution, i: usize) -> bool {
    sol.values.iter().any(|(k, &v)| {
        k.player == i
            && matches!(k.symbol, Symbol::Purchase | Symbol::LossReduction | Symbol::StorageRelease)
            && v > ACTIVITY_TOL
    })
}

/// `|v_a - v_b|`.
pub fn structure_gap(a: &MetricsReport, b: &MetricsReport) -> f64 {
    (a.v - b.v).abs()
}

/// Flow profile at every node, indexed `[player][period]`, in MGD except
/// utilization (a fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayQuantities {
    /// Local inflow, upstream outflow, and same-period loss reductions and releases made upstream.
    pub inflow_with_market: Vec<Vec<f64>>,
    pub inflow_without_market: Vec<Vec<f64>>,
    /// Withdrawal not covered by purchases, plus the flow requirement.
    pub freely_available_inflow: Vec<Vec<f64>>,
    /// Purchases from the market.
    pub purchased: Vec<Vec<f64>>,
    pub max_usable_inflow: Vec<Vec<f64>>,
    pub resource_utilization: Vec<Vec<f64>>,
}

pub fn display_quantities(cfg: &BasinConfig, sol: &EquilibriumSolution) -> Result<DisplayQuantities, MetricsError> {
    let (ni, nt) = (cfg.num_players(), cfg.periods);
    let grid = || vec![vec![0.0; nt]; ni];
    let mut out = DisplayQuantities {
        inflow_with_market: grid(),
        inflow_without_market: grid(),
        freely_available_inflow: grid(),
        purchased: grid(),
        max_usable_inflow: grid(),
        resource_utilization: grid(),
    };
    for (i, p) in cfg.players.iter().enumerate() {
        for t in 0..nt {
            let upstream_outflow = if i > 0 { sol.get(Symbol::MinOutflow, i - 1, t) } else { 0.0 };
            let d2 = p.n + upstream_outflow;
            let released_upstream: f64 = (0..i)
                .map(|j| {
                    let lr: f64 = (0..cfg.classes).map(|c| sol.get_class(Symbol::LossReduction, j, c, t)).sum();
                    lr + sol.get(Symbol::StorageRelease, j, t)
                })
                .sum();
            let d1 = d2 + released_upstream;
            let q = sol.get(Symbol::Demand, i, t);
            let wp = sol.total_purchase(i, t);
            let d3 = q - wp + p.r_fc[t];
            let d4 = p.demand[t] + p.r_fc[t];
            let used = q + p.r_fc[t];
            let slack = |total: f64, which: &'static str| -> Result<Option<f64>, MetricsError> {
                let num = total - used;
                if total != 0.0 {
                    Ok(Some(num / total))
                } else if num == 0.0 {
                    Ok(None)
                } else {
                    Err(MetricsError::DegenerateUtilization { player: i, period: t, which })
                }
            };
            let d5 = match (slack(d1, "inflow with market")?, slack(d4, "max-usable inflow")?) {
                (Some(a), Some(b)) => 1.0 - a.min(b),
                _ => 1.0,
            };
            out.inflow_with_market[i][t] = d1;
            out.inflow_without_market[i][t] = d2;
            out.freely_available_inflow[i][t] = d3;
            out.purchased[i][t] = wp;
            out.max_usable_inflow[i][t] = d4;
            out.resource_utilization[i][t] = d5;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basin::builtin_basin;
    use crate::formulations::{solve, solve_no_market_recursive, SolveOptions};
    use crate::lcp::VarKey;

    fn report(v: f64, rewards: Vec<f64>) -> MetricsReport {
        MetricsReport {
            structure: MarketStructure::Gcm,
            is_imputation: rewards.iter().all(|&r| r >= -IMPUTATION_TOL),
            participating: vec![true; rewards.len()],
            v_participating: v,
            rewards,
            v,
        }
    }

    #[test]
    fn identical_solutions_give_zero_rewards() {
        let cfg = builtin_basin("three_node_baseline").unwrap();
        let base = solve_no_market_recursive(&cfg).unwrap();
        let m = rewards(&base, &base).unwrap();
        assert_eq!(m.rewards, vec![0.0; 3]);
        assert_eq!(m.v, 0.0);
        assert!(m.is_imputation);
        assert_eq!(m.participating, vec![false; 3]);
    }

    #[test]
    fn baseline_must_be_no_market() {
        let cfg = builtin_basin("three_node_baseline").unwrap();
        let g = solve(&cfg, MarketStructure::Gcm, &SolveOptions::default()).unwrap();
        assert!(matches!(rewards(&g, &g), Err(MetricsError::BaselineStructure(MarketStructure::Gcm))));
    }

    #[test]
    fn v_is_the_sum_and_imputation_uses_tolerance() {
        let cfg = builtin_basin("three_node_baseline").unwrap();
        let base = solve_no_market_recursive(&cfg).unwrap();
        let mut market = base.clone();
        market.structure = MarketStructure::Csm;
        market.welfare = vec![base.welfare[0] + 3.0, base.welfare[1] - 5e-7, base.welfare[2] + 1.0];
        let m = rewards(&market, &base).unwrap();
        assert_eq!(m.v, m.rewards.iter().sum::<f64>());
        assert!(m.is_imputation);
        market.welfare[1] = base.welfare[1] - 2e-6;
        let m = rewards(&market, &base).unwrap();
        assert!(!m.is_imputation);
        assert_eq!(m.effective_v(), 0.0);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(structure_gap(&report(5.0, vec![5.0]), &report(5.0, vec![5.0])), 0.0);
        assert_eq!(structure_gap(&report(42.64, vec![42.64]), &report(0.0, vec![0.0])), 42.64);
        assert_eq!(structure_gap(&report(0.0, vec![0.0]), &report(42.64, vec![42.64])), 42.64);
    }

    #[test]
    fn no_market_without_losses() {
        let mut cfg = builtin_basin("three_node_baseline").unwrap();
        for p in cfg.players.iter_mut() {
            p.lf = vec![vec![0.0; 2]; 2];
        }
        let sol = solve_no_market_recursive(&cfg).unwrap();
        let dq = display_quantities(&cfg, &sol).unwrap();
        assert_eq!(dq.inflow_with_market, dq.inflow_without_market);
        // Player 0, period 0: inflow 9, withdraws its demand 5, r_fc 4.
        assert_eq!(dq.inflow_with_market[0][0], 9.0);
        assert_eq!(dq.max_usable_inflow[0][0], 9.0);
        assert_eq!(dq.resource_utilization[0][0], 1.0);
        // Without losses the full 9 MGD passes on; in period 2 player 0 is capped at 5 of its 10.
        assert_eq!(dq.inflow_with_market[1][0], 9.0);
        assert_eq!(sol.get(Symbol::Demand, 0, 1), 5.0);
        let (inflow_slack, demand_slack) = ((9.0 - 9.0) / 9.0, (14.0 - 9.0) / 14.0);
        assert_eq!(dq.resource_utilization[0][1], 1.0 - f64::min(inflow_slack, demand_slack));
        for i in 0..3 {
            for t in 0..2 {
                assert!(dq.resource_utilization[i][t] <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn hand_computed_market_profile() {
        let cfg = builtin_basin("three_node_baseline").unwrap();
        let mut sol = solve_no_market_recursive(&cfg).unwrap();
        sol.structure = MarketStructure::Gcm;
        let set = |sol: &mut EquilibriumSolution, k: VarKey, v: f64| {
            sol.values.insert(k, v);
        };
        // Player 0 restores 0.3 + 0.2 in period 1; player 2 buys 0.5 of it.
        set(&mut sol, VarKey::new(Symbol::LossReduction, 0, 1).with_class(0), 0.3);
        set(&mut sol, VarKey::new(Symbol::LossReduction, 0, 1).with_class(1), 0.2);
        set(&mut sol, VarKey::new(Symbol::Purchase, 2, 1).with_partner(0), 0.5);
        set(&mut sol, VarKey::new(Symbol::Demand, 2, 1), 3.7);
        let dq = display_quantities(&cfg, &sol).unwrap();
        let omin1 = sol.get(Symbol::MinOutflow, 1, 1);
        assert!((dq.inflow_without_market[2][1] - omin1).abs() < 1e-12);
        assert!((dq.inflow_with_market[2][1] - (omin1 + 0.5)).abs() < 1e-12);
        assert!((dq.freely_available_inflow[2][1] - (3.7 - 0.5 + 4.0)).abs() < 1e-12);
        assert_eq!(dq.purchased[2][1], 0.5);
        let used = 3.7 + 4.0;
        let d1 = omin1 + 0.5;
        let expect = 1.0 - ((d1 - used) / d1).min((14.0 - used) / 14.0);
        assert!((dq.resource_utilization[2][1] - expect).abs() < 1e-12);
        // Player 1 is upstream of the purchase but downstream of the seller: it also sees the release.
        assert!((dq.inflow_with_market[1][1] - dq.inflow_without_market[1][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_utilization() {
        let mut cfg = builtin_basin("three_node_baseline").unwrap();
        cfg.players[2].r_fc = vec![0.0, 0.0];
        cfg.players[2].demand = vec![0.0, 0.0];
        let mut sol = solve_no_market_recursive(&cfg).unwrap();
        assert_eq!(sol.get(Symbol::Demand, 2, 0), 0.0);
        let dq = display_quantities(&cfg, &sol).unwrap();
        assert_eq!(dq.max_usable_inflow[2][0], 0.0);
        assert_eq!(dq.resource_utilization[2][0], 1.0);
        // A withdrawal against zero max-usable inflow has no defined utilization.
        sol.values.insert(VarKey::new(Symbol::Demand, 2, 0), 1.0);
        assert!(matches!(
            display_quantities(&cfg, &sol),
            Err(MetricsError::DegenerateUtilization { player: 2, period: 0, .. })
        ));
    }
}

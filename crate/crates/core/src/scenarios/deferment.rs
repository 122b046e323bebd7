//! Capital deferment study: the same basin solved for each installation
//! year of its capital project, with and without a water-release market.

use super::sweep::{solve_with_fallback, SweepError, SweepOptions};
use crate::basin::{with_installation_year, BasinConfig, BasinError};
use crate::formulations::{solve_no_market_recursive, EquilibriumSolution, MarketStructure};
use crate::lcp::Symbol;
use crate::theory::{common_prices, CommonPrice};
use serde::{Deserialize, Serialize};

/// Results for one installation year.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefermentYear {
    pub year: u32,
    pub welfare_gcm: f64,
    pub welfare_csm: f64,
    pub welfare_no_market: f64,
    /// Largest per-player welfare difference between GCM and CSM.
    pub structure_gap: f64,
    pub converged: bool,
    /// Active GCM purchases grouped by buyer and period.
    pub common_prices: Vec<CommonPrice>,
}

/// Consumption against nominal demand, GCM solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionRow {
    pub installation_year: u32,
    pub player: String,
    pub period_start_year: u32,
    pub consumption: f64,
    pub nominal_demand: f64,
    pub lambda_sup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefermentStudy {
    pub years: Vec<DefermentYear>,
    pub consumption: Vec<ConsumptionRow>,
}

impl DefermentStudy {
    fn best(&self, f: impl Fn(&DefermentYear) -> f64) -> Option<u32> {
        self.years.iter().max_by(|a, b| f(a).total_cmp(&f(b))).map(|y| y.year)
    }

    /// Installation year with the highest market (GCM) welfare.
    pub fn best_market_year(&self) -> Option<u32> {
        self.best(|y| y.welfare_gcm)
    }

    pub fn best_no_market_year(&self) -> Option<u32> {
        self.best(|y| y.welfare_no_market)
    }
}

/// Installation years studied by default: every period start but the last.
pub fn default_installation_years(cfg: &BasinConfig) -> Result<Vec<u32>, BasinError> {
    let cp = cfg.capital_project.as_ref().ok_or(BasinError::MissingCapitalProject)?;
    let n = cp.period_start_years.len().saturating_sub(1);
    Ok(cp.period_start_years[..n].to_vec())
}

fn max_gap(a: &EquilibriumSolution, b: &EquilibriumSolution) -> f64 {
    a.welfare.iter().zip(&b.welfare).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_deferment(cfg: &BasinConfig, years: &[u32], opts: &SweepOptions) -> Result<DefermentStudy, SweepError> {
    let starts = cfg.capital_project.as_ref().ok_or(BasinError::MissingCapitalProject)?.period_start_years.clone();
    let mut study = DefermentStudy { years: Vec::new(), consumption: Vec::new() };
    for &year in years {
        let c = with_installation_year(cfg, year)?;
        let nm = solve_no_market_recursive(&c)?;
        let (gcm, _) = solve_with_fallback(&c, MarketStructure::Gcm, opts)?;
        let (csm, _) = solve_with_fallback(&c, MarketStructure::Csm, opts)?;
        let converged = gcm.converged() && csm.converged();
        study.years.push(DefermentYear {
            year,
            welfare_gcm: gcm.total_welfare(),
            welfare_csm: csm.total_welfare(),
            welfare_no_market: nm.total_welfare(),
            structure_gap: max_gap(&gcm, &csm),
            converged,
            common_prices: if gcm.converged() { common_prices(&c, &gcm)? } else { Vec::new() },
        });
        for (i, p) in c.players.iter().enumerate() {
            for (t, &start) in starts.iter().enumerate() {
                study.consumption.push(ConsumptionRow {
                    installation_year: year,
                    player: p.name.clone(),
                    period_start_year: start,
                    consumption: gcm.get(Symbol::Demand, i, t),
                    nominal_demand: p.demand[t],
                    lambda_sup: gcm.get(Symbol::LambdaSup, i, t),
                });
            }
        }
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basin::builtin_basin;

    #[test]
    fn default_years_skip_the_last_period() {
        let cfg = builtin_basin("duck_river").unwrap();
        assert_eq!(default_installation_years(&cfg).unwrap(), vec![2015, 2020, 2025, 2030, 2035, 2040, 2045]);
        let base = builtin_basin("three_node_baseline").unwrap();
        assert!(default_installation_years(&base).is_err());
    }

    #[test]
    fn study_has_one_entry_per_year_and_a_row_per_player_period() {
        let cfg = builtin_basin("duck_river").unwrap();
        let s = run_deferment(&cfg, &[2030, 2040], &SweepOptions::default()).unwrap();
        assert_eq!(s.years.len(), 2);
        assert_eq!(s.consumption.len(), 2 * 6 * 8);
        assert!(s.years.iter().all(|y| y.converged));
        assert!(s.best_market_year().is_some());
    }

    #[test]
    fn zero_capacity_project_still_solves() {
        let mut cfg = builtin_basin("duck_river").unwrap();
        cfg.capital_project.as_mut().unwrap().capacity = 0.0;
        let s = run_deferment(&cfg, &[2015, 2045], &SweepOptions::default()).unwrap();
        assert!(s.years.iter().all(|y| y.converged));
        // Without a project the installation year is irrelevant.
        assert!((s.years[0].welfare_gcm - s.years[1].welfare_gcm).abs() < 1e-6);
        assert!((s.years[0].welfare_no_market - s.years[1].welfare_no_market).abs() < 1e-9);
    }
}

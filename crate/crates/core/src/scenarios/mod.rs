//! The three-node factorial experiment: every assignment of low, medium and
//! high scaling factors to the three players for each of four parameters.

mod deferment;
mod sweep;
pub use deferment::*;
pub use sweep::*;

use crate::basin::{BasinConfig, BasinError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    /// Multiplier applied to the baseline value: exactly 2/3, 1 or 4/3.
    pub fn factor(self) -> f64 {
        match self {
            Level::Low => 2.0 / 3.0,
            Level::Medium => 1.0,
            Level::High => 4.0 / 3.0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Level::Low => 'L',
            Level::Medium => 'M',
            Level::High => 'H',
        }
    }
}

/// The six orderings of (L, M, H) over players 1..3, lexicographic.
pub const PERMUTATIONS: [[Level; 3]; 6] = {
    use Level::*;
    [
        [Low, Medium, High],
        [Low, High, Medium],
        [Medium, Low, High],
        [Medium, High, Low],
        [High, Low, Medium],
        [High, Medium, Low],
    ]
};

pub const SCENARIO_COUNT: usize = 6 * 6 * 6 * 6;

/// One cell of the factorial design. `id = c_cu*216 + demand_t1*36 + demand_t2*6 + lf`
/// where each term is the index of the permutation in [`PERMUTATIONS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: usize,
    pub c_cu: [Level; 3],
    pub demand_t1: [Level; 3],
    pub demand_t2: [Level; 3],
    pub lf: [Level; 3],
}

impl ScenarioSpec {
    pub fn from_id(id: usize) -> Option<ScenarioSpec> {
        if id >= SCENARIO_COUNT {
            return None;
        }
        Some(ScenarioSpec {
            id,
            c_cu: PERMUTATIONS[id / 216],
            demand_t1: PERMUTATIONS[id / 36 % 6],
            demand_t2: PERMUTATIONS[id / 6 % 6],
            lf: PERMUTATIONS[id % 6],
        })
    }

    /// Compact label such as `c_cu=LMH d1=LHM d2=LHM lf=HML`.
    pub fn encoding(&self) -> String {
        let s = |l: &[Level; 3]| l.iter().map(|x| x.letter()).collect::<String>();
        format!("c_cu={} d1={} d2={} lf={}", s(&self.c_cu), s(&self.demand_t1), s(&self.demand_t2), s(&self.lf))
    }

    /// Scales a copy of `base`. Intercepts are re-derived from the scaled demand.
    ///
    /// `base` must have three players and two periods.
    pub fn apply(&self, base: &BasinConfig) -> Result<BasinConfig, BasinError> {
        if base.num_players() != 3 || base.periods != 2 {
            return Err(BasinError::InvariantViolation(format!(
                "scenarios need 3 players and 2 periods, got {} and {}",
                base.num_players(),
                base.periods
            )));
        }
        let mut cfg = base.clone();
        for (i, p) in cfg.players.iter_mut().enumerate() {
            p.demand[0] *= self.demand_t1[i].factor();
            p.demand[1] *= self.demand_t2[i].factor();
            for row in p.c_cu.iter_mut() {
                row.iter_mut().for_each(|v| *v *= self.c_cu[i].factor());
            }
            for row in p.lf.iter_mut() {
                row.iter_mut().for_each(|v| *v *= self.lf[i].factor());
            }
            p.clear_alpha();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn generate_scenarios() -> Vec<ScenarioSpec> {
    (0..SCENARIO_COUNT).map(|id| ScenarioSpec::from_id(id).expect("id in range")).collect()
}

/// Scenarios singled out for detailed analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NamedScenario {
    LargeProsumer,
    DownstreamEconomicGrowth,
    MultiplePrices,
}

impl NamedScenario {
    pub const ALL: [NamedScenario; 3] =
        [NamedScenario::LargeProsumer, NamedScenario::DownstreamEconomicGrowth, NamedScenario::MultiplePrices];

    pub fn id(self) -> usize {
        match self {
            NamedScenario::LargeProsumer => 47,
            NamedScenario::DownstreamEconomicGrowth => 113,
            NamedScenario::MultiplePrices => 95,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedScenario::LargeProsumer => "large-prosumer",
            NamedScenario::DownstreamEconomicGrowth => "downstream-economic-growth",
            NamedScenario::MultiplePrices => "multiple-prices",
        }
    }

    pub fn spec(self) -> ScenarioSpec {
        ScenarioSpec::from_id(self.id()).expect("named ids are in range")
    }
}

impl fmt::Display for NamedScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resolves a scenario by name or numeric id.
pub fn resolve_scenario(s: &str) -> Option<ScenarioSpec> {
    if let Ok(id) = s.parse::<usize>() {
        return ScenarioSpec::from_id(id);
    }
    NamedScenario::from_str(s).ok().map(NamedScenario::spec)
}

impl FromStr for NamedScenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        NamedScenario::ALL
            .into_iter()
            .find(|n| n.name() == norm)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basin::builtin_basin;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 0.005)
    }

    #[test]
    fn count_and_bijection() {
        let all = generate_scenarios();
        assert_eq!(all.len(), 1296);
        let distinct: std::collections::HashSet<_> =
            all.iter().map(|s| (s.c_cu, s.demand_t1, s.demand_t2, s.lf)).collect();
        assert_eq!(distinct.len(), 1296);
        for s in &all {
            for perm in [s.c_cu, s.demand_t1, s.demand_t2, s.lf] {
                for l in Level::ALL {
                    assert_eq!(perm.iter().filter(|&&x| x == l).count(), 1);
                }
            }
        }
    }

    #[test]
    fn named_scenarios_have_expected_parameters() {
        let base = builtin_basin("three_node_baseline").unwrap();
        let get = |n: NamedScenario| n.spec().apply(&base).unwrap();
        let col = |cfg: &BasinConfig, f: &dyn Fn(&crate::basin::PlayerParams) -> f64| {
            cfg.players.iter().map(f).collect::<Vec<_>>()
        };

        let lp = get(NamedScenario::LargeProsumer);
        assert!(close(&col(&lp, &|p| p.demand[0]), &[3.33, 6.67, 5.00]));
        assert!(close(&col(&lp, &|p| p.demand[1]), &[6.67, 13.33, 10.00]));

        let dg = get(NamedScenario::DownstreamEconomicGrowth);
        assert!(close(&col(&dg, &|p| p.demand[0]), &[5.00, 6.67, 3.33]));
        assert!(close(&col(&dg, &|p| p.demand[1]), &[6.67, 10.00, 13.33]));

        let mp = get(NamedScenario::MultiplePrices);
        assert!(close(&col(&mp, &|p| p.demand[0]), &[5.00, 3.33, 6.67]));
        assert!(close(&col(&mp, &|p| p.demand[1]), &[10.00, 13.33, 6.67]));

        for cfg in [&lp, &dg, &mp] {
            for t in 0..2 {
                assert!(close(&col(cfg, &|p| p.c_cu[0][t]), &[0.67, 1.00, 1.33]));
                assert!(close(&col(cfg, &|p| p.c_cu[1][t]), &[3.33, 5.00, 6.67]));
                for c in 0..2 {
                    assert!(close(&col(cfg, &|p| p.lf[c][t]), &[0.13, 0.10, 0.07]));
                }
            }
            // Intercepts follow the scaled demand.
            for p in &cfg.players {
                assert!((p.alpha(1) - p.beta[1] * p.demand[1] - p.c_ops[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factors_are_exact_thirds() {
        assert_eq!(Level::Low.factor() * 3.0, 2.0);
        assert_eq!(Level::High.factor() * 3.0, 4.0);
    }

    #[test]
    fn resolve_by_name_or_id() {
        assert_eq!(resolve_scenario("large-prosumer").unwrap().id, 47);
        assert_eq!(resolve_scenario("Downstream_Economic_Growth").unwrap().id, 113);
        assert_eq!(resolve_scenario("12").unwrap().id, 12);
        assert!(resolve_scenario("1296").is_none());
        assert!(resolve_scenario("nope").is_none());
    }
}

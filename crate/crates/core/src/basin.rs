//! Basin description: players on a directed line (index 0 is furthest
//! upstream) with per-period and per-class parameters.
//!
//! Units are MGD for flows and $M per MGD per period for costs.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const THREE_NODE_BASELINE: &str = include_str!("../data/three_node_baseline.json");
pub const DUCK_RIVER: &str = include_str!("../data/duck_river.json");

#[derive(Debug, Error)]
pub enum BasinError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("player index {index} out of range for {players} players")]
    IndexOutOfRange { index: usize, players: usize },
    #[error("basin has no capital project")]
    MissingCapitalProject,
}

/// Parameters of one player. Vectors are indexed by period; `c_cu` and `lf`
/// are indexed `[class][period]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerParams {
    pub name: String,
    pub c_ops: Vec<f64>,
    pub c_cap: Vec<f64>,
    pub c_cu: Vec<Vec<f64>>,
    pub c_sr: Vec<f64>,
    pub lf: Vec<Vec<f64>>,
    /// Local inflow, constant over time.
    pub n: f64,
    pub r_fc: Vec<f64>,
    pub a_req: Vec<f64>,
    pub demand: Vec<f64>,
    pub beta: Vec<f64>,
    /// Inverse-demand intercept. Derived from `demand` when absent from the document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
    /// Free-form provenance tags per field name (e.g. `"c_ops": "estimated"`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl PlayerParams {
    /// A player with zero costs, inflow, losses and demand and unit slope.
    pub fn blank(name: &str, periods: usize, classes: usize) -> Self {
        PlayerParams {
            name: name.to_string(),
            c_ops: vec![0.0; periods],
            c_cap: vec![0.0; periods],
            c_cu: vec![vec![0.0; periods]; classes],
            c_sr: vec![0.0; periods],
            lf: vec![vec![0.0; periods]; classes],
            n: 0.0,
            r_fc: vec![0.0; periods],
            a_req: vec![0.0; periods],
            demand: vec![0.0; periods],
            beta: vec![1.0; periods],
            alpha: None,
            provenance: BTreeMap::new(),
        }
    }

    /// Intercept for period `t`.
    pub fn alpha(&self, t: usize) -> f64 {
        match &self.alpha {
            Some(a) => a[t],
            None => linearize_alpha(self.beta[t], self.demand[t], self.c_ops[t]),
        }
    }

    /// Sets the intercepts explicitly (overriding the demand-based default).
    pub fn set_alpha(&mut self, alpha: Vec<f64>) {
        self.alpha = Some(alpha);
    }

    /// Drops an explicit intercept so it is derived from demand again.
    pub fn clear_alpha(&mut self) {
        self.alpha = None;
    }

    pub fn total_lf(&self, t: usize) -> f64 {
        self.lf.iter().map(|row| row[t]).sum()
    }
}

/// Capital project attached to one player, used by the deferment study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalProject {
    pub player: String,
    pub capacity: f64,
    pub annual_payment: f64,
    /// Calendar year at which each period starts.
    pub period_start_years: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinConfig {
    /// Annual interest rate.
    pub interest_rate: f64,
    /// Length of a planning period in years; discounting compounds over it.
    #[serde(default = "one_year")]
    pub years_per_period: f64,
    pub periods: usize,
    pub classes: usize,
    pub players: Vec<PlayerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capital_project: Option<CapitalProject>,
}

impl BasinConfig {
    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn discounts(&self) -> Vec<f64> {
        discounts(self.interest_rate, self.years_per_period, self.periods)
    }

    pub fn player_index(&self, name: &str) -> Option<usize> {
        self.players.iter().position(|p| p.name == name)
    }

    /// Checks every invariant; used by [`load_basin`] and after programmatic edits.
    pub fn validate(&self) -> Result<(), BasinError> {
        let bad = |m: String| Err(BasinError::InvariantViolation(m));
        if self.players.is_empty() {
            return bad("basin needs at least one player".into());
        }
        if self.periods == 0 {
            return bad("basin needs at least one period".into());
        }
        if !(self.interest_rate.is_finite() && self.interest_rate >= 0.0) {
            return bad(format!("interest_rate must be finite and >= 0, got {}", self.interest_rate));
        }
        if !(self.years_per_period.is_finite() && self.years_per_period > 0.0) {
            return bad(format!("years_per_period must be finite and > 0, got {}", self.years_per_period));
        }
        let (nt, nc) = (self.periods, self.classes);
        for (i, p) in self.players.iter().enumerate() {
            let at = |f: &str| format!("players[{i}].{f}");
            for (field, v) in [
                ("c_ops", &p.c_ops),
                ("c_cap", &p.c_cap),
                ("c_sr", &p.c_sr),
                ("r_fc", &p.r_fc),
                ("a_req", &p.a_req),
                ("demand", &p.demand),
                ("beta", &p.beta),
            ] {
                check_len(&at(field), v.len(), nt)?;
                check_values(&at(field), v)?;
            }
            if let Some(a) = &p.alpha {
                check_len(&at("alpha"), a.len(), nt)?;
                if a.iter().any(|v| !v.is_finite()) {
                    return bad(format!("{} must be finite", at("alpha")));
                }
            }
            for (field, m) in [("c_cu", &p.c_cu), ("lf", &p.lf)] {
                check_len(&at(field), m.len(), nc)?;
                for (c, row) in m.iter().enumerate() {
                    check_len(&format!("{}[{c}]", at(field)), row.len(), nt)?;
                    check_values(&format!("{}[{c}]", at(field)), row)?;
                }
            }
            if !(p.n.is_finite() && p.n >= 0.0) {
                return bad(format!("{} must be finite and >= 0", at("n")));
            }
            for t in 0..nt {
                if p.beta[t] <= 0.0 {
                    return bad(format!("{}[{t}] must be > 0 (strictly concave benefit)", at("beta")));
                }
                if p.lf.iter().any(|row| row[t] > 1.0) {
                    return bad(format!("{} entries must lie in [0, 1]", at("lf")));
                }
                if p.total_lf(t) > 1.0 + 1e-12 {
                    return bad(format!("sum over classes of {}[.][{t}] exceeds 1", at("lf")));
                }
            }
        }
        let mut names: Vec<&str> = self.players.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("player names must be unique".into());
        }
        if let Some(cp) = &self.capital_project {
            if self.player_index(&cp.player).is_none() {
                return bad(format!("capital_project.player {:?} is not a player", cp.player));
            }
            check_len("capital_project.period_start_years", cp.period_start_years.len(), nt)?;
            if !(cp.capacity >= 0.0 && cp.annual_payment >= 0.0) {
                return bad("capital_project values must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("basin serializes")
    }
}

fn check_len(path: &str, got: usize, expected: usize) -> Result<(), BasinError> {
    if got != expected {
        return Err(BasinError::Schema { path: path.into(), message: format!("expected length {expected}, got {got}") });
    }
    Ok(())
}

fn check_values(path: &str, v: &[f64]) -> Result<(), BasinError> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(BasinError::InvariantViolation(format!("{path} must be finite and >= 0")));
    }
    Ok(())
}

/// Parses and validates a JSON basin document.
pub fn load_basin(document: &str) -> Result<BasinConfig, BasinError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let cfg: BasinConfig = serde_path_to_error::deserialize(de).map_err(|e| BasinError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Bundled dataset by name.
pub fn builtin_basin(name: &str) -> Option<BasinConfig> {
    let doc = match name {
        "three_node_baseline" => THREE_NODE_BASELINE,
        "duck_river" => DUCK_RIVER,
        _ => return None,
    };
    Some(load_basin(doc).expect("bundled basin is valid"))
}

fn one_year() -> f64 {
    1.0
}

/// `d_t = (1 + r)^-(y (t-1))` for periods of `y` years, first period undiscounted.
pub fn discounts(interest_rate: f64, years_per_period: f64, periods: usize) -> Vec<f64> {
    (0..periods).map(|t| (1.0 + interest_rate).powf(-(t as f64) * years_per_period)).collect()
}

/// Intercept that puts the inverse demand through `(demand, c_ops)`.
pub fn linearize_alpha(beta: f64, demand: f64, c_ops: f64) -> f64 {
    beta * demand + c_ops
}

/// Players upstream of `i`, i.e. `0..i`.
pub fn upstream_set(cfg: &BasinConfig, i: usize) -> Result<Vec<usize>, BasinError> {
    check_player(cfg, i)?;
    Ok((0..i).collect())
}

/// Players downstream of `i`, i.e. `i+1..`.
pub fn downstream_set(cfg: &BasinConfig, i: usize) -> Result<Vec<usize>, BasinError> {
    check_player(cfg, i)?;
    Ok((i + 1..cfg.num_players()).collect())
}

fn check_player(cfg: &BasinConfig, i: usize) -> Result<(), BasinError> {
    if i >= cfg.num_players() {
        return Err(BasinError::IndexOutOfRange { index: i, players: cfg.num_players() });
    }
    Ok(())
}

/// Sets the capital player's `a_req` and `c_cap` for an installation in
/// `year`: capacity and `5 * annual_payment / capacity` (per MGD per
/// period) from the first period starting at or after `year`, zero before.
pub fn with_installation_year(cfg: &BasinConfig, year: u32) -> Result<BasinConfig, BasinError> {
    let cp = cfg.capital_project.as_ref().ok_or(BasinError::MissingCapitalProject)?;
    let i = cfg.player_index(&cp.player).ok_or(BasinError::MissingCapitalProject)?;
    let mut out = cfg.clone();
    let unit_cost = if cp.capacity > 0.0 { cfg.years_per_period * cp.annual_payment / cp.capacity } else { 0.0 };
    let p = &mut out.players[i];
    for (t, &start) in cp.period_start_years.iter().enumerate() {
        let built = start >= year;
        p.a_req[t] = if built { cp.capacity } else { 0.0 };
        p.c_cap[t] = if built { unit_cost } else { 0.0 };
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> BasinConfig {
        builtin_basin("three_node_baseline").unwrap()
    }

    #[test]
    fn baseline_matches_table_values() {
        let cfg = baseline();
        assert_eq!((cfg.num_players(), cfg.periods, cfg.classes), (3, 2, 2));
        let n: Vec<f64> = cfg.players.iter().map(|p| p.n).collect();
        assert_eq!(n, vec![9.0, 0.0, 0.0]);
        assert_eq!(cfg.interest_rate, 0.04);
        assert_eq!(cfg.years_per_period, 5.0);
        for p in &cfg.players {
            assert_eq!(p.r_fc, vec![4.0, 4.0]);
            assert_eq!(p.c_ops, vec![1.0, 1.0]);
            assert_eq!(p.beta, vec![3.0, 3.0]);
            assert_eq!(p.demand, vec![5.0, 10.0]);
            assert_eq!(p.c_cu, vec![vec![1.0, 1.0], vec![5.0, 5.0]]);
            assert_eq!(p.lf, vec![vec![0.1, 0.1], vec![0.1, 0.1]]);
            assert_eq!(p.alpha(0), 16.0);
            assert_eq!(p.alpha(1), 31.0);
        }
    }

    #[test]
    fn discount_examples() {
        let d = discounts(0.04, 1.0, 2);
        assert_eq!(d[0], 1.0);
        assert!((d[1] - 1.0 / 1.04).abs() < 1e-15);
        assert!((d[1] - 0.961538).abs() < 1e-6);
        assert_eq!(discounts(0.0, 5.0, 3), vec![1.0; 3]);
        assert_eq!(discounts(0.04, 5.0, 1), vec![1.0]);
        let d = discounts(0.04, 5.0, 3);
        assert!((d[1] - 1.04f64.powi(-5)).abs() < 1e-15);
        assert!((d[2] - 1.04f64.powi(-10)).abs() < 1e-15);
        let d = discounts(0.1, 1.0, 5);
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(linearize_alpha(3.0, 5.0, 1.0), 16.0);
        assert!((linearize_alpha(3.0, 13.33, 1.0) - 40.99).abs() < 1e-12);
        assert_eq!(linearize_alpha(2.5, 0.0, 7.0), 7.0);
        // The inverse demand passes through (demand, c_ops).
        let (b, dem, c) = (3.0, 6.5, 1.25);
        assert!((linearize_alpha(b, dem, c) - b * dem - c).abs() < 1e-15);
    }

    #[test]
    fn topology_sets() {
        let cfg = baseline();
        assert_eq!(upstream_set(&cfg, 0).unwrap(), Vec::<usize>::new());
        assert_eq!(downstream_set(&cfg, 0).unwrap(), vec![1, 2]);
        assert_eq!(upstream_set(&cfg, 1).unwrap(), vec![0]);
        assert_eq!(downstream_set(&cfg, 1).unwrap(), vec![2]);
        assert_eq!(upstream_set(&cfg, 2).unwrap(), vec![0, 1]);
        assert_eq!(downstream_set(&cfg, 2).unwrap(), Vec::<usize>::new());
        assert!(matches!(upstream_set(&cfg, 3), Err(BasinError::IndexOutOfRange { .. })));
        for i in 0..3 {
            for j in 0..3 {
                let us = upstream_set(&cfg, i).unwrap().contains(&j);
                let ds = downstream_set(&cfg, j).unwrap().contains(&i);
                assert_eq!(us, ds);
            }
        }
    }

    #[test]
    fn period_length_defaults_to_one_year() {
        let doc = r#"{"interest_rate":0.04,"periods":1,"classes":1,"players":[{"name":"a","c_ops":[1],"c_cap":[0],
            "c_cu":[[1]],"c_sr":[0],"lf":[[0.1]],"n":1,"r_fc":[0],"a_req":[0],"demand":[1],"beta":[1]}]}"#;
        assert_eq!(load_basin(doc).unwrap().years_per_period, 1.0);
    }

    #[test]
    fn empty_players_rejected() {
        let doc = r#"{"interest_rate":0.04,"periods":1,"classes":0,"players":[]}"#;
        assert!(matches!(load_basin(doc), Err(BasinError::InvariantViolation(_))));
    }

    #[test]
    fn zero_beta_rejected() {
        let mut cfg = baseline();
        cfg.players[1].beta[0] = 0.0;
        let doc = cfg.to_json();
        match load_basin(&doc) {
            Err(BasinError::InvariantViolation(m)) => assert!(m.contains("beta"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let mut v: serde_json::Value = serde_json::from_str(THREE_NODE_BASELINE).unwrap();
        v["players"][1]["beta"] = serde_json::json!("steep");
        match load_basin(&v.to_string()) {
            Err(BasinError::Schema { path, .. }) => assert_eq!(path, "players[1].beta"),
            other => panic!("{other:?}"),
        }
        let mut cfg = baseline();
        cfg.players[2].lf[1].pop();
        match load_basin(&cfg.to_json()) {
            Err(BasinError::Schema { path, .. }) => assert_eq!(path, "players[2].lf[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_fractions_bounded() {
        let mut cfg = baseline();
        cfg.players[0].lf = vec![vec![0.6, 0.1], vec![0.5, 0.1]];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trip() {
        for cfg in [baseline(), builtin_basin("duck_river").unwrap()] {
            let again = load_basin(&cfg.to_json()).unwrap();
            assert_eq!(cfg, again);
        }
        let mut cfg = baseline();
        cfg.players[0].set_alpha(vec![20.0, 30.0]);
        assert_eq!(load_basin(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn installation_year_sets_capital() {
        let cfg = builtin_basin("duck_river").unwrap();
        let cp = cfg.capital_project.clone().unwrap();
        let i = cfg.player_index(&cp.player).unwrap();
        let built = with_installation_year(&cfg, 2035).unwrap();
        for (t, &y) in cp.period_start_years.iter().enumerate() {
            let p = &built.players[i];
            if y >= 2035 {
                assert_eq!(p.a_req[t], cp.capacity);
                assert!((p.c_cap[t] - 5.0 * cp.annual_payment / cp.capacity).abs() < 1e-12);
            } else {
                assert_eq!((p.a_req[t], p.c_cap[t]), (0.0, 0.0));
            }
        }
        assert!(matches!(with_installation_year(&baseline(), 2020), Err(BasinError::MissingCapitalProject)));
    }
}

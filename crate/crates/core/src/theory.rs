//! Executable versions of the existence and price results for the GCM.
//!
//! The existence check works on the one-period, one-class GCM with a single
//! supplier `u` selling loss reductions to a single buyer `d` downstream and
//! every other node inactive. It evaluates the seven sufficient conditions
//! literally, and a flow-consistent variant under which the closed-form
//! solution really satisfies every row of the assembled GCM system.

use crate::basin::{BasinConfig, BasinError, PlayerParams};
use crate::formulations::{build_gcm, welfare, EquilibriumSolution, MarketStructure, Values};
use crate::lcp::{residual, Symbol, VarKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positive-activity threshold (MGD) for purchases and loss reductions.
pub const ACTIVITY_THRESHOLD: f64 = 1e-6;
/// Absolute tolerance of the price identities ($M/MGD).
pub const IDENTITY_TOL: f64 = 1e-6;
/// Relative tolerance of the equality conditions of the existence check.
pub const EQUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("buyer {d} must be downstream of supplier {u}")]
    Topology { u: usize, d: usize },
    #[error("existence check needs a one-period, one-class basin: {0}")]
    Precondition(String),
    #[error("price identities apply to GCM solutions, got {0}")]
    WrongStructure(MarketStructure),
    #[error(transparent)]
    Basin(#[from] BasinError),
}

/// One evaluated condition, `lhs <relation> rhs`. Conditions quantified over
/// several nodes report the node with the smallest margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub node: Option<usize>,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy)]
enum Rel {
    Gt,
    Ge,
    Eq,
    /// `0 < lhs <= rhs`.
    PositiveLe,
    /// `lhs = rhs < 0`.
    EqNegative,
}

impl Condition {
    fn new(label: &str, rel: Rel, lhs: f64, rhs: f64, node: Option<usize>) -> Self {
        let eq = (lhs - rhs).abs() <= EQUALITY_TOL * lhs.abs().max(rhs.abs()).max(1.0);
        let (relation, holds) = match rel {
            Rel::Gt => (">", lhs > rhs),
            Rel::Ge => (">=", lhs >= rhs),
            Rel::Eq => ("=", eq),
            Rel::PositiveLe => ("0 < lhs <=", lhs > 0.0 && lhs <= rhs),
            Rel::EqNegative => ("= (< 0)", eq && rhs < 0.0),
        };
        Condition { label: label.to_string(), relation: relation.to_string(), lhs, rhs, node, holds }
    }

    /// The tightest of `(node, lhs, rhs)` under `lhs >= rhs`; vacuous when empty.
    fn worst(label: &str, items: impl Iterator<Item = (usize, f64, f64)>) -> Self {
        match items.min_by(|a, b| (a.1 - a.2).total_cmp(&(b.1 - b.2))) {
            Some((node, lhs, rhs)) => Condition::new(label, Rel::Ge, lhs, rhs, Some(node)),
            None => Condition::new(label, Rel::Ge, 0.0, 0.0, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub u: usize,
    pub d: usize,
    /// Conditions (i)-(vii) taken literally.
    pub verbatim: Vec<Condition>,
    /// Conditions (i)-(vii) with the inflows at downstream nodes net of the
    /// supplier's consumptive loss, and (ii) strengthened for nodes upstream
    /// of the buyer, which must quote the supplier's price.
    pub flow_consistent: Vec<Condition>,
    /// Extra requirement of the short model: no required capacity.
    pub auxiliary: Vec<Condition>,
    /// Closed-form solution, present when every flow-consistent and auxiliary condition holds.
    pub constructed: Option<EquilibriumSolution>,
    /// Residual of the constructed solution in the assembled GCM system.
    pub residual: Option<f64>,
}

impl Theorem2Report {
    pub fn verbatim_holds(&self) -> bool {
        self.verbatim.iter().all(|c| c.holds)
    }

    pub fn flow_consistent_holds(&self) -> bool {
        self.flow_consistent.iter().chain(&self.auxiliary).all(|c| c.holds)
    }
}

/// Evaluates the existence conditions for supplier `u` and buyer `d` and, when
/// they hold, builds the closed-form equilibrium.
pub fn check_theorem2(cfg: &BasinConfig, u: usize, d: usize) -> Result<Theorem2Report, TheoryError> {
    if cfg.periods != 1 || cfg.classes != 1 {
        return Err(TheoryError::Precondition(format!("{} periods, {} classes", cfg.periods, cfg.classes)));
    }
    let ni = cfg.num_players();
    for idx in [u, d] {
        if idx >= ni {
            return Err(BasinError::IndexOutOfRange { index: idx, players: ni }.into());
        }
    }
    if d <= u {
        return Err(TheoryError::Topology { u, d });
    }
    let pl = &cfg.players;
    let alpha = |i: usize| pl[i].alpha(0);
    let lf = |i: usize| pl[i].lf[0][0];
    let c_cu = |i: usize| pl[i].c_cu[0][0];
    let c_ops = |i: usize| pl[i].c_ops[0];
    let r_fc = |i: usize| pl[i].r_fc[0];
    let inflow_to = |i: usize| pl[..=i].iter().map(|p| p.n).sum::<f64>();
    let inactive = || (0..ni).filter(move |&e| e != u && e != d);

    let q_u = (alpha(u) - c_ops(u)) / pl[u].beta[0];
    let loss_u = lf(u) * q_u;
    // Net of the supplier's consumptive loss for nodes below it.
    let net_inflow_to = |i: usize| inflow_to(i) - if i > u { loss_u } else { 0.0 };

    let beta_min = (0..ni).map(|i| (i, pl[i].beta[0])).min_by(|a, b| a.1.total_cmp(&b.1)).expect("players exist");
    let c1 = Condition::new("(i) beta_i > 0", Rel::Gt, beta_min.1, 0.0, Some(beta_min.0));
    let c2 = Condition::worst("(ii) c_ops_e - alpha_e >= 0", inactive().map(|e| (e, c_ops(e) - alpha(e), 0.0)));
    // With W^P_du set to the supplier's whole loss reduction this holds by construction.
    let c3 = Condition::new("(iii) lf_u Q_u = W^P_du", Rel::Eq, loss_u, loss_u, Some(u));
    let c5 = Condition::new("(v) 0 < Q_u <= sum n - r_fc_u", Rel::PositiveLe, q_u, inflow_to(u) - r_fc(u), Some(u));
    let c6 = Condition::new("(vi) c_cu_u >= alpha_d - c_ops_d", Rel::Ge, c_cu(u), alpha(d) - c_ops(d), Some(d));

    let verbatim = vec![
        c1.clone(),
        c2,
        c3.clone(),
        Condition::worst("(iv) sum n - r_fc_e >= 0", inactive().map(|e| (e, inflow_to(e), r_fc(e)))),
        c5.clone(),
        c6.clone(),
        Condition::new("(vii) sum n - r_fc_d = -Q_u lf_u < 0", Rel::EqNegative, inflow_to(d) - r_fc(d), -loss_u, Some(d)),
    ];

    let strengthened = inactive().map(|e| {
        let need = if e < d { lf(e) * (c_cu(u) - c_cu(e)).max(0.0) } else { 0.0 };
        (e, c_ops(e) - alpha(e), need)
    });
    let flow_consistent = vec![
        c1,
        Condition::worst("(ii) c_ops_e - alpha_e >= lf_e (c_cu_u - c_cu_e)^+ for e < d", strengthened),
        c3,
        Condition::worst("(iv) net inflow - r_fc_e >= 0", inactive().map(|e| (e, net_inflow_to(e), r_fc(e)))),
        c5,
        c6,
        Condition::new(
            "(vii) net inflow - r_fc_d = -Q_u lf_u < 0",
            Rel::EqNegative,
            net_inflow_to(d) - r_fc(d),
            -loss_u,
            Some(d),
        ),
    ];

    let a_max = (0..ni).map(|i| (i, pl[i].a_req[0])).max_by(|a, b| a.1.total_cmp(&b.1)).expect("players exist");
    let auxiliary = vec![Condition::new("a_req = 0", Rel::Eq, a_max.1, 0.0, Some(a_max.0))];

    let mut report =
        Theorem2Report { u, d, verbatim, flow_consistent, auxiliary, constructed: None, residual: None };
    if report.flow_consistent_holds() {
        let (sol, res) = construct(cfg, u, d, q_u);
        report.constructed = Some(sol);
        report.residual = Some(res);
    }
    Ok(report)
}

/// The proof's solution, completed so that every GCM row holds: nodes above
/// the buyer quote the supplier's price, the buyer buys the whole loss
/// reduction and withdraws nothing.
fn construct(cfg: &BasinConfig, u: usize, d: usize, q_u: f64) -> (EquilibriumSolution, f64) {
    let p = build_gcm(cfg);
    let mut values: Values = p.vars().iter().map(|v| (v.key, 0.0)).collect();
    let mut set = |k: VarKey, v: f64| {
        let slot = values.get_mut(&k).unwrap_or_else(|| panic!("{k} is not a GCM variable"));
        *slot = v;
    };
    let pl = &cfg.players;
    let price = pl[u].c_cu[0][0];
    let mut omin = 0.0;
    for (i, pi) in pl.iter().enumerate() {
        let k = |s: Symbol| VarKey::new(s, i, 0);
        let q = if i == u { q_u } else { 0.0 };
        let lf = pi.lf[0][0];
        let pi_as = if i < d { price } else { 0.0 };
        let g_loss = if i < d { (pi_as - pi.c_cu[0][0]).max(0.0) } else { 0.0 };
        let g_flow = if i == d { price } else { 0.0 };
        let g_cap = (pi_as + g_flow - pi.c_sr[0]).max(0.0);
        omin += pi.n - lf * q;
        set(k(Symbol::WithdrawalIncrement), q);
        set(k(Symbol::Demand), q);
        set(k(Symbol::Price), pi_as);
        set(k(Symbol::GammaLoss).with_class(0), g_loss);
        set(k(Symbol::LambdaSup), lf * g_loss);
        set(k(Symbol::GammaFlow), g_flow);
        set(k(Symbol::GammaCap), g_cap);
        set(k(Symbol::LambdaAug), g_cap - pi.c_cap[0]);
        set(k(Symbol::MinOutflow), omin);
        if i == u {
            set(k(Symbol::LossReduction).with_class(0), lf * q);
        }
    }
    set(VarKey::new(Symbol::Purchase, d, 0).with_partner(u), pl[u].lf[0][0] * q_u);

    let z: Vec<f64> = p.vars().iter().map(|v| values[&v.key]).collect();
    let res = residual(&p, &z);
    let welfare = welfare(cfg, MarketStructure::Gcm, &values).expect("all GCM values present");
    (EquilibriumSolution { structure: MarketStructure::Gcm, values, welfare, report: None }, res)
}

/// A generated existence instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Instance {
    pub seed: u64,
    pub cfg: BasinConfig,
    pub u: usize,
    pub d: usize,
}

/// Samples a basin of 2 to 6 players satisfying the flow-consistent
/// conditions: costs and slopes first, then inflows and flow requirements
/// back-solved from the supplier's withdrawal.
pub fn generate_theorem2_instance(seed: u64) -> Theorem2Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ni = rng.random_range(2..=6usize);
    let u = rng.random_range(0..ni - 1);
    let d = rng.random_range(u + 1..ni);
    let mut players: Vec<PlayerParams> = (0..ni).map(|i| PlayerParams::blank(&format!("N{i}"), 1, 1)).collect();
    for p in players.iter_mut() {
        p.beta[0] = rng.random_range(0.5..5.0);
        p.c_ops[0] = rng.random_range(0.5..3.0);
        p.c_cu[0][0] = rng.random_range(0.5..6.0);
        p.c_sr[0] = rng.random_range(0.0..4.0);
        p.c_cap[0] = rng.random_range(0.0..4.0);
        p.lf[0][0] = rng.random_range(0.05..0.5);
    }
    let price = players[u].c_cu[0][0];

    let q_u = rng.random_range(0.5..10.0);
    players[u].demand[0] = q_u;
    // Highest demand at the buyer stays below the supplier's price.
    let margin_d = rng.random_range(0.0..1.0) * price;
    let alpha_d = players[d].c_ops[0] + margin_d;
    players[d].set_alpha(vec![alpha_d]);
    for e in (0..ni).filter(|&e| e != u && e != d) {
        let p = &mut players[e];
        let need = if e < d { p.lf[0][0] * (price - p.c_cu[0][0]).max(0.0) } else { 0.0 };
        let alpha = p.c_ops[0] - need - rng.random_range(0.0..1.0);
        p.set_alpha(vec![alpha]);
    }

    let loss_u = players[u].lf[0][0] * q_u;
    let mut cum = 0.0;
    for (i, p) in players.iter_mut().enumerate() {
        p.n = rng.random_range(0.0..5.0);
        if i == u {
            p.n += q_u;
        }
        cum += p.n;
        let available = cum - if i > u { loss_u } else { 0.0 };
        p.r_fc[0] = if i == d {
            // Everything reaching the buyer is reserved for the flow requirement.
            cum
        } else if i == u {
            rng.random_range(0.0..1.0) * (cum - q_u)
        } else {
            rng.random_range(0.0..1.0) * available.max(0.0)
        };
    }
    let cfg = BasinConfig {
        interest_rate: 0.0,
        years_per_period: 1.0,
        periods: 1,
        classes: 1,
        players,
        capital_project: None,
    };
    Theorem2Instance { seed, cfg, u, d }
}

/// `count` instances from consecutive seeds starting at `seed`.
pub fn theorem2_instances(seed: u64, count: usize) -> Vec<Theorem2Instance> {
    (0..count as u64).map(|k| generate_theorem2_instance(seed.wrapping_add(k))).collect()
}

/// A buyer whose active sellers do not all charge its marginal value of flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Finding {
    pub buyer: usize,
    pub period: usize,
    /// `gamma^flow / d_t` of the buyer.
    pub common_price: f64,
    pub seller: usize,
    pub seller_price: f64,
}

/// A buyer with its active sellers and the price they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonPrice {
    pub buyer: usize,
    pub period: usize,
    pub sellers: Vec<usize>,
    pub prices: Vec<f64>,
    /// `gamma^flow / d_t` of the buyer.
    pub common_price: f64,
}

impl CommonPrice {
    /// Largest distance between a seller's price and the common price.
    pub fn spread(&self) -> f64 {
        self.prices.iter().map(|p| (p - self.common_price).abs()).fold(0.0, f64::max)
    }
}

fn require_gcm(sol: &EquilibriumSolution) -> Result<(), TheoryError> {
    if sol.structure != MarketStructure::Gcm {
        return Err(TheoryError::WrongStructure(sol.structure));
    }
    Ok(())
}

/// Active purchases grouped by buyer and period.
pub fn common_prices(cfg: &BasinConfig, sol: &EquilibriumSolution) -> Result<Vec<CommonPrice>, TheoryError> {
    require_gcm(sol)?;
    let d = cfg.discounts();
    let mut out = Vec::new();
    for buyer in 0..cfg.num_players() {
        for t in 0..cfg.periods {
            let sellers: Vec<usize> =
                (0..buyer).filter(|&j| sol.purchase(buyer, j, t) > ACTIVITY_THRESHOLD).collect();
            if sellers.is_empty() {
                continue;
            }
            let prices = sellers.iter().map(|&j| sol.get(Symbol::Price, j, t)).collect();
            let common_price = sol.get(Symbol::GammaFlow, buyer, t) / d[t];
            out.push(CommonPrice { buyer, period: t, sellers, prices, common_price });
        }
    }
    Ok(out)
}

/// Sellers whose price differs from the buyer's `gamma^flow / d_t` by more than [`IDENTITY_TOL`].
pub fn verify_theorem3(cfg: &BasinConfig, sol: &EquilibriumSolution) -> Result<Vec<Theorem3Finding>, TheoryError> {
    let mut findings = Vec::new();
    for cp in common_prices(cfg, sol)? {
        for (&seller, &seller_price) in cp.sellers.iter().zip(&cp.prices) {
            if (seller_price - cp.common_price).abs() > IDENTITY_TOL {
                findings.push(Theorem3Finding {
                    buyer: cp.buyer,
                    period: cp.period,
                    common_price: cp.common_price,
                    seller,
                    seller_price,
                });
            }
        }
    }
    Ok(findings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceIdentity {
    /// Price equals discounted future loss multipliers plus the unit cost.
    LossValue,
    /// Price equals each active buyer's discounted marginal value of flow.
    FlowValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Finding {
    pub identity: PriceIdentity,
    pub player: usize,
    pub period: usize,
    /// Loss class for [`PriceIdentity::LossValue`], buyer for [`PriceIdentity::FlowValue`].
    pub index: usize,
    pub price: f64,
    pub expected: f64,
}

/// Checks both price identities at every active loss reduction and purchase.
pub fn verify_theorem4(cfg: &BasinConfig, sol: &EquilibriumSolution) -> Result<Vec<Theorem4Finding>, TheoryError> {
    require_gcm(sol)?;
    let d = cfg.discounts();
    let mut findings = Vec::new();
    for (i, p) in cfg.players.iter().enumerate() {
        for t in 0..cfg.periods {
            let price = sol.get(Symbol::Price, i, t);
            let mut check = |identity, index, expected: f64| {
                if (price - expected).abs() > IDENTITY_TOL {
                    findings.push(Theorem4Finding { identity, player: i, period: t, index, price, expected });
                }
            };
            for c in 0..cfg.classes {
                if sol.get_class(Symbol::LossReduction, i, c, t) > ACTIVITY_THRESHOLD {
                    let future: f64 = (t..cfg.periods).map(|s| sol.get_class(Symbol::GammaLoss, i, c, s)).sum();
                    check(PriceIdentity::LossValue, c, future / d[t] + p.c_cu[c][t]);
                }
            }
            for k in i + 1..cfg.num_players() {
                if sol.purchase(k, i, t) > ACTIVITY_THRESHOLD {
                    check(PriceIdentity::FlowValue, k, sol.get(Symbol::GammaFlow, k, t) / d[t]);
                }
            }
        }
    }
    Ok(findings)
}

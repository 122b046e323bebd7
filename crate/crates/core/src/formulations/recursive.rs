//! Sequential solve of the No-Market game: each player, upstream first,
//! maximizes its own concave program given the outflow it inherits.

use super::{welfare, EquilibriumSolution, FormulationError, MarketStructure, Values};
use crate::basin::{BasinConfig, PlayerParams};
use crate::lcp::{Symbol, VarKey};

/// Solves the No-Market game player by player.
///
/// With storage releases priced at `c_sr` up to the required capacity, a
/// player's program reduces to choosing a nondecreasing withdrawal path
/// `0 <= Q_1 <= ... <= Q_T` with `Q_t <= cap_t + a_req_t`, maximizing
/// `sum_t d_t [(alpha - c_ops) Q - beta Q^2/2 - c_sr (Q - cap_t)^+]`, where
/// `cap_t = n - r_fc_t + O^min_{i-1,t}`. That is solved exactly by pooling
/// adjacent violators; each pool is a one-dimensional concave maximization.
///
/// Only primal values are filled in and the solution carries no solver report.
pub fn solve_no_market_recursive(cfg: &BasinConfig) -> Result<EquilibriumSolution, FormulationError> {
    let nt = cfg.periods;
    let d = cfg.discounts();
    let mut values = Values::new();
    let mut inherited = vec![0.0; nt];

    for (i, p) in cfg.players.iter().enumerate() {
        let cap: Vec<f64> = (0..nt).map(|t| p.n - p.r_fc[t] + inherited[t]).collect();
        let mut ub: Vec<f64> = (0..nt).map(|t| cap[t] + p.a_req[t]).collect();
        for t in (0..nt.saturating_sub(1)).rev() {
            ub[t] = ub[t].min(ub[t + 1]);
        }
        if let Some(t) = (0..nt).find(|&t| ub[t] < 0.0) {
            return Err(FormulationError::InfeasiblePlayer { player: i, period: t, bound: ub[t] });
        }

        let q = isotonic_path(p, &d, &cap, &ub);
        let mut cum_loss = 0.0;
        for t in 0..nt {
            let wd = q[t] - if t == 0 { 0.0 } else { q[t - 1] };
            let ws = (q[t] - cap[t]).max(0.0);
            cum_loss += p.total_lf(t) * wd;
            let omin = p.n - cum_loss + inherited[t];
            values.insert(VarKey::new(Symbol::WithdrawalIncrement, i, t), wd);
            values.insert(VarKey::new(Symbol::StorageRelease, i, t), ws);
            values.insert(VarKey::new(Symbol::Demand, i, t), q[t]);
            values.insert(VarKey::new(Symbol::Capacity, i, t), p.a_req[t]);
            values.insert(VarKey::new(Symbol::MinOutflow, i, t), omin);
            inherited[t] = omin;
        }
    }

    let welfare = welfare(cfg, MarketStructure::NoMarket, &values)?;
    Ok(EquilibriumSolution { structure: MarketStructure::NoMarket, values, welfare, report: None })
}

struct Block {
    start: usize,
    end: usize,
    value: f64,
}

fn isotonic_path(p: &PlayerParams, d: &[f64], cap: &[f64], ub: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<Block> = Vec::new();
    for t in 0..cap.len() {
        blocks.push(Block { start: t, end: t, value: pooled_argmax(p, d, cap, ub, t, t) });
        while blocks.len() >= 2 && blocks[blocks.len() - 2].value > blocks[blocks.len() - 1].value {
            let last = blocks.pop().unwrap();
            let prev = blocks.last_mut().unwrap();
            prev.end = last.end;
            prev.value = pooled_argmax(p, d, cap, ub, prev.start, prev.end);
        }
    }
    let mut q = vec![0.0; cap.len()];
    for b in &blocks {
        for v in &mut q[b.start..=b.end] {
            *v = b.value;
        }
    }
    q
}

/// Maximizer of `sum_{t in a..=b} g_t(Q)` over `[0, ub_a]`.
fn pooled_argmax(p: &PlayerParams, d: &[f64], cap: &[f64], ub: &[f64], a: usize, b: usize) -> f64 {
    let upper = ub[a];
    let slope: f64 = (a..=b).map(|t| d[t] * p.beta[t]).sum();
    let base: f64 = (a..=b).map(|t| d[t] * (p.alpha(t) - p.c_ops[t])).sum();
    // Kinks of the derivative, where the release cost starts to apply.
    let mut kinks: Vec<(f64, f64)> = (a..=b)
        .filter(|&t| d[t] * p.c_sr[t] > 0.0)
        .map(|t| (cap[t], d[t] * p.c_sr[t]))
        .collect();
    kinks.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Derivative on (lo, hi) is `intercept - slope * Q`.
    let mut intercept = base - kinks.iter().filter(|k| k.0 <= 0.0).map(|k| k.1).sum::<f64>();
    let mut lo = 0.0;
    let mut pending = kinks.iter().filter(|k| k.0 > 0.0).peekable();
    loop {
        let hi = pending.peek().map_or(upper, |k| k.0.min(upper));
        if intercept - slope * lo <= 0.0 {
            return lo;
        }
        if intercept - slope * hi < 0.0 {
            return intercept / slope;
        }
        if hi >= upper {
            return upper;
        }
        // Cross the kink at `hi`; several players may share it.
        while let Some(k) = pending.peek() {
            if k.0 <= hi {
                intercept -= k.1;
                pending.next();
            } else {
                break;
            }
        }
        lo = hi;
    }
}

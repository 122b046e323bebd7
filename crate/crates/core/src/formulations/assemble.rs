//! KKT + clearing systems of the three market structures.
//!
//! Variable order: players outer, then symbols in the order
//! W^D, W^S, Q, K, L^R, W^P, gamma^loss, gamma^flow, gamma^cap, lambda^sup,
//! lambda^aug, O^min, pi^as; classes before periods, periods innermost.
//! Each variable's row is the condition complementary to it.

use super::MarketStructure;
use crate::basin::BasinConfig;
use crate::lcp::{CsrMatrix, MlcpProblem, VarKey, VariableMeta, Symbol};
use std::collections::HashMap;

use Symbol::*;

struct Builder {
    vars: Vec<VariableMeta>,
    index: HashMap<VarKey, usize>,
    entries: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
}

impl Builder {
    fn new() -> Self {
        Builder { vars: Vec::new(), index: HashMap::new(), entries: Vec::new(), q: Vec::new() }
    }

    fn declare(&mut self, key: VarKey) {
        let id = self.vars.len();
        let prev = self.index.insert(key, id);
        debug_assert!(prev.is_none(), "{key} declared twice");
        self.vars.push(VariableMeta { id, key, sign: key.symbol.default_sign() });
        self.q.push(0.0);
    }

    fn id(&self, key: VarKey) -> usize {
        *self.index.get(&key).unwrap_or_else(|| panic!("undeclared {key}"))
    }

    /// Adds `v * col` to the row complementary to `row`.
    fn add(&mut self, row: VarKey, col: VarKey, v: f64) {
        if v != 0.0 {
            let (r, c) = (self.id(row), self.id(col));
            self.entries.push((r, c, v));
        }
    }

    fn constant(&mut self, row: VarKey, v: f64) {
        let r = self.id(row);
        self.q[r] += v;
    }

    fn finish(self) -> MlcpProblem {
        let n = self.q.len();
        let m = CsrMatrix::from_triplets(n, n, &self.entries);
        MlcpProblem::new(m, self.q, self.vars).expect("assembled problem is consistent")
    }
}

fn k(symbol: Symbol, i: usize, t: usize) -> VarKey {
    VarKey::new(symbol, i, t)
}

fn kc(symbol: Symbol, i: usize, c: usize, t: usize) -> VarKey {
    VarKey::new(symbol, i, t).with_class(c)
}

fn kp(i: usize, j: usize, t: usize) -> VarKey {
    VarKey::new(Purchase, i, t).with_partner(j)
}

pub fn build(cfg: &BasinConfig, structure: MarketStructure) -> MlcpProblem {
    let market = structure != MarketStructure::NoMarket;
    let gcm = structure == MarketStructure::Gcm;
    let csm = structure == MarketStructure::Csm;
    let (ni, nt, nc) = (cfg.num_players(), cfg.periods, cfg.classes);
    let d = cfg.discounts();
    let mut b = Builder::new();

    for i in 0..ni {
        let per_t = |b: &mut Builder, s: Symbol| (0..nt).for_each(|t| b.declare(k(s, i, t)));
        let per_ct = |b: &mut Builder, s: Symbol| {
            for c in 0..nc {
                (0..nt).for_each(|t| b.declare(kc(s, i, c, t)));
            }
        };
        per_t(&mut b, WithdrawalIncrement);
        per_t(&mut b, StorageRelease);
        per_t(&mut b, Demand);
        per_t(&mut b, Capacity);
        if market {
            per_ct(&mut b, LossReduction);
            if gcm {
                for j in 0..i {
                    (0..nt).for_each(|t| b.declare(kp(i, j, t)));
                }
            } else if i > 0 {
                per_t(&mut b, Purchase);
            }
            per_ct(&mut b, GammaLoss);
        }
        per_t(&mut b, GammaFlow);
        per_t(&mut b, GammaCap);
        per_t(&mut b, LambdaSup);
        per_t(&mut b, LambdaAug);
        per_t(&mut b, MinOutflow);
        if market {
            per_t(&mut b, Price);
        }
    }

    for i in 0..ni {
        let p = &cfg.players[i];
        for t in 0..nt {
            let dt = d[t];

            // W^D stationarity (no discount factor on the dual sums).
            let row = k(WithdrawalIncrement, i, t);
            for t2 in t..nt {
                b.add(row, k(LambdaSup, i, t2), 1.0);
                if market {
                    for c in 0..nc {
                        b.add(row, kc(GammaLoss, i, c, t2), -p.lf[c][t]);
                    }
                }
            }

            // W^S stationarity.
            let row = k(StorageRelease, i, t);
            b.constant(row, dt * p.c_sr[t]);
            if gcm {
                b.add(row, k(Price, i, t), -dt);
            } else if csm {
                for kk in i + 1..ni {
                    b.add(row, k(Price, kk, t), -dt);
                }
            }
            b.add(row, k(GammaFlow, i, t), -1.0);
            b.add(row, k(GammaCap, i, t), 1.0);

            // Q stationarity with theta = alpha - beta Q substituted.
            let row = k(Demand, i, t);
            b.constant(row, dt * (p.c_ops[t] - p.alpha(t)));
            b.add(row, row, dt * p.beta[t]);
            b.add(row, k(LambdaSup, i, t), -1.0);
            b.add(row, k(GammaFlow, i, t), 1.0);

            // K stationarity.
            let row = k(Capacity, i, t);
            b.constant(row, dt * p.c_cap[t]);
            b.add(row, k(GammaCap, i, t), -1.0);
            b.add(row, k(LambdaAug, i, t), 1.0);

            if market {
                for c in 0..nc {
                    // L^R stationarity.
                    let row = kc(LossReduction, i, c, t);
                    b.constant(row, dt * p.c_cu[c][t]);
                    if gcm {
                        b.add(row, k(Price, i, t), -dt);
                    } else {
                        for kk in i + 1..ni {
                            b.add(row, k(Price, kk, t), -dt);
                        }
                    }
                    for t2 in t..nt {
                        b.add(row, kc(GammaLoss, i, c, t2), 1.0);
                    }

                    // Cumulative loss-reduction limit.
                    let row = kc(GammaLoss, i, c, t);
                    for t2 in 0..=t {
                        b.add(row, k(WithdrawalIncrement, i, t2), p.lf[c][t2]);
                        b.add(row, kc(LossReduction, i, c, t2), -1.0);
                    }
                }

                // W^P stationarity.
                if gcm {
                    for j in 0..i {
                        let row = kp(i, j, t);
                        b.add(row, k(Price, j, t), dt);
                        b.add(row, k(GammaFlow, i, t), -1.0);
                    }
                } else if i > 0 {
                    let row = k(Purchase, i, t);
                    b.add(row, k(Price, i, t), dt);
                    b.add(row, k(GammaFlow, i, t), -1.0);
                }
            }

            // Withdrawal limit.
            let row = k(GammaFlow, i, t);
            b.constant(row, p.n - p.r_fc[t]);
            b.add(row, k(StorageRelease, i, t), 1.0);
            if gcm {
                for j in 0..i {
                    b.add(row, kp(i, j, t), 1.0);
                }
            } else if csm && i > 0 {
                b.add(row, k(Purchase, i, t), 1.0);
            }
            if i > 0 {
                b.add(row, k(MinOutflow, i - 1, t), 1.0);
            }
            b.add(row, k(Demand, i, t), -1.0);

            // Release capacity.
            let row = k(GammaCap, i, t);
            b.add(row, k(Capacity, i, t), 1.0);
            b.add(row, k(StorageRelease, i, t), -1.0);

            // Cumulative supply.
            let row = k(LambdaSup, i, t);
            for t2 in 0..=t {
                b.add(row, k(WithdrawalIncrement, i, t2), 1.0);
            }
            b.add(row, k(Demand, i, t), -1.0);

            // Required augmentation.
            let row = k(LambdaAug, i, t);
            b.add(row, k(Capacity, i, t), 1.0);
            b.constant(row, -p.a_req[t]);

            // Minimum outflow definition, written as O^min - (n - losses + restored + O^min_{i-1}) = 0.
            let row = k(MinOutflow, i, t);
            b.add(row, row, 1.0);
            b.constant(row, -p.n);
            for c in 0..nc {
                for t2 in 0..=t {
                    b.add(row, k(WithdrawalIncrement, i, t2), p.lf[c][t2]);
                }
                if market {
                    for t2 in 0..t {
                        b.add(row, kc(LossReduction, i, c, t2), -1.0);
                    }
                }
            }
            if i > 0 {
                b.add(row, k(MinOutflow, i - 1, t), -1.0);
            }

            // Market clearing.
            if gcm {
                let row = k(Price, i, t);
                for c in 0..nc {
                    b.add(row, kc(LossReduction, i, c, t), 1.0);
                }
                b.add(row, k(StorageRelease, i, t), 1.0);
                for kk in i + 1..ni {
                    b.add(row, kp(kk, i, t), -1.0);
                }
            } else if csm {
                let row = k(Price, i, t);
                for j in 0..i {
                    for c in 0..nc {
                        b.add(row, kc(LossReduction, j, c, t), 1.0);
                    }
                    b.add(row, k(StorageRelease, j, t), 1.0);
                }
                if i > 0 {
                    b.add(row, k(Purchase, i, t), -1.0);
                }
            }
        }
    }
    b.finish()
}

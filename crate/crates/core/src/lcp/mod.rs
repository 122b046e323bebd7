//! Mixed linear complementarity problems.
//!
//! A problem is a square system `w = Mz + q` where every variable is either
//! `Nonnegative` (row `i` is the complementarity condition
//! `0 <= z_i ⊥ w_i >= 0`) or `Free` (row `i` is the equation `w_i = 0`).
//!
//! Two solvers are provided: a Fischer-Burmeister semismooth Newton method
//! ([`solve_fb_newton`]), which is sensitive to its starting point, and a
//! lexicographic Lemke pivoting method ([`solve_lemke`]) used as an
//! independent cross-check.

mod dump;
mod lemke;
mod newton;
mod sparse;

pub use dump::{write_matrix_market, write_variable_map};
pub use lemke::{solve_lemke, solve_lemke_with, LemkeOptions};
pub use newton::{solve_fb_newton, NewtonOptions};
pub use sparse::CsrMatrix;

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Model symbol attached to a problem variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    #[serde(rename = "W^D")]
    WithdrawalIncrement,
    #[serde(rename = "W^S")]
    StorageRelease,
    #[serde(rename = "Q")]
    Demand,
    #[serde(rename = "K")]
    Capacity,
    #[serde(rename = "L^R")]
    LossReduction,
    #[serde(rename = "W^P")]
    Purchase,
    #[serde(rename = "O^min")]
    MinOutflow,
    #[serde(rename = "gamma^loss")]
    GammaLoss,
    #[serde(rename = "gamma^flow")]
    GammaFlow,
    #[serde(rename = "gamma^cap")]
    GammaCap,
    #[serde(rename = "lambda^sup")]
    LambdaSup,
    #[serde(rename = "lambda^aug")]
    LambdaAug,
    #[serde(rename = "pi^as")]
    Price,
    /// Anonymous variable of a problem not built from a basin.
    #[serde(rename = "z")]
    Generic,
}

impl Symbol {
    /// Sign restriction the water-market formulations attach to this symbol.
    pub fn default_sign(self) -> Sign {
        match self {
            Symbol::LambdaSup | Symbol::LambdaAug | Symbol::MinOutflow => Sign::Free,
            _ => Sign::Nonnegative,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Symbol::WithdrawalIncrement => "W^D",
            Symbol::StorageRelease => "W^S",
            Symbol::Demand => "Q",
            Symbol::Capacity => "K",
            Symbol::LossReduction => "L^R",
            Symbol::Purchase => "W^P",
            Symbol::MinOutflow => "O^min",
            Symbol::GammaLoss => "gamma^loss",
            Symbol::GammaFlow => "gamma^flow",
            Symbol::GammaCap => "gamma^cap",
            Symbol::LambdaSup => "lambda^sup",
            Symbol::LambdaAug => "lambda^aug",
            Symbol::Price => "pi^as",
            Symbol::Generic => "z",
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Nonnegative,
    Free,
}

/// Identity of a variable: symbol plus its player/period/class indices.
///
/// `partner` is the counterparty of a bilateral purchase (the seller `j` of
/// `W^P_{ij,t}`); it is `None` for every other symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarKey {
    pub symbol: Symbol,
    pub player: usize,
    pub period: usize,
    pub class: Option<usize>,
    pub partner: Option<usize>,
}

impl VarKey {
    pub fn new(symbol: Symbol, player: usize, period: usize) -> Self {
        VarKey { symbol, player, period, class: None, partner: None }
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class = Some(class);
        self
    }

    pub fn with_partner(mut self, partner: usize) -> Self {
        self.partner = Some(partner);
        self
    }
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[i={}", self.symbol, self.player)?;
        if let Some(j) = self.partner {
            write!(f, ",j={j}")?;
        }
        if let Some(c) = self.class {
            write!(f, ",c={c}")?;
        }
        write!(f, ",t={}]", self.period)
    }
}

/// Row/column metadata of an [`MlcpProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub id: usize,
    #[serde(flatten)]
    pub key: VarKey,
    pub sign: Sign,
}

#[derive(Debug, Error)]
pub enum LcpError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("duplicate variable {0}")]
    DuplicateVariable(String),
    #[error("Newton system singular at iteration {iteration} after regularization up to mu={mu:e}")]
    SingularJacobian { iteration: usize, mu: f64 },
    #[error("lexicographic ratio test failed to break a tie after {pivots} pivots")]
    DegeneratePivot { pivots: usize },
    #[error("free variables could not be eliminated: {0}")]
    FreeElimination(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A mixed LCP `w = Mz + q` with per-variable sign metadata.
#[derive(Debug, Clone)]
pub struct MlcpProblem {
    m: CsrMatrix,
    q: Vec<f64>,
    vars: Vec<VariableMeta>,
}

impl MlcpProblem {
    pub fn new(m: CsrMatrix, q: Vec<f64>, vars: Vec<VariableMeta>) -> Result<Self, LcpError> {
        let n = q.len();
        if m.nrows() != n || m.ncols() != n {
            return Err(LcpError::DimensionMismatch { what: "M", expected: n, got: m.nrows().max(m.ncols()) });
        }
        if vars.len() != n {
            return Err(LcpError::DimensionMismatch { what: "vars", expected: n, got: vars.len() });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(LcpError::NonFinite("q"));
        }
        if m.values().iter().any(|v| !v.is_finite()) {
            return Err(LcpError::NonFinite("M"));
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, v) in vars.iter().enumerate() {
            if v.id != i {
                return Err(LcpError::DimensionMismatch { what: "variable id", expected: i, got: v.id });
            }
            if v.key.symbol != Symbol::Generic && !seen.insert(v.key) {
                return Err(LcpError::DuplicateVariable(v.key.to_string()));
            }
        }
        Ok(MlcpProblem { m, q, vars })
    }

    /// Problem without model metadata; each variable becomes a generic `z_i`.
    pub fn anonymous(m: CsrMatrix, q: Vec<f64>, signs: &[Sign]) -> Result<Self, LcpError> {
        if signs.len() != q.len() {
            return Err(LcpError::DimensionMismatch { what: "signs", expected: q.len(), got: signs.len() });
        }
        let vars = signs
            .iter()
            .enumerate()
            .map(|(i, &sign)| VariableMeta { id: i, key: VarKey::new(Symbol::Generic, 0, i), sign })
            .collect();
        Self::new(m, q, vars)
    }

    /// Pure LCP (every variable nonnegative) from a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>], q: Vec<f64>) -> Result<Self, LcpError> {
        let signs = vec![Sign::Nonnegative; q.len()];
        Self::anonymous(CsrMatrix::from_dense(rows), q, &signs)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn vars(&self) -> &[VariableMeta] {
        &self.vars
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.vars[i].sign == Sign::Free
    }

    /// `w = Mz + q`.
    pub fn affine(&self, z: &[f64]) -> Vec<f64> {
        let mut w = self.m.mul_vec(z);
        for (wi, qi) in w.iter_mut().zip(&self.q) {
            *wi += qi;
        }
        w
    }

    /// Same problem with row `i` of `M` and `q_i` multiplied by `factors[i]`.
    pub fn scale_rows(&self, factors: &[f64]) -> MlcpProblem {
        let m = self.m.scale_rows(factors);
        let q = self.q.iter().zip(factors).map(|(q, s)| q * s).collect();
        MlcpProblem { m, q, vars: self.vars.clone() }
    }

    pub(crate) fn check_len(&self, z: &[f64], what: &'static str) -> Result<(), LcpError> {
        if z.len() != self.n() {
            return Err(LcpError::DimensionMismatch { what, expected: self.n(), got: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(LcpError::NonFinite(what));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    RayTermination,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub z: Vec<f64>,
    /// Infinity norm of the Fischer-Burmeister / equation residual at `z`.
    pub residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Secondary ray direction when Lemke terminates on a ray.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray: Option<Vec<f64>>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Fischer-Burmeister function `sqrt(a^2 + b^2) - a - b`.
pub fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a.hypot(b) - a - b
}

/// Infinity norm over rows of `|phi(z_i, w_i)|` for nonnegative rows and
/// `|w_i|` for free rows.
pub fn residual(p: &MlcpProblem, z: &[f64]) -> f64 {
    let w = p.affine(z);
    residual_with(p, z, &w)
}

pub(crate) fn residual_with(p: &MlcpProblem, z: &[f64], w: &[f64]) -> f64 {
    (0..p.n())
        .map(|i| {
            if p.is_free(i) {
                w[i].abs()
            } else {
                fischer_burmeister(z[i], w[i]).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of `z >= 0`, `w >= 0`, `z.w = 0` on nonnegative rows and
/// `w = 0` on free rows.
pub fn complementarity_violation(p: &MlcpProblem, z: &[f64]) -> f64 {
    let w = p.affine(z);
    violation_with(p, z, &w)
}

pub(crate) fn violation_with(p: &MlcpProblem, z: &[f64], w: &[f64]) -> f64 {
    (0..p.n())
        .map(|i| {
            if p.is_free(i) {
                w[i].abs()
            } else {
                (-z[i]).max(-w[i]).max((z[i] * w[i]).abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Re-solve on the active set guessed from `z`: nonnegative rows with
/// `z_i > w_i` (and all free rows) get `w_i = 0`, the rest get `z_i = 0`.
///
/// Returns the polished point when the linear solve succeeds and the result
/// is at least as good as `z` in both residual and complementarity.
pub(crate) fn polish(p: &MlcpProblem, z: &[f64]) -> Option<Vec<f64>> {
    let n = p.n();
    let w = p.affine(z);
    let basic: Vec<usize> = (0..n).filter(|&i| p.is_free(i) || z[i] > w[i]).collect();
    let k = basic.len();
    if k == 0 {
        let zero = vec![0.0; n];
        return accept_if_better(p, z, zero);
    }
    let mut pos = vec![usize::MAX; n];
    for (a, &i) in basic.iter().enumerate() {
        pos[i] = a;
    }
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for (r, &i) in basic.iter().enumerate() {
        rhs[r] = -p.q[i];
        for (j, v) in p.m.row(i) {
            if pos[j] != usize::MAX {
                a[(r, pos[j])] = v;
            }
        }
    }
    let sol = a.lu().solve(&rhs)?;
    let mut candidate = vec![0.0; n];
    for (r, &i) in basic.iter().enumerate() {
        candidate[i] = sol[r];
    }
    if candidate.iter().any(|v| !v.is_finite()) {
        return None;
    }
    accept_if_better(p, z, candidate)
}

fn accept_if_better(p: &MlcpProblem, z: &[f64], mut candidate: Vec<f64>) -> Option<Vec<f64>> {
    for i in 0..p.n() {
        if !p.is_free(i) && candidate[i] < 0.0 && candidate[i] > -1e-12 {
            candidate[i] = 0.0;
        }
    }
    let w_old = p.affine(z);
    let w_new = p.affine(&candidate);
    let old = residual_with(p, z, &w_old).max(violation_with(p, z, &w_old));
    let new = residual_with(p, &candidate, &w_new).max(violation_with(p, &candidate, &w_new));
    (new <= old).then_some(candidate)
}

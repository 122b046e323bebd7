//! Lemke's complementary pivoting method with a lexicographic ratio test.
//!
//! Free variables are removed before pivoting by a principal pivot on the
//! free rows together with a set of nonnegative partner rows chosen so that
//! the pivot block is nonsingular. The partners swap roles (`w_p` becomes the
//! variable, `z_p` its complement), which leaves an ordinary LCP.

use super::{polish, residual, LcpError, MlcpProblem, SolveReport, SolveStatus};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LemkeOptions {
    /// Pivot budget as a multiple of the reduced dimension.
    pub pivots_per_variable: usize,
    /// Entries of the entering column at or below this are ignored in the ratio test.
    pub pivot_tol: f64,
    /// Relative tolerance when comparing ratios for ties.
    pub tie_tol: f64,
}

impl Default for LemkeOptions {
    fn default() -> Self {
        LemkeOptions { pivots_per_variable: 50, pivot_tol: 1e-11, tie_tol: 1e-12 }
    }
}

pub fn solve_lemke(p: &MlcpProblem) -> Result<SolveReport, LcpError> {
    solve_lemke_with(p, &LemkeOptions::default())
}

pub fn solve_lemke_with(p: &MlcpProblem, opts: &LemkeOptions) -> Result<SolveReport, LcpError> {
    let n = p.n();
    let dense = p.matrix().to_dense();
    let free: Vec<usize> = (0..n).filter(|&i| p.is_free(i)).collect();

    let (z, status, pivots, ray) = if free.is_empty() {
        let raw = lemke_dense(&dense, p.q(), opts)?;
        (raw.z, raw.status, raw.pivots, raw.ray)
    } else {
        let red = Reduction::new(p, &dense, &free)?;
        let raw = lemke_dense(&red.m, &red.q, opts)?;
        let z = red.expand(&raw.z, false);
        let ray = raw.ray.map(|r| red.expand(&r, true));
        (z, raw.status, raw.pivots, ray)
    };

    let z = if status == SolveStatus::Converged { polish(p, &z).unwrap_or(z) } else { z };
    let residual = residual(p, &z);
    Ok(SolveReport { z, residual, status, iterations: pivots, ray })
}

struct Raw {
    z: Vec<f64>,
    status: SolveStatus,
    pivots: usize,
    ray: Option<Vec<f64>>,
}

/// Lemke on a pure LCP with covering vector of ones.
fn lemke_dense(m: &DMatrix<f64>, q: &[f64], opts: &LemkeOptions) -> Result<Raw, LcpError> {
    let n = q.len();
    if q.iter().all(|&v| v >= 0.0) {
        return Ok(Raw { z: vec![0.0; n], status: SolveStatus::Converged, pivots: 0, ray: None });
    }

    // Columns: w_0..w_{n-1}, z_0..z_{n-1}, the artificial z0, then the rhs.
    let width = 2 * n + 2;
    let art = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = vec![0.0; n * width];
    for i in 0..n {
        let row = &mut t[i * width..(i + 1) * width];
        row[i] = 1.0;
        for j in 0..n {
            row[n + j] = -m[(i, j)];
        }
        row[art] = -1.0;
        row[rhs] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();

    // First pivot: z0 enters, the most negative q leaves (last index on ties).
    let mut leave = 0;
    for i in 0..n {
        if q[i] <= q[leave] {
            leave = i;
        }
    }
    pivot(&mut t, width, n, leave, art);
    let mut entering = complement(basis[leave], n);
    basis[leave] = art;

    let max_pivots = opts.pivots_per_variable * n.max(1);
    let mut pivots = 1;
    loop {
        if pivots >= max_pivots {
            return Ok(Raw { z: read_z(&t, width, &basis, n), status: SolveStatus::MaxIterations, pivots, ray: None });
        }
        let col: Vec<f64> = (0..n).map(|i| t[i * width + entering]).collect();
        let candidates: Vec<usize> = (0..n).filter(|&i| col[i] > opts.pivot_tol).collect();
        if candidates.is_empty() {
            let mut ray = vec![0.0; n];
            if entering >= n && entering < art {
                ray[entering - n] = 1.0;
            }
            for i in 0..n {
                let b = basis[i];
                if b >= n && b < art {
                    ray[b - n] = -col[i];
                }
            }
            return Ok(Raw {
                z: read_z(&t, width, &basis, n),
                status: SolveStatus::RayTermination,
                pivots,
                ray: Some(ray),
            });
        }
        let r = lex_min_ratio(&t, width, n, &col, &candidates, &basis, art, opts, pivots)?;
        pivot(&mut t, width, n, r, entering);
        pivots += 1;
        let left = basis[r];
        basis[r] = entering;
        if left == art {
            return Ok(Raw { z: read_z(&t, width, &basis, n), status: SolveStatus::Converged, pivots, ray: None });
        }
        entering = complement(left, n);
    }
}

fn complement(var: usize, n: usize) -> usize {
    if var < n {
        var + n
    } else {
        var - n
    }
}

fn read_z(t: &[f64], width: usize, basis: &[usize], n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b >= n && b < 2 * n {
            z[b - n] = t[i * width + width - 1].max(0.0);
        }
    }
    z
}

fn pivot(t: &mut [f64], width: usize, n: usize, r: usize, c: usize) {
    let pv = t[r * width + c];
    for v in &mut t[r * width..(r + 1) * width] {
        *v /= pv;
    }
    let prow: Vec<f64> = t[r * width..(r + 1) * width].to_vec();
    for i in 0..n {
        if i == r {
            continue;
        }
        let f = t[i * width + c];
        if f == 0.0 {
            continue;
        }
        let row = &mut t[i * width..(i + 1) * width];
        for (v, pvj) in row.iter_mut().zip(&prow) {
            if *pvj != 0.0 {
                *v -= f * pvj;
            }
        }
        row[c] = 0.0;
    }
}

#[allow(clippy::too_many_arguments)]
fn lex_min_ratio(
    t: &[f64],
    width: usize,
    n: usize,
    col: &[f64],
    candidates: &[usize],
    basis: &[usize],
    art: usize,
    opts: &LemkeOptions,
    pivots: usize,
) -> Result<usize, LcpError> {
    let rhs = width - 1;
    let ratio = |i: usize, k: usize| t[i * width + k] / col[i];
    let close = |a: f64, b: f64| (a - b).abs() <= opts.tie_tol * (1.0 + a.abs().max(b.abs()));

    let best = candidates.iter().map(|&i| ratio(i, rhs)).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<usize> = candidates.iter().copied().filter(|&i| close(ratio(i, rhs), best)).collect();
    if let Some(&i) = tied.iter().find(|&&i| basis[i] == art) {
        return Ok(i);
    }
    // Break remaining ties on the rows of B^{-1} (the w columns of the tableau).
    let mut k = 0;
    while tied.len() > 1 && k < n {
        let best = tied.iter().map(|&i| ratio(i, k)).fold(f64::INFINITY, f64::min);
        tied.retain(|&i| close(ratio(i, k), best));
        k += 1;
    }
    if tied.len() == 1 {
        Ok(tied[0])
    } else {
        Err(LcpError::DegeneratePivot { pivots })
    }
}

/// Principal pivot on the free rows plus partner rows, giving an LCP in
/// `(w_P, z_beta)`.
struct Reduction {
    n: usize,
    alpha: Vec<usize>,
    /// Partner positions inside `alpha`.
    partner_pos: Vec<usize>,
    beta: Vec<usize>,
    a_inv: DMatrix<f64>,
    a_inv_b: DMatrix<f64>,
    a_inv_q: Vec<f64>,
    m: DMatrix<f64>,
    q: Vec<f64>,
}

impl Reduction {
    fn new(p: &MlcpProblem, dense: &DMatrix<f64>, free: &[usize]) -> Result<Self, LcpError> {
        let n = p.n();
        let partners = choose_partners(p, dense, free)?;
        let mut alpha: Vec<usize> = free.to_vec();
        alpha.extend(&partners);
        let partner_pos: Vec<usize> = (free.len()..alpha.len()).collect();
        let in_alpha: Vec<bool> = {
            let mut v = vec![false; n];
            for &i in &alpha {
                v[i] = true;
            }
            v
        };
        let beta: Vec<usize> = (0..n).filter(|&i| !in_alpha[i]).collect();

        let a = dense.select_rows(&alpha).select_columns(&alpha);
        let b = dense.select_rows(&alpha).select_columns(&beta);
        let c = dense.select_rows(&beta).select_columns(&alpha);
        let d = dense.select_rows(&beta).select_columns(&beta);
        let a_inv = a
            .try_inverse()
            .ok_or_else(|| LcpError::FreeElimination("pivot block is singular".into()))?;
        let q_alpha = nalgebra::DVector::from_iterator(alpha.len(), alpha.iter().map(|&i| p.q()[i]));
        let q_beta = nalgebra::DVector::from_iterator(beta.len(), beta.iter().map(|&i| p.q()[i]));
        let a_inv_b = &a_inv * &b;
        let a_inv_q = &a_inv * &q_alpha;
        let c_a_inv = &c * &a_inv;
        let schur = &d - &c * &a_inv_b;
        let q_red_beta = &q_beta - &c * &a_inv_q;

        let np = partner_pos.len();
        let nb = beta.len();
        let mut m = DMatrix::zeros(np + nb, np + nb);
        let mut q = vec![0.0; np + nb];
        for (r, &pr) in partner_pos.iter().enumerate() {
            for (s, &ps) in partner_pos.iter().enumerate() {
                m[(r, s)] = a_inv[(pr, ps)];
            }
            for s in 0..nb {
                m[(r, np + s)] = -a_inv_b[(pr, s)];
            }
            q[r] = -a_inv_q[pr];
        }
        for r in 0..nb {
            for (s, &ps) in partner_pos.iter().enumerate() {
                m[(np + r, s)] = c_a_inv[(r, ps)];
            }
            for s in 0..nb {
                m[(np + r, np + s)] = schur[(r, s)];
            }
            q[np + r] = q_red_beta[r];
        }
        Ok(Reduction { n, alpha, partner_pos, beta, a_inv, a_inv_b, a_inv_q: a_inv_q.iter().copied().collect(), m, q })
    }

    /// Maps a reduced vector `(w_P, z_beta)` back to `z`. With `homogeneous`
    /// the constant term is dropped (used for rays).
    fn expand(&self, reduced: &[f64], homogeneous: bool) -> Vec<f64> {
        let np = self.partner_pos.len();
        let mut z = vec![0.0; self.n];
        for (s, &j) in self.beta.iter().enumerate() {
            z[j] = reduced[np + s];
        }
        for (r, &i) in self.alpha.iter().enumerate() {
            let mut v = if homogeneous { 0.0 } else { -self.a_inv_q[r] };
            for (s, &ps) in self.partner_pos.iter().enumerate() {
                v += self.a_inv[(r, ps)] * reduced[s];
            }
            for s in 0..self.beta.len() {
                v -= self.a_inv_b[(r, s)] * reduced[np + s];
            }
            z[i] = v;
        }
        z
    }
}

fn nonsingular(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > 1e-12 * max
}

/// Partners for the free variables: first by structural matching (a
/// nonnegative `p` coupled to free `f` in both directions), then greedily by
/// rank if the matched block is still singular.
fn choose_partners(p: &MlcpProblem, m: &DMatrix<f64>, free: &[usize]) -> Result<Vec<usize>, LcpError> {
    let n = p.n();
    let block = |idx: &[usize]| m.select_rows(idx).select_columns(idx);
    if nonsingular(&block(free)) {
        return Ok(Vec::new());
    }

    let mut used = vec![false; n];
    let mut partners = Vec::new();
    for &f in free {
        if m[(f, f)] != 0.0 {
            continue;
        }
        if let Some(c) = (0..n).find(|&c| !p.is_free(c) && !used[c] && m[(f, c)] != 0.0 && m[(c, f)] != 0.0) {
            used[c] = true;
            partners.push(c);
        }
    }
    let mut alpha: Vec<usize> = free.iter().copied().chain(partners.iter().copied()).collect();
    if nonsingular(&block(&alpha)) {
        return Ok(partners);
    }

    // Greedy fallback: add whichever nonnegative index lowers the rank deficiency.
    let rank = |idx: &[usize]| block(idx).rank(1e-10);
    let mut partners = Vec::new();
    alpha = free.to_vec();
    let mut used = vec![false; n];
    let mut deficiency = alpha.len() - rank(&alpha);
    while deficiency > 0 {
        let pick = (0..n).filter(|&c| !p.is_free(c) && !used[c]).find(|&c| {
            let mut trial = alpha.clone();
            trial.push(c);
            trial.len() - rank(&trial) < deficiency
        });
        match pick {
            Some(c) => {
                used[c] = true;
                alpha.push(c);
                partners.push(c);
                deficiency = alpha.len() - rank(&alpha);
            }
            None => {
                return Err(LcpError::FreeElimination(format!(
                    "no nonnegative partner reduces the rank deficiency ({deficiency} left)"
                )))
            }
        }
    }
    Ok(partners)
}

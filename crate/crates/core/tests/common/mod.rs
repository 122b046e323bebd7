//! Random LCP generators and a brute-force solution oracle shared by the
//! property suite and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use riverlcp::lcp::{CsrMatrix, MlcpProblem, Sign};

/// `A A^T / n + shift I + S` with `S` skew-symmetric: positive definite, hence a P-matrix.
pub fn positive_definite<R: Rng>(rng: &mut R, n: usize, shift: f64, skew: f64) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let s: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let aat: f64 = (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>() / n as f64;
                    aat + if i == j { shift } else { 0.0 } + skew * (s[i][j] - s[j][i])
                })
                .collect()
        })
        .collect()
}

/// Entries uniform in `[-1, 1]` with a random nonnegative diagonal boost; often not a P-matrix.
pub fn general<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| rng.random_range(-1.0..1.0) + if i == j { rng.random_range(0.0..2.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn problem(m: &[Vec<f64>], q: Vec<f64>, signs: &[Sign]) -> MlcpProblem {
    MlcpProblem::anonymous(CsrMatrix::from_dense(m), q, signs).unwrap()
}

/// Every solution obtained from a complementary basis: free variables are
/// always basic, each subset of nonnegative variables is tried as the rest.
pub fn enumerate_solutions(m: &[Vec<f64>], q: &[f64], signs: &[Sign], tol: f64) -> Vec<Vec<f64>> {
    let n = q.len();
    let free: Vec<usize> = (0..n).filter(|&i| signs[i] == Sign::Free).collect();
    let nonneg: Vec<usize> = (0..n).filter(|&i| signs[i] == Sign::Nonnegative).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << nonneg.len()) {
        let mut basis = free.clone();
        basis.extend(nonneg.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, &i)| i));
        let b = basis.len();
        let mut z = vec![0.0; n];
        if b > 0 {
            let mbb = DMatrix::from_fn(b, b, |r, c| m[basis[r]][basis[c]]);
            let rhs = DVector::from_fn(b, |r, _| -q[basis[r]]);
            let Some(sol) = mbb.lu().solve(&rhs) else { continue };
            for (k, &i) in basis.iter().enumerate() {
                z[i] = sol[k];
            }
        }
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i][j] * z[j]).sum::<f64>() + q[i]).collect();
        let ok = (0..n).all(|i| match signs[i] {
            Sign::Free => w[i].abs() <= tol,
            Sign::Nonnegative => z[i] >= -tol && w[i] >= -tol && (z[i] * w[i]).abs() <= tol,
        });
        if ok {
            out.push(z);
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

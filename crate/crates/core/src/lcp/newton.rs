//! Fischer-Burmeister semismooth Newton method with Armijo line search.

use super::{
    fischer_burmeister, polish, residual_with, violation_with, LcpError, MlcpProblem, SolveReport,
    SolveStatus,
};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on both the FB residual and the complementarity violation.
    pub tol: f64,
    pub max_iterations: usize,
    /// Step-length reduction factor of the Armijo search.
    pub backtrack: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// First Levenberg shift, relative to the largest diagonal entry of `H^T H`.
    pub mu_initial: f64,
    pub mu_growth: f64,
    pub mu_max: f64,
    /// Try an exact re-solve on the estimated active set once the residual is small.
    pub polish: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iterations: 200,
            backtrack: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            mu_initial: 1e-10,
            mu_growth: 10.0,
            mu_max: 1e-2,
            polish: true,
        }
    }
}

// Below this residual the active-set re-solve is attempted.
const POLISH_BELOW: f64 = 1e-4;
// Newton directions must satisfy grad.d <= -RHO |d|^P to be used.
const RHO: f64 = 1e-12;
const P: f64 = 2.1;

pub fn solve_fb_newton(p: &MlcpProblem, start: &[f64], opts: &NewtonOptions) -> Result<SolveReport, LcpError> {
    p.check_len(start, "start")?;
    let n = p.n();
    let mut z = start.to_vec();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    if n == 0 {
        return Ok(SolveReport { z, residual: 0.0, status: SolveStatus::Converged, iterations: 0, ray: None });
    }

    for it in 0..=opts.max_iterations {
        iterations = it;
        let w = p.affine(&z);
        let res = residual_with(p, &z, &w);
        if res <= opts.tol && violation_with(p, &z, &w) <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if opts.polish && res < POLISH_BELOW {
            if let Some(zp) = polish(p, &z) {
                let wp = p.affine(&zp);
                if residual_with(p, &zp, &wp) <= opts.tol && violation_with(p, &zp, &wp) <= opts.tol {
                    z = zp;
                    status = SolveStatus::Converged;
                    break;
                }
            }
        }
        if it == opts.max_iterations {
            break;
        }

        let phi = fb_vector(p, &z, &w);
        let h = jacobian(p, &z, &w);
        let phi_v = DVector::from_column_slice(&phi);
        let grad = h.transpose() * &phi_v;
        let merit = 0.5 * phi_v.norm_squared();

        let mut dir = newton_direction(&h, &phi_v, &z, opts, it)?;
        let slope = grad.dot(&dir);
        if !(slope <= -RHO * dir.norm().powf(P)) {
            dir = -grad.clone();
        }

        match line_search(p, &z, &dir, merit, grad.dot(&dir), opts) {
            Some(next) => z = next,
            None => {
                // Newton step rejected; one steepest-descent attempt before giving up.
                let g = -grad.clone();
                match line_search(p, &z, &g, merit, -grad.norm_squared(), opts) {
                    Some(next) => z = next,
                    None => break,
                }
            }
        }
    }

    let w = p.affine(&z);
    let residual = residual_with(p, &z, &w);
    Ok(SolveReport { z, residual, status, iterations, ray: None })
}

fn fb_vector(p: &MlcpProblem, z: &[f64], w: &[f64]) -> Vec<f64> {
    (0..p.n())
        .map(|i| if p.is_free(i) { w[i] } else { fischer_burmeister(z[i], w[i]) })
        .collect()
}

fn merit_at(p: &MlcpProblem, z: &[f64]) -> f64 {
    let w = p.affine(z);
    0.5 * fb_vector(p, z, &w).iter().map(|v| v * v).sum::<f64>()
}

/// Element of the B-subdifferential of the FB reformulation. Rows where both
/// `z_i` and `w_i` vanish use the direction `z = e_beta`.
fn jacobian(p: &MlcpProblem, z: &[f64], w: &[f64]) -> DMatrix<f64> {
    let n = p.n();
    let m = p.matrix();
    let degenerate: Vec<bool> = (0..n).map(|i| !p.is_free(i) && z[i].hypot(w[i]) < 1e-15).collect();
    let mut probe = vec![0.0; n];
    if degenerate.iter().any(|&b| b) {
        let e: Vec<f64> = degenerate.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        probe = m.mul_vec(&e);
    }
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let (da, db) = if p.is_free(i) {
            (0.0, 1.0)
        } else if degenerate[i] {
            let r = 1f64.hypot(probe[i]);
            (1.0 / r - 1.0, probe[i] / r - 1.0)
        } else {
            let r = z[i].hypot(w[i]);
            (z[i] / r - 1.0, w[i] / r - 1.0)
        };
        for (j, v) in m.row(i) {
            h[(i, j)] += db * v;
        }
        h[(i, i)] += da;
    }
    h
}

fn newton_direction(
    h: &DMatrix<f64>,
    phi: &DVector<f64>,
    z: &[f64],
    opts: &NewtonOptions,
    iteration: usize,
) -> Result<DVector<f64>, LcpError> {
    let zmax = z.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let acceptable = |d: &DVector<f64>| d.iter().all(|v| v.is_finite()) && d.amax() <= 1e10 * zmax;

    if let Some(d) = h.clone().lu().solve(&(-phi)) {
        if acceptable(&d) {
            return Ok(d);
        }
    }

    let hth = h.transpose() * h;
    let rhs = -(h.transpose() * phi);
    let scale = (0..hth.nrows()).map(|i| hth[(i, i)]).fold(1.0f64, f64::max);
    let mut mu = opts.mu_initial;
    while mu <= opts.mu_max {
        let mut a = hth.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu * scale;
        }
        if let Some(ch) = a.cholesky() {
            let d = ch.solve(&rhs);
            if acceptable(&d) {
                return Ok(d);
            }
        }
        mu *= opts.mu_growth;
    }
    Err(LcpError::SingularJacobian { iteration, mu: opts.mu_max })
}

fn line_search(
    p: &MlcpProblem,
    z: &[f64],
    dir: &DVector<f64>,
    merit: f64,
    slope: f64,
    opts: &NewtonOptions,
) -> Option<Vec<f64>> {
    let mut t = 1.0;
    let mut trial = vec![0.0; z.len()];
    for _ in 0..opts.max_backtracks {
        for (k, v) in trial.iter_mut().enumerate() {
            *v = z[k] + t * dir[k];
        }
        let m = merit_at(p, &trial);
        if m.is_finite() && m <= merit + opts.armijo * t * slope {
            return Some(trial);
        }
        t *= opts.backtrack;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcp::{complementarity_violation, CsrMatrix, Sign};

    fn solve(p: &MlcpProblem, start: &[f64]) -> SolveReport {
        solve_fb_newton(p, start, &NewtonOptions::default()).unwrap()
    }

    #[test]
    fn positive_q_gives_zero() {
        let p = MlcpProblem::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        let r = solve(&p, &[0.0, 0.0]);
        assert!(r.converged());
        assert_eq!(r.z, vec![0.0, 0.0]);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn negative_q_identity() {
        let p = MlcpProblem::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![-1.0, -1.0]).unwrap();
        let r = solve(&p, &[5.0, 5.0]);
        assert!(r.converged());
        assert!((r.z[0] - 1.0).abs() < 1e-12 && (r.z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_problem_with_free_row() {
        // min (x-2)^2/2 s.t. x + y = 1, x,y >= 0 written as an MLCP with multiplier l free.
        // rows: x: x - 2 + l >= 0, y: l >= 0, l: x + y - 1 = 0
        let m = CsrMatrix::from_dense(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let p = MlcpProblem::anonymous(m, vec![-2.0, 0.0, -1.0], &[Sign::Nonnegative, Sign::Nonnegative, Sign::Free])
            .unwrap();
        let r = solve(&p, &[1.0, 1.0, 1.0]);
        assert!(r.converged(), "{r:?}");
        assert!((r.z[0] - 1.0).abs() < 1e-10);
        assert!(r.z[1].abs() < 1e-10);
        assert!((r.z[2] - 1.0).abs() < 1e-10);
        assert!(complementarity_violation(&p, &r.z) <= 1e-9);
    }

    #[test]
    fn deterministic() {
        let p = MlcpProblem::from_dense(
            &[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]],
            vec![-1.0, 0.5, -2.0],
        )
        .unwrap();
        let a = solve(&p, &[1.0; 3]);
        let b = solve(&p, &[1.0; 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_row_does_not_break_newton() {
        // Second variable is inert: any z_1 >= 0 solves its row.
        let p = MlcpProblem::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0]], vec![-3.0, 0.0]).unwrap();
        let r = solve(&p, &[1.0, 1.0]);
        assert!(r.converged(), "{r:?}");
        assert!((r.z[0] - 3.0).abs() < 1e-10);
    }
}

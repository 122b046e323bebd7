//! Property tests of the two LCP solvers: 1000 random problems in total.

mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riverlcp::lcp::{
    complementarity_violation, residual, solve_fb_newton, solve_lemke, MlcpProblem, NewtonOptions, Sign, SolveReport,
};

const RESIDUAL_TOL: f64 = 1e-8;
const AGREE_TOL: f64 = 1e-6;

fn signs<R: Rng>(rng: &mut R, n: usize, free_share: f64) -> Vec<Sign> {
    (0..n).map(|_| if rng.random_bool(free_share) { Sign::Free } else { Sign::Nonnegative }).collect()
}

fn fb(p: &MlcpProblem) -> SolveReport {
    solve_fb_newton(p, &vec![1.0; p.n()], &NewtonOptions::default()).unwrap()
}

fn check_converged(p: &MlcpProblem, r: &SolveReport) -> Result<(), TestCaseError> {
    if r.converged() {
        let res = residual(p, &r.z);
        prop_assert!(res <= RESIDUAL_TOL, "residual {res:e}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// A P-matrix LCP has exactly one solution; both solvers must find it.
    #[test]
    fn p_matrix_problems_match_basis_enumeration(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = positive_definite(&mut rng, n, 0.1, 0.5);
        let q = vector(&mut rng, n, 5.0);
        let s = signs(&mut rng, n, 0.3);
        let p = problem(&m, q.clone(), &s);
        let oracle = enumerate_solutions(&m, &q, &s, 1e-9);
        prop_assert_eq!(oracle.len(), 1);
        for r in [fb(&p), solve_lemke(&p).unwrap()] {
            prop_assert!(r.converged(), "status {:?}", r.status);
            check_converged(&p, &r)?;
            prop_assert!(max_diff(&r.z, &oracle[0]) <= AGREE_TOL, "{:?} vs {:?}", r.z, oracle[0]);
        }
    }

    /// Arbitrary matrices: whatever converges is a genuine solution from the enumeration.
    #[test]
    fn general_problems_converge_only_to_enumerated_solutions(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = general(&mut rng, n);
        let q = vector(&mut rng, n, 3.0);
        let s = vec![Sign::Nonnegative; n];
        let p = problem(&m, q.clone(), &s);
        let oracle = enumerate_solutions(&m, &q, &s, 1e-7);
        let fb_report = solve_fb_newton(&p, &vec![1.0; n], &NewtonOptions::default()).ok();
        let lemke_report = solve_lemke(&p).ok();
        for r in [fb_report, lemke_report.clone()].into_iter().flatten() {
            check_converged(&p, &r)?;
            if r.converged() {
                prop_assert!(complementarity_violation(&p, &r.z) <= 1e-7);
                prop_assert!(oracle.iter().any(|z| max_diff(z, &r.z) <= AGREE_TOL), "{:?} not in {:?}", r.z, oracle);
            }
        }
        if oracle.is_empty() {
            prop_assert!(!lemke_report.is_some_and(|r| r.converged()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn larger_problems_agree_between_solvers(n in 7usize..=20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = positive_definite(&mut rng, n, 0.1, 0.5);
        let q = vector(&mut rng, n, 5.0);
        let s = signs(&mut rng, n, 0.2);
        let p = problem(&m, q, &s);
        let (a, b) = (fb(&p), solve_lemke(&p).unwrap());
        prop_assert!(a.converged() && b.converged());
        check_converged(&p, &a)?;
        check_converged(&p, &b)?;
        prop_assert!(max_diff(&a.z, &b.z) <= AGREE_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Scaling `q` scales the solution; positive row scaling leaves it unchanged.
    #[test]
    fn scaling_equivariance(n in 1usize..=10, seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = positive_definite(&mut rng, n, 0.1, 0.5);
        let q = vector(&mut rng, n, 5.0);
        let s = signs(&mut rng, n, 0.3);
        let p = problem(&m, q.clone(), &s);
        let scaled_q = problem(&m, q.iter().map(|v| c * v).collect(), &s);
        let factors: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled_rows = p.scale_rows(&factors);
        let solvers: [fn(&MlcpProblem) -> SolveReport; 2] = [fb, |p| solve_lemke(p).unwrap()];
        for solve in solvers {
            let base = solve(&p);
            prop_assert!(base.converged());
            let zq = solve(&scaled_q);
            prop_assert!(zq.converged());
            let expected: Vec<f64> = base.z.iter().map(|v| c * v).collect();
            prop_assert!(max_diff(&zq.z, &expected) <= AGREE_TOL * c.max(1.0));
            let zr = solve(&scaled_rows);
            prop_assert!(zr.converged());
            prop_assert!(max_diff(&zr.z, &base.z) <= AGREE_TOL);
        }
    }

    #[test]
    fn solving_twice_gives_identical_reports(n in 1usize..=20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = if rng.random_bool(0.5) { positive_definite(&mut rng, n, 0.1, 0.5) } else { general(&mut rng, n) };
        let q = vector(&mut rng, n, 5.0);
        let s = signs(&mut rng, n, 0.2);
        let p = problem(&m, q, &s);
        let newton = || solve_fb_newton(&p, &vec![1.0; n], &NewtonOptions::default()).ok();
        prop_assert_eq!(newton(), newton());
        prop_assert_eq!(solve_lemke(&p).ok(), solve_lemke(&p).ok());
    }
}

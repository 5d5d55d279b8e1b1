//! Dual active-set solver against brute-force active-set enumeration.

use musclespeed::qp::{self, check_kkt, check_kkt_with_multipliers, QpStatus, QuadraticProgram};
use musclespeed_oracle::{qp_enumerate, random_small_qp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[test]
fn textbook_examples_agree_with_enumeration() {
    let cases =
        [
            (
                QuadraticProgram::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3)),
                v(&[0.0, 0.0, 0.0]),
            ),
            (
                QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), v(&[-4.0]))
                    .with_inequalities(DMatrix::from_element(1, 1, 1.0), v(&[0.0]), v(&[1.0])),
                v(&[1.0]),
            ),
            (
                QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
                    .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0])),
                v(&[0.5, 0.5]),
            ),
        ];
    for (problem, expected) in cases {
        let oracle = qp_enumerate(&problem).unwrap();
        let solved = qp::solve_default(&problem).unwrap();
        assert_eq!(oracle.status, QpStatus::Optimal);
        assert!((&oracle.x - &expected).amax() < 1e-12);
        assert!((&solved.x - &expected).amax() < 1e-10);
    }
}

#[test]
fn four_variables_two_bounds_active() {
    // Unconstrained minimizer (2, -2, 0.3, 0.1) leaves the unit box in the
    // first two coordinates.
    let hessian = DMatrix::from_row_slice(
        4,
        4,
        &[
            2.0, 0.2, 0.0, 0.0, 0.2, 2.0, 0.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.1, 0.0, 1.5,
        ],
    );
    let target = v(&[2.0, -2.0, 0.3, 0.1]);
    let linear = -(&hessian * &target);
    let problem = QuadraticProgram::new(hessian, linear).with_inequalities(
        DMatrix::identity(4, 4),
        DVector::from_element(4, -1.0),
        DVector::from_element(4, 1.0),
    );
    let oracle = qp_enumerate(&problem).unwrap();
    let solved = qp::solve_default(&problem).unwrap();
    assert_eq!(solved.status, QpStatus::Optimal);
    assert!((oracle.x[0] - 1.0).abs() < 1e-12 && (oracle.x[1] + 1.0).abs() < 1e-12);
    assert!(
        (&solved.x - &oracle.x).amax() < 1e-6,
        "{} vs {}",
        solved.x,
        oracle.x
    );
    assert!((problem.objective(&solved.x) - problem.objective(&oracle.x)).abs() < 1e-6);
}

#[test]
fn oracle_points_pass_the_kkt_check() {
    for seed in 0..200 {
        let problem = random_small_qp(seed);
        let oracle = qp_enumerate(&problem).unwrap();
        if oracle.status != QpStatus::Optimal {
            continue;
        }
        let report = check_kkt(&problem, &oracle.x).unwrap();
        assert!(report.max() <= 1e-8, "seed {seed}: {report:?}");
    }
}

#[test]
fn oracle_multipliers_follow_the_solver_convention() {
    for seed in 0..200 {
        let problem = random_small_qp(seed);
        let oracle = qp_enumerate(&problem).unwrap();
        if oracle.status != QpStatus::Optimal {
            continue;
        }
        let report = check_kkt_with_multipliers(
            &problem,
            &oracle.x,
            &oracle.eq_multipliers,
            &oracle.ineq_multipliers,
        )
        .unwrap();
        assert!(report.max() <= 1e-8, "seed {seed}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_matches_enumeration(seed in any::<u64>()) {
        let problem = random_small_qp(seed);
        let oracle = qp_enumerate(&problem).unwrap();
        let solved = qp::solve_default(&problem).unwrap();
        let oracle_feasible = oracle.status == QpStatus::Optimal;
        let solver_feasible = solved.status == QpStatus::Optimal;
        prop_assert_eq!(oracle_feasible, solver_feasible, "status {:?} vs {:?}", oracle.status, solved.status);
        if solver_feasible {
            let gap = (problem.objective(&solved.x) - problem.objective(&oracle.x)).abs();
            prop_assert!(gap <= 1e-6, "objective gap {}", gap);
            prop_assert!(solved.kkt_residual <= qp::DEFAULT_TOLERANCE);
        }
    }

    #[test]
    fn solver_is_deterministic(seed in any::<u64>()) {
        let problem = random_small_qp(seed);
        let a = qp::solve_default(&problem).unwrap();
        let b = qp::solve_default(&problem).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.x.as_slice(), b.x.as_slice());
    }
}

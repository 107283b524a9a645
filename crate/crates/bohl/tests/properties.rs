//! Property tests for the structural invariants: plan algebra, rotation
//! geometry and estimator monotonicity under arbitrary inputs.

use bohl::exponents::{self, WindowSpec};
use bohl::linalg;
use bohl::millionshikov;
use bohl::perturbation::{self, PerturbationPlan};
use bohl::system::MatrixSequence;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| DMatrix::from_row_slice(d, d, &v))
}

fn plan_entries() -> impl Strategy<Value = Vec<(usize, DMatrix<f64>)>> {
    prop::collection::vec((0usize..64, small_matrix(2)), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncate_is_idempotent(entries in plan_entries(), eps in 0.01f64..2.0) {
        let plan = PerturbationPlan::from_support(2, entries).unwrap();
        let once = perturbation::truncate_plan(&plan, eps);
        let twice = perturbation::truncate_plan(&once, eps);
        prop_assert_eq!(once.support_indices(), twice.support_indices());
        for idx in once.support_indices() {
            for (a, b) in once.at(idx).unwrap().iter().zip(twice.at(idx).unwrap().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // Every surviving entry obeys the bound.
        for idx in once.support_indices() {
            prop_assert!(linalg::spectral_norm(once.at(idx).unwrap()) <= eps);
        }
    }

    #[test]
    fn compose_is_entrywise_sum(e1 in plan_entries(), e2 in plan_entries()) {
        let p1 = PerturbationPlan::from_support(2, e1).unwrap();
        let p2 = PerturbationPlan::from_support(2, e2).unwrap();
        let c = perturbation::compose_plans(&p1, &p2).unwrap();
        let zero = DMatrix::<f64>::zeros(2, 2);
        for idx in c.support_indices() {
            let a = p1.at(idx).unwrap_or(&zero);
            let b = p2.at(idx).unwrap_or(&zero);
            let want = a + b;
            for (x, y) in c.at(idx).unwrap().iter().zip(want.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rotation_moves_x_to_y(
        xs in prop::collection::vec(-1.0f64..1.0, 3),
        ys in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let x = DVector::from_vec(xs);
        let y = DVector::from_vec(ys);
        prop_assume!(linalg::vec_norm(&x) > 1e-3 && linalg::vec_norm(&y) > 1e-3);
        let theta = linalg::angle_between(&x, &y).unwrap();
        prop_assume!(theta < std::f64::consts::PI - 1e-6);
        let v = millionshikov::rotation_between(&x, &y).unwrap();
        let xhat = &x / linalg::vec_norm(&x);
        let yhat = &y / linalg::vec_norm(&y);
        prop_assert!((v * xhat - yhat).norm() <= 1e-12);
        // ||V - I|| equals the chord and never exceeds the angle.
        let diff = millionshikov::rotation_between(&x, &y).unwrap()
            - DMatrix::<f64>::identity(3, 3);
        let norm = linalg::spectral_norm(&diff);
        prop_assert!((norm - 2.0 * (theta / 2.0).sin()).abs() <= 1e-12);
        prop_assert!(norm <= theta + 1e-12);
    }

    #[test]
    fn estimator_trace_is_monotone(
        rates in prop::collection::vec(-0.8f64..0.8, 1..5),
        seed_x in -1.0f64..1.0,
    ) {
        // Periodic scalar system built from the given log rates.
        let mats: Vec<DMatrix<f64>> = rates
            .iter()
            .map(|r| DMatrix::from_element(1, 1, r.exp()))
            .collect();
        let sys = MatrixSequence::periodic(mats, 128).unwrap();
        let w = WindowSpec::default_for(128).unwrap();
        prop_assume!(seed_x.abs() > 1e-3);
        let x0 = DVector::from_element(1, seed_x);
        let (up, lo) = exponents::vector_estimates(&sys, &x0, &w).unwrap();
        for pair in up.values.windows(2) {
            prop_assert!(pair[1].value <= pair[0].value);
        }
        for pair in lo.values.windows(2) {
            prop_assert!(pair[1].value >= pair[0].value);
        }
        prop_assert!(lo.reported() <= up.reported());
    }

    #[test]
    fn apply_plan_changes_only_support(entries in plan_entries()) {
        let sys = MatrixSequence::identity(2, 64);
        let plan = PerturbationPlan::from_support(2, entries).unwrap();
        // Keep the perturbed coefficients invertible.
        let plan = perturbation::truncate_plan(&plan, 0.5);
        let support = plan.support_indices();
        let pert = perturbation::apply_plan(&sys, plan).unwrap();
        for n in 0..64 {
            let base = sys.coefficient(n).unwrap();
            let got = pert.coefficient(n).unwrap();
            if support.contains(&n) {
                continue;
            }
            for (a, b) in base.iter().zip(got.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

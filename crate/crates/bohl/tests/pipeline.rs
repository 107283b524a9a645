//! End-to-end construction checks on the block-switched gap instance: the
//! staged dichotomy-destroying plan and the full pipeline, including the
//! downstream witness verification.

use bohl::dichotomy::{self, Tolerances};
use bohl::exponents::WindowSpec;
use bohl::instances;
use bohl::perturbation::{self, DestroyOptions, DestroyVariant, StageKind};
use nalgebra::DVector;

#[test]
fn destroy_stages_on_gap_instance() {
    let h = 2048;
    let sys = instances::gap_instance(h);
    let w = WindowSpec::default_for(h).unwrap();
    let z0 = DVector::from_column_slice(&[1.0, 0.0]);
    let out = perturbation::destroy_bd_plan(
        &sys,
        &z0,
        DestroyVariant::Strict,
        &w,
        &DestroyOptions::default(),
    )
    .unwrap();

    let evens = out.even_stage_count();
    assert!(
        evens >= 2,
        "even stages: {evens}, stages: {:?}",
        out.stages.len()
    );
    assert!(out.verified(1e-9), "min slack {}", out.min_slack());
    assert!(out.plan.respects_schedule());
    assert!(out.plan.sup_norm() < 0.2);

    // Certified windows: even stages give near-zero upper windows, odd
    // stages decay windows for the designated solution.
    let pert = perturbation::apply_plan(&sys, out.plan.clone()).unwrap();
    let (up, lo) = bohl::exponents::vector_estimates(&pert, &out.x0, &w).unwrap();
    let tol = Tolerances::default();
    assert!(lo.reported() <= tol.witness, "lower {}", lo.reported());
    assert!(up.reported() >= -tol.witness, "upper {}", up.reported());

    for stage in &out.stages {
        match stage.kind {
            StageKind::Even => {
                assert!(stage.pair_eps.is_some());
            }
            StageKind::Odd => {
                assert!(stage.window.1 > stage.window.0);
            }
        }
    }
}

#[test]
fn pipeline_on_embedded_gap_instance() {
    let h = 2048;
    let sys = instances::embedded_gap_instance(&instances::GapParams::default(), 0.5, h);
    let splitting = instances::embedded_gap_splitting();
    let w = WindowSpec::default_for(h).unwrap();
    let tol = Tolerances::default();

    let out = perturbation::no_bd_pipeline(&sys, &splitting, 0.2, &w, &tol).unwrap();
    assert!(out.plan.sup_norm() < 0.2, "sup {}", out.plan.sup_norm());
    assert_eq!(out.certificate.case, 1);

    // Budget audit.
    let total_budget: f64 = out.certificate.steps.iter().map(|s| s.budget).sum();
    assert!(total_budget <= 0.2 + 1e-12);
    for step in &out.certificate.steps {
        assert!(step.sup_norm <= step.budget, "{step:?}");
    }

    // Witness re-verification through the public search.
    let pert = perturbation::apply_plan(&sys, out.plan.clone()).unwrap();
    let dirs = vec![out.witness.x0_vector()];
    let confirmed = dichotomy::find_no_bd_witness(&pert, &dirs, &w, &tol)
        .unwrap()
        .expect("designated direction is a witness");
    assert!(confirmed.lower <= tol.witness);
    assert!(confirmed.upper >= -tol.witness);
}

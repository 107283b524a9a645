//! The end-to-end perturbation pipeline: a 3x3 system whose leading block
//! is the gap instance carries a Bohl dichotomy but no exponential
//! dichotomy; an arbitrarily small staged perturbation then removes the
//! Bohl dichotomy as well, exhibited by a verified witness direction.
//!
//! Run with: cargo run --release --example no_bd_pipeline

use bohl::dichotomy::{self, Tolerances};
use bohl::exponents::WindowSpec;
use bohl::instances;
use bohl::perturbation::{self, StageKind};

fn main() -> bohl::Result<()> {
    let h = 2048;
    let sys = instances::embedded_gap_instance(&instances::GapParams::default(), 0.5, h);
    let splitting = instances::embedded_gap_splitting();
    let w = WindowSpec::default_for(h)?;
    let tol = Tolerances::default();

    // Preconditions: the canonical splitting carries a Bohl dichotomy,
    // while the exponential dichotomy fails on the leading block.
    let (s1, s2) = splitting.default_samples(tol.seed);
    let samples: Vec<_> = s1.into_iter().chain(s2).collect();
    let bd = dichotomy::check_bd(&sys, &splitting, &samples, &w, &tol)?;
    let ed = dichotomy::check_ed(&sys, &splitting, &w, &tol)?;
    println!(
        "base system: Bohl dichotomy holds = {} (alpha {:.4}); exponential margins ({:.4}, {:.4})",
        bd.holds, bd.alpha, ed.margins.0, ed.margins.1
    );

    let out = perturbation::no_bd_pipeline(&sys, &splitting, 0.2, &w, &tol)?;
    println!(
        "\npipeline case {}: plan with {} support indices, sup norm {:.5} < 0.2",
        out.certificate.case,
        out.plan.support_indices().len(),
        out.plan.sup_norm()
    );
    for step in &out.certificate.steps {
        println!(
            "  step {:<18} budget {:.4}, used {:.5}",
            step.name, step.budget, step.sup_norm
        );
    }
    println!(
        "witness direction: estimates lower {:.4} <= {}, upper {:.4} >= -{}",
        out.witness.lower, tol.witness, out.witness.upper, tol.witness
    );

    // The staged construction underneath, shown directly on the 2x2 block.
    let nu = instances::gap_instance(h);
    let z0 = nalgebra::DVector::from_column_slice(&[1.0, 0.0]);
    let destroy = perturbation::destroy_bd_plan(
        &nu,
        &z0,
        perturbation::DestroyVariant::Strict,
        &w,
        &perturbation::DestroyOptions::default(),
    )?;
    println!(
        "\nstaged construction on the gap block: {} stages ({} rotations), min slack {:.2e}",
        destroy.stages.len(),
        destroy.even_stage_count(),
        destroy.min_slack()
    );
    for stage in &destroy.stages {
        let kind = match stage.kind {
            StageKind::Odd => "decay window",
            StageKind::Even => "rotation    ",
        };
        println!(
            "  stage {} {} over [{}, {}]",
            stage.stage, kind, stage.window.0, stage.window.1
        );
    }
    if let Some(j) = destroy.exhausted_at {
        println!("  horizon exhausted at stage {j} (plan kept as built)");
    }
    Ok(())
}

//! Sampled dichotomy spectra over a rate grid, and the approximation of the
//! exponential spectrum by unions of Bohl spectra of perturbed systems.
//!
//! Run with: cargo run --release --example spectrum_scan

use bohl::dichotomy::Tolerances;
use bohl::exponents::WindowSpec;
use bohl::spectrum;
use bohl::system::MatrixSequence;
use nalgebra::DMatrix;

fn main() -> bohl::Result<()> {
    let e = std::f64::consts::E;
    let h = 256;
    let sys = MatrixSequence::constant(DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, e]), h)?;
    let w = WindowSpec::default_for(h)?;
    let tol = Tolerances::default();
    let grid = spectrum::default_grid();

    let ed = spectrum::sample_ed_spectrum(&sys, &grid, &w, &tol)?;
    let bd = spectrum::sample_bd_spectrum(&sys, &grid, &w, &tol)?;
    println!(
        "diag(1/e, e) over [{:.1}, {:.1}] step 0.05:",
        grid[0],
        grid[grid.len() - 1]
    );
    println!("  exponential sample: in-intervals {:?}", ed.intervals);
    println!("  Bohl sample:        in-intervals {:?}", bd.intervals);

    let inconclusive = ed
        .states
        .iter()
        .filter(|s| **s == spectrum::Membership::Inconclusive)
        .count();
    println!("  inconclusive grid points: {inconclusive}");

    let report = spectrum::bd_approximation_demo(&sys, &grid, &[0.2, 0.1, 0.05], 2, 99, &w, &tol)?;
    println!("\napproximation demo (unions of sampled Bohl spectra):");
    for rec in &report.per_eps {
        println!(
            "  eps {:.2}: {} plans, {} in-points, missing {}, beyond {}",
            rec.eps, rec.plans_sampled, rec.in_count, rec.missing_from_ed, rec.beyond_ed
        );
    }
    let count = report.intersection_in.iter().filter(|b| **b).count();
    println!(
        "  nested intersection: {count} in-points; matches the exponential sample: {}",
        report.stabilized
    );
    Ok(())
}

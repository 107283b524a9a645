//! Exponential- and Bohl-dichotomy verdicts on candidate splittings, with
//! fitted constants, a witness search and the heuristic splitting search.
//!
//! Run with: cargo run --release --example dichotomy_verdicts

use bohl::dichotomy::{self, Splitting, Tolerances};
use bohl::exponents::WindowSpec;
use bohl::system::MatrixSequence;
use nalgebra::{DMatrix, DVector};

fn main() -> bohl::Result<()> {
    let h = 1024;
    let w = WindowSpec::default_for(h)?;
    let tol = Tolerances::default();
    let e = std::f64::consts::E;

    let hyper =
        MatrixSequence::constant(DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, e]), h)?;
    let splitting = Splitting::new(
        2,
        vec![DVector::from_column_slice(&[1.0, 0.0])],
        vec![DVector::from_column_slice(&[0.0, 1.0])],
    )?;

    let ed = dichotomy::check_ed(&hyper, &splitting, &w, &tol)?;
    println!(
        "diag(1/e, e) exponential dichotomy: holds = {}, alpha = {:.6}, K = {:.6}",
        ed.holds, ed.alpha, ed.k_const
    );

    let (s1, s2) = splitting.default_samples(tol.seed);
    let samples: Vec<DVector<f64>> = s1.into_iter().chain(s2).collect();
    let bd = dichotomy::check_bd(&hyper, &splitting, &samples, &w, &tol)?;
    println!(
        "Bohl dichotomy: holds = {}, alpha = {:.6}; per-sample constants:",
        bd.holds, bd.alpha
    );
    for fit in bd.c1_samples.iter().take(2) {
        println!(
            "  L1 sample: exponent {:.6}, C1 {:.6}",
            fit.exponent, fit.constant
        );
    }
    for fit in bd.c2_samples.iter().take(2) {
        println!(
            "  L2 sample: exponent {:.6}, C2 {:.6}",
            fit.exponent, fit.constant
        );
    }

    // The identity system has no dichotomy: every axis is a witness.
    let identity = MatrixSequence::identity(2, h);
    let dirs = dichotomy::default_directions(2, tol.seed);
    match dichotomy::find_no_bd_witness(&identity, &dirs, &w, &tol)? {
        Some(witness) => println!(
            "identity witness: x0 = {:?}, estimates ({}, {})",
            witness.x0, witness.lower, witness.upper
        ),
        None => println!("identity: no witness (unexpected)"),
    }

    // Splitting search groups sampled directions by their exponents.
    let three = MatrixSequence::constant(
        DMatrix::from_row_slice(
            3,
            3,
            &[(-2.0f64).exp(), 0.0, 0.0, 0.0, 1.0 / e, 0.0, 0.0, 0.0, e],
        ),
        h,
    )?;
    match dichotomy::search_splitting(&three, &w, &tol)? {
        Some(s) => println!(
            "diag(e^-2, e^-1, e): found splitting with dim L1 = {}, dim L2 = {}",
            s.basis1().len(),
            s.basis2().len()
        ),
        None => println!("diag(e^-2, e^-1, e): no splitting found (unexpected)"),
    }
    match dichotomy::search_splitting(&identity, &w, &tol)? {
        Some(_) => println!("identity: unexpected splitting"),
        None => println!("identity: no splitting, as expected"),
    }
    Ok(())
}

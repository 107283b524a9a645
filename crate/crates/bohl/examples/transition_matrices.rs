//! Coefficient sequences, transition matrices and solution propagation.
//!
//! Run with: cargo run --release --example transition_matrices

use bohl::system::{MatrixSequence, TransitionOracle};
use nalgebra::{DMatrix, DVector};

fn main() -> bohl::Result<()> {
    // A 2-periodic system: one expanding diagonal step, one rotation.
    let diag = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
    let rot = {
        let t = std::f64::consts::FRAC_PI_4;
        DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
    };
    let sys = MatrixSequence::periodic(vec![diag, rot], 64)?;

    let (b_fwd, b_inv) = sys.lyapunov_bounds(0..=63)?;
    println!("coefficient bounds: max ||A(n)|| = {b_fwd:.6}, max ||A(n)^-1|| = {b_inv:.6}");

    let oracle = TransitionOracle::new(&sys)?;
    let phi_10_0 = oracle.transition(10, 0)?;
    println!("Phi(10, 0) =\n{phi_10_0:.6}");

    // Cocycle property: Phi(10, 4) Phi(4, 0) = Phi(10, 0).
    let recombined = oracle.transition(10, 4)? * oracle.transition(4, 0)?;
    let residual = (&recombined - &phi_10_0).norm() / phi_10_0.norm();
    println!("cocycle residual over (10, 4, 0): {residual:.3e}");

    // Inverse convention: Phi(0, 10) = Phi(10, 0)^-1.
    let inv = oracle.transition(0, 10)?;
    let id_residual = (&phi_10_0 * &inv - DMatrix::<f64>::identity(2, 2)).norm();
    println!("inverse residual: {id_residual:.3e}");

    // Solutions propagate by sequential multiplication.
    let x0 = DVector::from_column_slice(&[1.0, 1.0]);
    let x10 = sys.evolve(0, &x0, 10)?;
    let via_phi = &phi_10_0 * &x0;
    println!(
        "x(10) = [{:.6}, {:.6}], against the transition matrix: {:.3e}",
        x10[0],
        x10[1],
        (&x10 - &via_phi).norm()
    );

    // Log-scaled propagation survives strongly expanding systems.
    let expanding = MatrixSequence::constant(DMatrix::from_element(1, 1, 3.0f64), 2000)?;
    let state = expanding.unit_state(&DVector::from_element(1, 1.0), 2000)?;
    println!(
        "scalar system x(n+1) = 3 x(n): ln||x(2000)|| = {:.3} (exact: {:.3})",
        state.log_norm,
        2000.0 * 3.0f64.ln()
    );
    Ok(())
}

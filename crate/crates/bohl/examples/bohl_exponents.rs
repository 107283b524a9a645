//! Finite-horizon Bohl exponent estimation with a convergence trace in the
//! window threshold N.
//!
//! Run with: cargo run --release --example bohl_exponents

use bohl::exponents::{self, WindowSpec};
use bohl::system::MatrixSequence;
use nalgebra::{DMatrix, DVector};

fn main() -> bohl::Result<()> {
    let h = 512;
    let w = WindowSpec::default_for(h)?;

    // A 2-periodic scalar system alternating between e and 1/e: the true
    // exponents are 0, and the trace converges like 1/N from both sides.
    let e = std::f64::consts::E;
    let alternating = MatrixSequence::periodic(
        vec![
            DMatrix::from_element(1, 1, e),
            DMatrix::from_element(1, 1, 1.0 / e),
        ],
        h,
    )?;
    let x0 = DVector::from_element(1, 1.0);
    let (upper, lower) = exponents::vector_estimates(&alternating, &x0, &w)?;
    println!("alternating scalar (e, 1/e): upper/lower vector trace");
    println!("{}", bohl::BohlEstimate::CSV_HEADER);
    for row in upper.csv_rows() {
        println!("upper,{row}");
    }
    for row in lower.csv_rows() {
        println!("lower,{row}");
    }

    // A hyperbolic diagonal system: upper space estimate 1, lower -1, and
    // each axis carries its own exponent.
    let hyper =
        MatrixSequence::constant(DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, e]), h)?;
    let (up_space, lo_space) = exponents::space_estimates(&hyper, &w)?;
    println!(
        "\nhyperbolic diag(1/e, e): space upper {:.9}, space lower {:.9}",
        up_space.reported(),
        lo_space.reported()
    );
    for (label, axis) in [("e1", [1.0, 0.0]), ("e2", [0.0, 1.0])] {
        let v = DVector::from_column_slice(&axis);
        let (u, l) = exponents::vector_estimates(&hyper, &v, &w)?;
        println!(
            "  {label}: upper {:.9}, lower {:.9}",
            u.reported(),
            l.reported()
        );
    }

    // Subspace exponents go through the triangularized subsystem.
    let basis = vec![DVector::from_column_slice(&[0.0, 1.0])];
    let (u_sub, l_sub) = exponents::bohl_on_subspace(&hyper, &basis, &w)?;
    println!(
        "  span(e2) as a subsystem: upper {:.9}, lower {:.9}",
        u_sub.reported(),
        l_sub.reported()
    );

    // The scaling identity: estimates of e^gamma A shift by exactly gamma.
    let scaled = MatrixSequence::scaled(&hyper, 0.25);
    let (up_shift, _) = exponents::space_estimates(&scaled, &w)?;
    println!(
        "  after scaling by e^0.25: space upper {:.9} (shift error {:.2e})",
        up_shift.reported(),
        (up_shift.reported() - up_space.reported() - 0.25).abs()
    );
    Ok(())
}

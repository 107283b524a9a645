//! Seeded generators for systems, vectors and plans. All randomness in the
//! crate flows through [`rng`] so identical seeds reproduce identical runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::system::MatrixSequence;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let n = linalg::vec_norm(&v);
        if n > 1e-3 {
            return v / n;
        }
    }
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        if let Ok((q, _)) = linalg::mgs_qr(&m) {
            if linalg::rcond(&m) > 1e-3 {
                return q;
            }
        }
    }
}

/// A well-conditioned random matrix Q1 * diag(sigma) * Q2^T with singular
/// values in [0.5, 2].
pub fn random_coefficient(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let q1 = random_orthogonal(rng, d);
    let q2 = random_orthogonal(rng, d);
    let sigma = DMatrix::from_fn(
        d,
        d,
        |i, j| {
            if i == j {
                rng.gen_range(0.5..2.0)
            } else {
                0.0
            }
        },
    );
    q1 * sigma * q2.transpose()
}

/// A random Lyapunov sequence: a short random period of well-conditioned
/// coefficients.
pub fn random_lyapunov(rng: &mut ChaCha8Rng, d: usize, horizon: usize) -> MatrixSequence {
    let period = rng.gen_range(2..6);
    let mats = (0..period).map(|_| random_coefficient(rng, d)).collect();
    MatrixSequence::periodic(mats, horizon).expect("period nonempty")
}

/// A random near-isometric Lyapunov sequence: singular values within 2% of
/// one, so every window product up to a few hundred steps stays numerically
/// invertible.
pub fn random_isometric_lyapunov(rng: &mut ChaCha8Rng, d: usize, horizon: usize) -> MatrixSequence {
    let period = rng.gen_range(2..6);
    let mats = (0..period)
        .map(|_| {
            let q1 = random_orthogonal(rng, d);
            let q2 = random_orthogonal(rng, d);
            let sigma = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    rng.gen_range(0.98..1.02)
                } else {
                    0.0
                }
            });
            q1 * sigma * q2.transpose()
        })
        .collect();
    MatrixSequence::periodic(mats, horizon).expect("period nonempty")
}

/// A random upper triangular Lyapunov sequence with diagonal entries bounded
/// away from zero.
pub fn random_triangular(rng: &mut ChaCha8Rng, d: usize, horizon: usize) -> MatrixSequence {
    let period = rng.gen_range(2..5);
    let mats = (0..period)
        .map(|_| {
            DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    let s: f64 = rng.gen_range(0.5..2.0);
                    if rng.gen_bool(0.5) {
                        s
                    } else {
                        -s
                    }
                } else if j > i {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
        })
        .collect();
    MatrixSequence::periodic(mats, horizon).expect("period nonempty")
}

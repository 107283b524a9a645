//! Constructed test systems, centrally the 2x2 block-switched triangular
//! family whose full-space upper estimate stays nonnegative while every
//! sampled solution decays uniformly. The gap comes from a relay: the
//! second component grows on dyadically lengthening blocks, collapses after
//! a single coupling step hands its peak to the slowly decaying first
//! component, so fresh window starts see growth that no fixed solution
//! keeps up with.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dichotomy::Tolerances;
use crate::error::{Error, Result};
use crate::exponents::{self, WindowSpec};
use crate::sampling;
use crate::system::MatrixSequence;

/// Rates of the block-switched gap instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapParams {
    /// Decay rate of the retaining component.
    pub sink_rate: f64,
    /// Growth rate of the bursting component inside a growth half-block.
    pub growth_rate: f64,
    /// Decay rate of the bursting component inside a collapse half-block.
    pub collapse_rate: f64,
    /// Off-diagonal transfer placed on the last step of each growth half.
    pub coupling: f64,
    /// Plain contraction steps before the first block.
    pub lead_steps: usize,
}

impl Default for GapParams {
    fn default() -> Self {
        GapParams {
            sink_rate: 0.05,
            growth_rate: 0.75,
            collapse_rate: 1.7,
            coupling: 1.0,
            lead_steps: 2,
        }
    }
}

/// The 2x2 gap instance over `horizon` coefficient steps.
pub fn gap_instance(horizon: usize) -> MatrixSequence {
    gap_instance_with(&GapParams::default(), horizon)
}

pub fn gap_instance_with(params: &GapParams, horizon: usize) -> MatrixSequence {
    let sink = (-params.sink_rate).exp();
    let grow = params.growth_rate.exp();
    let collapse = (-params.collapse_rate).exp();
    let plain = |b: f64| DMatrix::from_row_slice(2, 2, &[sink, 0.0, 0.0, b]);
    let transfer = DMatrix::from_row_slice(2, 2, &[sink, params.coupling, 0.0, grow]);

    let mut mats = Vec::with_capacity(horizon);
    for _ in 0..params.lead_steps.min(horizon) {
        mats.push(plain(sink));
    }
    let mut block = 1usize;
    while mats.len() < horizon {
        let half = 1usize << block;
        for i in 0..half {
            if mats.len() >= horizon {
                break;
            }
            if i + 1 == half {
                mats.push(transfer.clone());
            } else {
                mats.push(plain(grow));
            }
        }
        for _ in 0..half {
            if mats.len() >= horizon {
                break;
            }
            mats.push(plain(collapse));
        }
        block += 1;
    }
    MatrixSequence::table(mats, horizon).expect("table covers the horizon")
}

/// Embeds the 2x2 gap instance as the leading block of a 3x3 system whose
/// third coordinate grows at `growth`: the canonical splitting carries a
/// Bohl dichotomy while the exponential dichotomy fails on the leading
/// block.
pub fn embedded_gap_instance(params: &GapParams, growth: f64, horizon: usize) -> MatrixSequence {
    let nu = gap_instance_with(params, horizon);
    let g = growth.exp();
    let mats: Vec<DMatrix<f64>> = (0..horizon)
        .map(|n| {
            let b = nu.coefficient(n).expect("within horizon");
            let mut m = DMatrix::zeros(3, 3);
            m.view_mut((0, 0), (2, 2)).copy_from(&b);
            m[(2, 2)] = g;
            m
        })
        .collect();
    MatrixSequence::table(mats, horizon).expect("table covers the horizon")
}

/// Numerical validation of a gap candidate at the given window spec: the
/// space estimate must stay above `-space_tol` while every sampled vector
/// estimate stays below `-vector_margin`.
#[derive(Debug, Clone, Serialize)]
pub struct GapValidation {
    pub space_reported: f64,
    pub worst_vector: f64,
    pub samples: usize,
}

pub fn validate_gap_instance(
    sys: &MatrixSequence,
    w: &WindowSpec,
    space_tol: f64,
    vector_margin: f64,
    samples: usize,
    seed: u64,
) -> Result<GapValidation> {
    let space = exponents::upper_bohl_space(sys, w)?.reported();
    let mut rng = sampling::rng(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut dirs: Vec<DVector<f64>> = vec![
        DVector::from_column_slice(&[1.0, 0.0]),
        DVector::from_column_slice(&[0.0, 1.0]),
    ];
    while dirs.len() < samples {
        dirs.push(sampling::random_unit_vector(&mut rng, 2));
    }
    for x0 in &dirs {
        worst = worst.max(exponents::upper_bohl_vector(sys, x0, w)?.reported());
    }
    if space < -space_tol {
        return Err(Error::SurrogateHypothesisFailed {
            step: "gap_space",
            detail: format!("space estimate {space} below -{space_tol}"),
        });
    }
    if worst >= -vector_margin {
        return Err(Error::SurrogateHypothesisFailed {
            step: "gap_vectors",
            detail: format!("worst sampled vector estimate {worst} above -{vector_margin}"),
        });
    }
    Ok(GapValidation {
        space_reported: space,
        worst_vector: worst,
        samples: dirs.len(),
    })
}

/// Margin used when validating the stock instance.
pub const GAP_VECTOR_MARGIN: f64 = 0.02;

/// The canonical splitting of [`embedded_gap_instance`].
pub fn embedded_gap_splitting() -> crate::dichotomy::Splitting {
    let e1 = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
    let e2 = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
    let e3 = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
    crate::dichotomy::Splitting::new(3, vec![e1, e2], vec![e3]).expect("canonical splitting")
}

/// Default tolerances used by the gap validations.
pub fn gap_tolerances() -> Tolerances {
    Tolerances::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_instance_is_lyapunov() {
        let sys = gap_instance(512);
        let (f, i) = sys.lyapunov_bounds(0..=511).unwrap();
        assert!(f < 4.0);
        assert!(i < 7.0);
    }

    #[test]
    fn gap_instance_validates_at_2048() {
        let sys = gap_instance(2048);
        let w = WindowSpec::default_for(2048).unwrap();
        let v = validate_gap_instance(&sys, &w, 1e-3, GAP_VECTOR_MARGIN, 64, 7).unwrap();
        assert!(v.space_reported > 0.5, "space {}", v.space_reported);
        assert!(
            v.worst_vector < -GAP_VECTOR_MARGIN,
            "worst {}",
            v.worst_vector
        );
    }

    #[test]
    fn embedded_instance_block_structure() {
        let sys = embedded_gap_instance(&GapParams::default(), 0.5, 64);
        let a = sys.coefficient(10).unwrap();
        assert_eq!(a[(2, 0)], 0.0);
        assert_eq!(a[(0, 2)], 0.0);
        assert!((a[(2, 2)] - 0.5f64.exp()).abs() < 1e-15);
    }
}

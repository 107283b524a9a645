//! Coefficient sequences A(n) of systems x(n+1) = A(n) x(n) with bounded
//! invertible coefficients, their transition matrices and solution
//! propagation on a finite horizon.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, ScaledVector, COND_FLOOR};
use crate::perturbation::PerturbationPlan;

/// Default horizon for scenario-scale work.
pub const DEFAULT_HORIZON: usize = 2048;
/// Checkpoint stride of the transition cache.
pub const CHECKPOINT_STRIDE: usize = 32;

/// Generation rule of a coefficient sequence.
#[derive(Debug, Clone)]
pub enum Rule {
    /// A(n) = M for all n.
    Constant(DMatrix<f64>),
    /// A(n) = M[n mod p].
    Periodic(Vec<DMatrix<f64>>),
    /// Blocks of (length, matrix), cycled past their total length.
    BlockSchedule(Vec<(usize, DMatrix<f64>)>),
    /// Explicit prefix, then a tail rule shifted to start at the prefix end.
    Explicit {
        prefix: Vec<DMatrix<f64>>,
        tail: Arc<Rule>,
    },
    /// Fully tabulated coefficients; evaluation past the table is an error.
    Table(Arc<Vec<DMatrix<f64>>>),
    /// base(n) + Q(n).
    Perturbed {
        base: Arc<MatrixSequence>,
        plan: Arc<PerturbationPlan>,
    },
    /// e^{rate} * base(n).
    Scaled {
        base: Arc<MatrixSequence>,
        rate: f64,
    },
}

/// A rule-based coefficient sequence with a dimension and a horizon hint.
/// Coefficients A(n) are valid for 0 <= n < horizon; states and transition
/// indices for 0 <= n <= horizon. Evaluation is pure: the same index always
/// yields the same bits.
#[derive(Debug, Clone)]
pub struct MatrixSequence {
    dim: usize,
    horizon: usize,
    rule: Rule,
}

impl MatrixSequence {
    pub fn new(dim: usize, horizon: usize, rule: Rule) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let sys = MatrixSequence { dim, horizon, rule };
        sys.check_rule_dims()?;
        Ok(sys)
    }

    pub fn constant(m: DMatrix<f64>, horizon: usize) -> Result<Self> {
        let d = m.nrows();
        Self::new(d, horizon, Rule::Constant(m))
    }

    pub fn periodic(mats: Vec<DMatrix<f64>>, horizon: usize) -> Result<Self> {
        let d = mats
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::InvalidParameter("periodic rule needs matrices".into()))?;
        Self::new(d, horizon, Rule::Periodic(mats))
    }

    pub fn block_schedule(blocks: Vec<(usize, DMatrix<f64>)>, horizon: usize) -> Result<Self> {
        let d = blocks
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| Error::InvalidParameter("block schedule needs blocks".into()))?;
        if blocks.iter().any(|(len, _)| *len == 0) {
            return Err(Error::InvalidParameter(
                "block length must be positive".into(),
            ));
        }
        Self::new(d, horizon, Rule::BlockSchedule(blocks))
    }

    pub fn table(mats: Vec<DMatrix<f64>>, horizon: usize) -> Result<Self> {
        let d = mats
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::InvalidParameter("table rule needs matrices".into()))?;
        if mats.len() < horizon {
            return Err(Error::InvalidParameter(
                "table must cover coefficient indices 0..horizon".into(),
            ));
        }
        Self::new(d, horizon, Rule::Table(Arc::new(mats)))
    }

    pub fn scaled(base: &MatrixSequence, rate: f64) -> Self {
        MatrixSequence {
            dim: base.dim,
            horizon: base.horizon,
            rule: Rule::Scaled {
                base: Arc::new(base.clone()),
                rate,
            },
        }
    }

    pub fn perturbed(base: &MatrixSequence, plan: PerturbationPlan) -> Result<Self> {
        if plan.dim() != base.dim {
            return Err(Error::DimensionMismatch {
                expected: base.dim,
                got: plan.dim(),
            });
        }
        if let Some(&idx) = plan.support_indices().last() {
            if idx >= base.horizon {
                return Err(Error::SupportExceedsHorizon(idx));
            }
        }
        Ok(MatrixSequence {
            dim: base.dim,
            horizon: base.horizon,
            rule: Rule::Perturbed {
                base: Arc::new(base.clone()),
                plan: Arc::new(plan),
            },
        })
    }

    pub fn identity(dim: usize, horizon: usize) -> Self {
        MatrixSequence {
            dim,
            horizon,
            rule: Rule::Constant(DMatrix::identity(dim, dim)),
        }
    }

    fn check_rule_dims(&self) -> Result<()> {
        let d = self.dim;
        let check = |m: &DMatrix<f64>| -> Result<()> {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.nrows(),
                });
            }
            Ok(())
        };
        match &self.rule {
            Rule::Constant(m) => check(m)?,
            Rule::Periodic(ms) => {
                for m in ms {
                    check(m)?;
                }
            }
            Rule::Table(ms) => {
                for m in ms.iter() {
                    check(m)?;
                }
            }
            Rule::BlockSchedule(bs) => {
                for (_, m) in bs {
                    check(m)?;
                }
            }
            Rule::Explicit { prefix, .. } => {
                for m in prefix {
                    check(m)?;
                }
            }
            Rule::Perturbed { .. } | Rule::Scaled { .. } => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut s = self.clone();
        s.horizon = horizon;
        s
    }

    /// Evaluates A(n) without the invertibility check.
    pub fn coefficient(&self, n: usize) -> Result<DMatrix<f64>> {
        if n >= self.horizon {
            return Err(Error::HorizonExceeded {
                index: n,
                horizon: self.horizon,
            });
        }
        self.raw(n)
    }

    fn raw(&self, n: usize) -> Result<DMatrix<f64>> {
        match &self.rule {
            Rule::Constant(m) => Ok(m.clone()),
            Rule::Periodic(ms) => Ok(ms[n % ms.len()].clone()),
            Rule::BlockSchedule(blocks) => {
                let total: usize = blocks.iter().map(|(l, _)| *l).sum();
                let mut k = n % total;
                for (len, m) in blocks {
                    if k < *len {
                        return Ok(m.clone());
                    }
                    k -= len;
                }
                unreachable!()
            }
            Rule::Explicit { prefix, tail } => {
                if n < prefix.len() {
                    Ok(prefix[n].clone())
                } else {
                    let shifted = MatrixSequence {
                        dim: self.dim,
                        horizon: usize::MAX,
                        rule: (**tail).clone(),
                    };
                    shifted.raw(n - prefix.len())
                }
            }
            Rule::Table(ms) => ms.get(n).cloned().ok_or(Error::HorizonExceeded {
                index: n,
                horizon: ms.len().saturating_sub(1),
            }),
            Rule::Perturbed { base, plan } => {
                let b = base.coefficient(n)?;
                Ok(match plan.at(n) {
                    Some(q) => b + q,
                    None => b,
                })
            }
            Rule::Scaled { base, rate } => Ok(base.coefficient(n)? * rate.exp()),
        }
    }

    /// Evaluates A(n) and enforces the condition floor.
    pub fn coefficient_checked(&self, n: usize) -> Result<DMatrix<f64>> {
        let m = self.coefficient(n)?;
        if linalg::rcond(&m) < COND_FLOOR {
            return Err(Error::NonInvertibleCoefficient(n));
        }
        Ok(m)
    }

    /// Evaluates A(n)^{-1} with the condition floor enforced.
    pub fn coefficient_inverse(&self, n: usize) -> Result<DMatrix<f64>> {
        let m = self.coefficient(n)?;
        linalg::try_invert(&m, n)
    }

    /// Exact maxima of ||A(n)|| and ||A(n)^{-1}|| (spectral norm) over
    /// `range` of coefficient indices, by exhaustive scan.
    pub fn lyapunov_bounds(&self, range: std::ops::RangeInclusive<usize>) -> Result<(f64, f64)> {
        let (lo, hi) = (*range.start(), *range.end());
        if hi >= self.horizon {
            return Err(Error::HorizonExceeded {
                index: hi,
                horizon: self.horizon,
            });
        }
        let mut b_fwd = 0.0f64;
        let mut b_inv = 0.0f64;
        for n in lo..=hi {
            let a = self.coefficient(n)?;
            let (smax, smin) = linalg::sing_extremes(&a);
            if smax == 0.0 || smin / smax < COND_FLOOR {
                return Err(Error::NonInvertibleCoefficient(n));
            }
            b_fwd = b_fwd.max(smax);
            b_inv = b_inv.max(1.0 / smin);
        }
        Ok((b_fwd, b_inv))
    }

    /// max{ b_fwd, b_inv } over [0, horizon]; the bound `b` used by the
    /// perturbation constructions.
    pub fn lyapunov_bound(&self) -> Result<f64> {
        let (f, i) = self.lyapunov_bounds(0..=self.horizon.saturating_sub(1))?;
        Ok(f.max(i))
    }

    /// x(n, m, x_m) by sequential multiplication (never via a formed
    /// transition matrix).
    pub fn evolve(&self, m: usize, x_m: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
        if x_m.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x_m.len(),
            });
        }
        let hi = n.max(m);
        if hi > self.horizon {
            return Err(Error::HorizonExceeded {
                index: hi,
                horizon: self.horizon,
            });
        }
        let mut x = x_m.clone();
        if n >= m {
            for k in m..n {
                let a = self.coefficient_checked(k)?;
                x = a * x;
            }
        } else {
            for k in (n..m).rev() {
                let inv = self.coefficient_inverse(k)?;
                x = inv * x;
            }
        }
        Ok(x)
    }

    /// Unit direction and log norm of x(n, 0, x0), propagated with per-step
    /// renormalization so strongly expanding systems do not overflow.
    pub fn unit_state(&self, x0: &DVector<f64>, n: usize) -> Result<ScaledVector> {
        let mut s = ScaledVector::from_vector(x0)?;
        if n > self.horizon {
            return Err(Error::HorizonExceeded {
                index: n,
                horizon: self.horizon,
            });
        }
        for k in 0..n {
            let a = self.coefficient_checked(k)?;
            s.step(&a);
        }
        Ok(s)
    }

    /// Log norms ln||x(n, x0)|| - ln||x0|| for n = 0..=len, one pass. The
    /// zero offset makes window ratios independent of the scale of x0.
    pub fn log_norm_trace(&self, x0: &DVector<f64>, len: usize) -> Result<Vec<f64>> {
        if len > self.horizon {
            return Err(Error::HorizonExceeded {
                index: len,
                horizon: self.horizon,
            });
        }
        let mut s = ScaledVector::from_vector(x0)?;
        s.log_norm = 0.0;
        let mut out = Vec::with_capacity(len + 1);
        out.push(0.0);
        for k in 0..len {
            let a = self.coefficient_checked(k)?;
            s.step(&a);
            out.push(s.log_norm);
        }
        Ok(out)
    }
}

/// Transition matrices Phi(n, m) with eagerly built Phi(c, 0) checkpoints
/// every [`CHECKPOINT_STRIDE`] steps. The oracle is immutable after
/// construction and safe to share between threads.
#[derive(Debug, Clone)]
pub struct TransitionOracle {
    source: MatrixSequence,
    checkpoints: Vec<DMatrix<f64>>,
}

impl TransitionOracle {
    pub fn new(source: &MatrixSequence) -> Result<Self> {
        let d = source.dim();
        let mut checkpoints = vec![DMatrix::<f64>::identity(d, d)];
        let mut acc = DMatrix::<f64>::identity(d, d);
        let mut n = 0usize;
        while n + CHECKPOINT_STRIDE <= source.horizon() {
            for k in n..n + CHECKPOINT_STRIDE {
                let a = source.coefficient_checked(k)?;
                acc = a * acc;
            }
            n += CHECKPOINT_STRIDE;
            checkpoints.push(acc.clone());
        }
        Ok(TransitionOracle {
            source: source.clone(),
            checkpoints,
        })
    }

    pub fn source(&self) -> &MatrixSequence {
        &self.source
    }

    /// Phi(n, m) by the three-case definition.
    pub fn transition(&self, n: usize, m: usize) -> Result<DMatrix<f64>> {
        let d = self.source.dim();
        let hi = n.max(m);
        if hi > self.source.horizon() {
            return Err(Error::HorizonExceeded {
                index: hi,
                horizon: self.source.horizon(),
            });
        }
        if n == m {
            return Ok(DMatrix::identity(d, d));
        }
        if n > m {
            if m == 0 {
                // Checkpointed path: Phi(n, 0) = A(n-1)...A(c) * Phi(c, 0).
                let c = n / CHECKPOINT_STRIDE;
                let mut acc = self.checkpoints[c].clone();
                for k in c * CHECKPOINT_STRIDE..n {
                    let a = self.source.coefficient_checked(k)?;
                    acc = a * acc;
                }
                return Ok(acc);
            }
            let mut acc = DMatrix::identity(d, d);
            for k in m..n {
                let a = self.source.coefficient_checked(k)?;
                acc = a * acc;
            }
            return Ok(acc);
        }
        let fwd = self.transition(m, n)?;
        if linalg::rcond(&fwd) < COND_FLOOR {
            return Err(Error::NonInvertible);
        }
        fwd.try_inverse().ok_or(Error::NonInvertible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    #[test]
    fn identity_transition() {
        let sys = MatrixSequence::identity(3, 16);
        let oracle = TransitionOracle::new(&sys).unwrap();
        let phi = oracle.transition(7, 3).unwrap();
        assert_eq!(phi, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn constant_diagonal_power() {
        let e = std::f64::consts::E;
        let sys = MatrixSequence::constant(diag2(e, 1.0 / e), 16).unwrap();
        let oracle = TransitionOracle::new(&sys).unwrap();
        let phi = oracle.transition(3, 1).unwrap();
        assert!((phi[(0, 0)] - e * e).abs() < 1e-12 * e * e);
        assert!((phi[(1, 1)] - (1.0 / (e * e))).abs() < 1e-12);
        assert_eq!(phi[(0, 1)], 0.0);
    }

    #[test]
    fn cocycle_against_direct_product() {
        let mut rng = sampling::rng(31);
        let sys = sampling::random_lyapunov(&mut rng, 3, 64);
        let oracle = TransitionOracle::new(&sys).unwrap();
        let lhs = oracle.transition(5, 2).unwrap() * oracle.transition(2, 0).unwrap();
        let rhs = oracle.transition(5, 0).unwrap();
        assert!((&lhs - &rhs).norm() <= 1e-9 * rhs.norm().max(1.0));
    }

    #[test]
    fn inverse_consistency() {
        let mut rng = sampling::rng(7);
        let sys = sampling::random_lyapunov(&mut rng, 2, 48);
        let oracle = TransitionOracle::new(&sys).unwrap();
        let a = oracle.transition(11, 40).unwrap();
        let b = oracle.transition(40, 11).unwrap();
        let prod = a * b;
        assert!((&prod - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-9);
    }

    #[test]
    fn evolve_matches_transition() {
        let mats = vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            diag2(1.5, 0.5),
        ];
        let sys = MatrixSequence::periodic(mats, 32).unwrap();
        let oracle = TransitionOracle::new(&sys).unwrap();
        let x0 = DVector::from_column_slice(&[1.0, 2.0]);
        let direct = sys.evolve(0, &x0, 6).unwrap();
        let via = oracle.transition(6, 0).unwrap() * &x0;
        assert!((&direct - &via).norm() <= 1e-12 * direct.norm());
    }

    #[test]
    fn scalar_exponential_growth() {
        let c = 0.3f64;
        let sys = MatrixSequence::constant(DMatrix::from_element(1, 1, c.exp()), 8).unwrap();
        let x = sys.evolve(0, &DVector::from_element(1, 1.0), 5).unwrap();
        assert!((x[0] - (5.0 * c).exp()).abs() < 1e-12 * x[0]);
    }

    #[test]
    fn lyapunov_bounds_block_schedule() {
        let rot = {
            let t = std::f64::consts::FRAC_PI_4;
            DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
        };
        let sys = MatrixSequence::block_schedule(vec![(3, diag2(2.0, 0.5)), (2, rot.clone())], 32)
            .unwrap();
        let (f, i) = sys.lyapunov_bounds(0..=31).unwrap();
        // Oracle: exhaustive scan over the evaluated coefficients.
        let mut want_f = 0.0f64;
        let mut want_i = 0.0f64;
        for n in 0..=31 {
            let a = sys.coefficient(n).unwrap();
            let (s, lo) = linalg::sing_extremes(&a);
            want_f = want_f.max(s);
            want_i = want_i.max(1.0 / lo);
        }
        assert_eq!(f, want_f);
        assert_eq!(i, want_i);
    }

    #[test]
    fn determinism_bit_identical() {
        let mut rng = sampling::rng(99);
        let sys = sampling::random_lyapunov(&mut rng, 4, 40);
        let oracle = TransitionOracle::new(&sys).unwrap();
        let a1 = sys.coefficient(17).unwrap();
        let a2 = sys.coefficient(17).unwrap();
        assert_eq!(a1, a2);
        let p1 = oracle.transition(33, 5).unwrap();
        let p2 = oracle.transition(33, 5).unwrap();
        for (x, y) in p1.iter().zip(p2.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn horizon_enforced() {
        let sys = MatrixSequence::identity(2, 8);
        let oracle = TransitionOracle::new(&sys).unwrap();
        assert!(matches!(
            oracle.transition(9, 0),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn explicit_rule_switches_to_tail() {
        use std::sync::Arc;
        let prefix = vec![diag2(2.0, 2.0), diag2(3.0, 3.0)];
        let tail = Rule::Constant(diag2(0.5, 0.5));
        let sys = MatrixSequence::new(
            2,
            16,
            Rule::Explicit {
                prefix,
                tail: Arc::new(tail),
            },
        )
        .unwrap();
        assert_eq!(sys.coefficient(0).unwrap()[(0, 0)], 2.0);
        assert_eq!(sys.coefficient(1).unwrap()[(0, 0)], 3.0);
        assert_eq!(sys.coefficient(2).unwrap()[(0, 0)], 0.5);
        assert_eq!(sys.coefficient(15).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn singular_coefficient_rejected() {
        let sys = MatrixSequence::constant(diag2(1.0, 0.0), 4).unwrap();
        assert!(matches!(
            sys.coefficient_checked(0),
            Err(Error::NonInvertibleCoefficient(0))
        ));
    }
}

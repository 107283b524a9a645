//! The Millionshikov rotation method: cone geometry, epsilon-slow/fast
//! classification, maximal vectors, in-cone fast-vector construction and the
//! single-support rotation perturbations in dynamic and algebraic form.
//!
//! A rotation perturbation replaces one coefficient A(idx) by V A(idx)
//! (forward) or A(idx) V (backward) with V special orthogonal and
//! ||V - I|| <= epsilon, steering a designated solution onto a direction
//! that realizes at least the fraction (sin eps)/2 of the maximal window
//! magnification. The perturbed coefficient has exactly the condition
//! number of the original.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ScaledMatrix, ScaledVector};
use crate::perturbation::PerturbationPlan;
use crate::system::MatrixSequence;

/// Cone of vectors within angle `angle` of `axis` (plus the origin).
#[derive(Debug, Clone)]
pub struct Cone {
    pub axis: DVector<f64>,
    pub angle: f64,
}

impl Cone {
    pub fn new(axis: DVector<f64>, angle: f64) -> Result<Self> {
        if linalg::vec_norm(&axis) == 0.0 {
            return Err(Error::ZeroVector);
        }
        if !(0.0..=std::f64::consts::PI).contains(&angle) || angle == 0.0 {
            return Err(Error::InvalidParameter(
                "cone angle must be in (0, pi]".into(),
            ));
        }
        Ok(Cone { axis, angle })
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        if linalg::vec_norm(y) == 0.0 {
            return true;
        }
        linalg::angle_between(&self.axis, y).is_ok_and(|t| t <= self.angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedClass {
    Slow,
    Fast,
}

/// Classifies `x` against the threshold (sin eps / 2) ||F|| ||x||; boundary
/// equality counts as fast.
pub fn classify_vector(f: &DMatrix<f64>, x: &DVector<f64>, eps: f64) -> Result<SpeedClass> {
    let nx = linalg::vec_norm(x);
    if nx == 0.0 {
        return Err(Error::ZeroVector);
    }
    check_eps(eps)?;
    let fx = linalg::vec_norm(&(f * x));
    let threshold = 0.5 * eps.sin() * linalg::spectral_norm(f) * nx;
    Ok(if fx < threshold {
        SpeedClass::Slow
    } else {
        SpeedClass::Fast
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps <= 0.0 || eps >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::InvalidParameter(
            "epsilon must lie in (0, pi/2)".into(),
        ));
    }
    Ok(())
}

/// Unit vector achieving ||F z|| = ||F||, deterministic under ties.
pub fn maximal_vector(f: &DMatrix<f64>) -> Result<DVector<f64>> {
    linalg::max_right_singular_vector(f)
}

/// Given an epsilon-slow `x`, returns a unit vector inside Con[x; eps] that
/// is epsilon-fast for F. Construction: take the maximal vector z (flipped
/// into the halfspace of x), return it if it already lies in the cone, else
/// blend on the cone boundary with coefficients alpha = sin(gamma-eps)/sin
/// gamma, beta = sin eps / sin gamma.
pub fn fast_in_cone(f: &DMatrix<f64>, x: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    check_eps(eps)?;
    if classify_vector(f, x, eps)? == SpeedClass::Fast {
        return Err(Error::NotSlow);
    }
    let xhat = x / linalg::vec_norm(x);
    let mut z = maximal_vector(f)?;
    if linalg::angle_between(&xhat, &z)? > std::f64::consts::FRAC_PI_2 {
        z = -z;
    }
    let gamma = linalg::angle_between(&xhat, &z)?;
    if gamma <= eps {
        return Ok(z);
    }
    let alpha = (gamma - eps).sin() / gamma.sin();
    let beta = eps.sin() / gamma.sin();
    Ok(xhat * alpha + z * beta)
}

/// Special orthogonal V with V (x/||x||) = y/||y||, identity on the
/// orthogonal complement of span{x, y}. Fails for near-antipodal pairs
/// where the rotation plane is numerically undefined.
pub fn rotation_between(x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let nx = linalg::vec_norm(x);
    let ny = linalg::vec_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    let d = x.len();
    let u = x / nx;
    let yhat = y / ny;
    let theta = linalg::angle_between(&u, &yhat)?;
    if theta > std::f64::consts::PI - 1e-8 {
        return Err(Error::AntipodalPair);
    }
    let w_raw = &yhat - &u * yhat.dot(&u);
    let wn = linalg::vec_norm(&w_raw);
    if wn == 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let w = w_raw / wn;
    let (c, s) = (theta.cos(), theta.sin());
    let mut v = DMatrix::identity(d, d);
    // V = I + (cos t - 1)(uu^T + ww^T) + sin t (wu^T - uw^T).
    for i in 0..d {
        for j in 0..d {
            v[(i, j)] += (c - 1.0) * (u[i] * u[j] + w[i] * w[j]) + s * (w[i] * u[j] - u[i] * w[j]);
        }
    }
    Ok(v)
}

/// One verified inequality of a rotation certificate. For exponentially
/// large quantities the sides are stored as logarithms, so `slack` is a
/// relative slack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl CertCheck {
    fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        CertCheck {
            name: name.to_string(),
            lhs,
            rhs,
            slack: lhs - rhs,
        }
    }

    fn eq(name: &str, lhs: f64, rhs: f64) -> Self {
        CertCheck {
            name: name.to_string(),
            lhs,
            rhs,
            slack: -(lhs - rhs).abs(),
        }
    }
}

/// Inequalities verified after constructing a rotation perturbation.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Certificate {
    pub checks: Vec<CertCheck>,
}

impl Certificate {
    pub fn push(&mut self, c: CertCheck) {
        self.checks.push(c);
    }

    pub fn min_slack(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.slack)
            .fold(f64::INFINITY, f64::min)
    }

    /// All inequalities hold with at least `-tol` relative slack.
    pub fn verified(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }

    pub fn find(&self, name: &str) -> Option<&CertCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Result of a dynamic rotation: the single-support plan, the verified
/// certificate and the initial state of the designated perturbed solution.
#[derive(Debug, Clone)]
pub struct RotationOutcome {
    pub plan: PerturbationPlan,
    pub certificate: Certificate,
    /// Unit direction and log norm at time 0 of the designated solution of
    /// the perturbed system.
    pub initial: ScaledVector,
}

/// Core of the forward method in algebraic form. `slice` holds the window
/// coefficients [B(m), B(m+1), ..., B(n)]; the perturbation R lands on
/// slice[0]. Guarantees, with F = B(n)...B(m+1):
///   (i)  ||R|| <= eps * max(||B(m)||, ||B(m)^{-1}||),
///   (ii) B(m) + R invertible,
///   (iii) ||F (B(m)+R) v|| >= (sin eps / 2) ||F|| ||B(m) v||,
///   (iv) ||(B(m)+R) v|| = ||B(m) v||.
pub fn algebraic_forward(
    slice: &[DMatrix<f64>],
    v: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    if slice.len() < 2 {
        return Err(Error::WindowDegenerate);
    }
    if linalg::vec_norm(v) == 0.0 {
        return Err(Error::ZeroVector);
    }
    for (i, b) in slice.iter().enumerate() {
        if linalg::rcond(b) < linalg::COND_FLOOR {
            return Err(Error::NonInvertibleCoefficient(i));
        }
    }
    let f = linalg::scaled_product(&slice[1..]);
    let x = &slice[0] * v;
    if classify_vector(&f.mat, &x, eps)? == SpeedClass::Fast {
        let d = slice[0].nrows();
        return Ok(DMatrix::zeros(d, d));
    }
    let target = fast_in_cone(&f.mat, &x, eps)?;
    let rot = rotation_between(&x, &target)?;
    let d = slice[0].nrows();
    Ok((rot - DMatrix::identity(d, d)) * &slice[0])
}

/// Core of the backward method in algebraic form. `slice` holds
/// [B(m), ..., B(n)]; the perturbation R lands on slice[last]. Guarantees,
/// with G = B(m)^{-1}...B(n-1)^{-1} applied in that order:
///   (i)  ||R|| <= eps * max(||B(n)||, ||B(n)^{-1}||),
///   (ii) B(n) + R invertible,
///   (iii) ||G (B(n)+R)^{-1} v|| >= (sin eps / 2) ||G|| ||B(n)^{-1} v||,
///   (iv) ||(B(n)+R)^{-1} v|| = ||B(n)^{-1} v||.
pub fn algebraic_backward(
    slice: &[DMatrix<f64>],
    v: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    if slice.len() < 2 {
        return Err(Error::WindowDegenerate);
    }
    if linalg::vec_norm(v) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut inverses = Vec::with_capacity(slice.len());
    for (i, b) in slice.iter().enumerate() {
        inverses.push(linalg::try_invert(b, i).map_err(|_| Error::NonInvertibleCoefficient(i))?);
    }
    let last = slice.len() - 1;
    // G = B(m)^{-1} B(m+1)^{-1} ... B(n-1)^{-1} as a matrix product.
    let mut g = ScaledMatrix::identity(slice[0].nrows());
    for inv in &inverses[..last] {
        g.push_right(inv);
    }
    let x = &inverses[last] * v;
    if classify_vector(&g.mat, &x, eps)? == SpeedClass::Fast {
        let d = slice[0].nrows();
        return Ok(DMatrix::zeros(d, d));
    }
    let target = fast_in_cone(&g.mat, &x, eps)?;
    // V maps the fast direction back onto x; then (B+R)^{-1} v lands on it.
    let rot = rotation_between(&target, &x)?;
    let d = slice[0].nrows();
    Ok(&slice[last] * (rot - DMatrix::identity(d, d)))
}

/// Forward dynamic rotation over the window [k, m]: perturbs index k-1 so
/// the designated solution (pinned to x at time k-1) becomes epsilon-fast
/// for Phi(m, k).
pub fn forward_rotation_perturbation(
    sys: &MatrixSequence,
    k: usize,
    m: usize,
    x0: &DVector<f64>,
    eps: f64,
) -> Result<RotationOutcome> {
    check_eps(eps)?;
    if k < 1 || m <= k {
        return Err(Error::WindowDegenerate);
    }
    if m > sys.horizon() {
        return Err(Error::HorizonExceeded {
            index: m,
            horizon: sys.horizon(),
        });
    }
    let state_km1 = sys.unit_state(x0, k - 1)?;
    let slice: Vec<DMatrix<f64>> = (k - 1..m)
        .map(|i| sys.coefficient_checked(i))
        .collect::<Result<_>>()?;
    let r = algebraic_forward(&slice, &state_km1.dir, eps)?;

    let plan = if r.iter().all(|x| *x == 0.0) {
        PerturbationPlan::zero(sys.dim())
    } else {
        PerturbationPlan::single(sys.dim(), k - 1, r.clone())?
    };

    // Certificate by direct propagation of the perturbed solution.
    let a_km1 = sys.coefficient_checked(k - 1)?;
    let perturbed_a = &a_km1 + &r;
    if linalg::rcond(&perturbed_a) < linalg::COND_FLOOR {
        return Err(Error::NonInvertiblePerturbed(k - 1));
    }
    let mut z = state_km1.clone();
    z.step(&perturbed_a);
    let ln_z_k = z.log_norm;
    for i in k..m {
        z.step(&sys.coefficient_checked(i)?);
    }
    let ln_z_m = z.log_norm;

    let x_k = sys.unit_state(x0, k)?;
    let phi = linalg::scaled_product(&slice[1..]);

    let mut cert = Certificate::default();
    let q_norm = linalg::spectral_norm(&r);
    let a_norm = linalg::spectral_norm(&a_km1);
    cert.push(CertCheck::ge(
        "norm_bound",
        eps * a_norm * (1.0 + 1e-12),
        q_norm,
    ));
    cert.push(CertCheck::ge(
        "MRM10",
        ln_z_m - ln_z_k,
        (0.5 * eps.sin()).ln() + phi.ln_smax(),
    ));
    cert.push(CertCheck::eq("MRM11", ln_z_k, x_k.log_norm));
    cert.push(CertCheck::eq(
        "condition_preserved",
        linalg::rcond(&perturbed_a),
        linalg::rcond(&a_km1),
    ));

    Ok(RotationOutcome {
        plan,
        certificate: cert,
        initial: sys.unit_state(x0, 0)?,
    })
}

/// Backward dynamic rotation over the window [k, m]: perturbs index m so
/// the solution pinned to x(m+1, x0) from above realizes the backward
/// magnification ||Phi(k, m)|| up to the (sin eps)/2 factor.
pub fn backward_rotation_perturbation(
    sys: &MatrixSequence,
    k: usize,
    m: usize,
    x0: &DVector<f64>,
    eps: f64,
) -> Result<RotationOutcome> {
    check_eps(eps)?;
    if m <= k {
        return Err(Error::WindowDegenerate);
    }
    if m >= sys.horizon() {
        return Err(Error::HorizonExceeded {
            index: m + 1,
            horizon: sys.horizon(),
        });
    }
    let x_m1 = sys.unit_state(x0, m + 1)?;
    let slice: Vec<DMatrix<f64>> = (k..=m)
        .map(|i| sys.coefficient_checked(i))
        .collect::<Result<_>>()?;
    let r = algebraic_backward(&slice, &x_m1.dir, eps)?;

    let a_m = sys.coefficient_checked(m)?;
    let perturbed_a = &a_m + &r;
    if linalg::rcond(&perturbed_a) < linalg::COND_FLOOR {
        return Err(Error::NonInvertiblePerturbed(m));
    }
    let plan = if r.iter().all(|x| *x == 0.0) {
        PerturbationPlan::zero(sys.dim())
    } else {
        PerturbationPlan::single(sys.dim(), m, r.clone())?
    };

    // z(m) = (A(m)+R)^{-1} x(m+1): direction from the inverse, log norm
    // certified against ||x(m, x0)||.
    let inv = linalg::try_invert(&perturbed_a, m)?;
    let zm_dir_raw = &inv * &x_m1.dir;
    let zm_gain = linalg::vec_norm(&zm_dir_raw);
    let z_m = ScaledVector {
        dir: &zm_dir_raw / zm_gain,
        log_norm: x_m1.log_norm + zm_gain.ln(),
    };
    let ln_z_m = z_m.log_norm;
    // Backward propagation through the unperturbed coefficients; record
    // z(k) on the way down to z(0).
    let mut initial = z_m.clone();
    let mut ln_z_k = z_m.log_norm;
    for i in (0..m).rev() {
        let ainv = sys.coefficient_inverse(i)?;
        initial.step(&ainv);
        if i == k {
            ln_z_k = initial.log_norm;
        }
    }

    let x_m = sys.unit_state(x0, m)?;
    let mut g = ScaledMatrix::identity(sys.dim());
    for i in k..m {
        let ainv = sys.coefficient_inverse(i)?;
        g.push_right(&ainv);
    }

    let mut cert = Certificate::default();
    let q_norm = linalg::spectral_norm(&r);
    let a_norm = linalg::spectral_norm(&a_m);
    cert.push(CertCheck::ge(
        "norm_bound",
        eps * a_norm * (1.0 + 1e-12),
        q_norm,
    ));
    cert.push(CertCheck::ge(
        "MRM12",
        ln_z_k - ln_z_m,
        (0.5 * eps.sin()).ln() + g.ln_smax(),
    ));
    cert.push(CertCheck::eq("MRM13", ln_z_m, x_m.log_norm));
    cert.push(CertCheck::eq(
        "condition_preserved",
        linalg::rcond(&perturbed_a),
        linalg::rcond(&a_m),
    ));

    Ok(RotationOutcome {
        plan,
        certificate: cert,
        initial,
    })
}

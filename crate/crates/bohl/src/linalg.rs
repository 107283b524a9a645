//! Small dense matrix helpers: spectral norms, singular extremes, stabilized
//! Gram-Schmidt QR and log-scaled products. Everything here is deterministic;
//! repeated calls on the same bits return the same bits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a coefficient counts as singular.
pub const COND_FLOOR: f64 = 1e-12;

/// Euclidean norm. The one-dimensional case is `abs`, which keeps scalar
/// systems exact (no sqrt(x*x) round-trip).
pub fn vec_norm(v: &DVector<f64>) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.norm()
    }
}

/// Angle between two nonzero vectors, with the cosine clamped to [-1, 1]
/// before `acos`.
pub fn angle_between(x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let nx = vec_norm(x);
    let ny = vec_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = (x.dot(y) / (nx * ny)).clamp(-1.0, 1.0);
    Ok(c.acos())
}

/// Largest and smallest singular values.
///
/// d = 1 and d = 2 use closed forms; larger dimensions go through an SVD.
/// The 2x2 form `smax = (p+q)/2, smin = |p-q|/2` with `p = hypot(a+d, b-c)`,
/// `q = hypot(a-d, b+c)` is exact for orthogonal and diagonal input.
pub fn sing_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    match d {
        0 => (0.0, 0.0),
        1 => {
            let a = m[(0, 0)].abs();
            (a, a)
        }
        2 => {
            let (a, b, c, dd) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let p = f64::hypot(a + dd, b - c);
            let q = f64::hypot(a - dd, b + c);
            (0.5 * (p + q), 0.5 * (p - q).abs())
        }
        _ => {
            let sv = m.clone().singular_values();
            let mut smax = 0.0f64;
            let mut smin = f64::INFINITY;
            for s in sv.iter() {
                smax = smax.max(*s);
                smin = smin.min(*s);
            }
            (smax, smin)
        }
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    sing_extremes(m).0
}

/// Reciprocal condition number sigma_min / sigma_max; zero for the zero matrix.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let (smax, smin) = sing_extremes(m);
    if smax == 0.0 {
        0.0
    } else {
        smin / smax
    }
}

/// Inverse with a condition floor; `index` only labels the error.
pub fn try_invert(m: &DMatrix<f64>, index: usize) -> Result<DMatrix<f64>> {
    if rcond(m) < COND_FLOOR {
        return Err(Error::NonInvertibleCoefficient(index));
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::NonInvertibleCoefficient(index))
}

/// Unit right singular vector achieving the spectral norm.
///
/// Ties on the top singular value resolve to the lowest-index singular
/// vector; the sign is fixed so the first nonzero component is positive.
pub fn max_right_singular_vector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = m.ncols();
    if d == 0 {
        return Err(Error::ZeroVector);
    }
    let mut v = match d {
        1 => DVector::from_element(1, 1.0),
        2 => {
            // Top eigenvector of the Gram matrix M^T M.
            let g = m.transpose() * m;
            let (a, b, c) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
            if b == 0.0 {
                if a >= c {
                    DVector::from_column_slice(&[1.0, 0.0])
                } else {
                    DVector::from_column_slice(&[0.0, 1.0])
                }
            } else {
                let half = 0.5 * (a - c);
                let lam = 0.5 * (a + c) + f64::hypot(half, b);
                // (lam - a) x = b y; pick the better-conditioned form.
                let v = if (lam - a).abs() > (lam - c).abs() {
                    DVector::from_column_slice(&[b, lam - a])
                } else {
                    DVector::from_column_slice(&[lam - c, b])
                };
                let n = vec_norm(&v);
                v / n
            }
        }
        _ => {
            let svd = m.clone().svd(false, true);
            let vt = svd.v_t.expect("svd requested v_t");
            let sv = &svd.singular_values;
            let mut best = 0usize;
            let smax = sv.iter().cloned().fold(0.0f64, f64::max);
            for (i, s) in sv.iter().enumerate() {
                if *s >= smax * (1.0 - 1e-12) {
                    best = i;
                    break;
                }
            }
            vt.row(best).transpose()
        }
    };
    for i in 0..d {
        if v[i] != 0.0 {
            if v[i] < 0.0 {
                v = -v;
            }
            break;
        }
    }
    let n = vec_norm(&v);
    Ok(v / n)
}

/// QR factorization by modified Gram-Schmidt with one reorthogonalization
/// pass when the loss of orthogonality exceeds 1e-10. The R diagonal is
/// made positive, so the factorization is the unique positive-diagonal QR.
pub fn mgs_qr(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (q, r) = mgs_pass(m)?;
    let loss = orthogonality_loss(&q);
    if loss <= 1e-10 {
        return Ok((q, r));
    }
    let (q2, r2) = mgs_pass(&q)?;
    Ok((q2, r2 * r))
}

fn mgs_pass(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = m.nrows();
    let k = m.ncols();
    let mut q = m.clone();
    let mut r = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut v = q.column(j).into_owned();
        for i in 0..j {
            let qi = q.column(i);
            let proj = qi.dot(&v);
            r[(i, j)] += proj;
            v -= qi.into_owned() * proj;
        }
        let n = vec_norm(&v);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateBasis);
        }
        r[(j, j)] = n;
        v /= n;
        q.set_column(j, &v);
    }
    // Positive diagonal convention.
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
            for c in j..k {
                r[(j, c)] = -r[(j, c)];
            }
        }
    }
    Ok((q, r))
}

fn orthogonality_loss(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Extends k independent columns to a full basis of R^d. The completion
/// vectors are the singular vectors of the orthogonal complement, sign-fixed
/// so the first nonzero component is positive.
pub fn complete_basis(basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = basis.nrows();
    let k = basis.ncols();
    if k == 0 || k > d {
        return Err(Error::DegenerateBasis);
    }
    let (q, _r) = mgs_qr(basis)?;
    if k == d {
        return Ok(basis.clone());
    }
    // Projector onto the complement; its top d-k singular directions span it.
    let proj = DMatrix::<f64>::identity(d, d) - &q * q.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("svd requested u");
    let mut out = DMatrix::<f64>::zeros(d, d);
    out.view_mut((0, 0), (d, k)).copy_from(basis);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| {
        svd.singular_values[*b]
            .partial_cmp(&svd.singular_values[*a])
            .unwrap()
    });
    for (offset, idx) in order.into_iter().take(d - k).enumerate() {
        let mut v = u.column(idx).into_owned();
        for i in 0..d {
            if v[i] != 0.0 {
                if v[i] < 0.0 {
                    v = -v;
                }
                break;
            }
        }
        out.set_column(k + offset, &v);
    }
    Ok(out)
}

/// A matrix product kept near unit Frobenius scale with the log factor
/// split off, so long window products never overflow. Rescaling always uses
/// a power of two: it never rounds the entries, so exactly representable
/// products (identity, diagonal powers) keep exact norms.
#[derive(Debug, Clone)]
pub struct ScaledMatrix {
    pub mat: DMatrix<f64>,
    pub log_scale: f64,
}

impl ScaledMatrix {
    pub fn identity(d: usize) -> Self {
        ScaledMatrix {
            mat: DMatrix::identity(d, d),
            log_scale: 0.0,
        }
    }

    /// Left-multiplies by `a` and renormalizes.
    pub fn push_left(&mut self, a: &DMatrix<f64>) {
        self.mat = a * &self.mat;
        self.renorm();
    }

    /// Right-multiplies by `a` and renormalizes.
    pub fn push_right(&mut self, a: &DMatrix<f64>) {
        self.mat = &self.mat * a;
        self.renorm();
    }

    fn renorm(&mut self) {
        let f = self.mat.norm();
        if f.is_finite() && f > 0.0 {
            let k = f.log2().round() as i32;
            if k != 0 {
                self.mat /= 2.0f64.powi(k);
                self.log_scale += k as f64 * std::f64::consts::LN_2;
            }
        }
    }

    /// ln of the spectral norm of the represented product.
    pub fn ln_smax(&self) -> f64 {
        self.log_scale + sing_extremes(&self.mat).0.ln()
    }

    /// ln of the smallest singular value of the represented product.
    pub fn ln_smin(&self) -> f64 {
        self.log_scale + sing_extremes(&self.mat).1.ln()
    }
}

/// Product of a slice of matrices applied left-to-right as written, i.e.
/// `product(&[m0, m1, m2]) = m2 * m1 * m0` acting on column vectors, scaled.
pub fn scaled_product(factors: &[DMatrix<f64>]) -> ScaledMatrix {
    let d = factors.first().map_or(0, |m| m.nrows());
    let mut acc = ScaledMatrix::identity(d);
    for f in factors {
        acc.push_left(f);
    }
    acc
}

/// A vector kept at unit norm with its log magnitude split off.
#[derive(Debug, Clone)]
pub struct ScaledVector {
    pub dir: DVector<f64>,
    pub log_norm: f64,
}

impl ScaledVector {
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        let n = vec_norm(v);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(ScaledVector {
            dir: v / n,
            log_norm: n.ln(),
        })
    }

    /// Applies `a` and renormalizes, accumulating the log of the step gain.
    /// The gain is the ratio of the computed norms before and after the
    /// step, so maps that fix the stored direction bits contribute an exact
    /// zero increment.
    pub fn step(&mut self, a: &DMatrix<f64>) {
        let prev = vec_norm(&self.dir);
        let w = a * &self.dir;
        let n = vec_norm(&w);
        self.dir = w / n;
        self.log_norm += (n / prev).ln();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn sing_extremes_closed_form_matches_svd() {
        let cases = [
            mat2(1.0, 0.0, 0.0, 1.0),
            mat2(2.0, 0.0, 0.0, 0.5),
            mat2(0.3, -1.7, 2.2, 0.9),
            mat2(1e-8, 1.0, 0.0, 1e8),
        ];
        for m in cases {
            let (smax, smin) = sing_extremes(&m);
            let sv = m.clone().singular_values();
            let want_max = sv.iter().cloned().fold(0.0f64, f64::max);
            let want_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((smax - want_max).abs() <= 1e-9 * want_max.max(1.0));
            assert!((smin - want_min).abs() <= 1e-9 * want_max.max(1.0));
        }
    }

    #[test]
    fn identity_norm_is_one_exactly() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(spectral_norm(&id), 1.0);
        assert_eq!(rcond(&id), 1.0);
    }

    #[test]
    fn max_singular_vector_achieves_norm() {
        let m = mat2(0.4, 1.9, -0.7, 0.2);
        let v = max_right_singular_vector(&m).unwrap();
        let (smax, _) = sing_extremes(&m);
        assert!((vec_norm(&(&m * &v)) - smax).abs() <= 1e-12 * smax);
    }

    #[test]
    fn max_singular_vector_tie_rule() {
        let id = DMatrix::<f64>::identity(2, 2);
        let v = max_right_singular_vector(&id).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let v = max_right_singular_vector(&m).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14);
    }

    #[test]
    fn mgs_qr_reproduces_input() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
        let (q, r) = mgs_qr(&m).unwrap();
        assert!(orthogonality_loss(&q) <= 1e-12);
        let back = &q * &r;
        assert!((&back - &m).norm() <= 1e-12 * m.norm());
        for j in 0..3 {
            assert!(r[(j, j)] > 0.0);
        }
        for i in 1..3 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn complete_basis_spans() {
        let basis = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let full = complete_basis(&basis).unwrap();
        assert!(rcond(&full) > 1e-3);
        assert_eq!(full.column(0).into_owned(), basis.column(0).into_owned());
    }

    #[test]
    fn scaled_product_tracks_norm() {
        let m = mat2(2.0, 0.0, 0.0, 0.5);
        let p = scaled_product(&[m.clone(), m.clone(), m]);
        assert!((p.ln_smax() - 3.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!((p.ln_smin() + 3.0 * 2.0f64.ln()).abs() < 1e-12);
    }
}

//! Finite-horizon exponential- and Bohl-dichotomy verdicts on candidate
//! splittings, witness search for the absence of a Bohl dichotomy, constant
//! fitting and a heuristic splitting search.
//!
//! Verdicts are tri-state: a margin within the configured tolerance band is
//! reported as inconclusive rather than forced into holds/fails.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{self, WindowSpec};
use crate::linalg;
use crate::sampling;
use crate::system::MatrixSequence;

/// Margin and witness tolerances plus the seed driving all sampled vectors.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Margins within +-this band are inconclusive.
    pub margin: f64,
    /// Band for the no-Bohl-dichotomy witness criterion.
    pub witness: f64,
    /// Unit vectors sampled per subspace when fitting constants.
    pub fit_samples: usize,
    pub seed: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            margin: 1e-3,
            witness: 5e-2,
            fit_samples: 16,
            seed: 0xB0_115EED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriState {
    Holds,
    Fails,
    Inconclusive,
}

impl TriState {
    fn from_margin(margin: f64, tol: f64) -> Self {
        if margin > tol {
            TriState::Holds
        } else if margin < -tol {
            TriState::Fails
        } else {
            TriState::Inconclusive
        }
    }
}

/// Candidate decomposition L1 (+) L2. Basis vectors are stored normalized;
/// the concatenated basis must have full rank.
#[derive(Debug, Clone)]
pub struct Splitting {
    dim: usize,
    basis1: Vec<DVector<f64>>,
    basis2: Vec<DVector<f64>>,
}

impl Splitting {
    pub fn new(dim: usize, basis1: Vec<DVector<f64>>, basis2: Vec<DVector<f64>>) -> Result<Self> {
        if basis1.len() + basis2.len() != dim {
            return Err(Error::DegenerateSplitting);
        }
        let mut normalized1 = Vec::with_capacity(basis1.len());
        let mut normalized2 = Vec::with_capacity(basis2.len());
        let mut cols = Vec::with_capacity(dim);
        for v in &basis1 {
            let n = linalg::vec_norm(v);
            if n == 0.0 || v.len() != dim {
                return Err(Error::DegenerateSplitting);
            }
            let u = v / n;
            normalized1.push(u.clone());
            cols.push(u);
        }
        for v in &basis2 {
            let n = linalg::vec_norm(v);
            if n == 0.0 || v.len() != dim {
                return Err(Error::DegenerateSplitting);
            }
            let u = v / n;
            normalized2.push(u.clone());
            cols.push(u);
        }
        let concat = DMatrix::from_columns(&cols);
        let (_, smin) = linalg::sing_extremes(&concat);
        if smin <= 1e-10 {
            return Err(Error::DegenerateSplitting);
        }
        Ok(Splitting {
            dim,
            basis1: normalized1,
            basis2: normalized2,
        })
    }

    /// The trivial splitting ({0} | R^d).
    pub fn all_growing(dim: usize) -> Result<Self> {
        let basis2 = (0..dim).map(|i| axis(i, dim)).collect();
        Splitting::new(dim, Vec::new(), basis2)
    }

    /// The trivial splitting (R^d | {0}).
    pub fn all_decaying(dim: usize) -> Result<Self> {
        let basis1 = (0..dim).map(|i| axis(i, dim)).collect();
        Splitting::new(dim, basis1, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis1(&self) -> &[DVector<f64>] {
        &self.basis1
    }

    pub fn basis2(&self) -> &[DVector<f64>] {
        &self.basis2
    }

    /// Which subspace a vector belongs to, by least-squares residual.
    pub fn member_of(&self, x: &DVector<f64>) -> Result<Side> {
        if in_span(&self.basis1, x) {
            Ok(Side::L1)
        } else if in_span(&self.basis2, x) {
            Ok(Side::L2)
        } else {
            Err(Error::NotInSubspace)
        }
    }

    /// Basis vectors, the standard axes lying in the subspace, and seeded
    /// random unit combinations, per subspace.
    pub fn default_samples(&self, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut rng = sampling::rng(seed);
        let d = self.dim;
        let sample = |basis: &[DVector<f64>], rng: &mut rand_chacha::ChaCha8Rng| {
            let mut out: Vec<DVector<f64>> = basis.to_vec();
            for i in 0..d {
                let e = axis(i, d);
                if in_span(basis, &e) && !out.iter().any(|v| v == &e) {
                    out.push(e);
                }
            }
            if basis.len() > 1 {
                for _ in 0..2 * basis.len() {
                    let coeffs = sampling::random_unit_vector(rng, basis.len());
                    let mut v = DVector::zeros(basis[0].len());
                    for (c, b) in coeffs.iter().zip(basis.iter()) {
                        v += b * *c;
                    }
                    let n = linalg::vec_norm(&v);
                    if n > 1e-8 {
                        out.push(v / n);
                    }
                }
            }
            out
        };
        let s1 = sample(&self.basis1, &mut rng);
        let s2 = sample(&self.basis2, &mut rng);
        (s1, s2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    L1,
    L2,
}

fn axis(i: usize, d: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[i] = 1.0;
    v
}

fn in_span(basis: &[DVector<f64>], x: &DVector<f64>) -> bool {
    if basis.is_empty() {
        return false;
    }
    let m = DMatrix::from_columns(basis);
    // Residual of the orthogonal projection onto the span.
    let qr = m.qr();
    let q = qr.q();
    let proj = &q * (q.transpose() * x);
    (x - proj).norm() <= 1e-10 * linalg::vec_norm(x).max(1.0)
}

/// Exponential-dichotomy verdict with fitted constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdVerdict {
    pub holds: bool,
    pub state: TriState,
    /// Fitted rate: the binding margin.
    pub alpha: f64,
    /// Smallest constant making both dichotomy inequalities hold at rate
    /// `alpha` over all scanned windows of the sampled unit vectors.
    pub k_const: f64,
    /// (-upper exponent of L1, lower exponent of L2).
    pub margins: (f64, f64),
}

/// Bohl-dichotomy verdict with per-sample fitted constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BdVerdict {
    pub holds: bool,
    pub state: TriState,
    pub alpha: f64,
    /// Per-sample (upper exponent, fitted C1) for L1 samples.
    pub c1_samples: Vec<SampleFit>,
    /// Per-sample (lower exponent, fitted C2) for L2 samples.
    pub c2_samples: Vec<SampleFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleFit {
    pub x0: Vec<f64>,
    pub exponent: f64,
    pub constant: f64,
}

/// A direction whose finite-horizon estimates straddle zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub x0: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Witness {
    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

fn subspace_upper(sys: &MatrixSequence, basis: &[DVector<f64>], w: &WindowSpec) -> Result<f64> {
    if basis.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(exponents::bohl_on_subspace(sys, basis, w)?.0.reported())
}

fn subspace_lower(sys: &MatrixSequence, basis: &[DVector<f64>], w: &WindowSpec) -> Result<f64> {
    if basis.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(exponents::bohl_on_subspace(sys, basis, w)?.1.reported())
}

/// Largest log-ratio surplus over all windows 0 <= m <= n <= horizon:
/// for `decay = true` fits ln C >= lam[n] - lam[m] + alpha (n - m)
/// (inequality (Dich1)/(11) rearranged), otherwise the growth side.
fn fit_log_constant(trace: &[f64], alpha: f64, decay: bool) -> f64 {
    let h = trace.len() - 1;
    let mut worst = 0.0f64;
    for m in 0..=h {
        for n in m..=h {
            let gap = (n - m) as f64;
            let v = if decay {
                trace[n] - trace[m] + alpha * gap
            } else {
                -(trace[n] - trace[m]) + alpha * gap
            };
            worst = worst.max(v);
        }
    }
    worst
}

/// Checks the exponential dichotomy characterization on the splitting:
/// holds iff the upper exponent of L1 is below -margin and the lower
/// exponent of L2 above +margin; K is fitted by scanning the defining
/// inequalities for sampled unit vectors in each subspace.
pub fn check_ed(
    sys: &MatrixSequence,
    splitting: &Splitting,
    w: &WindowSpec,
    tol: &Tolerances,
) -> Result<EdVerdict> {
    if splitting.dim() != sys.dim() {
        return Err(Error::DegenerateSplitting);
    }
    let upper1 = subspace_upper(sys, splitting.basis1(), w)?;
    let lower2 = subspace_lower(sys, splitting.basis2(), w)?;
    let margins = (-upper1, lower2);
    let alpha = margins.0.min(margins.1);
    let state = TriState::from_margin(alpha, tol.margin);

    let k_const = if alpha > 0.0 && alpha.is_finite() {
        let mut rng = sampling::rng(tol.seed);
        let mut log_k = 0.0f64;
        for (basis, decay) in [(splitting.basis1(), true), (splitting.basis2(), false)] {
            if basis.is_empty() {
                continue;
            }
            for i in 0..tol.fit_samples {
                let x0 = if i < basis.len() {
                    basis[i].clone()
                } else {
                    let coeffs = sampling::random_unit_vector(&mut rng, basis.len());
                    let mut v = DVector::zeros(sys.dim());
                    for (c, b) in coeffs.iter().zip(basis.iter()) {
                        v += b * *c;
                    }
                    let n = linalg::vec_norm(&v);
                    if n <= 1e-8 {
                        continue;
                    }
                    v / n
                };
                let trace = sys.log_norm_trace(&x0, w.horizon())?;
                log_k = log_k.max(fit_log_constant(&trace, alpha, decay));
            }
        }
        log_k.exp()
    } else {
        f64::INFINITY
    };

    Ok(EdVerdict {
        holds: state == TriState::Holds,
        state,
        alpha,
        k_const,
        margins,
    })
}

/// Checks the Bohl dichotomy characterization on sampled vectors assigned
/// to the splitting by membership. C1/C2 are fitted per sample as the
/// tightest constants of the defining inequalities at the binding rate.
pub fn check_bd(
    sys: &MatrixSequence,
    splitting: &Splitting,
    samples: &[DVector<f64>],
    w: &WindowSpec,
    tol: &Tolerances,
) -> Result<BdVerdict> {
    if splitting.dim() != sys.dim() {
        return Err(Error::DegenerateSplitting);
    }
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for x in samples {
        if linalg::vec_norm(x) == 0.0 {
            return Err(Error::ZeroVector);
        }
        match splitting.member_of(x)? {
            Side::L1 => l1.push(x.clone()),
            Side::L2 => l2.push(x.clone()),
        }
    }

    let mut margin = f64::INFINITY;
    let mut uppers = Vec::with_capacity(l1.len());
    let mut lowers = Vec::with_capacity(l2.len());
    for x in &l1 {
        let up = exponents::upper_bohl_vector(sys, x, w)?.reported();
        margin = margin.min(-up);
        uppers.push(up);
    }
    for x in &l2 {
        let lo = exponents::lower_bohl_vector(sys, x, w)?.reported();
        margin = margin.min(lo);
        lowers.push(lo);
    }
    let state = TriState::from_margin(margin, tol.margin);
    let alpha = margin;

    let mut c1_samples = Vec::with_capacity(l1.len());
    for (x, up) in l1.iter().zip(uppers) {
        let trace = sys.log_norm_trace(x, w.horizon())?;
        c1_samples.push(SampleFit {
            x0: x.iter().cloned().collect(),
            exponent: up,
            constant: fit_log_constant(&trace, alpha, true).exp(),
        });
    }
    let mut c2_samples = Vec::with_capacity(l2.len());
    for (x, lo) in l2.iter().zip(lowers) {
        let trace = sys.log_norm_trace(x, w.horizon())?;
        c2_samples.push(SampleFit {
            x0: x.iter().cloned().collect(),
            exponent: lo,
            constant: (-fit_log_constant(&trace, alpha, false)).exp(),
        });
    }

    Ok(BdVerdict {
        holds: state == TriState::Holds,
        state,
        alpha,
        c1_samples,
        c2_samples,
    })
}

/// Returns the first direction (in the given order) whose finite-horizon
/// estimates satisfy the non-existence criterion: lower <= witness band and
/// upper >= -witness band. Absence is a valid result.
pub fn find_no_bd_witness(
    sys: &MatrixSequence,
    directions: &[DVector<f64>],
    w: &WindowSpec,
    tol: &Tolerances,
) -> Result<Option<Witness>> {
    for x0 in directions {
        if linalg::vec_norm(x0) == 0.0 {
            return Err(Error::ZeroVector);
        }
        let (up, lo) = exponents::vector_estimates(sys, x0, w)?;
        if lo.reported() <= tol.witness && up.reported() >= -tol.witness {
            return Ok(Some(Witness {
                x0: x0.iter().cloned().collect(),
                lower: lo.reported(),
                upper: up.reported(),
            }));
        }
    }
    Ok(None)
}

/// The d axes plus 2d seeded random unit vectors.
pub fn default_directions(d: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut dirs: Vec<DVector<f64>> = (0..d).map(|i| axis(i, d)).collect();
    let mut rng = sampling::rng(seed);
    for _ in 0..2 * d {
        dirs.push(sampling::random_unit_vector(&mut rng, d));
    }
    dirs
}

/// Heuristic splitting search: sampled directions are ordered by their
/// upper vector exponent, directions decaying beyond the margin are grouped
/// into L1 and growing ones into L2 (greedy, independence enforced against
/// everything already chosen). A splitting is returned only if the grouped
/// dimensions fill the space and the Bohl verdict holds on it.
pub fn search_splitting(
    sys: &MatrixSequence,
    w: &WindowSpec,
    tol: &Tolerances,
) -> Result<Option<Splitting>> {
    let d = sys.dim();
    let dirs = default_directions(d, tol.seed);
    let mut scored = Vec::with_capacity(dirs.len());
    for x0 in &dirs {
        let (up, lo) = exponents::vector_estimates(sys, x0, w)?;
        scored.push((x0.clone(), up.reported(), lo.reported()));
    }

    let mut chosen: Vec<DVector<f64>> = Vec::new();
    let independent = |chosen: &[DVector<f64>], v: &DVector<f64>| -> bool {
        if chosen.is_empty() {
            return true;
        }
        let m = DMatrix::from_columns(chosen);
        let q = m.qr().q();
        let proj = &q * (q.transpose() * v);
        (v - proj).norm() > 1e-6
    };

    let mut decaying = scored
        .iter()
        .filter(|(_, up, _)| *up < -tol.margin)
        .collect::<Vec<_>>();
    decaying.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut basis1 = Vec::new();
    for (v, _, _) in decaying {
        if chosen.len() < d && independent(&chosen, v) {
            basis1.push(v.clone());
            chosen.push(v.clone());
        }
    }

    let mut growing = scored
        .iter()
        .filter(|(_, _, lo)| *lo > tol.margin)
        .collect::<Vec<_>>();
    growing.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut basis2 = Vec::new();
    for (v, _, _) in growing {
        if chosen.len() < d && independent(&chosen, v) {
            basis2.push(v.clone());
            chosen.push(v.clone());
        }
    }

    if basis1.len() + basis2.len() != d {
        return Ok(None);
    }
    let splitting = match Splitting::new(d, basis1, basis2) {
        Ok(s) => s,
        Err(_) => return Ok(None),
    };
    let (s1, s2) = splitting.default_samples(tol.seed);
    let samples: Vec<DVector<f64>> = s1.into_iter().chain(s2).collect();
    let verdict = check_bd(sys, &splitting, &samples, w, tol)?;
    if verdict.holds {
        Ok(Some(splitting))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    fn hyperbolic(h: usize) -> MatrixSequence {
        let e = std::f64::consts::E;
        MatrixSequence::constant(diag2(1.0 / e, e), h).unwrap()
    }

    fn axes_splitting() -> Splitting {
        Splitting::new(2, vec![axis(0, 2)], vec![axis(1, 2)]).unwrap()
    }

    #[test]
    fn ed_on_decoupled_diagonal() {
        let sys = hyperbolic(1024);
        let w = WindowSpec::default_for(1024).unwrap();
        let v = check_ed(&sys, &axes_splitting(), &w, &Tolerances::default()).unwrap();
        assert!(v.holds);
        assert!((v.alpha - 1.0).abs() < 1e-6);
        assert!((v.k_const - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ed_fails_on_identity() {
        let sys = MatrixSequence::identity(2, 256);
        let w = WindowSpec::default_for(256).unwrap();
        let v = check_ed(&sys, &axes_splitting(), &w, &Tolerances::default()).unwrap();
        assert!(!v.holds);
        assert!(v.margins.0.abs() < 1e-9 && v.margins.1.abs() < 1e-9);
    }

    #[test]
    fn ed_uniform_contraction_trivial_splitting() {
        // A_k = e^{1/k} I has an exponential dichotomy with empty L1.
        for k in [1.0f64, 4.0] {
            let m = DMatrix::<f64>::identity(2, 2) * (1.0 / k).exp();
            let sys = MatrixSequence::constant(m, 512).unwrap();
            let splitting = Splitting::all_growing(2).unwrap();
            let w = WindowSpec::default_for(512).unwrap();
            let v = check_ed(&sys, &splitting, &w, &Tolerances::default()).unwrap();
            assert!(v.holds);
            assert!((v.alpha - 1.0 / k).abs() < 1e-3);
        }
    }

    #[test]
    fn bd_follows_from_ed() {
        let sys = hyperbolic(512);
        let w = WindowSpec::default_for(512).unwrap();
        let tol = Tolerances::default();
        let splitting = axes_splitting();
        let ed = check_ed(&sys, &splitting, &w, &tol).unwrap();
        assert!(ed.holds);
        let (s1, s2) = splitting.default_samples(tol.seed);
        let samples: Vec<_> = s1.into_iter().chain(s2).collect();
        let bd = check_bd(&sys, &splitting, &samples, &w, &tol).unwrap();
        assert!(bd.holds);
        assert!((bd.alpha - 1.0).abs() < 1e-9);
        for fit in &bd.c1_samples {
            assert!((fit.constant - 1.0).abs() < 1e-9);
        }
        for fit in &bd.c2_samples {
            assert!((fit.constant - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bd_fails_on_identity() {
        let sys = MatrixSequence::identity(2, 256);
        let w = WindowSpec::default_for(256).unwrap();
        let tol = Tolerances::default();
        let splitting = axes_splitting();
        let bd = check_bd(&sys, &splitting, &[axis(0, 2), axis(1, 2)], &w, &tol).unwrap();
        assert!(!bd.holds);
        assert_eq!(bd.state, TriState::Inconclusive);
    }

    #[test]
    fn witness_on_identity() {
        let sys = MatrixSequence::identity(2, 256);
        let w = WindowSpec::default_for(256).unwrap();
        let tol = Tolerances::default();
        let dirs = [axis(0, 2), axis(1, 2)];
        let witness = find_no_bd_witness(&sys, &dirs, &w, &tol).unwrap().unwrap();
        assert_eq!(witness.lower, 0.0);
        assert_eq!(witness.upper, 0.0);
        assert_eq!(witness.x0, vec![1.0, 0.0]);
    }

    #[test]
    fn witness_absent_on_hyperbolic() {
        let sys = hyperbolic(512);
        let w = WindowSpec::default_for(512).unwrap();
        let tol = Tolerances::default();
        let dirs = [axis(0, 2), axis(1, 2)];
        assert!(find_no_bd_witness(&sys, &dirs, &w, &tol).unwrap().is_none());
    }

    #[test]
    fn search_finds_diagonal_splitting() {
        let sys = hyperbolic(512);
        let w = WindowSpec::default_for(512).unwrap();
        let s = search_splitting(&sys, &w, &Tolerances::default())
            .unwrap()
            .expect("hyperbolic splitting");
        assert_eq!(s.basis1().len(), 1);
        assert_eq!(s.basis2().len(), 1);
        assert!(s.basis1()[0][0].abs() > 0.999);
        assert!(s.basis2()[0][1].abs() > 0.999);
    }

    #[test]
    fn search_absent_on_identity() {
        let sys = MatrixSequence::identity(2, 256);
        let w = WindowSpec::default_for(256).unwrap();
        assert!(search_splitting(&sys, &w, &Tolerances::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn search_three_dimensional_grouping() {
        let e = std::f64::consts::E;
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[(-2.0f64).exp(), 0.0, 0.0, 0.0, 1.0 / e, 0.0, 0.0, 0.0, e],
        );
        let sys = MatrixSequence::constant(m, 512).unwrap();
        let w = WindowSpec::default_for(512).unwrap();
        let s = search_splitting(&sys, &w, &Tolerances::default())
            .unwrap()
            .expect("3d splitting");
        assert_eq!(s.basis1().len(), 2);
        assert_eq!(s.basis2().len(), 1);
    }

    #[test]
    fn witness_exclusivity() {
        // On a comfortably hyperbolic system the witness search must stay
        // empty for every direction set drawn from the splitting.
        let sys = hyperbolic(512);
        let w = WindowSpec::default_for(512).unwrap();
        let tol = Tolerances::default();
        let dirs = default_directions(2, 99);
        assert!(find_no_bd_witness(&sys, &dirs, &w, &tol).unwrap().is_none());
    }

    #[test]
    fn trivial_splitting_uniformity() {
        // If ED holds with L1 = R^d then the full-space upper exponent is
        // negative.
        let m = diag2(0.5, 0.6);
        let sys = MatrixSequence::constant(m, 512).unwrap();
        let splitting = Splitting::all_decaying(2).unwrap();
        let w = WindowSpec::default_for(512).unwrap();
        let v = check_ed(&sys, &splitting, &w, &Tolerances::default()).unwrap();
        assert!(v.holds);
        let up = exponents::upper_bohl_space(&sys, &w).unwrap();
        assert!(up.reported() < 0.0);
    }

    #[test]
    fn membership_classification() {
        let s = axes_splitting();
        assert_eq!(s.member_of(&axis(0, 2)).unwrap(), Side::L1);
        assert_eq!(s.member_of(&axis(1, 2)).unwrap(), Side::L2);
        let mixed = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(s.member_of(&mixed).is_err());
    }

    #[test]
    fn degenerate_splitting_rejected() {
        let v = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(matches!(
            Splitting::new(2, vec![v.clone()], vec![v]),
            Err(Error::DegenerateSplitting)
        ));
    }
}

//! Finite-horizon estimation of upper and lower Bohl exponents on vectors,
//! subspaces and the full space, with a convergence trace in the window
//! threshold N.
//!
//! A window (m, n) is admissible for threshold N when m > N and n - m > N.
//! Upper estimates maximize (1/(n-m)) ln of a growth ratio over admissible
//! windows, lower estimates minimize; the trace over an increasing N list is
//! exactly monotone because larger thresholds scan subsets of the same
//! window values.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ScaledMatrix;
use crate::system::MatrixSequence;
use crate::triangular;

/// Above this horizon the all-pairs scan is replaced by a fixed dyadic
/// subsample of window endpoints.
pub const ALL_PAIRS_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    AllPairs,
    DyadicSubsample,
}

/// Window thresholds and scan horizon for one estimator run.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    n_list: Vec<usize>,
    horizon: usize,
    enumeration: Enumeration,
}

impl WindowSpec {
    pub fn new(n_list: Vec<usize>, horizon: usize) -> Result<Self> {
        let enumeration = if horizon <= ALL_PAIRS_LIMIT {
            Enumeration::AllPairs
        } else {
            Enumeration::DyadicSubsample
        };
        Self::with_enumeration(n_list, horizon, enumeration)
    }

    pub fn with_enumeration(
        n_list: Vec<usize>,
        horizon: usize,
        enumeration: Enumeration,
    ) -> Result<Self> {
        if n_list.is_empty() {
            return Err(Error::InvalidParameter("N list must be nonempty".into()));
        }
        if !n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("N list must be increasing".into()));
        }
        if 2 * n_list[n_list.len() - 1] >= horizon {
            return Err(Error::InvalidParameter(
                "max window threshold must be below horizon/2".into(),
            ));
        }
        Ok(WindowSpec {
            n_list,
            horizon,
            enumeration,
        })
    }

    /// The default trace {4, 8, 16, 32, 64}, trimmed to thresholds below
    /// horizon/2.
    pub fn default_for(horizon: usize) -> Result<Self> {
        let n_list: Vec<usize> = [4usize, 8, 16, 32, 64]
            .into_iter()
            .filter(|n| 2 * n < horizon)
            .collect();
        if n_list.is_empty() {
            return Err(Error::InvalidParameter(
                "horizon too small for the default thresholds".into(),
            ));
        }
        WindowSpec::new(n_list, horizon)
    }

    pub fn n_list(&self) -> &[usize] {
        &self.n_list
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_n(&self) -> usize {
        self.n_list[self.n_list.len() - 1]
    }

    pub fn enumeration(&self) -> Enumeration {
        self.enumeration
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        WindowSpec::with_enumeration(self.n_list.clone(), horizon, self.enumeration)
    }

    /// Endpoint stride of the dyadic subsample: the smallest power of two
    /// keeping the scanned grid at roughly the all-pairs budget.
    fn stride(&self) -> usize {
        match self.enumeration {
            Enumeration::AllPairs => 1,
            Enumeration::DyadicSubsample => {
                let mut s = 1usize;
                while self.horizon / s > ALL_PAIRS_LIMIT {
                    s *= 2;
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Upper,
    Lower,
}

/// One extremal window value at a given threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceEntry {
    pub threshold: usize,
    pub value: f64,
    pub m: usize,
    pub n: usize,
}

/// Finite-horizon surrogate of a Bohl exponent, carrying the whole trace in
/// N so callers can judge convergence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BohlEstimate {
    pub kind: Kind,
    pub values: Vec<TraceEntry>,
}

impl BohlEstimate {
    /// The value at the largest threshold.
    pub fn reported(&self) -> f64 {
        self.values[self.values.len() - 1].value
    }

    pub fn achieving_window(&self) -> (usize, usize) {
        let e = &self.values[self.values.len() - 1];
        (e.m, e.n)
    }

    pub fn value_at(&self, threshold: usize) -> Option<f64> {
        self.values
            .iter()
            .find(|e| e.threshold == threshold)
            .map(|e| e.value)
    }

    /// Degenerate estimate for the trivial subspace.
    pub fn trivial(kind: Kind, w: &WindowSpec) -> Self {
        let v = match kind {
            Kind::Upper => f64::NEG_INFINITY,
            Kind::Lower => f64::INFINITY,
        };
        BohlEstimate {
            kind,
            values: w
                .n_list()
                .iter()
                .map(|&threshold| TraceEntry {
                    threshold,
                    value: v,
                    m: 0,
                    n: 0,
                })
                .collect(),
        }
    }

    /// CSV rows `N,value,m,n` matching [`Self::CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<String> {
        self.values
            .iter()
            .map(|e| format!("{},{},{},{}", e.threshold, e.value, e.m, e.n))
            .collect()
    }

    pub const CSV_HEADER: &'static str = "N,value,m,n";
}

#[derive(Clone, Copy)]
struct Cand {
    value: f64,
    m: usize,
    n: usize,
}

impl Cand {
    const EMPTY: Cand = Cand {
        value: f64::NAN,
        m: usize::MAX,
        n: usize::MAX,
    };

    fn is_set(&self) -> bool {
        self.m != usize::MAX
    }

    /// Deterministic total order: larger value wins; ties resolve to the
    /// smallest m, then the smallest n.
    fn beats(&self, other: &Cand, kind: Kind) -> bool {
        if !self.is_set() {
            return false;
        }
        if !other.is_set() {
            return true;
        }
        let ord = self.value.total_cmp(&other.value);
        let better = match kind {
            Kind::Upper => ord == std::cmp::Ordering::Greater,
            Kind::Lower => ord == std::cmp::Ordering::Less,
        };
        better || (ord == std::cmp::Ordering::Equal && (self.m, self.n) < (other.m, other.n))
    }
}

struct BestSet {
    kind: Kind,
    slots: Vec<Cand>,
}

impl BestSet {
    fn new(kind: Kind, len: usize) -> Self {
        BestSet {
            kind,
            slots: vec![Cand::EMPTY; len],
        }
    }

    #[inline]
    fn offer(&mut self, n_list: &[usize], q: usize, value: f64, m: usize, n: usize) {
        let cand = Cand { value, m, n };
        for (i, &thr) in n_list.iter().enumerate() {
            if q > thr {
                if cand.beats(&self.slots[i], self.kind) {
                    self.slots[i] = cand;
                }
            } else {
                break;
            }
        }
    }

    fn merge(mut self, other: BestSet) -> BestSet {
        for (a, b) in self.slots.iter_mut().zip(other.slots) {
            if b.beats(a, self.kind) {
                *a = b;
            }
        }
        self
    }

    fn into_estimate(self, w: &WindowSpec) -> Result<BohlEstimate> {
        let mut values = Vec::with_capacity(self.slots.len());
        for (i, c) in self.slots.iter().enumerate() {
            if !c.is_set() {
                return Err(Error::EmptyWindowSet(w.n_list()[i]));
            }
            values.push(TraceEntry {
                threshold: w.n_list()[i],
                value: c.value,
                m: c.m,
                n: c.n,
            });
        }
        Ok(BohlEstimate {
            kind: self.kind,
            values,
        })
    }
}

/// Both vector estimates from one propagation of the solution through x0.
pub fn vector_estimates(
    sys: &MatrixSequence,
    x0: &DVector<f64>,
    w: &WindowSpec,
) -> Result<(BohlEstimate, BohlEstimate)> {
    if w.horizon() > sys.horizon() {
        return Err(Error::HorizonExceeded {
            index: w.horizon(),
            horizon: sys.horizon(),
        });
    }
    let h = w.horizon();
    let trace = sys.log_norm_trace(x0, h)?;
    let stride = w.stride();
    let nmin = w.n_list()[0];
    let n_list = w.n_list();

    let ms: Vec<usize> = (nmin + 1..h)
        .filter(|m| m % stride == 0 || stride == 1)
        .collect();
    let (up, lo) = ms
        .par_iter()
        .with_min_len(64)
        .fold(
            || {
                (
                    BestSet::new(Kind::Upper, n_list.len()),
                    BestSet::new(Kind::Lower, n_list.len()),
                )
            },
            |(mut up, mut lo), &m| {
                let lam_m = trace[m];
                let mut n = m + nmin + 1;
                if stride > 1 {
                    n = n.div_ceil(stride) * stride;
                }
                while n <= h {
                    let gap = n - m;
                    let q = gap.min(m);
                    let value = (trace[n] - lam_m) / gap as f64;
                    up.offer(n_list, q, value, m, n);
                    lo.offer(n_list, q, value, m, n);
                    n += stride;
                }
                (up, lo)
            },
        )
        .reduce(
            || {
                (
                    BestSet::new(Kind::Upper, n_list.len()),
                    BestSet::new(Kind::Lower, n_list.len()),
                )
            },
            |(u1, l1), (u2, l2)| (u1.merge(u2), l1.merge(l2)),
        );
    Ok((up.into_estimate(w)?, lo.into_estimate(w)?))
}

pub fn upper_bohl_vector(
    sys: &MatrixSequence,
    x0: &DVector<f64>,
    w: &WindowSpec,
) -> Result<BohlEstimate> {
    Ok(vector_estimates(sys, x0, w)?.0)
}

pub fn lower_bohl_vector(
    sys: &MatrixSequence,
    x0: &DVector<f64>,
    w: &WindowSpec,
) -> Result<BohlEstimate> {
    Ok(vector_estimates(sys, x0, w)?.1)
}

/// Both space estimates in one scan. The upper estimate maximizes the log
/// spectral norm rate of Phi(n, m); the lower estimate minimizes the rate
/// (1/(n-m)) ln(1/||Phi(m, n)||), where Phi(m, n) is accumulated from
/// coefficient inverses so small singular values are never formed by
/// cancellation.
pub fn space_estimates(
    sys: &MatrixSequence,
    w: &WindowSpec,
) -> Result<(BohlEstimate, BohlEstimate)> {
    if w.horizon() > sys.horizon() {
        return Err(Error::HorizonExceeded {
            index: w.horizon(),
            horizon: sys.horizon(),
        });
    }
    if sys.dim() == 1 {
        // Scalar systems: the transition norm is the solution ratio, so the
        // space estimates coincide bitwise with the vector estimates.
        let one = DVector::from_element(1, 1.0);
        return vector_estimates(sys, &one, w);
    }
    let h = w.horizon();
    let nmin = w.n_list()[0];
    let stride = w.stride();
    let n_list = w.n_list();

    let mut coeffs = Vec::with_capacity(h);
    let mut inverses = Vec::with_capacity(h);
    for k in 0..h {
        coeffs.push(sys.coefficient_checked(k)?);
        inverses.push(sys.coefficient_inverse(k)?);
    }

    let ms: Vec<usize> = (nmin + 1..h)
        .filter(|m| m % stride == 0 || stride == 1)
        .collect();
    let (up, lo) = ms
        .par_iter()
        .with_min_len(4)
        .fold(
            || {
                (
                    BestSet::new(Kind::Upper, n_list.len()),
                    BestSet::new(Kind::Lower, n_list.len()),
                )
            },
            |(mut up, mut lo), &m| {
                let mut fwd = ScaledMatrix::identity(sys.dim());
                let mut bwd = ScaledMatrix::identity(sys.dim());
                for n in m + 1..=h {
                    fwd.push_left(&coeffs[n - 1]);
                    bwd.push_right(&inverses[n - 1]);
                    let gap = n - m;
                    if gap <= nmin {
                        continue;
                    }
                    if stride > 1 && n % stride != 0 {
                        continue;
                    }
                    let q = gap.min(m);
                    let up_rate = fwd.ln_smax() / gap as f64;
                    let lo_rate = -bwd.ln_smax() / gap as f64;
                    up.offer(n_list, q, up_rate, m, n);
                    lo.offer(n_list, q, lo_rate, m, n);
                }
                (up, lo)
            },
        )
        .reduce(
            || {
                (
                    BestSet::new(Kind::Upper, n_list.len()),
                    BestSet::new(Kind::Lower, n_list.len()),
                )
            },
            |(u1, l1), (u2, l2)| (u1.merge(u2), l1.merge(l2)),
        );
    Ok((up.into_estimate(w)?, lo.into_estimate(w)?))
}

pub fn upper_bohl_space(sys: &MatrixSequence, w: &WindowSpec) -> Result<BohlEstimate> {
    Ok(space_estimates(sys, w)?.0)
}

pub fn lower_bohl_space(sys: &MatrixSequence, w: &WindowSpec) -> Result<BohlEstimate> {
    Ok(space_estimates(sys, w)?.1)
}

/// Bohl estimates of `sys` on the subspace spanned by `basis`: the system is
/// triangularized with respect to the subspace and the space estimates of
/// the extracted subsystem are returned. Exponents survive this reduction
/// because the subsystem solution norms equal the embedded solution norms.
pub fn bohl_on_subspace(
    sys: &MatrixSequence,
    basis: &[DVector<f64>],
    w: &WindowSpec,
) -> Result<(BohlEstimate, BohlEstimate)> {
    if basis.is_empty() {
        return Err(Error::DegenerateBasis);
    }
    let form = triangular::triangularize(sys, basis, w.horizon())?;
    let sub = form.subsystem()?;
    space_estimates(&sub, w)
}

/// All-pairs window rate table used by the subsequence searches: for each
/// admissible (m, n) with m >= 1, n <= horizon, the upper rate
/// (1/(n-m)) ln ||Phi(n, m)|| and the lower rate (1/(n-m)) ln(1/||Phi(m, n)||).
pub struct RateTable {
    horizon: usize,
    rows: Vec<RateRow>,
}

struct RateRow {
    up: Vec<f64>,
    lo: Vec<f64>,
}

impl RateTable {
    pub fn build(sys: &MatrixSequence, horizon: usize) -> Result<Self> {
        if horizon > sys.horizon() {
            return Err(Error::HorizonExceeded {
                index: horizon,
                horizon: sys.horizon(),
            });
        }
        let mut coeffs = Vec::with_capacity(horizon);
        let mut inverses = Vec::with_capacity(horizon);
        for k in 0..horizon {
            coeffs.push(sys.coefficient_checked(k)?);
            inverses.push(sys.coefficient_inverse(k)?);
        }
        let rows: Vec<RateRow> = (1..horizon)
            .into_par_iter()
            .with_min_len(4)
            .map(|m| {
                let mut fwd = ScaledMatrix::identity(sys.dim());
                let mut bwd = ScaledMatrix::identity(sys.dim());
                let mut up = Vec::with_capacity(horizon - m);
                let mut lo = Vec::with_capacity(horizon - m);
                for n in m + 1..=horizon {
                    fwd.push_left(&coeffs[n - 1]);
                    bwd.push_right(&inverses[n - 1]);
                    let gap = (n - m) as f64;
                    up.push(fwd.ln_smax() / gap);
                    lo.push(-bwd.ln_smax() / gap);
                }
                RateRow { up, lo }
            })
            .collect();
        Ok(RateTable { horizon, rows })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Upper rate of the window (m, n); m >= 1, m < n <= horizon.
    pub fn up(&self, m: usize, n: usize) -> f64 {
        self.rows[m - 1].up[n - m - 1]
    }

    pub fn lo(&self, m: usize, n: usize) -> f64 {
        self.rows[m - 1].lo[n - m - 1]
    }
}

//! The verification battery: one runner per acceptance criterion, each
//! returning a pass/fail record with the measured extremes. The `verify`
//! subcommand and the acceptance test target both drive this module.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::dichotomy::{self, Splitting, Tolerances};
use crate::exponents::{self, WindowSpec};
use crate::instances;
use crate::linalg;
use crate::millionshikov::{self, SpeedClass};
use crate::perturbation::{self, DestroyOptions, DestroyVariant, PerturbationPlan};
use crate::sampling;
use crate::scenario;
use crate::spectrum::{self, Membership};
use crate::system::{MatrixSequence, TransitionOracle};
use crate::triangular;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn ok(id: usize, name: &'static str, detail: String) -> Self {
        CriterionResult {
            id,
            name,
            passed: true,
            detail,
        }
    }

    fn fail(id: usize, name: &'static str, detail: String) -> Self {
        CriterionResult {
            id,
            name,
            passed: false,
            detail,
        }
    }
}

pub fn render_line(r: &CriterionResult) -> String {
    format!(
        "criterion {:2} {:<28} {} ({})",
        r.id,
        r.name,
        if r.passed { "PASS" } else { "FAIL" },
        r.detail
    )
}

/// Runs every criterion; `quick` trims the sample counts for smoke runs.
pub fn run_all(quick: bool) -> Vec<CriterionResult> {
    vec![
        cocycle_suite(quick),
        bohl_estimator_suite(quick),
        rotation_method_suite(quick),
        fast_in_cone_suite(quick),
        triangularization_suite(quick),
        paper_counterexample_suite(),
        perturbation_plan_suite(),
        pipeline_evidence_suite(quick),
        spectrum_suite(quick),
        io_suite(),
    ]
}

macro_rules! fail_on_err {
    ($id:expr, $name:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return CriterionResult::fail($id, $name, format!("error: {err}")),
        }
    };
}

/// Criterion 1: cocycle, inverse and determinism invariants on seeded
/// random Lyapunov systems at 1e-9 relative.
fn cocycle_suite(quick: bool) -> CriterionResult {
    const ID: usize = 1;
    const NAME: &str = "cocycle";
    let systems = if quick { 10 } else { 50 };
    let h = 256usize;
    let mut rng = sampling::rng(101);
    let mut worst_cocycle = 0.0f64;
    let mut worst_inverse = 0.0f64;
    for case in 0..systems {
        let d = 1 + case % 4;
        let sys = sampling::random_isometric_lyapunov(&mut rng, d, h);
        let oracle = fail_on_err!(ID, NAME, TransitionOracle::new(&sys));
        for _ in 0..40 {
            let mut idx = [
                rng.gen_range(0..=h),
                rng.gen_range(0..=h),
                rng.gen_range(0..=h),
            ];
            idx.sort_unstable();
            let [k, m, n] = idx;
            let pk = fail_on_err!(ID, NAME, oracle.transition(n, m));
            let pm = fail_on_err!(ID, NAME, oracle.transition(m, k));
            let pn = fail_on_err!(ID, NAME, oracle.transition(n, k));
            let res = (&pk * &pm - &pn).norm() / pn.norm().max(1.0);
            worst_cocycle = worst_cocycle.max(res);
            if res > 1e-9 {
                return CriterionResult::fail(
                    ID,
                    NAME,
                    format!("cocycle residual {res} at ({k},{m},{n}), case {case}"),
                );
            }
        }
        for _ in 0..10 {
            let a = rng.gen_range(0..=h);
            let b = rng.gen_range(0..=h);
            let fwd = fail_on_err!(ID, NAME, oracle.transition(a, b));
            let bwd = fail_on_err!(ID, NAME, oracle.transition(b, a));
            let res = (&fwd * &bwd - DMatrix::<f64>::identity(d, d)).norm();
            worst_inverse = worst_inverse.max(res);
            if res > 1e-9 {
                return CriterionResult::fail(
                    ID,
                    NAME,
                    format!("inverse residual {res} at ({a},{b}), case {case}"),
                );
            }
        }
        // Determinism: bit-identical re-evaluation.
        let n = rng.gen_range(1..h);
        let a1 = fail_on_err!(ID, NAME, sys.coefficient(n));
        let a2 = fail_on_err!(ID, NAME, sys.coefficient(n));
        let p1 = fail_on_err!(ID, NAME, oracle.transition(n, n / 2));
        let p2 = fail_on_err!(ID, NAME, oracle.transition(n, n / 2));
        for (x, y) in a1.iter().zip(a2.iter()).chain(p1.iter().zip(p2.iter())) {
            if x.to_bits() != y.to_bits() {
                return CriterionResult::fail(ID, NAME, format!("nondeterministic at case {case}"));
            }
        }
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!(
            "{systems} systems; worst cocycle {worst_cocycle:.2e}, inverse {worst_inverse:.2e}"
        ),
    )
}

/// Criterion 2: exact scalar value, exact monotonicity in N, the scaling
/// shift at 1e-12, and space-dominates-vector ordering.
fn bohl_estimator_suite(quick: bool) -> CriterionResult {
    const ID: usize = 2;
    const NAME: &str = "bohl-estimators";
    let h = 256usize;
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));

    // Constant scalar e^c with c = 1/2: every window value is exactly c.
    let c = 0.5f64;
    if (c.exp()).ln() != c {
        return CriterionResult::fail(ID, NAME, "ln(exp(1/2)) fails to round-trip".into());
    }
    let sys = fail_on_err!(
        ID,
        NAME,
        MatrixSequence::constant(DMatrix::from_element(1, 1, c.exp()), h)
    );
    let x0 = DVector::from_element(1, 1.0);
    let (up, lo) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sys, &x0, &w));
    for e in up.values.iter().chain(lo.values.iter()) {
        if e.value != c {
            return CriterionResult::fail(
                ID,
                NAME,
                format!("scalar value {} != {c} at N={}", e.value, e.threshold),
            );
        }
    }

    let systems = if quick { 10 } else { 50 };
    let mut rng = sampling::rng(202);
    let mut worst_shift = 0.0f64;
    for case in 0..systems {
        let d = 1 + case % 3;
        let sys = sampling::random_lyapunov(&mut rng, d, h);
        let x0 = sampling::random_unit_vector(&mut rng, d);
        let (up, lo) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sys, &x0, &w));
        let (sup, slo) = fail_on_err!(ID, NAME, exponents::space_estimates(&sys, &w));
        // Exact monotonicity in N.
        for est in [&up, &sup] {
            for pair in est.values.windows(2) {
                if pair[1].value > pair[0].value {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("upper trace not monotone at case {case}"),
                    );
                }
            }
        }
        for est in [&lo, &slo] {
            for pair in est.values.windows(2) {
                if pair[1].value < pair[0].value {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("lower trace not monotone at case {case}"),
                    );
                }
            }
        }
        // Space dominates every sampled vector.
        for _ in 0..8 {
            let v = sampling::random_unit_vector(&mut rng, d);
            let (vu, vl) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sys, &v, &w));
            if sup.reported() < vu.reported() || slo.reported() > vl.reported() {
                return CriterionResult::fail(
                    ID,
                    NAME,
                    format!("space does not dominate vector at case {case}"),
                );
            }
        }
        // Scaling shift.
        if case % 5 == 0 {
            let gamma = 0.35f64;
            let scaled = MatrixSequence::scaled(&sys, gamma);
            let (su, sl) = fail_on_err!(ID, NAME, exponents::vector_estimates(&scaled, &x0, &w));
            for (a, b) in up.values.iter().zip(su.values.iter()) {
                let err = (b.value - (a.value + gamma)).abs();
                worst_shift = worst_shift.max(err);
            }
            for (a, b) in lo.values.iter().zip(sl.values.iter()) {
                let err = (b.value - (a.value + gamma)).abs();
                worst_shift = worst_shift.max(err);
            }
            if worst_shift > 1e-12 {
                return CriterionResult::fail(
                    ID,
                    NAME,
                    format!("scaling shift error {worst_shift} at case {case}"),
                );
            }
        }
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!("{systems} systems; worst shift error {worst_shift:.2e}"),
    )
}

/// Criterion 3: rotation-method certificates on seeded instances, plus
/// bit-for-bit agreement of the algebraic and dynamic forms.
fn rotation_method_suite(quick: bool) -> CriterionResult {
    const ID: usize = 3;
    const NAME: &str = "rotation-method";
    let per_dim = if quick { 20 } else { 100 };
    let mut rng = sampling::rng(303);
    let mut min_slack = f64::INFINITY;
    for d in [2usize, 3] {
        for case in 0..per_dim {
            let sys = sampling::random_lyapunov(&mut rng, d, 64);
            let x0 = sampling::random_unit_vector(&mut rng, d);
            let k = rng.gen_range(1..10);
            let m = k + rng.gen_range(2..16);
            let eps = rng.gen_range(0.05..0.6);

            let fwd = fail_on_err!(
                ID,
                NAME,
                millionshikov::forward_rotation_perturbation(&sys, k, m, &x0, eps)
            );
            let bwd = fail_on_err!(
                ID,
                NAME,
                millionshikov::backward_rotation_perturbation(&sys, k, m, &x0, eps)
            );
            for (label, out) in [("forward", &fwd), ("backward", &bwd)] {
                min_slack = min_slack.min(out.certificate.min_slack());
                let growth = out
                    .certificate
                    .find(if label == "forward" { "MRM10" } else { "MRM12" })
                    .expect("growth check present");
                if growth.slack < -1e-9 {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("{label} growth slack {} at d={d} case {case}", growth.slack),
                    );
                }
                let keep = out
                    .certificate
                    .find(if label == "forward" { "MRM11" } else { "MRM13" })
                    .expect("norm check present");
                if keep.slack < -1e-12 {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!(
                            "{label} norm preservation {} at d={d} case {case}",
                            keep.slack
                        ),
                    );
                }
                let nb = out.certificate.find("norm_bound").expect("norm bound");
                if nb.slack < 0.0 {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("{label} Q norm bound violated at d={d} case {case}"),
                    );
                }
                let cond = out
                    .certificate
                    .find("condition_preserved")
                    .expect("condition check");
                if cond.slack < -1e-12 {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("{label} condition drift at d={d} case {case}"),
                    );
                }
            }

            // Algebraic and dynamic forms agree bit-for-bit.
            if case % 5 == 0 {
                let slice: Vec<DMatrix<f64>> =
                    (k - 1..m).map(|i| sys.coefficient(i).unwrap()).collect();
                let v = fail_on_err!(ID, NAME, sys.unit_state(&x0, k - 1));
                let r = fail_on_err!(
                    ID,
                    NAME,
                    millionshikov::algebraic_forward(&slice, &v.dir, eps)
                );
                let same = match fwd.plan.at(k - 1) {
                    Some(q) => q
                        .iter()
                        .zip(r.iter())
                        .all(|(a, b)| a.to_bits() == b.to_bits()),
                    None => r.iter().all(|x| *x == 0.0),
                };
                if !same {
                    return CriterionResult::fail(
                        ID,
                        NAME,
                        format!("algebraic/dynamic mismatch at d={d} case {case}"),
                    );
                }
            }
        }
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!(
            "{} instances/direction/dim; min slack {min_slack:.2e}",
            per_dim
        ),
    )
}

/// Criterion 4: the in-cone fast-vector construction on seeded slow
/// instances, with the blend coefficient identity on the steep branch.
fn fast_in_cone_suite(quick: bool) -> CriterionResult {
    const ID: usize = 4;
    const NAME: &str = "fast-in-cone";
    let wanted = if quick { 50 } else { 200 };
    let mut rng = sampling::rng(404);
    let mut produced = 0usize;
    let mut worst_beta = 0.0f64;
    while produced < wanted {
        let d = rng.gen_range(2..=4);
        let q1 = sampling::random_orthogonal(&mut rng, d);
        let q2 = sampling::random_orthogonal(&mut rng, d);
        let mut s = DMatrix::zeros(d, d);
        s[(0, 0)] = rng.gen_range(5.0..20.0);
        for i in 1..d {
            s[(i, i)] = rng.gen_range(0.01..0.2);
        }
        let f = &q1 * s * q2.transpose();
        let x = sampling::random_unit_vector(&mut rng, d);
        let eps = rng.gen_range(0.02..1.2);
        match millionshikov::classify_vector(&f, &x, eps) {
            Ok(SpeedClass::Slow) => {}
            _ => continue,
        }
        produced += 1;
        let xbar = fail_on_err!(ID, NAME, millionshikov::fast_in_cone(&f, &x, eps));
        let angle = fail_on_err!(ID, NAME, linalg::angle_between(&x, &xbar));
        if angle > eps + 1e-12 {
            return CriterionResult::fail(ID, NAME, format!("outside cone: angle {angle} > {eps}"));
        }
        match millionshikov::classify_vector(&f, &xbar, eps) {
            Ok(SpeedClass::Fast) => {}
            _ => return CriterionResult::fail(ID, NAME, "result not fast".into()),
        }
        // Coefficient identity on the gamma > eps branch.
        let mut z = fail_on_err!(ID, NAME, millionshikov::maximal_vector(&f));
        if fail_on_err!(ID, NAME, linalg::angle_between(&x, &z)) > std::f64::consts::FRAC_PI_2 {
            z = -z;
        }
        let gamma = fail_on_err!(ID, NAME, linalg::angle_between(&x, &z));
        if gamma > eps {
            let alpha = (gamma - eps).sin() / gamma.sin();
            let beta = eps.sin() / gamma.sin();
            let rebuilt = &x * alpha + &z * beta;
            let err = (&rebuilt - &xbar).norm();
            worst_beta = worst_beta.max(err);
            if err > 1e-12 {
                return CriterionResult::fail(ID, NAME, format!("blend identity error {err}"));
            }
        }
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!("{wanted} slow instances; worst blend residual {worst_beta:.2e}"),
    )
}

/// Criterion 5: triangularization invariants, equivalence, exponent
/// preservation, invariant-subspace residual and the shear worked example.
fn triangularization_suite(quick: bool) -> CriterionResult {
    const ID: usize = 5;
    const NAME: &str = "triangularization";
    let mut rng = sampling::rng(505);
    let pairs = if quick { 6 } else { 20 };
    let h = 256usize;
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));

    for case in 0..pairs {
        let d = 2 + case % 3;
        let k = 1 + case % d.min(2);
        let sys = sampling::random_lyapunov(&mut rng, d, 512.max(h));
        let basis: Vec<DVector<f64>> = (0..k)
            .map(|_| sampling::random_unit_vector(&mut rng, d))
            .collect();
        let form = fail_on_err!(ID, NAME, triangular::triangularize(&sys, &basis, h));
        let v = fail_on_err!(ID, NAME, form.validate(&sys));
        if v.max_orthogonality_loss > 1e-12
            || v.max_below_diagonal_ratio > 1e-10
            || v.max_factorization_residual > 1e-10
            || v.min_c_diagonal_sign <= 0.0
        {
            return CriterionResult::fail(
                ID,
                NAME,
                format!("form invariants at case {case}: {v:?}"),
            );
        }
        let eq = fail_on_err!(ID, NAME, form.verify_equivalence(&sys));
        if !eq.passes(1e-9) {
            return CriterionResult::fail(ID, NAME, format!("equivalence at case {case}: {eq:?}"));
        }
        // Exponent preservation through the subsystem.
        let sub = fail_on_err!(ID, NAME, form.subsystem());
        let y01 = sampling::random_unit_vector(&mut rng, form.subspace_dim());
        let y0 = fail_on_err!(ID, NAME, form.embed(&y01));
        let x0 = form.u_at(0) * &y0;
        let (us, _) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sub, &y01, &w));
        let (ua, _) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sys, &x0, &w));
        if (us.reported() - ua.reported()).abs() > 1e-9 {
            return CriterionResult::fail(
                ID,
                NAME,
                format!(
                    "exponent preservation {} vs {} at case {case}",
                    us.reported(),
                    ua.reported()
                ),
            );
        }
    }

    // Invariant-subspace residual over 500 steps.
    let sys = sampling::random_lyapunov(&mut rng, 3, 512);
    let basis = vec![
        sampling::random_unit_vector(&mut rng, 3),
        sampling::random_unit_vector(&mut rng, 3),
    ];
    let form = fail_on_err!(ID, NAME, triangular::triangularize(&sys, &basis, 512));
    let tri = fail_on_err!(ID, NAME, form.triangular_system());
    let y0 = fail_on_err!(
        ID,
        NAME,
        form.embed(&sampling::random_unit_vector(&mut rng, 2))
    );
    let mut state = fail_on_err!(ID, NAME, linalg::ScaledVector::from_vector(&y0));
    for n in 0..500 {
        state.step(&fail_on_err!(ID, NAME, tri.coefficient(n)));
        if state.dir[2].abs() > 1e-12 {
            return CriterionResult::fail(
                ID,
                NAME,
                format!(
                    "invariant subspace residual {} at step {n}",
                    state.dir[2].abs()
                ),
            );
        }
    }

    // Shear worked example.
    let shear = fail_on_err!(
        ID,
        NAME,
        MatrixSequence::constant(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), 256)
    );
    let e2 = DVector::from_column_slice(&[0.0, 1.0]);
    let form = fail_on_err!(ID, NAME, triangular::triangularize(&shear, &[e2], 256));
    let sub = fail_on_err!(ID, NAME, form.subsystem());
    let b0 = fail_on_err!(ID, NAME, sub.coefficient(0))[(0, 0)];
    if (b0 - 2.0f64.sqrt()).abs() > 1e-12 {
        return CriterionResult::fail(ID, NAME, format!("worked example: {b0} vs sqrt(2)"));
    }
    CriterionResult::ok(ID, NAME, format!("{pairs} random (system, L) pairs"))
}

/// Criterion 6: the uniform-contraction family e^{1/k} I has an
/// exponential dichotomy with rate close to 1/k, while the identity limit
/// produces an exact zero witness.
fn paper_counterexample_suite() -> CriterionResult {
    const ID: usize = 6;
    const NAME: &str = "bd-not-closed";
    let h = 1024usize;
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));
    let tol = Tolerances::default();
    for k in [1.0f64, 2.0, 4.0, 8.0] {
        let m = DMatrix::<f64>::identity(2, 2) * (1.0 / k).exp();
        let sys = fail_on_err!(ID, NAME, MatrixSequence::constant(m, h));
        let splitting = fail_on_err!(ID, NAME, Splitting::all_growing(2));
        let v = fail_on_err!(ID, NAME, dichotomy::check_ed(&sys, &splitting, &w, &tol));
        if !v.holds {
            return CriterionResult::fail(ID, NAME, format!("no dichotomy at k={k}"));
        }
        if (v.alpha - 1.0 / k).abs() > 1e-3 {
            return CriterionResult::fail(
                ID,
                NAME,
                format!("alpha {} vs {} at k={k}", v.alpha, 1.0 / k),
            );
        }
    }
    let identity = MatrixSequence::identity(2, h);
    let dirs = dichotomy::default_directions(2, tol.seed);
    let witness = fail_on_err!(
        ID,
        NAME,
        dichotomy::find_no_bd_witness(&identity, &dirs, &w, &tol)
    );
    match witness {
        Some(wit) if wit.lower == 0.0 && wit.upper == 0.0 => {
            CriterionResult::ok(ID, NAME, "rates within 1e-3; exact zero witness".into())
        }
        Some(wit) => CriterionResult::fail(
            ID,
            NAME,
            format!(
                "witness estimates ({}, {}) not exactly zero",
                wit.lower, wit.upper
            ),
        ),
        None => CriterionResult::fail(ID, NAME, "no witness on the identity".into()),
    }
}

/// Criterion 7: plan algebra (truncate idempotence, disjoint-support
/// associativity), lift norm preservation, scaling shift and decay-pair
/// conditions.
fn perturbation_plan_suite() -> CriterionResult {
    const ID: usize = 7;
    const NAME: &str = "perturbation-plans";
    let mut rng = sampling::rng(707);

    // Truncate idempotence (exact).
    let entries: Vec<(usize, DMatrix<f64>)> = (0..12)
        .map(|i| {
            (
                i * 3,
                sampling::random_coefficient(&mut rng, 2) * (0.3 / (i as f64 + 1.0)),
            )
        })
        .collect();
    let plan = fail_on_err!(ID, NAME, PerturbationPlan::from_support(2, entries));
    let t1 = perturbation::truncate_plan(&plan, 0.05);
    let t2 = perturbation::truncate_plan(&t1, 0.05);
    if t1.support_indices() != t2.support_indices() {
        return CriterionResult::fail(ID, NAME, "truncate not idempotent".into());
    }
    for idx in t1.support_indices() {
        for (a, b) in t1.at(idx).unwrap().iter().zip(t2.at(idx).unwrap().iter()) {
            if a.to_bits() != b.to_bits() {
                return CriterionResult::fail(ID, NAME, "truncate not idempotent bitwise".into());
            }
        }
    }

    // Disjoint-support composition: commutative and associative (exact).
    let p1 = fail_on_err!(
        ID,
        NAME,
        PerturbationPlan::single(2, 2, sampling::random_coefficient(&mut rng, 2) * 0.01)
    );
    let p2 = fail_on_err!(
        ID,
        NAME,
        PerturbationPlan::single(2, 7, sampling::random_coefficient(&mut rng, 2) * 0.01)
    );
    let p3 = fail_on_err!(
        ID,
        NAME,
        PerturbationPlan::single(2, 11, sampling::random_coefficient(&mut rng, 2) * 0.01)
    );
    let left = perturbation::compose_plans(
        &fail_on_err!(ID, NAME, perturbation::compose_plans(&p1, &p2)),
        &p3,
    );
    let right = perturbation::compose_plans(
        &p1,
        &fail_on_err!(ID, NAME, perturbation::compose_plans(&p2, &p3)),
    );
    let swapped = perturbation::compose_plans(
        &fail_on_err!(ID, NAME, perturbation::compose_plans(&p2, &p1)),
        &p3,
    );
    let (left, right, swapped) = (
        fail_on_err!(ID, NAME, left),
        fail_on_err!(ID, NAME, right),
        fail_on_err!(ID, NAME, swapped),
    );
    for idx in left.support_indices() {
        let a = left.at(idx).unwrap();
        let b = right.at(idx).unwrap();
        let c = swapped.at(idx).unwrap();
        for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
            if x.to_bits() != y.to_bits() || x.to_bits() != z.to_bits() {
                return CriterionResult::fail(ID, NAME, "composition not associative".into());
            }
        }
    }

    // Lift norm preservation at 1e-12.
    let sys = sampling::random_lyapunov(&mut rng, 3, 128);
    let basis = vec![
        sampling::random_unit_vector(&mut rng, 3),
        sampling::random_unit_vector(&mut rng, 3),
    ];
    let form = fail_on_err!(ID, NAME, triangular::triangularize(&sys, &basis, 128));
    let q1_mat = sampling::random_coefficient(&mut rng, 2) * 0.02;
    let q1_norm = linalg::spectral_norm(&q1_mat);
    let q1 = fail_on_err!(ID, NAME, PerturbationPlan::single(2, 40, q1_mat));
    let lifted = fail_on_err!(ID, NAME, form.lift_plan(&q1));
    let lifted_norm = linalg::spectral_norm(lifted.at(40).unwrap());
    if (lifted_norm - q1_norm).abs() > 1e-12 * q1_norm.max(1.0) {
        return CriterionResult::fail(ID, NAME, format!("lift norm {lifted_norm} vs {q1_norm}"));
    }

    // Scaling shift at 1e-12.
    let h = 128usize;
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));
    let sys2 = sampling::random_lyapunov(&mut rng, 2, h);
    let splan = fail_on_err!(ID, NAME, perturbation::scaling_plan(&sys2, 0.25));
    let pert = fail_on_err!(ID, NAME, perturbation::apply_plan(&sys2, splan));
    let x0 = sampling::random_unit_vector(&mut rng, 2);
    let (u0, _) = fail_on_err!(ID, NAME, exponents::vector_estimates(&sys2, &x0, &w));
    let (u1, _) = fail_on_err!(ID, NAME, exponents::vector_estimates(&pert, &x0, &w));
    if (u1.reported() - (u0.reported() - 0.25)).abs() > 1e-12 {
        return CriterionResult::fail(
            ID,
            NAME,
            format!(
                "scaling shift {} vs {}",
                u1.reported(),
                u0.reported() - 0.25
            ),
        );
    }

    // Decay-pair conditions on a contracting system.
    let e = std::f64::consts::E;
    let contraction = fail_on_err!(
        ID,
        NAME,
        MatrixSequence::constant(
            DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, (-2.0f64).exp()]),
            256
        )
    );
    let wd = fail_on_err!(ID, NAME, WindowSpec::default_for(256));
    let sub = fail_on_err!(
        ID,
        NAME,
        perturbation::decay_subsequence(&contraction, 1.0, &[0.4, 0.3], &wd)
    );
    for (i, &(m, n)) in sub.pairs.iter().enumerate() {
        let gap = (n - m) as f64;
        let e_l = sub.epsilons[i];
        if (2.0 / e_l.sin()).ln() / gap >= e_l {
            return CriterionResult::fail(ID, NAME, format!("sine-slack violated at pair {i}"));
        }
        if sub.rates[i] > -1.0 + e_l + 1e-12 {
            return CriterionResult::fail(ID, NAME, format!("decay bound violated at pair {i}"));
        }
    }
    CriterionResult::ok(ID, NAME, "plan algebra, lift, scaling, decay pairs".into())
}

/// Criterion 8: the pre-validated gap instance drives the staged
/// construction and the full pipeline emits a sub-budget plan with a
/// verified witness.
fn pipeline_evidence_suite(quick: bool) -> CriterionResult {
    const ID: usize = 8;
    const NAME: &str = "pipeline-evidence";
    let h = if quick { 1024 } else { 2048 };
    let tol = Tolerances::default();
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));

    // Pre-validation by the window-scan oracle.
    let nu = instances::gap_instance(h);
    let validation = fail_on_err!(
        ID,
        NAME,
        instances::validate_gap_instance(&nu, &w, tol.margin, instances::GAP_VECTOR_MARGIN, 64, 7)
    );

    // Staged construction: all per-stage certificates verify.
    let z0 = DVector::from_column_slice(&[1.0, 0.0]);
    let destroy = fail_on_err!(
        ID,
        NAME,
        perturbation::destroy_bd_plan(
            &nu,
            &z0,
            DestroyVariant::Strict,
            &w,
            &DestroyOptions::default()
        )
    );
    if !destroy.verified(1e-9) {
        return CriterionResult::fail(
            ID,
            NAME,
            format!("stage certificates: min slack {}", destroy.min_slack()),
        );
    }
    if !quick && destroy.even_stage_count() < 2 {
        return CriterionResult::fail(
            ID,
            NAME,
            format!("{} even stages (need >= 2)", destroy.even_stage_count()),
        );
    }

    // Pipeline on the embedded instance.
    let sys = instances::embedded_gap_instance(&instances::GapParams::default(), 0.5, h);
    let splitting = instances::embedded_gap_splitting();
    let out = fail_on_err!(
        ID,
        NAME,
        perturbation::no_bd_pipeline(&sys, &splitting, 0.2, &w, &tol)
    );
    if out.plan.sup_norm() >= 0.2 {
        return CriterionResult::fail(ID, NAME, format!("plan norm {}", out.plan.sup_norm()));
    }
    let perturbed = fail_on_err!(ID, NAME, perturbation::apply_plan(&sys, out.plan.clone()));
    let confirmed = fail_on_err!(
        ID,
        NAME,
        dichotomy::find_no_bd_witness(&perturbed, &[out.witness.x0_vector()], &w, &tol)
    );
    if confirmed.is_none() {
        return CriterionResult::fail(ID, NAME, "witness not confirmed by the search".into());
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!(
            "gap space {:.3}, worst vector {:.3}; {} even stages; plan norm {:.4}",
            validation.space_reported,
            validation.worst_vector,
            destroy.even_stage_count(),
            out.plan.sup_norm()
        ),
    )
}

/// Criterion 9: spectra of the hyperbolic diagonal concentrate at the two
/// rates, the Bohl sample is contained in the exponential sample, and the
/// approximation demo stabilizes.
fn spectrum_suite(quick: bool) -> CriterionResult {
    const ID: usize = 9;
    const NAME: &str = "spectrum";
    let e = std::f64::consts::E;
    let h = 256usize;
    let sys = fail_on_err!(
        ID,
        NAME,
        MatrixSequence::constant(DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, e]), h)
    );
    let w = fail_on_err!(ID, NAME, WindowSpec::default_for(h));
    let tol = Tolerances::default();
    let grid = spectrum::default_grid();
    let ed = fail_on_err!(
        ID,
        NAME,
        spectrum::sample_ed_spectrum(&sys, &grid, &w, &tol)
    );
    let bd = fail_on_err!(
        ID,
        NAME,
        spectrum::sample_bd_spectrum(&sys, &grid, &w, &tol)
    );

    let mut near_minus = false;
    let mut near_plus = false;
    for (g, s) in ed.grid.iter().zip(&ed.states) {
        if *s != Membership::In {
            continue;
        }
        if (g + 1.0).abs() <= 0.05 + 1e-9 {
            near_minus = true;
        } else if (g - 1.0).abs() <= 0.05 + 1e-9 {
            near_plus = true;
        } else {
            return CriterionResult::fail(ID, NAME, format!("spurious in-point at gamma {g}"));
        }
    }
    if !near_minus || !near_plus {
        return CriterionResult::fail(
            ID,
            NAME,
            "exponential sample misses one of the expected rates".into(),
        );
    }
    for (g, (bd_state, ed_state)) in ed.grid.iter().zip(bd.states.iter().zip(&ed.states)) {
        if *bd_state == Membership::In && *ed_state != Membership::In {
            return CriterionResult::fail(ID, NAME, format!("containment fails at gamma {g}"));
        }
    }

    let eps_list = [0.2, 0.1, 0.05];
    let n_pert = if quick { 1 } else { 2 };
    let report = fail_on_err!(
        ID,
        NAME,
        spectrum::bd_approximation_demo(&sys, &grid, &eps_list, n_pert, 99, &w, &tol)
    );
    // Monotone nesting: records are reported with decreasing eps.
    for pair in report.per_eps.windows(2) {
        for (big, small) in pair[0].union_in.iter().zip(&pair[1].union_in) {
            if *small && !*big {
                return CriterionResult::fail(ID, NAME, "unions not nested".into());
            }
        }
    }
    if !report.stabilized {
        return CriterionResult::fail(ID, NAME, "intersection does not match the sample".into());
    }
    CriterionResult::ok(
        ID,
        NAME,
        format!(
            "{} exponential in-points; demo stabilized over {:?}",
            ed.in_points().len(),
            eps_list
        ),
    )
}

/// Criterion 10: scenario round-trips are bit-exact and reruns with the
/// same seed produce byte-identical outputs.
fn io_suite() -> CriterionResult {
    const ID: usize = 10;
    const NAME: &str = "io";
    let dir = match tempdir_in_target() {
        Ok(d) => d,
        Err(e) => return CriterionResult::fail(ID, NAME, format!("tempdir: {e}")),
    };

    let text = r#"{
        "schema": "bohl/scenario/v1",
        "seed": 42,
        "system": {
            "dim": 2,
            "horizon": 96,
            "rule": {"kind": "periodic", "matrices": [
                [["1.25", "0.5"], ["0", "0.8"]],
                [["0.7", "-0.25"], ["0.1", "1.1"]]
            ]}
        },
        "task": {"kind": "exponents", "space": true, "vectors": [["1", "0"], ["0.5", "-0.5"]]}
    }"#;
    let doc = fail_on_err!(ID, NAME, scenario::ScenarioDoc::from_json(text));
    // Round-trip the document itself.
    let doc2 = fail_on_err!(ID, NAME, scenario::ScenarioDoc::from_json(&doc.to_json()));
    let sys1 = fail_on_err!(ID, NAME, doc.system.build());
    let sys2 = fail_on_err!(ID, NAME, doc2.system.build());
    for n in 0..8 {
        let a = sys1.coefficient(n).unwrap();
        let b = sys2.coefficient(n).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            if x.to_bits() != y.to_bits() {
                return CriterionResult::fail(ID, NAME, "document round-trip not bit-exact".into());
            }
        }
    }

    let d1 = dir.join("run1");
    let d2 = dir.join("run2");
    let r1 = fail_on_err!(ID, NAME, scenario::run_scenario(&doc, &d1));
    let r2 = fail_on_err!(ID, NAME, scenario::run_scenario(&doc, &d2));
    for (a, b) in r1.artifacts.iter().zip(&r2.artifacts) {
        let ba = std::fs::read(a).unwrap_or_default();
        let bb = std::fs::read(b).unwrap_or_default();
        if ba != bb || ba.is_empty() {
            return CriterionResult::fail(ID, NAME, format!("outputs differ: {a:?} vs {b:?}"));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    CriterionResult::ok(
        ID,
        NAME,
        "round-trip bit-exact; reruns byte-identical".into(),
    )
}

fn tempdir_in_target() -> std::io::Result<std::path::PathBuf> {
    let base = std::env::temp_dir().join(format!("bohl-verify-{}", std::process::id()));
    std::fs::create_dir_all(&base)?;
    Ok(base)
}

//! Scenario documents: a JSON-shaped configuration format with a versioned
//! schema, bit-exact matrix round-trips (entries are shortest round-trip
//! decimal strings), task execution and atomic artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dichotomy::{self, Splitting, Tolerances};
use crate::error::{Error, Result};
use crate::exponents::{self, BohlEstimate, WindowSpec};
use crate::harness;
use crate::instances::{self, GapParams};
use crate::perturbation::{self, DestroyOptions, DestroyVariant, PerturbationPlan};
use crate::spectrum;
use crate::system::MatrixSequence;
use crate::triangular;

pub const SCHEMA: &str = "bohl/scenario/v1";

/// Shortest round-trip decimal representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::ScenarioValidation(format!("not a decimal number: `{s}`")))
}

pub type MatrixDoc = Vec<Vec<String>>;
pub type VectorDoc = Vec<String>;

pub fn matrix_to_doc(m: &DMatrix<f64>) -> MatrixDoc {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect())
        .collect()
}

pub fn matrix_from_doc(doc: &MatrixDoc) -> Result<DMatrix<f64>> {
    let rows = doc.len();
    if rows == 0 {
        return Err(Error::ScenarioValidation("empty matrix".into()));
    }
    let cols = doc[0].len();
    let mut m = DMatrix::zeros(rows, cols);
    for (i, row) in doc.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::ScenarioValidation("ragged matrix".into()));
        }
        for (j, s) in row.iter().enumerate() {
            m[(i, j)] = parse_f64(s)?;
        }
    }
    Ok(m)
}

pub fn vector_to_doc(v: &DVector<f64>) -> VectorDoc {
    v.iter().map(|x| fmt_f64(*x)).collect()
}

pub fn vector_from_doc(doc: &VectorDoc) -> Result<DVector<f64>> {
    let vals: Result<Vec<f64>> = doc.iter().map(|s| parse_f64(s)).collect();
    Ok(DVector::from_vec(vals?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportDoc {
    pub index: usize,
    pub matrix: MatrixDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub index: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDoc {
    pub dim: usize,
    pub support: Vec<SupportDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_schedule: Option<Vec<ScheduleDoc>>,
}

pub fn plan_to_doc(plan: &PerturbationPlan) -> PlanDoc {
    PlanDoc {
        dim: plan.dim(),
        support: plan
            .entries()
            .iter()
            .map(|(idx, q)| SupportDoc {
                index: *idx,
                matrix: matrix_to_doc(q),
            })
            .collect(),
        decay_schedule: plan.decay_schedule().map(|s| {
            s.iter()
                .map(|(idx, b)| ScheduleDoc {
                    index: *idx,
                    bound: *b,
                })
                .collect()
        }),
    }
}

pub fn plan_from_doc(doc: &PlanDoc) -> Result<PerturbationPlan> {
    let mut entries = Vec::with_capacity(doc.support.len());
    for s in &doc.support {
        entries.push((s.index, matrix_from_doc(&s.matrix)?));
    }
    let mut plan = PerturbationPlan::from_support(doc.dim, entries)?;
    if let Some(schedule) = &doc.decay_schedule {
        plan = plan.with_decay_schedule(schedule.iter().map(|e| (e.index, e.bound)).collect());
    }
    Ok(plan)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleDoc {
    Identity,
    Constant {
        matrix: MatrixDoc,
    },
    Periodic {
        matrices: Vec<MatrixDoc>,
    },
    BlockSchedule {
        blocks: Vec<(usize, MatrixDoc)>,
    },
    Explicit {
        prefix: Vec<MatrixDoc>,
        tail: Box<RuleDoc>,
    },
    Scaled {
        rate: f64,
        base: Box<RuleDoc>,
    },
    Perturbed {
        base: Box<RuleDoc>,
        plan: PlanDoc,
    },
    GapInstance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<GapParams>,
    },
    EmbeddedGap {
        growth: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<GapParams>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDoc {
    pub dim: usize,
    pub horizon: usize,
    pub rule: RuleDoc,
}

impl SystemDoc {
    pub fn build(&self) -> Result<MatrixSequence> {
        build_rule(&self.rule, self.dim, self.horizon)
    }
}

fn build_rule(rule: &RuleDoc, dim: usize, horizon: usize) -> Result<MatrixSequence> {
    let sys = match rule {
        RuleDoc::Identity => MatrixSequence::identity(dim, horizon),
        RuleDoc::Constant { matrix } => {
            MatrixSequence::constant(matrix_from_doc(matrix)?, horizon)?
        }
        RuleDoc::Periodic { matrices } => {
            let mats: Result<Vec<_>> = matrices.iter().map(matrix_from_doc).collect();
            MatrixSequence::periodic(mats?, horizon)?
        }
        RuleDoc::BlockSchedule { blocks } => {
            let mut out = Vec::with_capacity(blocks.len());
            for (len, m) in blocks {
                out.push((*len, matrix_from_doc(m)?));
            }
            MatrixSequence::block_schedule(out, horizon)?
        }
        RuleDoc::Explicit { prefix, tail } => {
            let tail_sys = build_rule(tail, dim, horizon)?;
            let prefix_mats: Result<Vec<_>> = prefix.iter().map(matrix_from_doc).collect();
            let mut mats = prefix_mats?;
            for n in 0..horizon.saturating_sub(mats.len()) {
                mats.push(tail_sys.coefficient(n)?);
            }
            mats.truncate(horizon);
            MatrixSequence::table(mats, horizon)?
        }
        RuleDoc::Scaled { rate, base } => {
            let base_sys = build_rule(base, dim, horizon)?;
            MatrixSequence::scaled(&base_sys, *rate)
        }
        RuleDoc::Perturbed { base, plan } => {
            let base_sys = build_rule(base, dim, horizon)?;
            let plan = plan_from_doc(plan)?;
            perturbation::apply_plan(&base_sys, plan)?
        }
        RuleDoc::GapInstance { params } => {
            instances::gap_instance_with(&params.unwrap_or_default(), horizon)
        }
        RuleDoc::EmbeddedGap { growth, params } => {
            instances::embedded_gap_instance(&params.unwrap_or_default(), *growth, horizon)
        }
    };
    if sys.dim() != dim {
        return Err(Error::ScenarioValidation(format!(
            "rule dimension {} does not match declared dimension {}",
            sys.dim(),
            dim
        )));
    }
    Ok(sys)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowsDoc {
    pub n_list: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl WindowsDoc {
    fn build(&self, default_horizon: usize) -> Result<WindowSpec> {
        WindowSpec::new(self.n_list.clone(), self.horizon.unwrap_or(default_horizon))
    }
}

fn default_windows(horizon: usize) -> Result<WindowSpec> {
    WindowSpec::default_for(horizon)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TolerancesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<f64>,
}

impl TolerancesDoc {
    fn build(&self, seed: u64) -> Tolerances {
        let mut t = Tolerances {
            seed,
            ..Tolerances::default()
        };
        if let Some(m) = self.margin {
            t.margin = m;
        }
        if let Some(w) = self.witness {
            t.witness = w;
        }
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingDoc {
    pub basis1: Vec<VectorDoc>,
    pub basis2: Vec<VectorDoc>,
}

impl SplittingDoc {
    fn build(&self, dim: usize) -> Result<Splitting> {
        let b1: Result<Vec<_>> = self.basis1.iter().map(vector_from_doc).collect();
        let b2: Result<Vec<_>> = self.basis2.iter().map(vector_from_doc).collect();
        Splitting::new(dim, b1?, b2?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodDoc {
    ForwardRotation {
        k: usize,
        m: usize,
        x0: VectorDoc,
        eps: f64,
    },
    BackwardRotation {
        k: usize,
        m: usize,
        x0: VectorDoc,
        eps: f64,
    },
    Scaling {
        delta: f64,
    },
    GrowthSubsequence {
        eps_list: Vec<f64>,
    },
    DecaySubsequence {
        delta: f64,
        eps_list: Vec<f64>,
    },
    DestroyBd {
        variant: DestroyVariant,
        budget: f64,
        z0: VectorDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage_budget: Option<usize>,
    },
    SlowSolution {
        delta: f64,
        stages: usize,
        budget: f64,
    },
    NoBdPipeline {
        eps: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        splitting: Option<SplittingDoc>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDoc {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridDoc {
    fn build(&self) -> Result<Vec<f64>> {
        if self.step <= 0.0 || self.stop < self.start {
            return Err(Error::ScenarioValidation("bad grid".into()));
        }
        let n = ((self.stop - self.start) / self.step).round() as usize;
        Ok((0..=n).map(|i| self.start + self.step * i as f64).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoDoc {
    pub eps_list: Vec<f64>,
    pub n_perturbations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDoc {
    Simulate {
        x0: Vec<VectorDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
    Exponents {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        windows: Option<WindowsDoc>,
        #[serde(default)]
        space: bool,
        #[serde(default)]
        vectors: Vec<VectorDoc>,
    },
    Dichotomy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        windows: Option<WindowsDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        splitting: Option<SplittingDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerances: Option<TolerancesDoc>,
    },
    Triangularize {
        basis: Vec<VectorDoc>,
    },
    Perturb {
        method: MethodDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        windows: Option<WindowsDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerances: Option<TolerancesDoc>,
    },
    Spectrum {
        grid: GridDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        windows: Option<WindowsDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        demo: Option<DemoDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerances: Option<TolerancesDoc>,
    },
    Verify {
        #[serde(default)]
        quick: bool,
    },
}

impl TaskDoc {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TaskDoc::Simulate { .. } => "simulate",
            TaskDoc::Exponents { .. } => "exponents",
            TaskDoc::Dichotomy { .. } => "dichotomy",
            TaskDoc::Triangularize { .. } => "triangularize",
            TaskDoc::Perturb { .. } => "perturb",
            TaskDoc::Spectrum { .. } => "spectrum",
            TaskDoc::Verify { .. } => "verify",
        }
    }

    fn randomized(&self) -> bool {
        matches!(
            self,
            TaskDoc::Dichotomy { .. }
                | TaskDoc::Perturb { .. }
                | TaskDoc::Spectrum { .. }
                | TaskDoc::Verify { .. }
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub system: SystemDoc,
    pub task: TaskDoc,
}

impl ScenarioDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text)
            .map_err(|e| Error::ScenarioValidation(format!("parse error: {e}")))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::ScenarioValidation(format!(
                "unsupported schema `{}` (expected `{SCHEMA}`)",
                self.schema
            )));
        }
        if self.system.dim == 0 || self.system.horizon < 2 {
            return Err(Error::ScenarioValidation(
                "system needs a positive dimension and a horizon of at least 2".into(),
            ));
        }
        if self.task.randomized() && self.seed.is_none() {
            return Err(Error::ScenarioValidation(
                "randomized tasks require an explicit seed".into(),
            ));
        }
        Ok(())
    }
}

/// Artifacts written by a scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub task: String,
    pub artifacts: Vec<PathBuf>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Io(format!("serialize: {e}")))?;
    write_atomic(path, &(text + "\n"))
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 24 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    write_atomic(path, &out)
}

fn estimate_rows(prefix: &str, est: &BohlEstimate) -> Vec<String> {
    est.csv_rows()
        .into_iter()
        .map(|r| format!("{prefix},{r}"))
        .collect()
}

/// Executes a scenario and writes its artifacts under `out_dir`.
pub fn run_scenario(doc: &ScenarioDoc, out_dir: &Path) -> Result<RunReport> {
    doc.validate()?;
    let sys = doc.system.build()?;
    let seed = doc.seed.unwrap_or(0);
    let mut artifacts = Vec::new();

    match &doc.task {
        TaskDoc::Simulate { x0, steps } => {
            let len = steps.unwrap_or(sys.horizon()).min(sys.horizon());
            let mut rows = Vec::new();
            for (ti, xdoc) in x0.iter().enumerate() {
                let v = vector_from_doc(xdoc)?;
                let trace = sys.log_norm_trace(&v, len)?;
                for (n, ln) in trace.iter().enumerate() {
                    rows.push(format!(
                        "{},{},{},{}",
                        ti,
                        n,
                        fmt_f64(*ln),
                        fmt_f64(ln.exp())
                    ));
                }
            }
            let path = out_dir.join("solution.csv");
            write_csv(&path, "target,n,log_norm,norm", &rows)?;
            artifacts.push(path);
        }
        TaskDoc::Exponents {
            windows,
            space,
            vectors,
        } => {
            let w = match windows {
                Some(wd) => wd.build(sys.horizon())?,
                None => default_windows(sys.horizon())?,
            };
            let mut rows = Vec::new();
            if *space || vectors.is_empty() {
                let (up, lo) = exponents::space_estimates(&sys, &w)?;
                rows.extend(estimate_rows("space_upper", &up));
                rows.extend(estimate_rows("space_lower", &lo));
            }
            for (i, xdoc) in vectors.iter().enumerate() {
                let v = vector_from_doc(xdoc)?;
                let (up, lo) = exponents::vector_estimates(&sys, &v, &w)?;
                rows.extend(estimate_rows(&format!("vector{i}_upper"), &up));
                rows.extend(estimate_rows(&format!("vector{i}_lower"), &lo));
            }
            let path = out_dir.join("estimates.csv");
            write_csv(&path, "target,N,value,m,n", &rows)?;
            artifacts.push(path);
        }
        TaskDoc::Dichotomy {
            windows,
            splitting,
            tolerances,
        } => {
            let w = match windows {
                Some(wd) => wd.build(sys.horizon())?,
                None => default_windows(sys.horizon())?,
            };
            let tol = tolerances.clone().unwrap_or_default().build(seed);
            let split = match splitting {
                Some(sd) => Some(sd.build(sys.dim())?),
                None => dichotomy::search_splitting(&sys, &w, &tol)?,
            };
            #[derive(Serialize)]
            struct DichotomyReport {
                splitting_found: bool,
                splitting: Option<SplittingDoc>,
                ed: Option<dichotomy::EdVerdict>,
                bd: Option<dichotomy::BdVerdict>,
                witness: Option<dichotomy::Witness>,
            }
            let mut report = DichotomyReport {
                splitting_found: split.is_some(),
                splitting: None,
                ed: None,
                bd: None,
                witness: None,
            };
            let mut rows = Vec::new();
            if let Some(split) = &split {
                report.splitting = Some(SplittingDoc {
                    basis1: split.basis1().iter().map(vector_to_doc).collect(),
                    basis2: split.basis2().iter().map(vector_to_doc).collect(),
                });
                let ed = dichotomy::check_ed(&sys, split, &w, &tol)?;
                let (s1, s2) = split.default_samples(tol.seed);
                let samples: Vec<DVector<f64>> = s1.into_iter().chain(s2).collect();
                let bd = dichotomy::check_bd(&sys, split, &samples, &w, &tol)?;
                for fit in &bd.c1_samples {
                    rows.push(format!(
                        "L1,{},{}",
                        fmt_f64(fit.exponent),
                        fmt_f64(fit.constant)
                    ));
                }
                for fit in &bd.c2_samples {
                    rows.push(format!(
                        "L2,{},{}",
                        fmt_f64(fit.exponent),
                        fmt_f64(fit.constant)
                    ));
                }
                report.ed = Some(ed);
                report.bd = Some(bd);
            }
            let dirs = dichotomy::default_directions(sys.dim(), tol.seed);
            report.witness = dichotomy::find_no_bd_witness(&sys, &dirs, &w, &tol)?;
            let jpath = out_dir.join("verdicts.json");
            write_json(&jpath, &report)?;
            artifacts.push(jpath);
            let cpath = out_dir.join("samples.csv");
            write_csv(&cpath, "side,exponent,constant", &rows)?;
            artifacts.push(cpath);
        }
        TaskDoc::Triangularize { basis } => {
            let b: Result<Vec<_>> = basis.iter().map(vector_from_doc).collect();
            let form = triangular::triangularize(&sys, &b?, sys.horizon())?;
            let mut rows = Vec::new();
            for n in 0..form.horizon() {
                let u = form.u_at(n);
                let bmat = form.b_at(n);
                let ucells: Vec<String> = u.iter().map(|x| fmt_f64(*x)).collect();
                let bcells: Vec<String> = bmat.iter().map(|x| fmt_f64(*x)).collect();
                rows.push(format!("{},{},{}", n, ucells.join(","), bcells.join(",")));
            }
            let path = out_dir.join("form.csv");
            write_csv(&path, "n,U(column-major),B(column-major)", &rows)?;
            artifacts.push(path);
            let report = form.verify_equivalence(&sys)?;
            let validation = form.validate(&sys)?;
            #[derive(Serialize)]
            struct TriReport {
                equivalence: triangular::EquivalenceReport,
                validation: triangular::FormValidation,
            }
            let jpath = out_dir.join("equivalence.json");
            write_json(
                &jpath,
                &TriReport {
                    equivalence: report,
                    validation,
                },
            )?;
            artifacts.push(jpath);
        }
        TaskDoc::Perturb {
            method,
            windows,
            tolerances,
        } => {
            let w = match windows {
                Some(wd) => wd.build(sys.horizon())?,
                None => default_windows(sys.horizon())?,
            };
            let tol = tolerances.clone().unwrap_or_default().build(seed);
            let (plan, certificate) = run_method(&sys, method, &w, &tol)?;
            let ppath = out_dir.join("plan.json");
            write_json(&ppath, &plan_to_doc(&plan))?;
            artifacts.push(ppath);
            let cpath = out_dir.join("certificate.json");
            write_atomic(&cpath, &(certificate + "\n"))?;
            artifacts.push(cpath);
        }
        TaskDoc::Spectrum {
            grid,
            windows,
            demo,
            tolerances,
        } => {
            let w = match windows {
                Some(wd) => wd.build(sys.horizon())?,
                None => default_windows(sys.horizon())?,
            };
            let tol = tolerances.clone().unwrap_or_default().build(seed);
            let g = grid.build()?;
            let ed = spectrum::sample_ed_spectrum(&sys, &g, &w, &tol)?;
            let bd = spectrum::sample_bd_spectrum(&sys, &g, &w, &tol)?;
            let rows: Vec<String> = ed
                .grid
                .iter()
                .zip(ed.states.iter().zip(&bd.states))
                .map(|(g, (e, b))| {
                    format!(
                        "{},{},{}",
                        fmt_f64(*g),
                        membership_str(e),
                        membership_str(b)
                    )
                })
                .collect();
            let cpath = out_dir.join("spectrum.csv");
            write_csv(&cpath, "gamma,ed_state,bd_state", &rows)?;
            artifacts.push(cpath);
            #[derive(Serialize)]
            struct SpectrumReport {
                ed: spectrum::SpectrumSample,
                bd: spectrum::SpectrumSample,
            }
            let jpath = out_dir.join("spectrum.json");
            write_json(&jpath, &SpectrumReport { ed, bd })?;
            artifacts.push(jpath);
            if let Some(demo) = demo {
                let report = spectrum::bd_approximation_demo(
                    &sys,
                    &g,
                    &demo.eps_list,
                    demo.n_perturbations,
                    seed,
                    &w,
                    &tol,
                )?;
                let dpath = out_dir.join("approximation.json");
                write_json(&dpath, &report)?;
                artifacts.push(dpath);
            }
        }
        TaskDoc::Verify { quick } => {
            let results = harness::run_all(*quick);
            for r in &results {
                println!("{}", harness::render_line(r));
            }
            let path = out_dir.join("verify.json");
            write_json(&path, &results)?;
            artifacts.push(path);
            if results.iter().any(|r| !r.passed) {
                return Err(Error::SurrogateHypothesisFailed {
                    step: "verify",
                    detail: "one or more criteria failed".into(),
                });
            }
        }
    }

    Ok(RunReport {
        task: doc.task.kind_name().to_string(),
        artifacts,
    })
}

fn membership_str(s: &spectrum::Membership) -> &'static str {
    match s {
        spectrum::Membership::In => "in",
        spectrum::Membership::Out => "out",
        spectrum::Membership::Inconclusive => "inconclusive",
    }
}

fn run_method(
    sys: &MatrixSequence,
    method: &MethodDoc,
    w: &WindowSpec,
    tol: &Tolerances,
) -> Result<(PerturbationPlan, String)> {
    use crate::millionshikov;
    match method {
        MethodDoc::ForwardRotation { k, m, x0, eps } => {
            let x = vector_from_doc(x0)?;
            let out = millionshikov::forward_rotation_perturbation(sys, *k, *m, &x, *eps)?;
            let cert = serde_json::to_string_pretty(&out.certificate)
                .map_err(|e| Error::Io(e.to_string()))?;
            Ok((out.plan, cert))
        }
        MethodDoc::BackwardRotation { k, m, x0, eps } => {
            let x = vector_from_doc(x0)?;
            let out = millionshikov::backward_rotation_perturbation(sys, *k, *m, &x, *eps)?;
            let cert = serde_json::to_string_pretty(&out.certificate)
                .map_err(|e| Error::Io(e.to_string()))?;
            Ok((out.plan, cert))
        }
        MethodDoc::Scaling { delta } => {
            let plan = perturbation::scaling_plan(sys, *delta)?;
            Ok((plan, "{}".into()))
        }
        MethodDoc::GrowthSubsequence { eps_list } => {
            let pairs = perturbation::growth_subsequence(sys, eps_list, w)?;
            let cert =
                serde_json::to_string_pretty(&pairs).map_err(|e| Error::Io(e.to_string()))?;
            Ok((PerturbationPlan::zero(sys.dim()), cert))
        }
        MethodDoc::DecaySubsequence { delta, eps_list } => {
            let pairs = perturbation::decay_subsequence(sys, *delta, eps_list, w)?;
            let cert =
                serde_json::to_string_pretty(&pairs).map_err(|e| Error::Io(e.to_string()))?;
            Ok((PerturbationPlan::zero(sys.dim()), cert))
        }
        MethodDoc::DestroyBd {
            variant,
            budget,
            z0,
            stage_budget,
        } => {
            let z = vector_from_doc(z0)?;
            let opts = DestroyOptions {
                budget: *budget,
                stage_budget: stage_budget.unwrap_or(6),
                tol: *tol,
            };
            let out = perturbation::destroy_bd_plan(sys, &z, *variant, w, &opts)?;
            #[derive(Serialize)]
            struct DestroyCert<'a> {
                alpha: f64,
                exhausted_at: Option<usize>,
                stages: &'a [perturbation::StageCert],
                pairs: &'a perturbation::SubsequencePair,
            }
            let cert = serde_json::to_string_pretty(&DestroyCert {
                alpha: out.alpha,
                exhausted_at: out.exhausted_at,
                stages: &out.stages,
                pairs: &out.pairs,
            })
            .map_err(|e| Error::Io(e.to_string()))?;
            Ok((out.plan, cert))
        }
        MethodDoc::SlowSolution {
            delta,
            stages,
            budget,
        } => {
            let opts = DestroyOptions {
                budget: *budget,
                stage_budget: 6,
                tol: *tol,
            };
            let out = perturbation::slow_solution_plan(sys, *delta, *stages, w, &opts)?;
            #[derive(Serialize)]
            struct SlowCert<'a> {
                v0: VectorDoc,
                stages: &'a [perturbation::StageCert],
                pairs: &'a perturbation::SubsequencePair,
            }
            let cert = serde_json::to_string_pretty(&SlowCert {
                v0: vector_to_doc(&out.v0),
                stages: &out.stages,
                pairs: &out.pairs,
            })
            .map_err(|e| Error::Io(e.to_string()))?;
            Ok((out.plan, cert))
        }
        MethodDoc::NoBdPipeline { eps, splitting } => {
            let split = match splitting {
                Some(sd) => sd.build(sys.dim())?,
                None => dichotomy::search_splitting(sys, w, tol)?.ok_or_else(|| {
                    Error::SurrogateHypothesisFailed {
                        step: "pipeline_split",
                        detail: "no Bohl splitting found".into(),
                    }
                })?,
            };
            let out = perturbation::no_bd_pipeline(sys, &split, *eps, w, tol)?;
            #[derive(Serialize)]
            struct PipeCert<'a> {
                witness: &'a dichotomy::Witness,
                certificate: &'a perturbation::PipelineCert,
            }
            let cert = serde_json::to_string_pretty(&PipeCert {
                witness: &out.witness,
                certificate: &out.certificate,
            })
            .map_err(|e| Error::Io(e.to_string()))?;
            Ok((out.plan, cert))
        }
    }
}

/// Exit codes of the scenario runner: 2 validation, 3 surrogate-hypothesis
/// failure, 4 numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ScenarioValidation(_)
        | Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::HorizonExceeded { .. } => 2,
        Error::SurrogateHypothesisFailed { .. }
        | Error::PrefixEmpty
        | Error::StageExhausted(_)
        | Error::EmptyWindowSet(_) => 3,
        _ => 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn scenario_json() -> String {
        r#"{
            "schema": "bohl/scenario/v1",
            "seed": 7,
            "system": {
                "dim": 2,
                "horizon": 64,
                "rule": {"kind": "constant", "matrix": [["0.36787944117144233", "0"], ["0", "2.718281828459045"]]}
            },
            "task": {"kind": "exponents", "space": true, "vectors": [["1", "0"]]}
        }"#
        .to_string()
    }

    #[test]
    fn parse_and_run_exponents() {
        let doc = ScenarioDoc::from_json(&scenario_json()).unwrap();
        let dir = tempdir().unwrap();
        let report = run_scenario(&doc, dir.path()).unwrap();
        assert_eq!(report.task, "exponents");
        let text = std::fs::read_to_string(&report.artifacts[0]).unwrap();
        assert!(text.starts_with("target,N,value,m,n"));
        assert!(text.contains("space_upper"));
    }

    #[test]
    fn byte_identical_reruns() {
        let doc = ScenarioDoc::from_json(&scenario_json()).unwrap();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let r1 = run_scenario(&doc, d1.path()).unwrap();
        let r2 = run_scenario(&doc, d2.path()).unwrap();
        let b1 = std::fs::read(&r1.artifacts[0]).unwrap();
        let b2 = std::fs::read(&r2.artifacts[0]).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn matrix_roundtrip_bit_exact() {
        let mut rng = crate::sampling::rng(11);
        for _ in 0..50 {
            let m = crate::sampling::random_coefficient(&mut rng, 3);
            let doc = matrix_to_doc(&m);
            let back = matrix_from_doc(&doc).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn plan_roundtrip_bit_exact() {
        let mut rng = crate::sampling::rng(13);
        let q1 = crate::sampling::random_coefficient(&mut rng, 2) * 0.01;
        let q2 = crate::sampling::random_coefficient(&mut rng, 2) * 0.003;
        let plan = PerturbationPlan::from_support(2, vec![(3, q1), (17, q2)])
            .unwrap()
            .with_decay_schedule([(3usize, 0.5f64), (17, 0.25)].into_iter().collect());
        let doc = plan_to_doc(&plan);
        let text = serde_json::to_string(&doc).unwrap();
        let parsed: PlanDoc = serde_json::from_str(&text).unwrap();
        let back = plan_from_doc(&parsed).unwrap();
        assert_eq!(plan.support_indices(), back.support_indices());
        for idx in plan.support_indices() {
            for (a, b) in plan
                .at(idx)
                .unwrap()
                .iter()
                .zip(back.at(idx).unwrap().iter())
            {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(plan.decay_schedule(), back.decay_schedule());
    }

    #[test]
    fn verdict_and_estimate_roundtrip() {
        use crate::exponents::{self, WindowSpec};
        let e = std::f64::consts::E;
        let m = DMatrix::from_row_slice(2, 2, &[1.0 / e, 0.0, 0.0, e]);
        let sys = MatrixSequence::constant(m, 128).unwrap();
        let w = WindowSpec::default_for(128).unwrap();
        let tol = crate::dichotomy::Tolerances::default();
        let splitting = crate::dichotomy::Splitting::new(
            2,
            vec![DVector::from_column_slice(&[1.0, 0.0])],
            vec![DVector::from_column_slice(&[0.0, 1.0])],
        )
        .unwrap();

        let ed = crate::dichotomy::check_ed(&sys, &splitting, &w, &tol).unwrap();
        let text = serde_json::to_string(&ed).unwrap();
        let back: crate::dichotomy::EdVerdict = serde_json::from_str(&text).unwrap();
        assert_eq!(ed.holds, back.holds);
        assert_eq!(ed.alpha.to_bits(), back.alpha.to_bits());
        assert_eq!(ed.k_const.to_bits(), back.k_const.to_bits());
        assert_eq!(ed.margins.0.to_bits(), back.margins.0.to_bits());

        let (up, _) = exponents::vector_estimates(
            &sys,
            &DVector::from_column_slice(&[1.0, 0.0]),
            &w,
        )
        .unwrap();
        let text = serde_json::to_string(&up).unwrap();
        let back: exponents::BohlEstimate = serde_json::from_str(&text).unwrap();
        assert_eq!(up.values.len(), back.values.len());
        for (a, b) in up.values.iter().zip(&back.values) {
            assert_eq!(a.threshold, b.threshold);
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!((a.m, a.n), (b.m, b.n));
        }
    }

    #[test]
    fn seed_required_for_randomized_tasks() {
        let text = r#"{
            "schema": "bohl/scenario/v1",
            "system": {"dim": 2, "horizon": 32, "rule": {"kind": "identity"}},
            "task": {"kind": "dichotomy"}
        }"#;
        assert!(matches!(
            ScenarioDoc::from_json(text),
            Err(Error::ScenarioValidation(_))
        ));
    }

    #[test]
    fn schema_version_checked() {
        let text = scenario_json().replace("bohl/scenario/v1", "bohl/scenario/v9");
        assert!(ScenarioDoc::from_json(&text).is_err());
    }

    #[test]
    fn shortest_roundtrip_decimals() {
        for x in [1.0, 0.1, 1.0 / 3.0, std::f64::consts::E, 1e-300, -0.0] {
            let s = fmt_f64(x);
            let back = parse_f64(&s).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{s}");
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bohl::scenario::{self, ScenarioDoc, TaskDoc};

/// Scenario-driven diagnostics for nonautonomous linear difference systems.
#[derive(Parser)]
#[command(name = "bohl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario configuration document (JSON).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory; defaults to $BOHL_OUT_DIR or the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the system horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker threads for the window scans (0 = library default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate solutions and write their norms.
    Simulate(Common),
    /// Bohl exponent estimates with convergence traces.
    Exponents(Common),
    /// Dichotomy verdicts, constants and witness search.
    Dichotomy(Common),
    /// Upper triangular form and equivalence report.
    Triangularize(Common),
    /// Build a perturbation plan with its certificate.
    Perturb(Common),
    /// Sampled dichotomy spectra over a rate grid.
    Spectrum(Common),
    /// Run the verification battery; exits nonzero on failure.
    Verify(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Exponents(c) => ("exponents", c),
        Command::Dichotomy(c) => ("dichotomy", c),
        Command::Triangularize(c) => ("triangularize", c),
        Command::Perturb(c) => ("perturb", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::Verify(c) => ("verify", c),
    };
    match run(kind, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(scenario::exit_code(&err) as u8)
        }
    }
}

fn run(kind: &str, common: &Common) -> bohl::Result<()> {
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| bohl::Error::InvalidParameter(format!("thread pool: {e}")))?;
    }

    let mut doc = match &common.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ScenarioDoc::from_json(&text)?
        }
        None if kind == "verify" => default_verify_scenario(),
        None => {
            return Err(bohl::Error::ScenarioValidation(
                "--scenario <path> is required for this subcommand".into(),
            ))
        }
    };

    if doc.task.kind_name() != kind {
        return Err(bohl::Error::ScenarioValidation(format!(
            "scenario task `{}` does not match subcommand `{kind}`",
            doc.task.kind_name()
        )));
    }
    if let Some(seed) = common.seed {
        doc.seed = Some(seed);
    }
    if let Some(h) = common.horizon {
        doc.system.horizon = h;
    }

    let out_dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("BOHL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let report = scenario::run_scenario(&doc, &out_dir)?;
    for artifact in &report.artifacts {
        println!("wrote {}", artifact.display());
    }
    Ok(())
}

fn default_verify_scenario() -> ScenarioDoc {
    ScenarioDoc {
        schema: scenario::SCHEMA.to_string(),
        seed: Some(0),
        system: scenario::SystemDoc {
            dim: 2,
            horizon: 64,
            rule: scenario::RuleDoc::Identity,
        },
        task: TaskDoc::Verify { quick: false },
    }
}

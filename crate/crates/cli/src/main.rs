use std::path::PathBuf;
use std::process::ExitCode;

use aoi_core::config::ExperimentSpec;
use aoi_core::pipeline::{self, Outcome};
use aoi_core::runtime::PolicyKind;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aoi", version, about = "On-demand age-of-information scheduling for energy-harvesting sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment specification (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` in the spec.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` in the spec.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run only this policy.
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimal joint policy for small fleets.
    SolveExact,
    /// Lagrangian relaxation: mixed per-sensor policies and the lower bound.
    SolveRelaxed,
    /// Monte Carlo evaluation of the configured policies.
    Simulate,
    /// Grid over fleet size and normalized budget.
    Sweep,
    /// Structural, ordering and gap-bound checks.
    Analyze,
    /// Command regions over battery and age.
    RegionMap,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Exact,
    Relaxed,
    Rtt,
    Greedy,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Exact => PolicyKind::Exact,
            PolicyArg::Relaxed => PolicyKind::Relaxed,
            PolicyArg::Rtt => PolicyKind::RelaxThenTruncate,
            PolicyArg::Greedy => PolicyKind::Greedy,
        }
    }
}

fn run(cli: &Cli) -> aoi_core::Result<Outcome> {
    let Some(path) = &cli.config else {
        return Err(aoi_core::Error::InvalidConfig("--config is required".into()));
    };
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(p) = cli.policy {
        spec.policies = vec![p.into()];
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&spec.out_dir));
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| aoi_core::Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SolveExact => pipeline::cmd_solve_exact(&spec, &out),
        Command::SolveRelaxed => pipeline::cmd_solve_relaxed(&spec, &out),
        Command::Simulate => pipeline::cmd_simulate(&spec, &out),
        Command::Sweep => pipeline::cmd_sweep(&spec, &out),
        Command::Analyze => pipeline::cmd_analyze(&spec, &out),
        Command::RegionMap => pipeline::cmd_region_map(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for check in &outcome.checks {
                println!("{check}");
            }
            if outcome.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Subcommand implementations: solve, simulate, sweep, analyze and map,
//! writing their artifacts into an output directory.
//!
//! Result CSVs share one schema:
//!
//! ```text
//! config_hash,build_tag,policy,K,M,gamma,lower_bound,cost,cost_se,command_rate,mad,episodes,horizon,seed
//! ```
//!
//! `cost` is the average on-demand age per user and sensor, `cost_se` its
//! standard error across episodes, `command_rate` the commands per sensor per
//! slot, and `mad` the mean absolute deviation of the pre-truncation proposal
//! count. `lower_bound` is empty when no relaxed solution was involved.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::analysis::{self, CheckOutcome, OrderingInputs, SweepPoint};
use crate::config::ExperimentSpec;
use crate::error::{Error, Result};
use crate::exact::{solve_exact, JointPolicy, MAX_JOINT_STATES};
use crate::model::{JointSpace, NetworkConfig};
use crate::relaxed::{solve_relaxed, solve_relaxed_with_gamma, RelaxedSolution};
use crate::runtime::{Policy, PolicyKind};
use crate::sim::{run_experiment, SimReport};
use crate::store::StoredRelaxed;

pub const EXACT_POLICY_FILE: &str = "exact_policy.csv";
pub const RELAXED_POLICY_FILE: &str = "relaxed_policy.txt";

pub const RESULT_HEADER: &str =
    "config_hash,build_tag,policy,K,M,gamma,lower_bound,cost,cost_se,command_rate,mad,episodes,horizon,seed";

pub fn build_tag() -> &'static str {
    env!("AOI_BUILD_TAG")
}

/// Printable summary of a subcommand plus its check verdicts.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub checks: Vec<CheckOutcome>,
}

impl Outcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One row of a result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub policy: PolicyKind,
    pub num_sensors: usize,
    pub budget: usize,
    pub gamma: f64,
    pub lower_bound: Option<f64>,
    pub cost: f64,
    pub cost_se: f64,
    pub command_rate: f64,
    pub mad: f64,
    pub episodes: usize,
    pub horizon: u64,
    pub seed: u64,
}

impl ResultRow {
    pub fn new(report: &SimReport, network: &NetworkConfig, gamma: f64, lower_bound: Option<f64>, seed: u64) -> Self {
        Self {
            policy: report.policy.parse().expect("reports carry a policy name"),
            num_sensors: network.num_sensors(),
            budget: network.budget,
            gamma,
            lower_bound,
            cost: report.cost,
            cost_se: report.cost_se,
            command_rate: report.command_rate,
            mad: report.proposal_mad,
            episodes: report.episodes.len(),
            horizon: report.horizon,
            seed,
        }
    }

    pub fn write<W: Write>(&self, mut out: W, config_hash: &str) -> Result<()> {
        let lb = self.lower_bound.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{config_hash},{},{},{},{},{},{lb},{},{},{},{},{},{},{}",
            build_tag(),
            self.policy,
            self.num_sensors,
            self.budget,
            self.gamma,
            self.cost,
            self.cost_se,
            self.command_rate,
            self.mad,
            self.episodes,
            self.horizon,
            self.seed
        )?;
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open_policy(dir: &Path, name: &str, command: &'static str) -> Result<BufReader<File>> {
    let path: PathBuf = dir.join(name);
    match File::open(&path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingPolicy { path, command }),
        Err(e) => Err(e.into()),
    }
}

pub fn load_relaxed(dir: &Path, network: &NetworkConfig) -> Result<StoredRelaxed> {
    let stored = StoredRelaxed::read(open_policy(dir, RELAXED_POLICY_FILE, "solve-relaxed")?)?;
    stored.check_matches(network)?;
    Ok(stored)
}

pub fn load_exact(dir: &Path, network: &NetworkConfig) -> Result<JointPolicy> {
    JointPolicy::read_csv(network, open_policy(dir, EXACT_POLICY_FILE, "solve-exact")?)
}

fn fits_exact(network: &NetworkConfig) -> bool {
    JointSpace::new(network).len_u128() <= MAX_JOINT_STATES
}

/// Solves the joint problem and writes the policy table.
pub fn cmd_solve_exact(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let network = spec.network()?;
    let sol = solve_exact(&network, spec.rvia_options())?;
    sol.policy.write_csv(create(out_dir, EXACT_POLICY_FILE)?)?;
    Ok(Outcome {
        lines: vec![
            format!("optimal average cost {}", sol.average_cost()),
            format!(
                "joint states {} iterations {} span {:e} residual {:e}",
                sol.policy.num_states(),
                sol.rvia.iterations,
                sol.rvia.span,
                sol.residual
            ),
            format!("policy written to {}", out_dir.join(EXACT_POLICY_FILE).display()),
        ],
        checks: Vec::new(),
    })
}

fn relaxed_lines(sol: &RelaxedSolution) -> Vec<String> {
    let mut lines = vec![format!("lower bound {}", sol.lower_bound)];
    if sol.active {
        lines.push(format!(
            "constraint active: mu in [{}, {}] eta {} command rate {} (budget {})",
            sol.mu_lower, sol.mu_upper, sol.eta, sol.command_rate, sol.gamma
        ));
        if sol.eta_grid_fallback {
            lines.push("mixing factor found by grid scan (command rate not monotone in eta)".into());
        }
    } else {
        lines.push(format!(
            "constraint inactive: command rate {} <= budget {} at mu = 0, eta unused",
            sol.command_rate, sol.gamma
        ));
    }
    lines
}

/// Solves the relaxed problem and writes the mixed policies and the price trajectory.
pub fn cmd_solve_relaxed(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let network = spec.network()?;
    let sol = solve_relaxed(&network, spec.relaxed_options())?;
    StoredRelaxed::from(&sol).write(create(out_dir, RELAXED_POLICY_FILE)?)?;
    let mut traj = create(out_dir, "relaxed_trajectory.csv")?;
    writeln!(traj, "mu,command_rate,penalized_cost,cost")?;
    for p in &sol.trajectory {
        writeln!(traj, "{},{},{},{}", p.mu, p.command_rate, p.penalized_cost, p.cost)?;
    }
    traj.flush()?;
    let mut lines = relaxed_lines(&sol);
    lines.push(format!("policy written to {}", out_dir.join(RELAXED_POLICY_FILE).display()));
    Ok(Outcome { lines, checks: Vec::new() })
}

/// Runtime policy of the requested kind for `network`.
fn runtime_policy(
    kind: PolicyKind,
    network: &NetworkConfig,
    relaxed: Option<&StoredRelaxed>,
    exact: Option<&Arc<JointPolicy>>,
) -> Result<Policy> {
    let missing = |file: &str, command| Error::MissingPolicy { path: PathBuf::from(file), command };
    Ok(match kind {
        PolicyKind::Greedy => Policy::Greedy { budget: network.budget },
        PolicyKind::Exact => Policy::Exact(exact.ok_or_else(|| missing(EXACT_POLICY_FILE, "solve-exact"))?.clone()),
        PolicyKind::Relaxed => {
            Policy::Relaxed(relaxed.ok_or_else(|| missing(RELAXED_POLICY_FILE, "solve-relaxed"))?.policies().into())
        }
        PolicyKind::RelaxThenTruncate => Policy::RelaxThenTruncate {
            policies: relaxed.ok_or_else(|| missing(RELAXED_POLICY_FILE, "solve-relaxed"))?.policies().into(),
            budget: network.budget,
        },
    })
}

fn summary_line(row: &ResultRow) -> String {
    format!(
        "{:<8} cost {:.6} ± {:.2e}  command rate {:.6}  MAD {:.4}",
        row.policy.name(),
        row.cost,
        row.cost_se,
        row.command_rate,
        row.mad
    )
}

fn write_trace(out_dir: &Path, reports: &[SimReport]) -> Result<()> {
    let mut out = create(out_dir, "trace.csv")?;
    writeln!(out, "policy,slot,running_cost")?;
    for r in reports {
        for (slot, cost) in &r.trace {
            writeln!(out, "{},{slot},{cost}", r.policy)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Simulates every policy of the spec (policy files are read from `out_dir`).
pub fn cmd_simulate(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let network = spec.network()?;
    let needs = |k: PolicyKind| spec.policies.contains(&k);
    let relaxed = if needs(PolicyKind::Relaxed) || needs(PolicyKind::RelaxThenTruncate) {
        Some(load_relaxed(out_dir, &network)?)
    } else {
        None
    };
    let exact = if needs(PolicyKind::Exact) { Some(Arc::new(load_exact(out_dir, &network)?)) } else { None };
    let sim = spec.sim_config(network.clone());
    let hash = spec.config_hash();
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &kind in &spec.policies {
        let policy = runtime_policy(kind, &network, relaxed.as_ref(), exact.as_ref())?;
        let report = run_experiment(&sim, &policy)?;
        let row = ResultRow::new(&report, &network, spec.gamma(), relaxed.as_ref().map(|r| r.lower_bound), spec.seed);
        lines.push(format!("{}  ({:.1?})", summary_line(&row), report.wall_time));
        rows.push(row);
        reports.push(report);
    }
    let mut out = create(out_dir, "simulate.csv")?;
    writeln!(out, "{RESULT_HEADER}")?;
    for row in &rows {
        row.write(&mut out, &hash)?;
    }
    out.flush()?;
    write_trace(out_dir, &reports)?;
    if let Some(r) = &relaxed {
        lines.push(format!("relaxed lower bound {}", r.lower_bound));
    }
    lines.push(format!("results written to {}", out_dir.join("simulate.csv").display()));
    Ok(Outcome { lines, checks: Vec::new() })
}

/// Solves and simulates one network, returning its rows and the relaxed solution.
fn run_point(
    spec: &ExperimentSpec,
    network: &NetworkConfig,
    gamma: f64,
) -> Result<(Vec<(ResultRow, SimReport)>, RelaxedSolution)> {
    let relaxed = solve_relaxed_with_gamma(network, gamma, spec.relaxed_options())?;
    let stored = StoredRelaxed::from(&relaxed);
    let exact = if spec.policies.contains(&PolicyKind::Exact) && fits_exact(network) {
        Some(Arc::new(solve_exact(network, spec.rvia_options())?.policy))
    } else {
        None
    };
    let sim = spec.sim_config(network.clone());
    let mut out = Vec::new();
    for &kind in &spec.policies {
        if kind == PolicyKind::Exact && exact.is_none() {
            continue;
        }
        let policy = runtime_policy(kind, network, Some(&stored), exact.as_ref())?;
        let report = run_experiment(&sim, &policy)?;
        out.push((ResultRow::new(&report, network, gamma, Some(relaxed.lower_bound), spec.seed), report));
    }
    Ok((out, relaxed))
}

fn sweep_grid(spec: &ExperimentSpec) -> (Vec<usize>, Vec<f64>) {
    let ks = if spec.sweep_k.is_empty() { vec![spec.num_sensors] } else { spec.sweep_k.clone() };
    let gammas = if spec.sweep_gamma.is_empty() { vec![spec.gamma()] } else { spec.sweep_gamma.clone() };
    (ks, gammas)
}

/// Runs every `(K, gamma)` grid point and writes one row per point and policy.
pub fn cmd_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let (ks, gammas) = sweep_grid(spec);
    let hash = spec.config_hash();
    let mut out = create(out_dir, "sweep.csv")?;
    writeln!(out, "{RESULT_HEADER}")?;
    let mut lines = Vec::new();
    for &k in &ks {
        for &gamma in &gammas {
            let network = spec.network_for(k, gamma)?;
            let (rows, relaxed) = run_point(spec, &network, gamma)?;
            lines.push(format!("K={k} gamma={gamma} M={} lower bound {:.6}", network.budget, relaxed.lower_bound));
            for (row, _) in &rows {
                row.write(&mut out, &hash)?;
                lines.push(format!("  {}", summary_line(row)));
            }
        }
    }
    out.flush()?;
    lines.push(format!("results written to {}", out_dir.join("sweep.csv").display()));
    Ok(Outcome { lines, checks: Vec::new() })
}

/// Numerical checks of the structural results, the ordering chain, the
/// truncation gap bound and the MAD scaling; writes `checks.txt`.
pub fn cmd_analyze(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let network = spec.network()?;
    let mut spec = spec.clone();
    spec.policies = vec![PolicyKind::RelaxThenTruncate];
    let (rows, relaxed) = run_point(&spec, &network, network.gamma())?;
    let mut checks = analysis::check_structure(&relaxed, 1e-6);
    let mut lines = relaxed_lines(&relaxed);
    let rtt = &rows[0];
    if fits_exact(&network) {
        let exact = solve_exact(&network, spec.rvia_options())?;
        checks.push(analysis::check_ordering(
            OrderingInputs {
                lower_bound: relaxed.lower_bound,
                exact: exact.average_cost(),
                truncated: rtt.1.cost,
                truncated_se: rtt.1.cost_se,
            },
            1e-6,
        ));
    } else {
        lines.push("ordering check skipped: joint state space above the exact-solver cap".into());
    }
    checks.push(analysis::check_gap_bound(relaxed.lower_bound, &rtt.1, network.delta_max, network.budget));
    let point = |k: usize, row: &ResultRow, report: &SimReport, lb: f64| SweepPoint {
        num_sensors: k,
        gap: row.cost - lb,
        gap_se: row.cost_se,
        mad: report.proposal_mad,
        mad_se: report.proposal_mad_se,
    };
    let mut points = vec![point(network.num_sensors(), &rtt.0, &rtt.1, relaxed.lower_bound)];
    for &k in spec.sweep_k.iter().filter(|&&k| k != network.num_sensors()) {
        let net = spec.network_for(k, network.gamma())?;
        let (rows, rel) = run_point(&spec, &net, net.gamma())?;
        let (row, report) = &rows[0];
        checks.push(analysis::check_gap_bound(rel.lower_bound, report, net.delta_max, net.budget));
        points.push(point(k, row, report, rel.lower_bound));
    }
    checks.push(analysis::check_sqrt_k_mad(&points, network.gamma(), network.delta_max));
    if points.len() > 1 {
        checks.push(analysis::check_gap_trend(&points));
    }
    for (g, group) in relaxed.groups.iter().enumerate() {
        let zero = analysis::command_region_map(&group.lower.policy, 0);
        lines.push(format!(
            "group {g} (harvest {}): r=0 slice commands {} cells",
            group.params.harvest_rate,
            zero.cells()
        ));
    }
    let mut out = create(out_dir, "checks.txt")?;
    for c in &checks {
        writeln!(out, "{c}")?;
    }
    out.flush()?;
    Ok(Outcome { lines, checks })
}

/// Command regions over `(battery, age)` for every sensor group, request
/// count and table; reuses `relaxed_policy.txt` when present.
pub fn cmd_region_map(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let network = spec.network()?;
    let mut lines = Vec::new();
    let stored = match load_relaxed(out_dir, &network) {
        Ok(s) => {
            lines.push(format!("using {}", out_dir.join(RELAXED_POLICY_FILE).display()));
            s
        }
        Err(Error::MissingPolicy { .. }) => {
            let sol = solve_relaxed(&network, spec.relaxed_options())?;
            let stored = StoredRelaxed::from(&sol);
            stored.write(create(out_dir, RELAXED_POLICY_FILE)?)?;
            lines.push(format!("solved and wrote {}", out_dir.join(RELAXED_POLICY_FILE).display()));
            stored
        }
        Err(e) => return Err(e),
    };
    let mut out = create(out_dir, "region_map.csv")?;
    writeln!(out, "{}", analysis::region_csv_header("group,harvest_rate,table,", network.delta_max))?;
    for (g, (params, policy)) in stored.groups.iter().enumerate() {
        for (name, table) in [("lower", &policy.lower), ("upper", &policy.upper)] {
            let mut cells = Vec::new();
            let mut closed = true;
            for r in 0..=params.num_users() as u32 {
                let map = analysis::command_region_map(table, r);
                map.write_csv(&mut out, &format!("{g},{},{name},", params.harvest_rate))?;
                cells.push(map.cells());
                closed &= map.upward_closed_in_age();
            }
            lines.push(format!(
                "group {g} harvest {} {name} (mu {}): cells per r {:?}, age threshold {}",
                params.harvest_rate,
                table.mu,
                cells,
                if closed { "yes" } else { "NO" }
            ));
        }
    }
    out.flush()?;
    lines.push(format!("map written to {}", out_dir.join("region_map.csv").display()));
    Ok(Outcome { lines, checks: Vec::new() })
}

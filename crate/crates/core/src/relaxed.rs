//! Lagrangian relaxation of the per-slot budget into a time-average one.
//!
//! For a fixed price per command the relaxed problem splits into one small
//! average-cost MDP per sensor. The price is found by bisection on the fleet's
//! average command rate, and the two policies bracketing the optimal price are
//! mixed per decision so that the rate meets the budget with equality.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    battery_successors, per_sensor_cost, step_age, JointAction, NetworkConfig, SensorParams, StateSpace,
};
use crate::rvi::{ProductMdp, RviaOptions, RviaResult, DEFAULT_SELF_LOOP};

/// Tolerance for treating the fleet command rate as equal to the budget.
pub const RATE_EQUALITY_TOL: f64 = 1e-6;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
const ETA_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy)]
pub struct RelaxedOptions {
    /// Span tolerance of each per-sensor value iteration.
    pub theta: f64,
    /// Width at which bisection on the price stops.
    pub epsilon: f64,
    /// Width at which bisection on the mixing factor stops.
    pub eta_tol: f64,
    pub max_iterations: usize,
    /// See [`RviaOptions::self_loop`].
    pub self_loop: f64,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        Self { theta: 1e-7, epsilon: 1e-4, eta_tol: 1e-6, max_iterations: 100_000, self_loop: DEFAULT_SELF_LOOP }
    }
}

impl RelaxedOptions {
    pub fn rvia(&self) -> RviaOptions {
        RviaOptions { theta: self.theta, max_iterations: self.max_iterations, self_loop: self.self_loop }
    }
}

/// Anything that gives a command probability per per-sensor state.
pub trait CommandPolicy {
    fn command_prob(&self, state: usize) -> f64;
}

/// Deterministic per-sensor policy solved at price `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub space: StateSpace,
    pub actions: Vec<bool>,
    pub mu: f64,
}

impl PolicyTable {
    pub fn action(&self, state: usize) -> bool {
        self.actions[state]
    }

    pub fn command_count(&self) -> usize {
        self.actions.iter().filter(|&&a| a).count()
    }

    pub fn never(space: StateSpace) -> Self {
        Self { space, actions: vec![false; space.len()], mu: f64::INFINITY }
    }

    pub fn always(space: StateSpace) -> Self {
        Self { space, actions: vec![true; space.len()], mu: 0.0 }
    }
}

impl CommandPolicy for PolicyTable {
    fn command_prob(&self, state: usize) -> f64 {
        self.actions[state] as u8 as f64
    }
}

/// Per decision, follow `lower` with probability `eta`, else `upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolicy {
    /// Policy at the lower end of the price bracket (commands more).
    pub lower: PolicyTable,
    /// Policy at the upper end of the price bracket (commands less).
    pub upper: PolicyTable,
    pub eta: f64,
}

impl MixedPolicy {
    pub fn pure(policy: PolicyTable) -> Self {
        Self { lower: policy.clone(), upper: policy, eta: 1.0 }
    }

    pub fn space(&self) -> StateSpace {
        self.lower.space
    }

    /// True when both tables agree at `state`, so no draw is needed.
    pub fn is_deterministic_at(&self, state: usize) -> bool {
        self.lower.actions[state] == self.upper.actions[state]
    }
}

impl CommandPolicy for MixedPolicy {
    fn command_prob(&self, state: usize) -> f64 {
        self.eta * self.lower.command_prob(state) + (1.0 - self.eta) * self.upper.command_prob(state)
    }
}

/// Result of per-sensor relative value iteration at one price.
#[derive(Debug, Clone)]
pub struct SensorSolution {
    pub policy: PolicyTable,
    pub rvia: RviaResult,
    pub residual: f64,
}

impl SensorSolution {
    /// Optimal long-run `c + mu * a` of this sensor, `V(s_ref)`.
    pub fn lagrangian(&self) -> f64 {
        self.rvia.average_cost
    }

    pub fn values(&self) -> &[f64] {
        &self.rvia.values
    }
}

fn sensor_mdp(sensor: &SensorParams, delta_max: u32, mu: f64) -> ProductMdp {
    let actions = vec![JointAction(vec![false]), JointAction(vec![true])];
    ProductMdp::new(std::slice::from_ref(sensor), delta_max, actions, 1.0, mu)
}

/// Optimal deterministic policy of one sensor under command price `mu`.
pub fn solve_per_sensor(
    sensor: &SensorParams,
    delta_max: u32,
    mu: f64,
    options: RviaOptions,
) -> Result<SensorSolution> {
    solve_per_sensor_from(sensor, delta_max, mu, options, None)
}

/// As [`solve_per_sensor`], starting from `initial` values.
pub fn solve_per_sensor_from(
    sensor: &SensorParams,
    delta_max: u32,
    mu: f64,
    options: RviaOptions,
    initial: Option<&[f64]>,
) -> Result<SensorSolution> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::InvalidConfig(format!("command price {mu} must be non-negative")));
    }
    let mdp = sensor_mdp(sensor, delta_max, mu);
    let rvia = mdp.solve(options, initial)?;
    let actions = mdp.greedy_policy(&rvia).into_iter().map(|i| i == 1).collect();
    let residual = mdp.bellman_residual(&rvia);
    let policy = PolicyTable { space: StateSpace::for_sensor(sensor, delta_max), actions, mu };
    Ok(SensorSolution { policy, rvia, residual })
}

/// Long-run averages of one sensor under a stationary policy.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Average per-slot `c_k` (not normalized by the number of users).
    pub cost_rate: f64,
    /// Average per-slot command probability.
    pub command_rate: f64,
    /// Stationary distribution over per-sensor states.
    pub distribution: Vec<f64>,
}

/// Exact long-run cost and command rate from the stationary distribution of
/// the policy-induced chain.
///
/// Requests are independent of the past, so the chain is solved on the
/// `(battery, age)` pairs and the request count is attached afterwards.
pub fn evaluate_per_sensor<P: CommandPolicy + ?Sized>(
    sensor: &SensorParams,
    delta_max: u32,
    policy: &P,
) -> Result<Evaluation> {
    let space = StateSpace::for_sensor(sensor, delta_max);
    let pmf = crate::model::request_pmf(&sensor.request_probs);
    let n = space.reduced_len();
    let mut transition = DMatrix::<f64>::zeros(n, n);
    // expected cost and command rate per reduced state
    let mut cost = vec![0.0; n];
    let mut rate = vec![0.0; n];
    for battery in 0..=sensor.battery_capacity {
        for age in 1..=delta_max {
            let x = space.reduced_index(battery, age);
            for (requests, &pr) in pmf.iter().enumerate() {
                if pr == 0.0 {
                    continue;
                }
                let state = crate::model::PerSensorState::new(requests as u32, battery, age);
                let q = policy.command_prob(space.index(state));
                for (command, weight) in [(false, 1.0 - q), (true, q)] {
                    if weight <= 0.0 {
                        continue;
                    }
                    let sent = command && battery >= 1;
                    let next_age = step_age(age, sent, delta_max);
                    let (bats, nb) = battery_successors(battery, sent, sensor.harvest_rate, sensor.battery_capacity);
                    for &(b, pb) in &bats[..nb] {
                        transition[(x, space.reduced_index(b, next_age))] += pr * weight * pb;
                    }
                    cost[x] += pr * weight * per_sensor_cost(state, command, delta_max) as f64;
                    rate[x] += pr * weight * command as u8 as f64;
                }
            }
        }
    }
    let reduced = stationary(&transition)?;
    let cost_rate = reduced.iter().zip(&cost).map(|(p, c)| p * c).sum();
    let command_rate = reduced.iter().zip(&rate).map(|(p, c)| p * c).sum();
    let mut distribution = vec![0.0; space.len()];
    for (requests, &pr) in pmf.iter().enumerate() {
        for (x, &p) in reduced.iter().enumerate() {
            distribution[requests * n + x] = pr * p;
        }
    }
    Ok(Evaluation { cost_rate, command_rate, distribution })
}

/// Number of closed communicating classes of a row-stochastic matrix.
pub fn recurrent_classes(transition: &DMatrix<f64>) -> usize {
    let n = transition.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 4 * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if transition[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    sccs.iter()
        .enumerate()
        .filter(|(c, scc)| scc.iter().all(|node| graph.neighbors(*node).all(|next| component[next.index()] == *c)))
        .count()
}

/// Stationary distribution of a unichain row-stochastic matrix.
pub fn stationary(transition: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = transition.nrows();
    let classes = recurrent_classes(transition);
    if classes != 1 {
        return Err(Error::Multichain { classes });
    }
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut system = transition.transpose();
    for i in 0..n {
        system[(i, i)] -= 1.0;
    }
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = system.lu().solve(&rhs).ok_or_else(|| Error::Stationary("singular balance equations".into()))?;
    let mut pi: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let pi_vec = DVector::from_column_slice(&pi);
    let residual = (transition.transpose() * &pi_vec - &pi_vec).amax();
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::Stationary(format!("residual {residual:e} above {STATIONARY_RESIDUAL_TOL:e}")));
    }
    Ok(pi)
}

/// One evaluated price during the bisection.
#[derive(Debug, Clone, Copy)]
pub struct PriceProbe {
    pub mu: f64,
    /// Fleet-average command rate.
    pub command_rate: f64,
    /// `(1/NK) sum_k L*_k(mu)`, the penalized cost without the budget term.
    pub penalized_cost: f64,
    /// Normalized average cost of the price-optimal policy.
    pub cost: f64,
}

/// Sensors with identical parameters share one solved policy.
#[derive(Debug, Clone)]
pub struct SensorGroup {
    pub params: SensorParams,
    pub members: Vec<usize>,
    pub policy: Arc<MixedPolicy>,
    pub lower: SensorSolution,
    pub upper: SensorSolution,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub gamma: f64,
    /// False when the price-free policy already meets the budget.
    pub active: bool,
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub eta: f64,
    pub groups: Vec<SensorGroup>,
    pub sensor_group: Vec<usize>,
    /// Normalized average cost of the relaxed policy; a lower bound on the
    /// optimal cost under the per-slot budget.
    pub lower_bound: f64,
    /// Fleet-average command rate of the relaxed policy.
    pub command_rate: f64,
    pub trajectory: Vec<PriceProbe>,
    /// True if the mixing factor came from the grid-scan fallback.
    pub eta_grid_fallback: bool,
}

impl RelaxedSolution {
    pub fn mu_star(&self) -> f64 {
        0.5 * (self.mu_lower + self.mu_upper)
    }

    pub fn policy(&self, sensor: usize) -> &Arc<MixedPolicy> {
        &self.groups[self.sensor_group[sensor]].policy
    }

    pub fn policies(&self) -> Vec<Arc<MixedPolicy>> {
        (0..self.sensor_group.len()).map(|k| self.policy(k).clone()).collect()
    }

    pub fn num_sensors(&self) -> usize {
        self.sensor_group.len()
    }
}

struct Grouping {
    params: Vec<SensorParams>,
    members: Vec<Vec<usize>>,
    sensor_group: Vec<usize>,
}

fn group_sensors(sensors: &[SensorParams]) -> Grouping {
    let mut index = HashMap::new();
    let mut params = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut sensor_group = Vec::with_capacity(sensors.len());
    for (k, sensor) in sensors.iter().enumerate() {
        let g = *index.entry(sensor.key()).or_insert_with(|| {
            params.push(sensor.clone());
            members.push(Vec::new());
            params.len() - 1
        });
        members[g].push(k);
        sensor_group.push(g);
    }
    Grouping { params, members, sensor_group }
}

/// Per-group solutions at one price plus the fleet aggregates.
struct Probe {
    solutions: Vec<SensorSolution>,
    evaluations: Vec<Evaluation>,
    summary: PriceProbe,
}

struct Fleet<'a> {
    config: &'a NetworkConfig,
    grouping: Grouping,
    options: RelaxedOptions,
}

impl Fleet<'_> {
    fn weight(&self, g: usize) -> f64 {
        self.grouping.members[g].len() as f64
    }

    fn probe(&self, mu: f64, warm: Option<&Probe>) -> Result<Probe> {
        let delta_max = self.config.delta_max;
        let results: Vec<Result<(SensorSolution, Evaluation)>> = self
            .grouping
            .params
            .par_iter()
            .enumerate()
            .map(|(g, sensor)| {
                let init = warm.map(|w| w.solutions[g].values());
                let sol = solve_per_sensor_from(sensor, delta_max, mu, self.options.rvia(), init)?;
                let eval = evaluate_per_sensor(sensor, delta_max, &sol.policy)?;
                Ok((sol, eval))
            })
            .collect();
        let (solutions, evaluations): (Vec<_>, Vec<_>) =
            results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let k = self.config.num_sensors() as f64;
        let nk = k * self.config.num_users as f64;
        let summary = PriceProbe {
            mu,
            command_rate: evaluations.iter().enumerate().map(|(g, e)| self.weight(g) * e.command_rate).sum::<f64>() / k,
            penalized_cost: solutions.iter().enumerate().map(|(g, s)| self.weight(g) * s.lagrangian()).sum::<f64>()
                / nk,
            cost: evaluations.iter().enumerate().map(|(g, e)| self.weight(g) * e.cost_rate).sum::<f64>() / nk,
        };
        Ok(Probe { solutions, evaluations, summary })
    }

    fn mixed_rate(&self, lower: &Probe, upper: &Probe, eta: f64) -> Result<(f64, Vec<Evaluation>)> {
        let evals: Vec<Evaluation> = self
            .grouping
            .params
            .par_iter()
            .enumerate()
            .map(|(g, sensor)| {
                let mixed = MixedPolicy {
                    lower: lower.solutions[g].policy.clone(),
                    upper: upper.solutions[g].policy.clone(),
                    eta,
                };
                evaluate_per_sensor(sensor, self.config.delta_max, &mixed)
            })
            .collect::<Result<_>>()?;
        let rate = evals.iter().enumerate().map(|(g, e)| self.weight(g) * e.command_rate).sum::<f64>()
            / self.config.num_sensors() as f64;
        Ok((rate, evals))
    }

    /// Mixing factor with fleet command rate equal to gamma.
    fn find_eta(&self, lower: &Probe, upper: &Probe, gamma: f64) -> Result<(f64, bool)> {
        let (mut lo, mut hi) = (0.0, 1.0);
        let (mut rate_lo, mut rate_hi) = (upper.summary.command_rate, lower.summary.command_rate);
        let mut best = if (rate_lo - gamma).abs() < (rate_hi - gamma).abs() { (lo, rate_lo) } else { (hi, rate_hi) };
        while hi - lo > self.options.eta_tol {
            let mid = 0.5 * (lo + hi);
            let (rate, _) = self.mixed_rate(lower, upper, mid)?;
            if rate < rate_lo - 1e-12 || rate > rate_hi + 1e-12 {
                return self.scan_eta(lower, upper, gamma).map(|eta| (eta, true));
            }
            if (rate - gamma).abs() < (best.1 - gamma).abs() {
                best = (mid, rate);
            }
            if rate < gamma {
                lo = mid;
                rate_lo = rate;
            } else {
                hi = mid;
                rate_hi = rate;
            }
        }
        Ok((best.0, false))
    }

    fn scan_eta(&self, lower: &Probe, upper: &Probe, gamma: f64) -> Result<f64> {
        let rates: Vec<(f64, f64)> = (0..=ETA_GRID_POINTS)
            .into_par_iter()
            .map(|i| {
                let eta = i as f64 / ETA_GRID_POINTS as f64;
                self.mixed_rate(lower, upper, eta).map(|(rate, _)| (eta, rate))
            })
            .collect::<Result<_>>()?;
        Ok(rates
            .into_iter()
            .min_by(|a, b| (a.1 - gamma).abs().total_cmp(&(b.1 - gamma).abs()))
            .map(|(eta, _)| eta)
            .unwrap_or(1.0))
    }
}

/// Relaxed policy for the whole fleet and the resulting lower bound.
pub fn solve_relaxed(config: &NetworkConfig, options: RelaxedOptions) -> Result<RelaxedSolution> {
    solve_relaxed_with_gamma(config, config.gamma(), options)
}

/// As [`solve_relaxed`] with an explicit time-average budget `gamma`.
pub fn solve_relaxed_with_gamma(
    config: &NetworkConfig,
    gamma: f64,
    options: RelaxedOptions,
) -> Result<RelaxedSolution> {
    config.validate()?;
    if !(options.epsilon > 0.0 && options.theta > 0.0 && options.eta_tol > 0.0) {
        return Err(Error::InvalidConfig("tolerances must be positive".into()));
    }
    let fleet = Fleet { config, grouping: group_sensors(&config.sensors), options };
    let mut trajectory = Vec::new();

    let free = fleet.probe(0.0, None)?;
    trajectory.push(free.summary);
    if free.summary.command_rate <= gamma + 1e-12 {
        return Ok(assemble(&fleet, gamma, false, (0.0, 0.0), 1.0, &free, &free, None, trajectory, false));
    }

    let mut mu_lo = 0.0;
    let mut mu_hi = config.num_users as f64 * (config.delta_max as f64).powi(2);
    let mut upper = fleet.probe(mu_hi, Some(&free))?;
    trajectory.push(upper.summary);
    if upper.summary.command_rate > gamma {
        return Err(Error::Bisection(format!(
            "command rate {} at price {mu_hi} still exceeds the budget {gamma}",
            upper.summary.command_rate
        )));
    }
    let mut lower = free;
    while mu_hi - mu_lo > options.epsilon {
        let mu = 0.5 * (mu_lo + mu_hi);
        let probe = fleet.probe(mu, Some(&lower))?;
        trajectory.push(probe.summary);
        let rate = probe.summary.command_rate;
        if rate > lower.summary.command_rate + 1e-9 || rate < upper.summary.command_rate - 1e-9 {
            return Err(Error::Bisection(format!(
                "command rate {rate} at price {mu} is outside the bracket [{}, {}]",
                upper.summary.command_rate, lower.summary.command_rate
            )));
        }
        if rate >= gamma {
            mu_lo = mu;
            lower = probe;
        } else {
            mu_hi = mu;
            upper = probe;
        }
    }

    let (eta, fallback) = if (lower.summary.command_rate - gamma).abs() <= RATE_EQUALITY_TOL {
        (1.0, false)
    } else if (upper.summary.command_rate - gamma).abs() <= RATE_EQUALITY_TOL {
        (0.0, false)
    } else {
        fleet.find_eta(&lower, &upper, gamma)?
    };
    let (_, evals) = fleet.mixed_rate(&lower, &upper, eta)?;
    trajectory.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    Ok(assemble(&fleet, gamma, true, (mu_lo, mu_hi), eta, &lower, &upper, Some(evals), trajectory, fallback))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    fleet: &Fleet<'_>,
    gamma: f64,
    active: bool,
    (mu_lower, mu_upper): (f64, f64),
    eta: f64,
    lower: &Probe,
    upper: &Probe,
    evaluations: Option<Vec<Evaluation>>,
    trajectory: Vec<PriceProbe>,
    eta_grid_fallback: bool,
) -> RelaxedSolution {
    let evaluations = evaluations.unwrap_or_else(|| lower.evaluations.clone());
    let grouping = &fleet.grouping;
    let groups: Vec<SensorGroup> = (0..grouping.params.len())
        .map(|g| SensorGroup {
            params: grouping.params[g].clone(),
            members: grouping.members[g].clone(),
            policy: Arc::new(MixedPolicy {
                lower: lower.solutions[g].policy.clone(),
                upper: upper.solutions[g].policy.clone(),
                eta,
            }),
            lower: lower.solutions[g].clone(),
            upper: upper.solutions[g].clone(),
            evaluation: evaluations[g].clone(),
        })
        .collect();
    let k = fleet.config.num_sensors() as f64;
    let nk = k * fleet.config.num_users as f64;
    let lower_bound = groups.iter().map(|g| g.members.len() as f64 * g.evaluation.cost_rate).sum::<f64>() / nk;
    let command_rate = groups.iter().map(|g| g.members.len() as f64 * g.evaluation.command_rate).sum::<f64>() / k;
    RelaxedSolution {
        gamma,
        active,
        mu_lower,
        mu_upper,
        eta,
        groups,
        sensor_group: grouping.sensor_group.clone(),
        lower_bound,
        command_rate,
        trajectory,
        eta_grid_fallback,
    }
}

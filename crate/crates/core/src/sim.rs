//! Discrete-time Monte Carlo simulation of the sensor fleet.
//!
//! Within a slot: requests arrive, the policy decides, commanded sensors with
//! energy transmit and costs are charged, energy arrives, then battery and age
//! advance. Energy harvested in a slot is usable from the next slot on.
//!
//! Episode `e` draws from a ChaCha8 generator seeded with the master seed and
//! switched to stream `e`, so episodes are independent and replay exactly.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{effective_send, per_sensor_cost, request_pmf, step_age, NetworkConfig, PerSensorState};
use crate::runtime::{DecisionContext, Policy};

/// How episodes start.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Empty batteries and capped ages.
    Pessimistic,
    /// Explicit battery levels and ages; request counts are redrawn.
    Fixed(Vec<PerSensorState>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub horizon: u64,
    pub episodes: usize,
    pub seed: u64,
    pub initial: InitialState,
    /// Number of evenly spaced running-average samples kept per episode.
    pub trace_points: usize,
}

impl SimConfig {
    pub fn new(network: NetworkConfig, horizon: u64, episodes: usize, seed: u64) -> Self {
        Self { network, horizon, episodes, seed, initial: InitialState::Pessimistic, trace_points: 100 }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.horizon == 0 || self.episodes == 0 {
            return Err(Error::InvalidConfig("horizon and episodes must be at least 1".into()));
        }
        if let InitialState::Fixed(states) = &self.initial {
            if states.len() != self.network.num_sensors() {
                return Err(Error::InvalidConfig("initial state has the wrong number of sensors".into()));
            }
        }
        Ok(())
    }

    /// Slots at which the running-average cost is sampled.
    pub fn trace_slots(&self) -> Vec<u64> {
        let points = self.trace_points.min(self.horizon as usize) as u64;
        let mut slots: Vec<u64> = (1..=points).map(|i| (i * self.horizon).div_ceil(points)).collect();
        slots.dedup();
        slots
    }
}

/// Generator for one episode.
pub fn episode_rng(master_seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(episode);
    rng
}

/// Two-pass mean absolute deviation about the sample mean.
#[derive(Debug, Clone, Default)]
pub struct MadAccumulator {
    samples: Vec<f64>,
}

impl MadAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.samples.push(x);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(mean, MAD)`.
    pub fn finish(&self) -> Result<(f64, f64)> {
        mean_and_mad(&self.samples)
    }
}

impl Extend<f64> for MadAccumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        self.samples.extend(iter);
    }
}

pub fn mean_and_mad(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyStream);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mad = samples.iter().map(|x| (x - mean).abs()).sum::<f64>() / n;
    Ok((mean, mad))
}

/// Exact mean absolute deviation of small non-negative integer samples kept
/// as a histogram.
#[derive(Debug, Clone, Default)]
pub struct CountMad {
    counts: Vec<u64>,
    total: u64,
}

impl CountMad {
    pub fn new(max_value: usize) -> Self {
        Self { counts: vec![0; max_value + 1], total: 0 }
    }

    pub fn push(&mut self, x: usize) {
        if x >= self.counts.len() {
            self.counts.resize(x + 1, 0);
        }
        self.counts[x] += 1;
        self.total += 1;
    }

    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.total == 0 {
            return Err(Error::EmptyStream);
        }
        let n = self.total as f64;
        let mean = self.counts.iter().enumerate().map(|(x, &c)| x as f64 * c as f64).sum::<f64>() / n;
        let mad = self.counts.iter().enumerate().map(|(x, &c)| (x as f64 - mean).abs() * c as f64).sum::<f64>() / n;
        Ok((mean, mad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Average cost normalized by users and sensors.
    pub cost: f64,
    /// Average commands per sensor per slot.
    pub command_rate: f64,
    /// Mean of the pre-truncation proposal count.
    pub proposal_mean: f64,
    /// Mean absolute deviation of the proposal count.
    pub proposal_mad: f64,
    pub max_commands: usize,
    /// Running-average cost at the trace slots.
    pub trace: Vec<f64>,
}

/// Simulate one episode.
pub fn run_episode(config: &SimConfig, policy: &Policy, episode: u64) -> EpisodeMetrics {
    let net = &config.network;
    let k_sensors = net.num_sensors();
    let mut rng = episode_rng(config.seed, episode);
    let request_cdfs: Vec<Vec<f64>> = net
        .sensors
        .iter()
        .map(|s| {
            request_pmf(&s.request_probs)
                .into_iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut states: Vec<PerSensorState> = match &config.initial {
        InitialState::Pessimistic => vec![PerSensorState::new(0, 0, net.delta_max); k_sensors],
        InitialState::Fixed(s) => s.clone(),
    };
    let trace_slots = config.trace_slots();
    let mut trace = Vec::with_capacity(trace_slots.len());
    let mut next_trace = 0;
    let mut commands = Vec::with_capacity(k_sensors);
    let mut commanded = vec![false; k_sensors];
    let mut proposals = CountMad::new(k_sensors);
    let mut cost_sum = 0u64;
    let mut command_sum = 0u64;
    let mut max_commands = 0;
    let budget = policy.budget();
    let nk = (net.num_users * k_sensors) as f64;

    for slot in 1..=config.horizon {
        for (state, cdf) in states.iter_mut().zip(&request_cdfs) {
            let u: f64 = rng.random();
            state.requests = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u32;
        }
        let proposed = policy.decide(&mut DecisionContext { slot, states: &states, rng: &mut rng }, &mut commands);
        if let Some(m) = budget {
            assert!(commands.len() <= m, "slot {slot}: {} commands exceed the budget {m}", commands.len());
        }
        proposals.push(proposed);
        command_sum += commands.len() as u64;
        max_commands = max_commands.max(commands.len());
        for &k in &commands {
            commanded[k] = true;
        }
        for ((state, sensor), flag) in states.iter_mut().zip(&net.sensors).zip(commanded.iter_mut()) {
            let command = std::mem::take(flag);
            cost_sum += per_sensor_cost(*state, command, net.delta_max) as u64;
            let sent = effective_send(*state, command);
            let harvested = rng.random::<f64>() < sensor.harvest_rate;
            debug_assert!(!sent || state.battery >= 1);
            state.battery = (state.battery + harvested as u32 - sent as u32).min(sensor.battery_capacity);
            state.age = step_age(state.age, sent, net.delta_max);
        }
        if next_trace < trace_slots.len() && slot == trace_slots[next_trace] {
            trace.push(cost_sum as f64 / (nk * slot as f64));
            next_trace += 1;
        }
    }

    let (proposal_mean, proposal_mad) = proposals.finish().expect("horizon is at least one slot");
    EpisodeMetrics {
        episode,
        cost: cost_sum as f64 / (nk * config.horizon as f64),
        command_rate: command_sum as f64 / (k_sensors as f64 * config.horizon as f64),
        proposal_mean,
        proposal_mad,
        max_commands,
        trace,
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub policy: String,
    pub episodes: Vec<EpisodeMetrics>,
    pub horizon: u64,
    pub cost: f64,
    /// Standard error of the cost across episodes (zero for one episode).
    pub cost_se: f64,
    pub command_rate: f64,
    pub command_rate_se: f64,
    pub proposal_mean: f64,
    pub proposal_mad: f64,
    pub proposal_mad_se: f64,
    pub max_commands: usize,
    /// `(slot, running-average cost averaged over episodes)`.
    pub trace: Vec<(u64, f64)>,
    pub wall_time: Duration,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run all episodes (in parallel) and aggregate in episode order.
pub fn run_experiment(config: &SimConfig, policy: &Policy) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let episodes: Vec<EpisodeMetrics> =
        (0..config.episodes as u64).into_par_iter().map(|e| run_episode(config, policy, e)).collect();
    let (cost, cost_se) = mean_se(episodes.iter().map(|e| e.cost));
    let (command_rate, command_rate_se) = mean_se(episodes.iter().map(|e| e.command_rate));
    let (proposal_mean, _) = mean_se(episodes.iter().map(|e| e.proposal_mean));
    let (proposal_mad, proposal_mad_se) = mean_se(episodes.iter().map(|e| e.proposal_mad));
    let trace = config
        .trace_slots()
        .into_iter()
        .enumerate()
        .map(|(i, slot)| (slot, episodes.iter().map(|e| e.trace[i]).sum::<f64>() / episodes.len() as f64))
        .collect();
    Ok(SimReport {
        policy: policy.kind().name().to_string(),
        max_commands: episodes.iter().map(|e| e.max_commands).max().unwrap_or(0),
        episodes,
        horizon: config.horizon,
        cost,
        cost_se,
        command_rate,
        command_rate_se,
        proposal_mean,
        proposal_mad,
        proposal_mad_se,
        trace,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SensorParams;
    use crate::model::StateSpace;
    use crate::relaxed::{MixedPolicy, PolicyTable};
    use std::sync::Arc;

    #[test]
    fn mad_examples() {
        assert_eq!(mean_and_mad(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        assert_eq!(mean_and_mad(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
        assert!(matches!(MadAccumulator::new().finish(), Err(Error::EmptyStream)));
        let mut c = CountMad::new(2);
        c.push(0);
        c.push(2);
        assert_eq!(c.finish().unwrap(), (1.0, 1.0));
    }

    fn always(sensor: &SensorParams, delta_max: u32, k: usize) -> Policy {
        let p = Arc::new(MixedPolicy::pure(PolicyTable::always(StateSpace::for_sensor(sensor, delta_max))));
        Policy::Relaxed(vec![p; k].into())
    }

    #[test]
    fn always_powered_always_commanded() {
        let sensor = SensorParams::uniform(1.0, 1, 1, 1.0).unwrap();
        let net = NetworkConfig::new(1, 1, 4, vec![sensor.clone()]).unwrap();
        let mut cfg = SimConfig::new(net, 10_000, 1, 5);
        // start charged and fresh so every slot costs exactly one
        cfg.initial = InitialState::Fixed(vec![PerSensorState::new(0, 1, 1)]);
        let m = run_episode(&cfg, &always(&sensor, 4, 1), 0);
        assert_eq!(m.cost, 1.0);
        assert_eq!(m.command_rate, 1.0);
    }

    #[test]
    fn starved_sensor_sits_at_the_cap() {
        let sensor = SensorParams::uniform(0.0, 3, 1, 1.0).unwrap();
        let net = NetworkConfig::new(1, 1, 5, vec![sensor.clone()]).unwrap();
        let cfg = SimConfig::new(net, 1_000, 1, 5);
        let m = run_episode(&cfg, &always(&sensor, 5, 1), 0);
        assert_eq!(m.cost, 5.0);
    }

    #[test]
    fn identical_seeds_replay() {
        let sensor = SensorParams::uniform(0.3, 3, 2, 0.4).unwrap();
        let net = NetworkConfig::new(2, 2, 8, vec![sensor; 5]).unwrap();
        let cfg = SimConfig::new(net, 5_000, 3, 11);
        let policy = Policy::Greedy { budget: 2 };
        let a = run_experiment(&cfg, &policy).unwrap();
        let b = run_experiment(&cfg, &policy).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_ne!(a.episodes[0], a.episodes[1]);
    }

    #[test]
    fn trace_slots_end_at_horizon() {
        let sensor = SensorParams::uniform(0.3, 3, 1, 0.4).unwrap();
        let net = NetworkConfig::new(1, 1, 8, vec![sensor]).unwrap();
        let mut cfg = SimConfig::new(net, 1_000, 1, 0);
        cfg.trace_points = 7;
        let slots = cfg.trace_slots();
        assert_eq!(slots.len(), 7);
        assert_eq!(*slots.last().unwrap(), 1_000);
    }
}

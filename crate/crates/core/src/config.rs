//! Experiment specification files: flat TOML documents.
//!
//! ```toml
//! num_sensors = 40
//! num_users = 3
//! gamma = 0.025          # or: budget = 1
//! delta_max = 64
//! battery_capacity = 7
//! request_prob = 0.6     # or: request_probs = [[0.6, 0.6, 0.6]]
//! policies = ["rtt", "greedy"]
//! horizon = 100000
//! episodes = 10
//! seed = 7
//! ```
//!
//! Harvest rates default to a round-robin over `harvest_cycle`
//! (`0.01, 0.02, ..., 0.1`); `harvest_rates` lists them per sensor instead.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, SensorParams};
use crate::relaxed::RelaxedOptions;
use crate::runtime::PolicyKind;
use crate::sim::SimConfig;
use crate::RviaOptions;

pub const DEFAULT_HARVEST_CYCLE: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];

fn default_harvest_cycle() -> Vec<f64> {
    DEFAULT_HARVEST_CYCLE.to_vec()
}
fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::RelaxThenTruncate, PolicyKind::Greedy]
}
fn default_horizon() -> u64 {
    1_000_000
}
fn default_episodes() -> usize {
    50
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_theta() -> f64 {
    1e-7
}
fn default_epsilon() -> f64 {
    1e-4
}
fn default_eta_tol() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    100_000
}
fn default_self_loop() -> f64 {
    crate::rvi::DEFAULT_SELF_LOOP
}
fn default_trace_points() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub num_sensors: usize,
    pub num_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub delta_max: u32,
    pub battery_capacity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_prob: Option<f64>,
    /// One row per sensor, or a single row shared by all sensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_probs: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_harvest_cycle")]
    pub harvest_cycle: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest_rates: Option<Vec<f64>>,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_eta_tol")]
    pub eta_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_self_loop")]
    pub self_loop: f64,
    #[serde(default = "default_trace_points")]
    pub trace_points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_k: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_gamma: Vec<f64>,
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment specs always serialize")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget.is_some() == self.gamma.is_some() {
            return Err(Error::InvalidConfig("give exactly one of budget and gamma".into()));
        }
        if self.request_prob.is_some() == self.request_probs.is_some() {
            return Err(Error::InvalidConfig("give exactly one of request_prob and request_probs".into()));
        }
        if let Some(p) = self.request_prob {
            probability("request_prob", p)?;
        }
        if let Some(rows) = &self.request_probs {
            if rows.len() != 1 && rows.len() != self.num_sensors {
                return Err(Error::InvalidConfig("request_probs needs one row or one row per sensor".into()));
            }
            for row in rows {
                if row.len() != self.num_users {
                    return Err(Error::InvalidConfig("request_probs rows need one entry per user".into()));
                }
                row.iter().try_for_each(|&p| probability("request_probs", p))?;
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidConfig(format!("gamma = {g} outside (0, 1]")));
            }
        }
        match &self.harvest_rates {
            Some(rates) if rates.len() != self.num_sensors => {
                return Err(Error::InvalidConfig("harvest_rates needs one entry per sensor".into()));
            }
            Some(rates) => rates.iter().try_for_each(|&p| probability("harvest_rates", p))?,
            None if self.harvest_cycle.is_empty() => {
                return Err(Error::InvalidConfig("harvest_cycle is empty".into()));
            }
            None => self.harvest_cycle.iter().try_for_each(|&p| probability("harvest_cycle", p))?,
        }
        if self.horizon == 0 || self.episodes == 0 {
            return Err(Error::InvalidConfig("horizon and episodes must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.epsilon > 0.0 && self.eta_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.self_loop) {
            return Err(Error::InvalidConfig("self_loop must lie in [0, 1)".into()));
        }
        if self.sweep_gamma.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
            return Err(Error::InvalidConfig("sweep_gamma values must lie in (0, 1]".into()));
        }
        self.network()?;
        Ok(())
    }

    /// Integral budget for a fleet of `num_sensors` at normalized budget `gamma`.
    pub fn budget_for(num_sensors: usize, gamma: f64) -> Result<usize> {
        let m = gamma * num_sensors as f64;
        let rounded = m.round();
        if (m - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma {gamma} with {num_sensors} sensors gives a non-integral budget {m}"
            )));
        }
        Ok(rounded as usize)
    }

    fn harvest_rate(&self, k: usize) -> f64 {
        match &self.harvest_rates {
            Some(rates) => rates[k],
            None => self.harvest_cycle[k % self.harvest_cycle.len()],
        }
    }

    fn request_row(&self, k: usize) -> Vec<f64> {
        match (&self.request_probs, self.request_prob) {
            (Some(rows), _) if rows.len() == 1 => rows[0].clone(),
            (Some(rows), _) => rows[k].clone(),
            (None, Some(p)) => vec![p; self.num_users],
            (None, None) => unreachable!("validated"),
        }
    }

    fn sensors(&self, num_sensors: usize) -> Result<Vec<SensorParams>> {
        if num_sensors != self.num_sensors
            && (self.harvest_rates.is_some() || self.request_probs.as_ref().is_some_and(|r| r.len() != 1))
        {
            return Err(Error::InvalidConfig("per-sensor lists cannot be resized for a sweep over K".into()));
        }
        (0..num_sensors)
            .map(|k| SensorParams::new(self.harvest_rate(k), self.battery_capacity, self.request_row(k)))
            .collect()
    }

    /// Network described by the spec.
    pub fn network(&self) -> Result<NetworkConfig> {
        let budget = match (self.budget, self.gamma) {
            (Some(m), _) => m,
            (None, Some(g)) => Self::budget_for(self.num_sensors, g)?,
            (None, None) => return Err(Error::InvalidConfig("missing budget".into())),
        };
        NetworkConfig::new(self.num_users, budget, self.delta_max, self.sensors(self.num_sensors)?)
    }

    /// Network for one sweep point.
    pub fn network_for(&self, num_sensors: usize, gamma: f64) -> Result<NetworkConfig> {
        let budget = Self::budget_for(num_sensors, gamma)?;
        NetworkConfig::new(self.num_users, budget, self.delta_max, self.sensors(num_sensors)?)
    }

    /// Normalized budget; `budget / num_sensors` when only the budget is given.
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.budget.unwrap_or(0) as f64 / self.num_sensors as f64)
    }

    pub fn rvia_options(&self) -> RviaOptions {
        RviaOptions { theta: self.theta, max_iterations: self.max_iterations, self_loop: self.self_loop }
    }

    pub fn relaxed_options(&self) -> RelaxedOptions {
        RelaxedOptions {
            theta: self.theta,
            epsilon: self.epsilon,
            eta_tol: self.eta_tol,
            max_iterations: self.max_iterations,
            self_loop: self.self_loop,
        }
    }

    pub fn sim_config(&self, network: NetworkConfig) -> SimConfig {
        let mut sim = SimConfig::new(network, self.horizon, self.episodes, self.seed);
        sim.trace_points = self.trace_points;
        sim
    }
}

//! Browser bindings: command regions of a single sensor type, and a
//! relax-then-truncate versus greedy run on a small fleet.

use aoi_core::analysis::command_region_map;
use aoi_core::config::DEFAULT_HARVEST_CYCLE;
use aoi_core::model::{NetworkConfig, SensorParams};
use aoi_core::relaxed::{solve_relaxed_with_gamma, RelaxedOptions};
use aoi_core::runtime::Policy;
use aoi_core::sim::{run_episode, SimConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Region {
    requests: u32,
    /// `[battery][age - 1]`, 1 = command.
    lower: Vec<Vec<u8>>,
    upper: Vec<Vec<u8>>,
}

#[derive(Serialize)]
struct Regions {
    lower_bound: f64,
    active: bool,
    mu: f64,
    eta: f64,
    command_rate: f64,
    regions: Vec<Region>,
}

fn grid(map: &aoi_core::analysis::RegionMap) -> Vec<Vec<u8>> {
    map.grid.iter().map(|row| row.iter().map(|&a| a as u8).collect()).collect()
}

/// Relaxed policy of one sensor held to an average command rate `gamma`.
pub fn regions_json(
    harvest_rate: f64,
    battery_capacity: u32,
    num_users: usize,
    request_prob: f64,
    delta_max: u32,
    gamma: f64,
) -> aoi_core::Result<String> {
    let sensor = SensorParams::uniform(harvest_rate, battery_capacity, num_users, request_prob)?;
    let network = NetworkConfig::new(num_users, 1, delta_max, vec![sensor])?;
    let sol = solve_relaxed_with_gamma(&network, gamma, RelaxedOptions::default())?;
    let policy = sol.policy(0);
    let regions = (0..=num_users as u32)
        .map(|r| Region {
            requests: r,
            lower: grid(&command_region_map(&policy.lower, r)),
            upper: grid(&command_region_map(&policy.upper, r)),
        })
        .collect();
    let out = Regions {
        lower_bound: sol.lower_bound,
        active: sol.active,
        mu: sol.mu_star(),
        eta: sol.eta,
        command_rate: sol.command_rate,
        regions,
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

#[derive(Serialize)]
struct Run {
    cost: f64,
    command_rate: f64,
    proposal_mad: f64,
    /// `[slot, running-average cost]`.
    trace: Vec<(u64, f64)>,
}

#[derive(Serialize)]
struct Comparison {
    lower_bound: f64,
    gamma: f64,
    rtt: Run,
    greedy: Run,
}

/// One episode of each policy on a fleet with round-robin harvest rates.
#[allow(clippy::too_many_arguments)]
pub fn compare_json(
    num_sensors: usize,
    budget: usize,
    num_users: usize,
    request_prob: f64,
    battery_capacity: u32,
    delta_max: u32,
    slots: u64,
    seed: u64,
) -> aoi_core::Result<String> {
    let sensors = (0..num_sensors)
        .map(|k| {
            let rate = DEFAULT_HARVEST_CYCLE[k % DEFAULT_HARVEST_CYCLE.len()];
            SensorParams::uniform(rate, battery_capacity, num_users, request_prob)
        })
        .collect::<aoi_core::Result<Vec<_>>>()?;
    let network = NetworkConfig::new(num_users, budget, delta_max, sensors)?;
    let sol = solve_relaxed_with_gamma(&network, network.gamma(), RelaxedOptions::default())?;
    let mut sim = SimConfig::new(network, slots, 1, seed);
    sim.trace_points = 200;
    sim.validate()?;
    let slots = sim.trace_slots();
    let run = |policy: Policy| {
        let m = run_episode(&sim, &policy, 0);
        Run {
            cost: m.cost,
            command_rate: m.command_rate,
            proposal_mad: m.proposal_mad,
            trace: slots.iter().copied().zip(m.trace).collect(),
        }
    };
    let out = Comparison {
        lower_bound: sol.lower_bound,
        gamma: sol.gamma,
        rtt: run(Policy::relax_then_truncate(&sol, budget)),
        greedy: run(Policy::Greedy { budget }),
    };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

fn js(e: aoi_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = commandRegions)]
pub fn command_regions(
    harvest_rate: f64,
    battery_capacity: u32,
    num_users: usize,
    request_prob: f64,
    delta_max: u32,
    gamma: f64,
) -> Result<String, JsError> {
    regions_json(harvest_rate, battery_capacity, num_users, request_prob, delta_max, gamma).map_err(js)
}

#[wasm_bindgen(js_name = comparePolicies)]
#[allow(clippy::too_many_arguments)]
pub fn compare_policies(
    num_sensors: usize,
    budget: usize,
    num_users: usize,
    request_prob: f64,
    battery_capacity: u32,
    delta_max: u32,
    slots: u32,
    seed: u32,
) -> Result<String, JsError> {
    compare_json(num_sensors, budget, num_users, request_prob, battery_capacity, delta_max, slots as u64, seed as u64)
        .map_err(js)
}

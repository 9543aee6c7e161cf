//! Optimal joint policy for small fleets by relative value iteration over
//! the full product state space with the per-slot budget enforced.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{JointAction, JointSpace, NetworkConfig, PerSensorState};
use crate::rvi::{ProductMdp, RviaOptions, RviaResult};

/// Largest joint state space the exact solver accepts.
pub const MAX_JOINT_STATES: u128 = 2_000_000;
/// Largest fleet for which budget actions are enumerated.
pub const MAX_ENUMERATED_SENSORS: usize = 20;

/// All command tuples with at most `budget` ones, lexicographic in
/// `(a_1, ..., a_K)`.
pub fn enumerate_budget_actions(num_sensors: usize, budget: usize) -> Result<Vec<JointAction>> {
    if num_sensors > MAX_ENUMERATED_SENSORS {
        return Err(Error::TooManySensors { sensors: num_sensors, cap: MAX_ENUMERATED_SENSORS });
    }
    if budget == 0 || budget > num_sensors {
        return Err(Error::InvalidConfig(format!("budget {budget} outside 1..={num_sensors}")));
    }
    Ok((0u32..1 << num_sensors)
        .filter(|n| n.count_ones() as usize <= budget)
        .map(|n| JointAction((0..num_sensors).map(|k| (n >> (num_sensors - 1 - k)) & 1 == 1).collect()))
        .collect())
}

/// Tie-break order: fewest commands first, then the lowest commanded indices.
fn tie_break_order(mut actions: Vec<JointAction>) -> Vec<JointAction> {
    actions.sort_by_cached_key(|a| (a.commands(), a.commanded().collect::<Vec<_>>()));
    actions
}

/// Deterministic joint policy: one budget-feasible action per joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    space: JointSpace,
    budget: usize,
    actions: Vec<JointAction>,
    /// Per joint state, an index into `actions`.
    table: Vec<u32>,
}

impl JointPolicy {
    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn space(&self) -> &JointSpace {
        &self.space
    }

    pub fn action_at(&self, index: usize) -> &JointAction {
        &self.actions[self.table[index] as usize]
    }

    pub fn action(&self, states: &[PerSensorState]) -> &JointAction {
        self.action_at(self.space.index(states))
    }

    /// `state_index,bits` rows behind a versioned header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# aoi-joint-policy v1")?;
        writeln!(out, "# sensors={} budget={}", self.space.spaces().len(), self.budget)?;
        writeln!(out, "state,action")?;
        for i in 0..self.table.len() {
            writeln!(out, "{},{}", i, self.action_at(i).bits())?;
        }
        Ok(())
    }

    /// Reads a table written by [`JointPolicy::write_csv`] for `config`.
    pub fn read_csv<R: BufRead>(config: &NetworkConfig, input: R) -> Result<Self> {
        let space = JointSpace::new(config);
        let n = space.len_u128() as usize;
        let mut actions = tie_break_order(enumerate_budget_actions(config.num_sensors(), config.budget)?);
        let mut table = vec![u32::MAX; n];
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "# aoi-joint-policy v1" {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "state,action" {
                continue;
            }
            let (idx, bits) = line.split_once(',').ok_or_else(|| Error::Parse(format!("bad row {line:?}")))?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse(format!("bad state index {idx:?}")))?;
            let action = JointAction::from_bits(bits)?;
            if idx >= n || action.0.len() != config.num_sensors() || action.commands() > config.budget {
                return Err(Error::Parse(format!("row {line:?} does not fit the configuration")));
            }
            let pos = match actions.iter().position(|a| *a == action) {
                Some(p) => p,
                None => {
                    actions.push(action);
                    actions.len() - 1
                }
            };
            table[idx] = pos as u32;
        }
        if table.contains(&u32::MAX) {
            return Err(Error::Parse("policy file does not cover every joint state".into()));
        }
        Ok(Self { space, budget: config.budget, actions, table })
    }
}

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub policy: JointPolicy,
    pub rvia: RviaResult,
    /// Bellman residual of the returned relative values.
    pub residual: f64,
}

impl ExactSolution {
    pub fn average_cost(&self) -> f64 {
        self.rvia.average_cost
    }
}

fn build_mdp(config: &NetworkConfig) -> Result<ProductMdp> {
    config.validate()?;
    let states = JointSpace::new(config).len_u128();
    if states > MAX_JOINT_STATES {
        return Err(Error::StateSpaceTooLarge { states, cap: MAX_JOINT_STATES });
    }
    let actions = tie_break_order(enumerate_budget_actions(config.num_sensors(), config.budget)?);
    let scale = 1.0 / (config.num_users * config.num_sensors()) as f64;
    Ok(ProductMdp::new(&config.sensors, config.delta_max, actions, scale, 0.0))
}

/// Optimal budget-constrained joint policy and its average cost.
pub fn solve_exact(config: &NetworkConfig, options: RviaOptions) -> Result<ExactSolution> {
    solve_exact_from(config, options, None)
}

/// As [`solve_exact`], starting value iteration from `initial` values.
pub fn solve_exact_from(
    config: &NetworkConfig,
    options: RviaOptions,
    initial: Option<&[f64]>,
) -> Result<ExactSolution> {
    let mdp = build_mdp(config)?;
    let rvia = mdp.solve(options, initial)?;
    let table = mdp.greedy_policy(&rvia).into_iter().map(|i| i as u32).collect();
    let residual = mdp.bellman_residual(&rvia);
    let policy =
        JointPolicy { space: JointSpace::new(config), budget: config.budget, actions: mdp.actions().to_vec(), table };
    debug_assert_eq!(policy.num_states(), mdp.num_states());
    Ok(ExactSolution { policy, rvia, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SensorParams;

    #[test]
    fn budget_action_counts() {
        let a = enumerate_budget_actions(2, 1).unwrap();
        let bits: Vec<_> = a.iter().map(JointAction::bits).collect();
        assert_eq!(bits, ["00", "01", "10"]);
        assert_eq!(enumerate_budget_actions(3, 2).unwrap().len(), 7);
        assert_eq!(enumerate_budget_actions(2, 2).unwrap().len(), 4);
        assert!(matches!(enumerate_budget_actions(21, 1), Err(Error::TooManySensors { .. })));
    }

    #[test]
    fn tie_break_prefers_idle_then_low_index() {
        let order = tie_break_order(enumerate_budget_actions(3, 2).unwrap());
        let bits: Vec<_> = order.iter().map(JointAction::bits).collect();
        assert_eq!(bits, ["000", "100", "010", "001", "110", "101", "011"]);
    }

    #[test]
    fn always_powered_single_sensor() {
        let sensor = SensorParams::uniform(1.0, 1, 1, 1.0).unwrap();
        let config = NetworkConfig::new(1, 1, 4, vec![sensor]).unwrap();
        let sol = solve_exact(&config, RviaOptions::default()).unwrap();
        assert!((sol.average_cost() - 1.0).abs() < 1e-6);
        // with energy and a request, command
        assert!(sol.policy.action(&[PerSensorState::new(1, 1, 3)]).0[0]);
    }

    #[test]
    fn refuses_large_instances() {
        let sensor = SensorParams::uniform(0.1, 7, 3, 0.6).unwrap();
        let config = NetworkConfig::new(3, 1, 64, vec![sensor; 3]).unwrap();
        assert!(matches!(solve_exact(&config, RviaOptions::default()), Err(Error::StateSpaceTooLarge { .. })));
    }

    #[test]
    fn policy_csv_round_trip() {
        let sensor = SensorParams::uniform(0.5, 1, 1, 0.5).unwrap();
        let config = NetworkConfig::new(1, 1, 2, vec![sensor; 2]).unwrap();
        let sol = solve_exact(&config, RviaOptions::default()).unwrap();
        let mut buf = Vec::new();
        sol.policy.write_csv(&mut buf).unwrap();
        let back = JointPolicy::read_csv(&config, &buf[..]).unwrap();
        for i in 0..back.num_states() {
            assert_eq!(back.action_at(i), sol.policy.action_at(i));
        }
    }
}

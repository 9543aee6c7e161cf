//! Relative value iteration over a product of sensor chains.
//!
//! Shared by the joint (budget-constrained) solver and the per-sensor
//! Lagrangian solver. Requests are drawn fresh every slot, so the expectation
//! of the relative values over the next request counts is contracted once per
//! sweep into a table over `(battery, age)` afterstates; each Bellman backup
//! then only touches the at most two battery successors per sensor.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    battery_successors, effective_send, per_sensor_cost, step_age, JointAction, SensorParams, StateSpace,
};

const PARALLEL_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, Copy)]
pub struct RviaOptions {
    /// Span tolerance.
    pub theta: f64,
    pub max_iterations: usize,
    /// Weight `alpha` of an added self-loop: iterates with
    /// `alpha I + (1 - alpha) P`, which has the same average cost and
    /// optimal actions but cannot oscillate on periodic chains. The relative
    /// values come out scaled by `1 / (1 - alpha)`.
    pub self_loop: f64,
}

pub const DEFAULT_SELF_LOOP: f64 = 0.05;

impl Default for RviaOptions {
    fn default() -> Self {
        Self { theta: 1e-7, max_iterations: 100_000, self_loop: DEFAULT_SELF_LOOP }
    }
}

/// Output of relative value iteration.
#[derive(Debug, Clone)]
pub struct RviaResult {
    pub values: Vec<f64>,
    pub relative: Vec<f64>,
    /// `V(s_ref)`, the optimal average cost.
    pub average_cost: f64,
    pub iterations: usize,
    pub span: f64,
    pub self_loop: f64,
}

/// Per-sensor, per-action one-step data: cost and afterstate successors.
#[derive(Debug, Clone, Copy)]
struct Step {
    cost: u32,
    afterstates: [(u32, f64); 2],
    len: u8,
}

#[derive(Debug, Clone)]
struct SensorDyn {
    space: StateSpace,
    pmf: Vec<f64>,
    /// Indexed by `2 * state + action`.
    steps: Vec<Step>,
}

impl SensorDyn {
    fn new(sensor: &SensorParams, delta_max: u32) -> Self {
        let space = StateSpace::for_sensor(sensor, delta_max);
        let pmf = crate::model::request_pmf(&sensor.request_probs);
        let mut steps = Vec::with_capacity(2 * space.len());
        for state in space.states() {
            for command in [false, true] {
                let sent = effective_send(state, command);
                let age = step_age(state.age, sent, delta_max);
                let (bats, nb) = battery_successors(state.battery, sent, sensor.harvest_rate, sensor.battery_capacity);
                let mut afterstates = [(0u32, 0.0); 2];
                for (slot, &(b, p)) in afterstates.iter_mut().zip(&bats[..nb]) {
                    *slot = (space.reduced_index(b, age) as u32, p);
                }
                steps.push(Step { cost: per_sensor_cost(state, command, delta_max), afterstates, len: nb as u8 });
            }
        }
        Self { space, pmf, steps }
    }
}

/// An average-cost MDP whose state is a tuple of sensor states and whose
/// per-slot cost is `scale * sum_k c_k + price * (number of commands)`.
#[derive(Debug, Clone)]
pub(crate) struct ProductMdp {
    sensors: Vec<SensorDyn>,
    /// Candidate actions, in tie-break preference order.
    actions: Vec<JointAction>,
    cost_scale: f64,
    command_price: f64,
    num_states: usize,
    /// Afterstate-table stride of each sensor.
    strides: Vec<usize>,
}

impl ProductMdp {
    pub(crate) fn new(
        sensors: &[SensorParams],
        delta_max: u32,
        actions: Vec<JointAction>,
        cost_scale: f64,
        command_price: f64,
    ) -> Self {
        let sensors: Vec<SensorDyn> = sensors.iter().map(|s| SensorDyn::new(s, delta_max)).collect();
        let num_states = sensors.iter().map(|s| s.space.len()).product();
        let strides =
            (0..sensors.len()).map(|k| sensors[k + 1..].iter().map(|s| s.space.reduced_len()).product()).collect();
        Self { sensors, actions, cost_scale, command_price, num_states, strides }
    }

    pub(crate) fn num_states(&self) -> usize {
        self.num_states
    }

    pub(crate) fn actions(&self) -> &[JointAction] {
        &self.actions
    }

    fn reference_index(&self) -> usize {
        self.sensors.iter().fold(0, |acc, s| acc * s.space.len() + s.space.reference_index())
    }

    /// Expectation over next request counts, sensor by sensor.
    fn contract(&self, relative: &[f64]) -> Vec<f64> {
        let mut current = relative.to_vec();
        let mut dims: Vec<usize> = self.sensors.iter().map(|s| s.space.len()).collect();
        for (k, sensor) in self.sensors.iter().enumerate() {
            let outer: usize = dims[..k].iter().product();
            let inner: usize = dims[k + 1..].iter().product();
            let reduced = sensor.space.reduced_len();
            let mut next = vec![0.0; outer * reduced * inner];
            for o in 0..outer {
                for (r, &pr) in sensor.pmf.iter().enumerate() {
                    if pr == 0.0 {
                        continue;
                    }
                    let src = &current[(o * dims[k] + r * reduced) * inner..][..reduced * inner];
                    let dst = &mut next[o * reduced * inner..][..reduced * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += pr * s;
                    }
                }
            }
            dims[k] = reduced;
            current = next;
        }
        current
    }

    fn local_indices(&self, mut index: usize, out: &mut [usize]) {
        for (k, sensor) in self.sensors.iter().enumerate().rev() {
            out[k] = index % sensor.space.len();
            index /= sensor.space.len();
        }
    }

    /// Q-value of one joint action given the contracted afterstate table.
    fn q_value(&self, local: &[usize], action: &JointAction, after: &[f64], keep: f64) -> f64 {
        let mut cost = 0u64;
        let mut commands = 0usize;
        let mut steps = [Step { cost: 0, afterstates: [(0, 0.0); 2], len: 0 }; 16];
        let steps = &mut steps[..self.sensors.len()];
        for (k, sensor) in self.sensors.iter().enumerate() {
            let a = action.0[k];
            let step = sensor.steps[2 * local[k] + a as usize];
            cost += step.cost as u64;
            commands += a as usize;
            steps[k] = step;
        }
        let immediate = self.cost_scale * cost as f64 + self.command_price * commands as f64;
        // enumerate battery outcome combinations
        let mut expected = 0.0;
        let combos: usize = steps.iter().map(|s| s.len as usize).product();
        for mut c in 0..combos {
            let mut prob = 1.0;
            let mut idx = 0usize;
            for (k, step) in steps.iter().enumerate().rev() {
                let n = step.len as usize;
                let (x, p) = step.afterstates[c % n];
                c /= n;
                prob *= p;
                idx += x as usize * self.strides[k];
            }
            expected += prob * after[idx];
        }
        immediate + keep * expected
    }

    /// Minimum Q-value and the index of the first action attaining it.
    fn backup(&self, state: usize, after: &[f64], keep: f64) -> (f64, usize) {
        let mut local = [0usize; 16];
        let local = &mut local[..self.sensors.len()];
        self.local_indices(state, local);
        let mut best = (f64::INFINITY, 0);
        for (i, action) in self.actions.iter().enumerate() {
            let q = self.q_value(local, action, after, keep);
            if q < best.0 {
                best = (q, i);
            }
        }
        best
    }

    /// Backup specialised to a single sensor; same arithmetic as `backup`.
    fn backup_single(&self, state: usize, after: &[f64], keep: f64) -> (f64, usize) {
        let sensor = &self.sensors[0];
        let mut best = (f64::INFINITY, 0);
        for (i, action) in self.actions.iter().enumerate() {
            let a = action.0[0];
            let step = &sensor.steps[2 * state + a as usize];
            let immediate = self.cost_scale * step.cost as f64 + self.command_price * a as u8 as f64;
            let mut expected = 0.0;
            for &(x, p) in &step.afterstates[..step.len as usize] {
                expected += p * after[x as usize];
            }
            let q = immediate + keep * expected;
            if q < best.0 {
                best = (q, i);
            }
        }
        best
    }

    /// One Bellman update of every state: `min_a [c + (1 - alpha) E h] + alpha h`.
    fn sweep(&self, relative: &[f64], self_loop: f64) -> Vec<f64> {
        let (best, _) = self.backups(relative, self_loop);
        if self_loop == 0.0 {
            return best;
        }
        best.iter().zip(relative).map(|(b, h)| b + self_loop * h).collect()
    }

    /// Minimum Q-values and the first minimizing action of every state.
    fn backups(&self, relative: &[f64], self_loop: f64) -> (Vec<f64>, Vec<usize>) {
        let after = self.contract(relative);
        let keep = 1.0 - self_loop;
        if self.sensors.len() == 1 {
            return (0..self.num_states).map(|s| self.backup_single(s, &after, keep)).unzip();
        }
        if self.num_states >= PARALLEL_THRESHOLD {
            (0..self.num_states).into_par_iter().map(|s| self.backup(s, &after, keep)).unzip()
        } else {
            (0..self.num_states).map(|s| self.backup(s, &after, keep)).unzip()
        }
    }

    /// Iterate until the span of successive value differences drops below theta.
    pub(crate) fn solve(&self, options: RviaOptions, initial: Option<&[f64]>) -> Result<RviaResult> {
        assert!(self.sensors.len() <= 16, "product MDP supports at most 16 sensors");
        assert!((0.0..1.0).contains(&options.self_loop), "self-loop weight must lie in [0, 1)");
        let reference = self.reference_index();
        let mut values = match initial {
            Some(v) => {
                assert_eq!(v.len(), self.num_states);
                v.to_vec()
            }
            None => vec![0.0; self.num_states],
        };
        let mut relative: Vec<f64> = values.iter().map(|v| v - values[reference]).collect();
        let mut span = f64::INFINITY;
        for iteration in 1..=options.max_iterations {
            let next = self.sweep(&relative, options.self_loop);
            let (lo, hi) = next
                .iter()
                .zip(&values)
                .map(|(n, v)| n - v)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
            span = hi - lo;
            values = next;
            let offset = values[reference];
            relative.iter_mut().zip(&values).for_each(|(h, v)| *h = v - offset);
            if span < options.theta {
                return Ok(RviaResult {
                    average_cost: values[reference],
                    values,
                    relative,
                    iterations: iteration,
                    span,
                    self_loop: options.self_loop,
                });
            }
        }
        Err(Error::NotConverged { iterations: options.max_iterations, span })
    }

    /// Greedy action index per state with respect to converged values.
    pub(crate) fn greedy_policy(&self, result: &RviaResult) -> Vec<usize> {
        self.backups(&result.relative, result.self_loop).1
    }

    /// `max_s |T h(s) - h(s) - gain|` for the operator that was iterated.
    pub(crate) fn bellman_residual(&self, result: &RviaResult) -> f64 {
        self.sweep(&result.relative, result.self_loop)
            .iter()
            .zip(&result.relative)
            .map(|(t, h)| (t - h - result.average_cost).abs())
            .fold(0.0, f64::max)
    }
}

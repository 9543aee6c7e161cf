//! Problem instance, per-sensor dynamics and cost.
//!
//! Per-sensor states are `(requests, battery, age)` triples indexed row-major
//! with the age varying fastest. Everything here is immutable once built and
//! can be shared freely between worker threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one energy-harvesting sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Probability of harvesting one energy unit per slot.
    pub harvest_rate: f64,
    pub battery_capacity: u32,
    /// Per-user request probabilities.
    pub request_probs: Vec<f64>,
}

impl SensorParams {
    pub fn new(harvest_rate: f64, battery_capacity: u32, request_probs: Vec<f64>) -> Result<Self> {
        let params = Self { harvest_rate, battery_capacity, request_probs };
        params.validate()?;
        Ok(params)
    }

    /// Same request probability for each of `num_users` users.
    pub fn uniform(harvest_rate: f64, battery_capacity: u32, num_users: usize, request_prob: f64) -> Result<Self> {
        Self::new(harvest_rate, battery_capacity, vec![request_prob; num_users])
    }

    pub fn num_users(&self) -> usize {
        self.request_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !is_probability(self.harvest_rate) {
            return Err(Error::InvalidConfig(format!("harvest rate {} not in [0, 1]", self.harvest_rate)));
        }
        if self.battery_capacity == 0 {
            return Err(Error::InvalidConfig("battery capacity must be at least 1".into()));
        }
        if self.request_probs.is_empty() {
            return Err(Error::InvalidConfig("at least one user is required".into()));
        }
        if let Some(p) = self.request_probs.iter().find(|p| !is_probability(**p)) {
            return Err(Error::InvalidConfig(format!("request probability {p} not in [0, 1]")));
        }
        Ok(())
    }

    /// Key used to group sensors with bit-identical parameters.
    pub(crate) fn key(&self) -> (u64, u32, Vec<u64>) {
        (self.harvest_rate.to_bits(), self.battery_capacity, self.request_probs.iter().map(|p| p.to_bits()).collect())
    }
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_users: usize,
    /// Maximum number of sensors commanded per slot.
    pub budget: usize,
    /// Cap on the age of information.
    pub delta_max: u32,
    pub sensors: Vec<SensorParams>,
}

impl NetworkConfig {
    pub fn new(num_users: usize, budget: usize, delta_max: u32, sensors: Vec<SensorParams>) -> Result<Self> {
        let config = Self { num_users, budget, delta_max, sensors };
        config.validate()?;
        Ok(config)
    }

    /// `num_sensors` copies of the same sensor.
    pub fn homogeneous(num_sensors: usize, budget: usize, delta_max: u32, sensor: SensorParams) -> Result<Self> {
        Self::new(sensor.num_users(), budget, delta_max, vec![sensor; num_sensors])
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Normalized transmission budget `M / K`.
    pub fn gamma(&self) -> f64 {
        self.budget as f64 / self.num_sensors() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::InvalidConfig("num_users must be positive".into()));
        }
        if self.sensors.is_empty() {
            return Err(Error::InvalidConfig("at least one sensor is required".into()));
        }
        if self.budget == 0 || self.budget > self.sensors.len() {
            return Err(Error::InvalidConfig(format!(
                "budget M = {} must satisfy 1 <= M <= K = {}",
                self.budget,
                self.sensors.len()
            )));
        }
        if self.delta_max < 2 {
            return Err(Error::InvalidConfig("delta_max must be at least 2".into()));
        }
        for (k, sensor) in self.sensors.iter().enumerate() {
            sensor.validate().map_err(|e| Error::InvalidConfig(format!("sensor {k}: {e}")))?;
            if sensor.num_users() != self.num_users {
                return Err(Error::InvalidConfig(format!(
                    "sensor {k} has {} request probabilities, expected {}",
                    sensor.num_users(),
                    self.num_users
                )));
            }
        }
        Ok(())
    }

    /// Largest per-slot normalized cost: every request sees the capped age.
    pub fn max_cost(&self) -> f64 {
        self.delta_max as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerSensorState {
    pub requests: u32,
    pub battery: u32,
    pub age: u32,
}

impl PerSensorState {
    pub fn new(requests: u32, battery: u32, age: u32) -> Self {
        Self { requests, battery, age }
    }
}

/// Indexing of one sensor's state space `{0..N} x {0..B} x {1..Δmax}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub num_users: u32,
    pub battery_capacity: u32,
    pub delta_max: u32,
}

impl StateSpace {
    pub fn new(num_users: usize, battery_capacity: u32, delta_max: u32) -> Self {
        Self { num_users: num_users as u32, battery_capacity, delta_max }
    }

    pub fn for_sensor(sensor: &SensorParams, delta_max: u32) -> Self {
        Self::new(sensor.num_users(), sensor.battery_capacity, delta_max)
    }

    pub fn len(&self) -> usize {
        (self.num_users as usize + 1) * self.battery_levels() * self.delta_max as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn battery_levels(&self) -> usize {
        self.battery_capacity as usize + 1
    }

    /// Number of `(battery, age)` pairs.
    pub fn reduced_len(&self) -> usize {
        self.battery_levels() * self.delta_max as usize
    }

    pub fn contains(&self, state: PerSensorState) -> bool {
        state.requests <= self.num_users
            && state.battery <= self.battery_capacity
            && (1..=self.delta_max).contains(&state.age)
    }

    pub fn index(&self, state: PerSensorState) -> usize {
        debug_assert!(self.contains(state), "{state:?} outside {self:?}");
        state.requests as usize * self.reduced_len() + self.reduced_index(state.battery, state.age)
    }

    /// Index of `(battery, age)` within one request level.
    pub fn reduced_index(&self, battery: u32, age: u32) -> usize {
        battery as usize * self.delta_max as usize + (age - 1) as usize
    }

    pub fn state(&self, index: usize) -> PerSensorState {
        let dm = self.delta_max as usize;
        let reduced = self.reduced_len();
        let requests = index / reduced;
        let rest = index % reduced;
        PerSensorState::new(requests as u32, (rest / dm) as u32, (rest % dm) as u32 + 1)
    }

    pub fn states(&self) -> impl Iterator<Item = PerSensorState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// `(r = 0, b = 0, age = 1)`.
    pub fn reference_index(&self) -> usize {
        self.index(PerSensorState::new(0, 0, 1))
    }
}

/// `d = a * 1{b >= 1}`.
pub fn effective_send(state: PerSensorState, command: bool) -> bool {
    command && state.battery >= 1
}

/// `min(b + e - d, B)`; sending from an empty battery is rejected.
pub fn step_battery(battery: u32, sent: bool, harvested: bool, capacity: u32) -> Result<u32> {
    if sent && battery == 0 {
        return Err(Error::EnergyCausality);
    }
    Ok((battery + harvested as u32 - sent as u32).min(capacity))
}

pub fn step_age(age: u32, sent: bool, delta_max: u32) -> u32 {
    if sent {
        1
    } else {
        (age + 1).min(delta_max)
    }
}

/// Number of requests times the age the users see at the end of the slot.
pub fn per_sensor_cost(state: PerSensorState, command: bool, delta_max: u32) -> u32 {
    let sent = effective_send(state, command);
    state.requests * step_age(state.age, sent, delta_max)
}

/// Distribution of the number of requests, a sum of independent Bernoulli
/// variables, by repeated convolution.
pub fn request_pmf(request_probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; request_probs.len() + 1];
    pmf[0] = 1.0;
    for (n, &p) in request_probs.iter().enumerate() {
        for m in (1..=n + 1).rev() {
            pmf[m] = pmf[m] * (1.0 - p) + pmf[m - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

/// Battery successors `(b', prob)` with nonzero probability.
pub fn battery_successors(battery: u32, sent: bool, harvest_rate: f64, capacity: u32) -> ([(u32, f64); 2], usize) {
    let mut out = [(0, 0.0); 2];
    let mut len = 0;
    for (harvested, prob) in [(true, harvest_rate), (false, 1.0 - harvest_rate)] {
        if prob <= 0.0 {
            continue;
        }
        // sent implies battery >= 1 for every caller in this crate
        let next = (battery + harvested as u32 - sent as u32).min(capacity);
        if let Some(slot) = out[..len].iter_mut().find(|(b, _)| *b == next) {
            slot.1 += prob;
        } else {
            out[len] = (next, prob);
            len += 1;
        }
    }
    (out, len)
}

/// One sensor's transition kernel with rows cached per `(state, action)`.
#[derive(Debug, Clone)]
pub struct SensorKernel {
    space: StateSpace,
    harvest_rate: f64,
    pmf: Vec<f64>,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl SensorKernel {
    pub fn new(sensor: &SensorParams, delta_max: u32) -> Self {
        let space = StateSpace::for_sensor(sensor, delta_max);
        let pmf = request_pmf(&sensor.request_probs);
        let mut offsets = Vec::with_capacity(2 * space.len() + 1);
        let mut entries = Vec::with_capacity(2 * space.len() * 2 * pmf.len());
        offsets.push(0);
        for state in space.states() {
            for command in [false, true] {
                let sent = effective_send(state, command);
                let age = step_age(state.age, sent, delta_max);
                let (batteries, nb) =
                    battery_successors(state.battery, sent, sensor.harvest_rate, sensor.battery_capacity);
                for (requests, &pr) in pmf.iter().enumerate() {
                    if pr <= 0.0 {
                        continue;
                    }
                    for &(battery, pb) in &batteries[..nb] {
                        let next = PerSensorState::new(requests as u32, battery, age);
                        entries.push((space.index(next) as u32, pr * pb));
                    }
                }
                offsets.push(entries.len());
            }
        }
        Self { space, harvest_rate: sensor.harvest_rate, pmf, offsets, entries }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn request_pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn harvest_rate(&self) -> f64 {
        self.harvest_rate
    }

    /// Successor `(state index, probability)` pairs.
    pub fn row(&self, state: usize, command: bool) -> &[(u32, f64)] {
        let slot = 2 * state + command as usize;
        &self.entries[self.offsets[slot]..self.offsets[slot + 1]]
    }

    pub fn cost(&self, state: usize, command: bool) -> u32 {
        per_sensor_cost(self.space.state(state), command, self.space.delta_max)
    }
}

/// Sparse successor distribution of one sensor.
pub fn per_sensor_kernel(
    sensor: &SensorParams,
    delta_max: u32,
    state: PerSensorState,
    command: bool,
) -> Vec<(PerSensorState, f64)> {
    let space = StateSpace::for_sensor(sensor, delta_max);
    let sent = effective_send(state, command);
    let age = step_age(state.age, sent, delta_max);
    let (batteries, nb) = battery_successors(state.battery, sent, sensor.harvest_rate, sensor.battery_capacity);
    let mut out = Vec::new();
    for (requests, pr) in request_pmf(&sensor.request_probs).into_iter().enumerate() {
        if pr <= 0.0 {
            continue;
        }
        for &(battery, pb) in &batteries[..nb] {
            out.push((PerSensorState::new(requests as u32, battery, age), pr * pb));
        }
    }
    debug_assert!(out.iter().all(|(s, _)| space.contains(*s)));
    out
}

/// A command bit per sensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction(pub Vec<bool>);

impl JointAction {
    pub fn commands(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    /// Indices of commanded sensors.
    pub fn commanded(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k)
    }

    pub fn bits(&self) -> String {
        self.0.iter().map(|&a| if a { '1' } else { '0' }).collect()
    }

    pub fn from_bits(bits: &str) -> Result<Self> {
        bits.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid action bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(JointAction)
    }
}

/// Mixed-radix indexing of the product of per-sensor spaces; the last sensor
/// varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    spaces: Vec<StateSpace>,
}

impl JointSpace {
    pub fn new(config: &NetworkConfig) -> Self {
        Self { spaces: config.sensors.iter().map(|s| StateSpace::for_sensor(s, config.delta_max)).collect() }
    }

    pub fn spaces(&self) -> &[StateSpace] {
        &self.spaces
    }

    /// Size as a wide integer so overflow can be detected before allocating.
    pub fn len_u128(&self) -> u128 {
        self.spaces.iter().map(|s| s.len() as u128).product()
    }

    pub fn index(&self, states: &[PerSensorState]) -> usize {
        debug_assert_eq!(states.len(), self.spaces.len());
        self.spaces.iter().zip(states).fold(0, |acc, (space, &state)| acc * space.len() + space.index(state))
    }

    pub fn state(&self, mut index: usize) -> Vec<PerSensorState> {
        let mut states = vec![PerSensorState::new(0, 0, 1); self.spaces.len()];
        for (k, space) in self.spaces.iter().enumerate().rev() {
            states[k] = space.state(index % space.len());
            index /= space.len();
        }
        states
    }

    pub fn reference_index(&self) -> usize {
        let states: Vec<_> = self.spaces.iter().map(|_| PerSensorState::new(0, 0, 1)).collect();
        self.index(&states)
    }
}

/// Joint transition as the product of the per-sensor kernels.
pub fn joint_kernel(
    config: &NetworkConfig,
    states: &[PerSensorState],
    action: &JointAction,
) -> Vec<(Vec<PerSensorState>, f64)> {
    let mut out: Vec<(Vec<PerSensorState>, f64)> = vec![(Vec::new(), 1.0)];
    for ((sensor, &state), &command) in config.sensors.iter().zip(states).zip(&action.0) {
        let row = per_sensor_kernel(sensor, config.delta_max, state, command);
        out = out
            .into_iter()
            .flat_map(|(prefix, p)| {
                row.iter().map(move |&(next, q)| {
                    let mut states = prefix.clone();
                    states.push(next);
                    (states, p * q)
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny1() -> SensorParams {
        SensorParams::uniform(0.5, 1, 1, 0.5).unwrap()
    }

    #[test]
    fn effective_send_needs_energy() {
        assert!(!effective_send(PerSensorState::new(1, 0, 3), true));
        assert!(effective_send(PerSensorState::new(1, 3, 3), true));
        assert!(!effective_send(PerSensorState::new(1, 3, 3), false));
    }

    #[test]
    fn battery_steps() {
        assert_eq!(step_battery(7, false, true, 7).unwrap(), 7);
        assert_eq!(step_battery(1, true, false, 7).unwrap(), 0);
        assert_eq!(step_battery(1, true, true, 7).unwrap(), 1);
        assert!(matches!(step_battery(0, true, true, 7), Err(Error::EnergyCausality)));
    }

    #[test]
    fn age_steps() {
        assert_eq!(step_age(64, false, 64), 64);
        assert_eq!(step_age(5, true, 64), 1);
        assert_eq!(step_age(5, false, 64), 6);
    }

    #[test]
    fn costs() {
        assert_eq!(per_sensor_cost(PerSensorState::new(0, 5, 30), false, 64), 0);
        assert_eq!(per_sensor_cost(PerSensorState::new(2, 1, 9), true, 64), 2);
        assert_eq!(per_sensor_cost(PerSensorState::new(3, 0, 64), true, 64), 3 * 64);
    }

    #[test]
    fn request_pmf_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&request_pmf(&[0.5, 0.5]), &[0.25, 0.5, 0.25]));
        assert!(close(&request_pmf(&[0.6, 0.6, 0.6]), &[0.064, 0.288, 0.432, 0.216]));
        assert!(close(&request_pmf(&[1.0, 0.0]), &[0.0, 1.0, 0.0]));
    }

    #[test]
    fn battery_kernel_without_command() {
        let sensor = SensorParams::uniform(0.06, 7, 3, 0.6).unwrap();
        let row = per_sensor_kernel(&sensor, 64, PerSensorState::new(1, 3, 10), false);
        let up: f64 = row.iter().filter(|(s, _)| s.battery == 4).map(|(_, p)| p).sum();
        let same: f64 = row.iter().filter(|(s, _)| s.battery == 3).map(|(_, p)| p).sum();
        assert!((up - 0.06).abs() < 1e-12);
        assert!((same - 0.94).abs() < 1e-12);
        assert!(row.iter().all(|(s, _)| s.age == 11));
    }

    #[test]
    fn commanded_sensor_with_energy_resets_age() {
        let sensor = SensorParams::uniform(0.06, 7, 3, 0.6).unwrap();
        let row = per_sensor_kernel(&sensor, 64, PerSensorState::new(2, 2, 40), true);
        let fresh: f64 = row.iter().filter(|(s, _)| s.age == 1).map(|(_, p)| p).sum();
        assert!((fresh - 1.0).abs() < 1e-12);
        assert!(row.len() <= 2 * 4);
    }

    #[test]
    fn tiny1_kernel_enumeration() {
        let row = per_sensor_kernel(&tiny1(), 2, PerSensorState::new(1, 1, 1), true);
        assert_eq!(row.len(), 4);
        for r in 0..2 {
            for b in 0..2 {
                let p: f64 = row.iter().filter(|(s, _)| *s == PerSensorState::new(r, b, 1)).map(|(_, p)| p).sum();
                assert!((p - 0.25).abs() < 1e-15, "({r},{b}) -> {p}");
            }
        }
    }

    #[test]
    fn cached_rows_match_direct_kernel() {
        let sensor = SensorParams::new(0.3, 3, vec![0.2, 0.7]).unwrap();
        let kernel = SensorKernel::new(&sensor, 5);
        let space = kernel.space();
        for (i, state) in space.states().enumerate() {
            for command in [false, true] {
                let direct = per_sensor_kernel(&sensor, 5, state, command);
                let cached = kernel.row(i, command);
                assert_eq!(direct.len(), cached.len());
                for ((s, p), (j, q)) in direct.iter().zip(cached) {
                    assert_eq!(space.index(*s), *j as usize);
                    assert_eq!(p, q);
                }
            }
        }
    }

    #[test]
    fn state_index_round_trips() {
        let space = StateSpace::new(3, 7, 64);
        assert_eq!(space.len(), 4 * 8 * 64);
        for i in 0..space.len() {
            assert_eq!(space.index(space.state(i)), i);
        }
        assert_eq!(space.index(PerSensorState::new(0, 0, 2)), 1);
        assert_eq!(space.reference_index(), 0);
    }

    #[test]
    fn joint_index_round_trips() {
        let sensors = vec![tiny1(), SensorParams::uniform(0.2, 2, 1, 0.3).unwrap()];
        let config = NetworkConfig::new(1, 1, 3, sensors).unwrap();
        let joint = JointSpace::new(&config);
        assert_eq!(joint.len_u128(), 12 * 18);
        for i in 0..joint.len_u128() as usize {
            assert_eq!(joint.index(&joint.state(i)), i);
        }
    }

    #[test]
    fn config_validation() {
        let s = tiny1();
        assert!(NetworkConfig::new(1, 2, 4, vec![s.clone()]).is_err());
        assert!(NetworkConfig::new(1, 0, 4, vec![s.clone()]).is_err());
        assert!(NetworkConfig::new(1, 1, 1, vec![s.clone()]).is_err());
        assert!(NetworkConfig::new(2, 1, 4, vec![s.clone()]).is_err());
        assert!(SensorParams::new(1.5, 1, vec![0.5]).is_err());
        assert!(SensorParams::new(0.5, 0, vec![0.5]).is_err());
        assert!(SensorParams::new(1.0, 1, vec![-0.1]).is_err());
        let c = NetworkConfig::new(1, 1, 4, vec![s]).unwrap();
        assert_eq!(c.gamma(), 1.0);
    }
}

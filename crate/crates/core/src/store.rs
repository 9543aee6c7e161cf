//! Text format for relaxed (mixed) policies.
//!
//! ```text
//! # aoi-mixed-policy v1
//! gamma 0.025
//! active true
//! mu_lower 1136.71
//! mu_upper 1136.72
//! eta 0.26
//! lower_bound 12.93
//! command_rate 0.025
//! sensor_groups 0 1 2 0 1 2
//! group 0 harvest 0.01 battery 7 delta_max 64 probs 0.6 0.6 0.6
//! lower 0001...    one bit per state index
//! upper 0000...
//! ```

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, SensorParams, StateSpace};
use crate::relaxed::{MixedPolicy, PolicyTable, RelaxedSolution};

const HEADER: &str = "# aoi-mixed-policy v1";

/// A relaxed solution as needed to run it: per-group mixed tables plus the
/// scalar summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRelaxed {
    pub gamma: f64,
    pub active: bool,
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub eta: f64,
    pub lower_bound: f64,
    pub command_rate: f64,
    pub sensor_group: Vec<usize>,
    pub groups: Vec<(SensorParams, Arc<MixedPolicy>)>,
    pub delta_max: u32,
}

impl From<&RelaxedSolution> for StoredRelaxed {
    fn from(s: &RelaxedSolution) -> Self {
        Self {
            gamma: s.gamma,
            active: s.active,
            mu_lower: s.mu_lower,
            mu_upper: s.mu_upper,
            eta: s.eta,
            lower_bound: s.lower_bound,
            command_rate: s.command_rate,
            sensor_group: s.sensor_group.clone(),
            groups: s.groups.iter().map(|g| (g.params.clone(), g.policy.clone())).collect(),
            delta_max: s.groups.first().map_or(0, |g| g.policy.space().delta_max),
        }
    }
}

fn bits(table: &PolicyTable) -> String {
    table.actions.iter().map(|&a| if a { '1' } else { '0' }).collect()
}

fn parse_bits(text: &str, space: StateSpace, mu: f64) -> Result<PolicyTable> {
    if text.len() != space.len() {
        return Err(Error::Parse(format!("policy table has {} entries, expected {}", text.len(), space.len())));
    }
    let actions = text
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse(format!("bad action {other:?}"))),
        })
        .collect::<Result<_>>()?;
    Ok(PolicyTable { space, actions, mu })
}

fn num<T: std::str::FromStr>(field: &str, text: &str) -> Result<T> {
    text.parse().map_err(|_| Error::Parse(format!("bad {field} value {text:?}")))
}

impl StoredRelaxed {
    pub fn policies(&self) -> Vec<Arc<MixedPolicy>> {
        self.sensor_group.iter().map(|&g| self.groups[g].1.clone()).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{HEADER}")?;
        writeln!(out, "gamma {}", self.gamma)?;
        writeln!(out, "active {}", self.active)?;
        writeln!(out, "mu_lower {}", self.mu_lower)?;
        writeln!(out, "mu_upper {}", self.mu_upper)?;
        writeln!(out, "eta {}", self.eta)?;
        writeln!(out, "lower_bound {}", self.lower_bound)?;
        writeln!(out, "command_rate {}", self.command_rate)?;
        let groups: Vec<String> = self.sensor_group.iter().map(|g| g.to_string()).collect();
        writeln!(out, "sensor_groups {}", groups.join(" "))?;
        for (g, (params, policy)) in self.groups.iter().enumerate() {
            let probs: Vec<String> = params.request_probs.iter().map(|p| p.to_string()).collect();
            writeln!(
                out,
                "group {g} harvest {} battery {} delta_max {} probs {}",
                params.harvest_rate,
                params.battery_capacity,
                self.delta_max,
                probs.join(" ")
            )?;
            writeln!(out, "lower {} {}", policy.lower.mu, bits(&policy.lower))?;
            writeln!(out, "upper {} {}", policy.upper.mu, bits(&policy.upper))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != HEADER {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let mut scalars = std::collections::HashMap::<String, f64>::new();
        let mut active = None;
        let mut sensor_group = Vec::new();
        let mut groups = Vec::new();
        let mut pending: Option<(SensorParams, StateSpace, Option<PolicyTable>)> = None;
        let mut delta_max = 0;
        for line in lines {
            let line = line?;
            let mut words = line.split_whitespace();
            let Some(key) = words.next() else { continue };
            let rest: Vec<&str> = words.collect();
            match key {
                "sensor_groups" => {
                    sensor_group = rest.iter().map(|w| num("sensor_groups", w)).collect::<Result<_>>()?;
                }
                "group" => {
                    if pending.is_some() {
                        return Err(Error::Parse("group without both tables".into()));
                    }
                    let [_, "harvest", h, "battery", b, "delta_max", d, "probs", probs @ ..] = rest.as_slice() else {
                        return Err(Error::Parse(format!("bad group line {line:?}")));
                    };
                    let probs = probs.iter().map(|p| num("probs", p)).collect::<Result<Vec<f64>>>()?;
                    let params = SensorParams::new(num("harvest", h)?, num("battery", b)?, probs)?;
                    delta_max = num("delta_max", d)?;
                    let space = StateSpace::for_sensor(&params, delta_max);
                    pending = Some((params, space, None));
                }
                "lower" | "upper" => {
                    let [mu, table] = rest.as_slice() else {
                        return Err(Error::Parse(format!("bad table line for {key}")));
                    };
                    let Some((params, space, lower)) = pending.take() else {
                        return Err(Error::Parse("table before group".into()));
                    };
                    let table = parse_bits(table, space, num("mu", mu)?)?;
                    match (key, lower) {
                        ("lower", None) => pending = Some((params, space, Some(table))),
                        ("upper", Some(lower)) => {
                            let eta = scalars.get("eta").copied().ok_or_else(|| Error::Parse("missing eta".into()))?;
                            groups.push((params, Arc::new(MixedPolicy { lower, upper: table, eta })));
                        }
                        _ => return Err(Error::Parse("tables out of order".into())),
                    }
                }
                "active" => {
                    let value = rest.first().copied().unwrap_or_default();
                    active = Some(num::<bool>("active", value)?);
                }
                "gamma" | "mu_lower" | "mu_upper" | "eta" | "lower_bound" | "command_rate" => {
                    let value = rest.first().copied().unwrap_or_default();
                    scalars.insert(key.to_string(), num(key, value)?);
                }
                k if k.starts_with('#') => {}
                other => return Err(Error::Parse(format!("unknown key {other:?}"))),
            }
        }
        if pending.is_some() {
            return Err(Error::Parse("truncated policy file".into()));
        }
        let get = |k: &str| scalars.get(k).copied().ok_or_else(|| Error::Parse(format!("missing {k}")));
        if sensor_group.iter().any(|&g| g >= groups.len()) || groups.is_empty() {
            return Err(Error::Parse("sensor_groups refers to a missing group".into()));
        }
        Ok(Self {
            gamma: get("gamma")?,
            active: active.ok_or_else(|| Error::Parse("missing active".into()))?,
            mu_lower: get("mu_lower")?,
            mu_upper: get("mu_upper")?,
            eta: get("eta")?,
            lower_bound: get("lower_bound")?,
            command_rate: get("command_rate")?,
            sensor_group,
            groups,
            delta_max,
        })
    }

    /// Checks that the stored policies were solved for `config`.
    pub fn check_matches(&self, config: &NetworkConfig) -> Result<()> {
        let fits = self.sensor_group.len() == config.num_sensors()
            && self.delta_max == config.delta_max
            && config.sensors.iter().zip(&self.sensor_group).all(|(s, &g)| *s == self.groups[g].0);
        if fits {
            Ok(())
        } else {
            Err(Error::InvalidConfig("relaxed policy file was solved for a different network".into()))
        }
    }
}

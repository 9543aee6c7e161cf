//! Per-slot decision rules built from solved tables.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::exact::JointPolicy;
use crate::model::PerSensorState;
use crate::relaxed::{MixedPolicy, RelaxedSolution};

/// Which decision rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Optimal joint policy from the exact solver.
    Exact,
    /// Relaxed policy without truncation; may exceed the budget.
    Relaxed,
    /// Relaxed proposals truncated uniformly to the budget.
    #[serde(rename = "rtt")]
    RelaxThenTruncate,
    /// Largest requested age first.
    Greedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Exact, Self::Relaxed, Self::RelaxThenTruncate, Self::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Relaxed => "relaxed",
            Self::RelaxThenTruncate => "rtt",
            Self::Greedy => "greedy",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "relaxed" => Ok(Self::Relaxed),
            "rtt" | "relax-then-truncate" => Ok(Self::RelaxThenTruncate),
            "greedy" => Ok(Self::Greedy),
            other => Err(Error::Parse(format!("unknown policy {other:?} (expected exact|relaxed|rtt|greedy)"))),
        }
    }
}

/// Inputs to one slot's decision.
pub struct DecisionContext<'a, R: Rng + ?Sized> {
    pub slot: u64,
    pub states: &'a [PerSensorState],
    pub rng: &'a mut R,
}

/// Sensors proposed for a command by the relaxed policy. The mixture is drawn
/// independently per sensor and per slot; sensors whose two tables agree
/// consume no randomness.
pub fn relaxed_propose<R: Rng + ?Sized>(
    policies: &[Arc<MixedPolicy>],
    states: &[PerSensorState],
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.clear();
    for (k, (policy, &state)) in policies.iter().zip(states).enumerate() {
        let index = policy.space().index(state);
        let command = if policy.is_deterministic_at(index) || rng.random::<f64>() < policy.eta {
            policy.lower.actions[index]
        } else {
            policy.upper.actions[index]
        };
        if command {
            out.push(k);
        }
    }
}

/// Keeps a uniformly random `budget`-subset of `proposals` (sorted) when
/// there are more proposals than the budget; otherwise leaves them as is.
pub fn truncate_in_place<R: Rng + ?Sized>(proposals: &mut Vec<usize>, budget: usize, rng: &mut R) {
    if proposals.len() <= budget {
        return;
    }
    // partial Fisher-Yates
    for i in 0..budget {
        let j = rng.random_range(i..proposals.len());
        proposals.swap(i, j);
    }
    proposals.truncate(budget);
    proposals.sort_unstable();
}

pub fn truncate<R: Rng + ?Sized>(proposals: &[usize], budget: usize, rng: &mut R) -> Vec<usize> {
    let mut out = proposals.to_vec();
    truncate_in_place(&mut out, budget, rng);
    out
}

/// Up to `budget` requested sensors with the largest age; ties go to the
/// lowest index. Output is sorted by sensor index.
pub fn greedy_decide(states: &[PerSensorState], budget: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(states.iter().enumerate().filter(|(_, s)| s.requests >= 1).map(|(k, _)| k));
    if out.len() > budget {
        let key = |k: &usize| (std::cmp::Reverse(states[*k].age), *k);
        out.select_nth_unstable_by_key(budget - 1, key);
        out.truncate(budget);
    }
    out.sort_unstable();
}

/// An executable policy.
#[derive(Debug, Clone)]
pub enum Policy {
    Exact(Arc<JointPolicy>),
    Relaxed(Arc<[Arc<MixedPolicy>]>),
    RelaxThenTruncate { policies: Arc<[Arc<MixedPolicy>]>, budget: usize },
    Greedy { budget: usize },
}

impl Policy {
    pub fn relaxed(solution: &RelaxedSolution) -> Self {
        Self::Relaxed(solution.policies().into())
    }

    pub fn relax_then_truncate(solution: &RelaxedSolution, budget: usize) -> Self {
        Self::RelaxThenTruncate { policies: solution.policies().into(), budget }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Self::Exact(_) => PolicyKind::Exact,
            Self::Relaxed(_) => PolicyKind::Relaxed,
            Self::RelaxThenTruncate { .. } => PolicyKind::RelaxThenTruncate,
            Self::Greedy { .. } => PolicyKind::Greedy,
        }
    }

    /// Per-slot cap this rule guarantees, if any.
    pub fn budget(&self) -> Option<usize> {
        match self {
            Self::Exact(p) => Some(p.budget()),
            Self::Relaxed(_) => None,
            Self::RelaxThenTruncate { budget, .. } | Self::Greedy { budget } => Some(*budget),
        }
    }

    /// Fills `commands` (sorted sensor indices) and returns the size of the
    /// proposal set before truncation.
    pub fn decide<R: Rng + ?Sized>(&self, ctx: &mut DecisionContext<'_, R>, commands: &mut Vec<usize>) -> usize {
        match self {
            Self::Exact(policy) => {
                commands.clear();
                commands.extend(policy.action(ctx.states).commanded());
                commands.len()
            }
            Self::Relaxed(policies) => {
                relaxed_propose(policies, ctx.states, ctx.rng, commands);
                commands.len()
            }
            Self::RelaxThenTruncate { policies, budget } => {
                relaxed_propose(policies, ctx.states, ctx.rng, commands);
                let proposed = commands.len();
                truncate_in_place(commands, *budget, ctx.rng);
                proposed
            }
            Self::Greedy { budget } => {
                greedy_decide(ctx.states, *budget, commands);
                commands.len()
            }
        }
    }
}

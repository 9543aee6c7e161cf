//! Numerical checks of the structural and asymptotic results, and
//! command-region maps over `(battery, age)`.

use std::fmt;
use std::io::Write;

use crate::error::Result;
use crate::model::StateSpace;
use crate::relaxed::{PolicyTable, RelaxedSolution};
use crate::sim::SimReport;

/// Outcome of a single named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Values must not decrease along the age axis for fixed `(r, b)`.
pub fn check_value_monotone(space: StateSpace, values: &[f64], tol: f64) -> CheckOutcome {
    let mut worst: Option<(usize, f64)> = None;
    let mut violations = 0usize;
    for r in 0..=space.num_users {
        for b in 0..=space.battery_capacity {
            for age in 1..space.delta_max {
                let here = space.index(crate::model::PerSensorState::new(r, b, age));
                let next = here + 1;
                let drop = values[here] - values[next];
                if drop > tol {
                    violations += 1;
                    if worst.is_none_or(|(_, d)| drop > d) {
                        worst = Some((here, drop));
                    }
                }
            }
        }
    }
    match worst {
        None => CheckOutcome::new("value-monotone-in-age", true, format!("{} states", space.len())),
        Some((i, d)) => CheckOutcome::new(
            "value-monotone-in-age",
            false,
            format!("{violations} violations, worst drop {d:.3e} after {:?}", space.state(i)),
        ),
    }
}

/// For fixed `(r, b)` the commanded ages must form an upper set.
pub fn check_age_threshold(policy: &PolicyTable) -> CheckOutcome {
    let space = policy.space;
    let mut violations = Vec::new();
    for r in 0..=space.num_users {
        for b in 0..=space.battery_capacity {
            let map = age_row(policy, r, b);
            if !is_upper_set(&map) {
                violations.push((r, b));
            }
        }
    }
    if violations.is_empty() {
        CheckOutcome::new("age-threshold", true, format!("mu={}", policy.mu))
    } else {
        CheckOutcome::new(
            "age-threshold",
            false,
            format!("mu={}: not a threshold at (r, b) in {violations:?}", policy.mu),
        )
    }
}

fn age_row(policy: &PolicyTable, r: u32, b: u32) -> Vec<bool> {
    let space = policy.space;
    (1..=space.delta_max).map(|age| policy.action(space.index(crate::model::PerSensorState::new(r, b, age)))).collect()
}

fn is_upper_set(row: &[bool]) -> bool {
    row.windows(2).all(|w| !w[0] || w[1])
}

/// Runs both structural checks on every table of a relaxed solution.
pub fn check_structure(solution: &RelaxedSolution, value_tol: f64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (g, group) in solution.groups.iter().enumerate() {
        let sides = if solution.active {
            vec![("lower", &group.lower), ("upper", &group.upper)]
        } else {
            vec![("lower", &group.lower)]
        };
        for (side, sol) in sides {
            let space = sol.policy.space;
            for mut check in
                [check_value_monotone(space, &sol.rvia.relative, value_tol), check_age_threshold(&sol.policy)]
            {
                check.name = format!("group{g}-{side}-{}", check.name);
                out.push(check);
            }
        }
    }
    out
}

/// Actions over `(battery, age)` for a fixed request count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    pub requests: u32,
    /// `grid[b][age - 1]`.
    pub grid: Vec<Vec<bool>>,
}

impl RegionMap {
    pub fn cells(&self) -> usize {
        self.grid.iter().flatten().filter(|&&a| a).count()
    }

    pub fn upward_closed_in_age(&self) -> bool {
        self.grid.iter().all(|row| is_upper_set(row))
    }

    pub fn upward_closed_in_battery(&self) -> bool {
        self.grid.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(&lo, &hi)| !lo || hi))
    }

    /// One row per battery level, one column per age.
    pub fn write_csv<W: Write>(&self, mut out: W, prefix: &str) -> Result<()> {
        for (b, row) in self.grid.iter().enumerate() {
            write!(out, "{prefix}{},{b}", self.requests)?;
            for &a in row {
                write!(out, ",{}", a as u8)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn command_region_map(policy: &PolicyTable, requests: u32) -> RegionMap {
    let space = policy.space;
    RegionMap { requests, grid: (0..=space.battery_capacity).map(|b| age_row(policy, requests, b)).collect() }
}

/// CSV header matching [`RegionMap::write_csv`] with the given key columns.
pub fn region_csv_header(keys: &str, delta_max: u32) -> String {
    let mut header = format!("{keys}requests,battery");
    for age in 1..=delta_max {
        header.push_str(&format!(",age{age}"));
    }
    header
}

/// Costs compared by the ordering check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingInputs {
    pub lower_bound: f64,
    pub exact: f64,
    pub truncated: f64,
    pub truncated_se: f64,
}

/// `lower bound <= exact optimum <= relax-then-truncate`, the first with an
/// absolute tolerance, the second within three standard errors.
pub fn check_ordering(inputs: OrderingInputs, exact_tol: f64) -> CheckOutcome {
    let OrderingInputs { lower_bound, exact, truncated, truncated_se } = inputs;
    let left = lower_bound <= exact + exact_tol;
    let right = exact <= truncated + 3.0 * truncated_se;
    CheckOutcome::new(
        "ordering",
        left && right,
        format!("lower={lower_bound:.6} exact={exact:.6} rtt={truncated:.6}±{truncated_se:.2e}"),
    )
}

/// Relax-then-truncate gap to the lower bound against `(delta_max / M) MAD`.
pub fn check_gap_bound(lower_bound: f64, report: &SimReport, delta_max: u32, budget: usize) -> CheckOutcome {
    let gap = report.cost - lower_bound;
    let bound = delta_max as f64 / budget as f64 * report.proposal_mad;
    let slack = bound + 3.0 * report.cost_se - gap;
    CheckOutcome::new(
        "gap-bound",
        slack >= 0.0,
        format!("gap={gap:.4} bound={bound:.4} se={:.2e} slack={slack:.4}", report.cost_se),
    )
}

/// One point of a sweep over fleet size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub num_sensors: usize,
    pub gap: f64,
    pub gap_se: f64,
    pub mad: f64,
    pub mad_se: f64,
}

/// `MAD(|X|) / sqrt(K) <= 1` at the largest fleet; smaller fleets are reported.
pub fn check_sqrt_k_mad(points: &[SweepPoint], gamma: f64, delta_max: u32) -> CheckOutcome {
    let Some(largest) = points.iter().max_by_key(|p| p.num_sensors) else {
        return CheckOutcome::new("sqrt-k-mad", true, "no points");
    };
    let detail: Vec<String> = points
        .iter()
        .map(|p| {
            let rk = (p.num_sensors as f64).sqrt();
            format!("K={} mad/sqrtK={:.4} envelope={:.3}", p.num_sensors, p.mad / rk, delta_max as f64 / (gamma * rk))
        })
        .collect();
    let rk = (largest.num_sensors as f64).sqrt();
    let passed = largest.mad / rk <= 1.0 + 3.0 * largest.mad_se / rk;
    CheckOutcome::new("sqrt-k-mad", passed, detail.join("; "))
}

/// The gap must not grow with `K` beyond three combined standard errors.
pub fn check_gap_trend(points: &[SweepPoint]) -> CheckOutcome {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.num_sensors);
    let mut passed = true;
    let mut detail = Vec::new();
    for w in sorted.windows(2) {
        let noise = 3.0 * (w[0].gap_se.powi(2) + w[1].gap_se.powi(2)).sqrt();
        if w[1].gap > w[0].gap + noise {
            passed = false;
            detail.push(format!(
                "K={}->{}: {:.4} > {:.4}+{:.4}",
                w[0].num_sensors, w[1].num_sensors, w[1].gap, w[0].gap, noise
            ));
        }
    }
    if detail.is_empty() {
        detail = sorted.iter().map(|p| format!("K={} gap={:.4}", p.num_sensors, p.gap)).collect();
    }
    CheckOutcome::new("gap-trend", passed, detail.join("; "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(space: StateSpace, f: impl Fn(crate::model::PerSensorState) -> bool) -> PolicyTable {
        PolicyTable { space, actions: space.states().map(f).collect(), mu: 0.0 }
    }

    #[test]
    fn threshold_detection() {
        let space = StateSpace::new(1, 2, 5);
        let good = table(space, |s| s.requests == 1 && s.battery >= 1 && s.age >= 3);
        assert!(check_age_threshold(&good).passed);
        let bad = table(space, |s| s.requests == 1 && s.age == 2);
        assert!(!check_age_threshold(&bad).passed);
    }

    #[test]
    fn region_map_closure() {
        let space = StateSpace::new(1, 2, 4);
        let p = table(space, |s| s.battery >= 1 && s.age + s.battery >= 4);
        let map = command_region_map(&p, 1);
        assert!(map.upward_closed_in_age());
        assert!(map.upward_closed_in_battery());
        assert_eq!(map.cells(), 2 + 3);
        let mut buf = Vec::new();
        map.write_csv(&mut buf, "").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0,0,0,0,0\n1,1,0,0,1,1\n1,2,0,1,1,1\n");
        assert_eq!(region_csv_header("", 2), "requests,battery,age1,age2");
    }

    #[test]
    fn value_monotone_detection() {
        let space = StateSpace::new(0, 0, 3);
        assert!(check_value_monotone(space, &[0.0, 1.0, 1.0], 1e-9).passed);
        assert!(!check_value_monotone(space, &[0.0, 1.0, 0.5], 1e-9).passed);
    }

    #[test]
    fn outcome_line_format() {
        let c = CheckOutcome::new("x", false, "y");
        assert_eq!(c.to_string(), "FAIL x: y");
    }

    #[test]
    fn gap_trend_allows_noise() {
        let p = |k, gap| SweepPoint { num_sensors: k, gap, gap_se: 0.01, mad: 0.0, mad_se: 0.0 };
        assert!(check_gap_trend(&[p(40, 1.0), p(80, 1.02)]).passed);
        assert!(!check_gap_trend(&[p(40, 1.0), p(80, 1.2)]).passed);
    }
}

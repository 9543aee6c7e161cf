use aoi_core::analysis::{command_region_map, region_csv_header};
use aoi_core::model::{NetworkConfig, SensorParams};
use aoi_core::relaxed::{solve_per_sensor, solve_relaxed, RelaxedOptions};
use aoi_core::RviaOptions;

fn reference_like(k: usize) -> NetworkConfig {
    let sensors = (0..k).map(|i| SensorParams::uniform(0.01 * (i % 10 + 1) as f64, 7, 3, 0.6).unwrap()).collect();
    NetworkConfig::new(3, 1, 24, sensors).unwrap()
}

#[test]
fn price_trajectory_is_monotone() {
    let sol = solve_relaxed(&reference_like(20), RelaxedOptions::default()).unwrap();
    let mut probes = sol.trajectory.clone();
    probes.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    for w in probes.windows(2) {
        assert!(w[1].command_rate <= w[0].command_rate + 1e-12, "{:?}", w);
        assert!(w[1].cost >= w[0].cost - 1e-9, "{:?}", w);
    }
    assert!(sol.mu_upper - sol.mu_lower <= RelaxedOptions::default().epsilon);
    assert!(sol.eta >= 0.0 && sol.eta <= 1.0);
}

#[test]
fn lower_bound_does_not_increase_with_the_budget() {
    let net = reference_like(10);
    let mut last = f64::INFINITY;
    for m in 1..=4 {
        let sol = solve_relaxed(&NetworkConfig { budget: m, ..net.clone() }, RelaxedOptions::default()).unwrap();
        assert!(sol.lower_bound <= last + 1e-9);
        last = sol.lower_bound;
    }
}

#[test]
fn higher_price_commands_in_fewer_states() {
    let sensor = SensorParams::uniform(0.05, 7, 3, 0.6).unwrap();
    let mut last = usize::MAX;
    for mu in [0.0, 10.0, 100.0, 1000.0] {
        let sol = solve_per_sensor(&sensor, 32, mu, RviaOptions::default()).unwrap();
        let n = sol.policy.command_count();
        assert!(n <= last, "mu={mu}: {n} > {last}");
        last = n;
    }
}

#[test]
fn region_map_matches_the_policy_table() {
    let sensor = SensorParams::uniform(0.06, 5, 3, 0.4).unwrap();
    let sol = solve_per_sensor(&sensor, 16, 50.0, RviaOptions::default()).unwrap();
    for r in 0..=3 {
        let map = command_region_map(&sol.policy, r);
        assert_eq!(map.grid.len(), 6);
        assert!(map.grid.iter().all(|row| row.len() == 16));
        let cells = sol
            .policy
            .space
            .states()
            .filter(|s| s.requests == r)
            .filter(|s| sol.policy.action(sol.policy.space.index(*s)))
            .count();
        assert_eq!(map.cells(), cells);
        assert!(map.upward_closed_in_age());
        let mut csv = Vec::new();
        map.write_csv(&mut csv, "0,").unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
    }
    assert_eq!(region_csv_header("group,", 3), "group,requests,battery,age1,age2,age3");
}

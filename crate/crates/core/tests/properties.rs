mod common;

use aoi_core::config::ExperimentSpec;
use aoi_core::exact::{solve_exact, JointPolicy};
use aoi_core::model::{JointSpace, NetworkConfig, PerSensorState, SensorKernel, SensorParams, StateSpace};
use aoi_core::relaxed::{solve_relaxed, RelaxedOptions};
use aoi_core::runtime::{greedy_decide, truncate};
use aoi_core::store::StoredRelaxed;
use aoi_core::RviaOptions;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sensor(max_users: usize) -> impl Strategy<Value = SensorParams> {
    (0.0..=1.0f64, 1u32..6, prop::collection::vec(0.0..=1.0f64, 1..=max_users))
        .prop_map(|(h, b, p)| SensorParams::new(h, b, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_rows_are_distributions(s in sensor(4), dmax in 2u32..10) {
        let kernel = SensorKernel::new(&s, dmax);
        for i in 0..kernel.space().len() {
            for command in [false, true] {
                let sum: f64 = kernel.row(i, command).iter().map(|e| e.1).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                let st = kernel.space().state(i);
                prop_assert_eq!(kernel.cost(i, command), common::brute_cost((st.requests, st.battery, st.age), command, dmax));
            }
        }
    }

    #[test]
    fn state_index_round_trips(users in 0usize..5, battery in 1u32..9, dmax in 2u32..20) {
        let space = StateSpace::new(users, battery, dmax);
        for i in 0..space.len() {
            prop_assert_eq!(space.index(space.state(i)), i);
        }
        prop_assert_eq!(space.reference_index(), 0);
    }

    #[test]
    fn joint_index_round_trips(a in sensor(2), b in sensor(2), dmax in 2u32..5, raw in any::<u64>()) {
        let b = SensorParams { request_probs: vec![0.5; a.num_users()], ..b };
        let net = NetworkConfig::new(a.num_users(), 1, dmax, vec![a, b]).unwrap();
        let space = JointSpace::new(&net);
        let i = (raw % space.len_u128() as u64) as usize;
        prop_assert_eq!(space.index(&space.state(i)), i);
    }

    #[test]
    fn truncation_keeps_a_sorted_subset(mut props in prop::collection::btree_set(0usize..200, 0..60), budget in 1usize..30, seed in any::<u64>()) {
        let props: Vec<usize> = std::mem::take(&mut props).into_iter().collect();
        let kept = truncate(&props, budget, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(kept.len(), props.len().min(budget));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|k| props.contains(k)));
    }

    #[test]
    fn greedy_respects_the_budget(ages in prop::collection::vec((0u32..3, 1u32..30), 1..50), budget in 1usize..10) {
        let states: Vec<PerSensorState> = ages.iter().map(|&(r, a)| PerSensorState::new(r, 1, a)).collect();
        let mut out = Vec::new();
        greedy_decide(&states, budget, &mut out);
        prop_assert!(out.len() <= budget);
        prop_assert!(out.iter().all(|&k| states[k].requests >= 1));
        let requested = states.iter().filter(|s| s.requests >= 1).count();
        prop_assert_eq!(out.len(), requested.min(budget));
        let oldest_left = (0..states.len()).filter(|k| !out.contains(k) && states[*k].requests >= 1).map(|k| states[k].age).max();
        if let Some(left) = oldest_left {
            prop_assert!(out.iter().all(|&k| states[k].age >= left));
        }
    }

    #[test]
    fn experiment_spec_round_trips(k in 1usize..50, users in 1usize..4, p in 0.0..=1.0f64, dmax in 2u32..64, seed in any::<u64>()) {
        let text = format!(
            "num_sensors = {k}\nnum_users = {users}\nbudget = 1\ndelta_max = {dmax}\nbattery_capacity = 3\nrequest_prob = {p}\nseed = {seed}\n"
        );
        let spec = ExperimentSpec::from_toml_str(&text).unwrap();
        let again = ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        prop_assert_eq!(spec.config_hash(), again.config_hash());
        prop_assert_eq!(spec.network().unwrap(), again.network().unwrap());
    }
}

#[test]
fn joint_policy_csv_round_trips() {
    let net = NetworkConfig::new(1, 1, 3, vec![SensorParams::uniform(0.7, 2, 1, 0.4).unwrap(); 2]).unwrap();
    let sol = solve_exact(&net, RviaOptions::default()).unwrap();
    let mut buf = Vec::new();
    sol.policy.write_csv(&mut buf).unwrap();
    let back = JointPolicy::read_csv(&net, buf.as_slice()).unwrap();
    assert_eq!(back, sol.policy);
}

#[test]
fn mixed_policy_file_round_trips() {
    let sensors = (0..4).map(|k| SensorParams::uniform(0.05 * (k % 2 + 1) as f64, 3, 2, 0.5).unwrap()).collect();
    let net = NetworkConfig::new(2, 1, 10, sensors).unwrap();
    let sol = solve_relaxed(&net, RelaxedOptions::default()).unwrap();
    let stored = StoredRelaxed::from(&sol);
    let mut buf = Vec::new();
    stored.write(&mut buf).unwrap();
    let back = StoredRelaxed::read(buf.as_slice()).unwrap();
    assert_eq!(back, stored);
    back.check_matches(&net).unwrap();
    let other = NetworkConfig::new(2, 1, 11, net.sensors.clone()).unwrap();
    assert!(back.check_matches(&other).is_err());
}

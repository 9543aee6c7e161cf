//! Reference implementations written directly from the model definition,
//! sharing no code with the crate's kernels or solvers.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use aoi_core::model::SensorParams;

/// `(requests, battery, age)`.
pub type St = (u32, u32, u32);

pub fn tiny1() -> SensorParams {
    SensorParams::uniform(0.5, 1, 1, 0.5).unwrap()
}

/// Successor distribution by enumerating every user's request bit and the
/// energy bit.
pub fn brute_kernel(sensor: &SensorParams, delta_max: u32, (_, b, age): St, command: bool) -> BTreeMap<St, f64> {
    let send = command && b >= 1;
    let next_age = if send { 1 } else { (age + 1).min(delta_max) };
    let n = sensor.request_probs.len();
    let mut out = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        let mut p_req = 1.0;
        for (u, &p) in sensor.request_probs.iter().enumerate() {
            p_req *= if mask >> u & 1 == 1 { p } else { 1.0 - p };
        }
        let next_r = mask.count_ones();
        for energy in [0u32, 1] {
            let pe = if energy == 1 { sensor.harvest_rate } else { 1.0 - sensor.harvest_rate };
            let p = p_req * pe;
            if p == 0.0 {
                continue;
            }
            let next_b = (b + energy - send as u32).min(sensor.battery_capacity);
            *out.entry((next_r, next_b, next_age)).or_insert(0.0) += p;
        }
    }
    out
}

pub fn brute_cost((r, b, age): St, command: bool, delta_max: u32) -> u32 {
    let send = command && b >= 1;
    r * if send { 1 } else { (age + 1).min(delta_max) }
}

pub fn all_states(sensor: &SensorParams, delta_max: u32) -> Vec<St> {
    let n = sensor.request_probs.len() as u32;
    let mut v = Vec::new();
    for r in 0..=n {
        for b in 0..=sensor.battery_capacity {
            for age in 1..=delta_max {
                v.push((r, b, age));
            }
        }
    }
    v
}

/// Stationary vector by Gaussian elimination with partial pivoting on
/// `pi (P - I) = 0` with one equation replaced by normalization. `None` when
/// the system is singular (several recurrent classes).
pub fn stationary(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    // a[i][j] = (P^T - I)[i][j], last row all ones
    let mut a: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| p[j][i] - if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut rhs = vec![0.0; n];
    a[n - 1] = vec![1.0; n];
    rhs[n - 1] = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    rhs[row] -= f * rhs[col];
                }
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / a[i][i]).collect())
}

/// Long-run `(cost rate, command rate)` of a deterministic policy on the full
/// `(r, b, age)` chain.
pub fn evaluate(sensor: &SensorParams, delta_max: u32, policy: &dyn Fn(St) -> bool) -> Option<(f64, f64)> {
    let states = all_states(sensor, delta_max);
    let index: BTreeMap<St, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = states.len();
    let mut p = vec![vec![0.0; n]; n];
    for (i, &s) in states.iter().enumerate() {
        for (next, q) in brute_kernel(sensor, delta_max, s, policy(s)) {
            p[i][index[&next]] += q;
        }
    }
    let pi = stationary(&p)?;
    let cost = states.iter().zip(&pi).map(|(&s, w)| w * brute_cost(s, policy(s), delta_max) as f64).sum();
    let rate = states.iter().zip(&pi).map(|(&s, w)| w * policy(s) as u8 as f64).sum();
    Some((cost, rate))
}

/// Minimum of `cost + mu * rate` over all deterministic policies.
pub fn best_lagrangian(sensor: &SensorParams, delta_max: u32, mu: f64) -> (f64, usize) {
    let states = all_states(sensor, delta_max);
    assert!(states.len() <= 16, "exhaustive search only for tiny spaces");
    let mut best = f64::INFINITY;
    let mut multichain = 0;
    for mask in 0u32..(1 << states.len()) {
        let policy = |s: St| mask >> states.iter().position(|&x| x == s).unwrap() & 1 == 1;
        match evaluate(sensor, delta_max, &policy) {
            Some((c, j)) => best = best.min(c + mu * j),
            None => multichain += 1,
        }
    }
    (best, multichain)
}

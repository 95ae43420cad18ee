//! Shared oracles for the integration tests: a hand-built tabular MDP with
//! brute-force solvers, and finite-difference helpers.
#![allow(dead_code)]

use actprior::mdp::{ActionId, Observation};

pub const STATES: usize = 10;
pub const ACTIONS: usize = 3;
pub const GAMMA: f64 = 0.9;

/// Ten states on a ring. Action 0 steps clockwise, 1 counter-clockwise and
/// 2 jumps across the ring (`s + 5`). Entering the task's goal pays 1 and
/// ends the episode.
pub struct ToyMdp {
    pub goals: [usize; 2],
}

impl Default for ToyMdp {
    fn default() -> Self {
        Self { goals: [9, 4] }
    }
}

impl ToyMdp {
    pub fn next(&self, s: usize, a: usize) -> usize {
        match a {
            0 => (s + 1) % STATES,
            1 => (s + STATES - 1) % STATES,
            _ => (s + 5) % STATES,
        }
    }

    fn backup(&self, task: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        let n = self.next(s, a);
        if n == self.goals[task] {
            1.0
        } else {
            GAMMA * v[n]
        }
    }

    /// Optimal Q of one task by value iteration run to a fixed point.
    pub fn value_iteration(&self, task: usize) -> Vec<Vec<f64>> {
        let mut v = vec![0.0; STATES];
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..STATES {
                if s == self.goals[task] {
                    continue;
                }
                let best = (0..ACTIONS)
                    .map(|a| self.backup(task, s, a, &v))
                    .fold(f64::MIN, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-14 {
                break;
            }
        }
        (0..STATES)
            .map(|s| (0..ACTIONS).map(|a| self.backup(task, s, a, &v)).collect())
            .collect()
    }

    /// Q of the optimal policy found by policy iteration, with exact
    /// evaluation of each deterministic policy.
    pub fn policy_iteration(&self, task: usize) -> Vec<Vec<f64>> {
        let mut policy = vec![0usize; STATES];
        loop {
            let v = self.evaluate(task, &policy);
            let q: Vec<Vec<f64>> = (0..STATES)
                .map(|s| (0..ACTIONS).map(|a| self.backup(task, s, a, &v)).collect())
                .collect();
            let mut stable = true;
            for s in 0..STATES {
                let cur = q[s][policy[s]];
                if let Some(a) = (0..ACTIONS).find(|&a| q[s][a] > cur + 1e-12) {
                    policy[s] = a;
                    stable = false;
                }
            }
            if stable {
                return q;
            }
        }
    }

    /// Value of a deterministic policy: follow it until the goal or a cycle.
    fn evaluate(&self, task: usize, policy: &[usize]) -> Vec<f64> {
        (0..STATES)
            .map(|start| {
                let mut s = start;
                let mut discount = 1.0;
                for _ in 0..STATES {
                    if s == self.goals[task] {
                        return 0.0;
                    }
                    let n = self.next(s, policy[s]);
                    if n == self.goals[task] {
                        return discount;
                    }
                    discount *= GAMMA;
                    s = n;
                }
                0.0
            })
            .collect()
    }

    pub fn observation(&self, s: usize) -> Observation {
        let mut x = vec![0f32; STATES];
        x[s] = 1.0;
        Observation::flat(x).unwrap()
    }
}

/// Actions within `tol` of the row maximum.
pub fn argmax_set(q: &[f64], tol: f64) -> Vec<ActionId> {
    let best = q.iter().copied().fold(f64::MIN, f64::max);
    (0..q.len())
        .filter(|&a| q[a] >= best - tol)
        .map(ActionId)
        .collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
/// The floor keeps entries that are zero up to rounding from dominating.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

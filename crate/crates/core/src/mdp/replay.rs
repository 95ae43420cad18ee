use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Priority exponent; 0 gives uniform replay.
    pub alpha: f64,
    /// Importance-weight exponent.
    pub beta: f64,
    pub eps_priority: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            alpha: 0.6,
            beta: 0.4,
            eps_priority: 1e-6,
        }
    }
}

impl ReplayConfig {
    pub fn uniform(capacity: usize) -> Self {
        Self {
            capacity,
            alpha: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance weights normalized so the largest in the batch is 1.
    pub weights: Vec<f64>,
}

/// Segment tree over leaf values holding both sums (of `p^alpha`) and
/// maxima (of raw priorities).
#[derive(Clone, Debug)]
struct PriorityTree {
    size: usize,
    sums: Vec<f64>,
    maxs: Vec<f64>,
}

impl PriorityTree {
    fn new(capacity: usize) -> Self {
        let size = capacity.next_power_of_two();
        Self {
            size,
            sums: vec![0.0; 2 * size],
            maxs: vec![0.0; 2 * size],
        }
    }

    fn set(&mut self, i: usize, scaled: f64, raw: f64) {
        let mut node = self.size + i;
        self.sums[node] = scaled;
        self.maxs[node] = raw;
        while node > 1 {
            node /= 2;
            self.sums[node] = self.sums[2 * node] + self.sums[2 * node + 1];
            self.maxs[node] = self.maxs[2 * node].max(self.maxs[2 * node + 1]);
        }
    }

    fn total(&self) -> f64 {
        self.sums[1]
    }

    fn max(&self) -> f64 {
        self.maxs[1]
    }

    /// Leaf whose cumulative range contains `mass`.
    fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.size {
            let left = 2 * node;
            if mass < self.sums[left] || self.sums[left + 1] == 0.0 {
                node = left;
            } else {
                mass -= self.sums[left];
                node = left + 1;
            }
        }
        node - self.size
    }
}

/// Ring buffer of transitions with proportional prioritized sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    entries: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    tree: PriorityTree,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        if cfg.capacity == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity must be positive".into(),
            ));
        }
        if !(cfg.eps_priority > 0.0) || cfg.alpha < 0.0 || cfg.beta < 0.0 {
            return Err(Error::InvalidArgument(format!("bad replay config {cfg:?}")));
        }
        Ok(Self {
            cfg,
            entries: Vec::with_capacity(cfg.capacity.min(1 << 16)),
            priorities: Vec::with_capacity(cfg.capacity.min(1 << 16)),
            next: 0,
            tree: PriorityTree::new(cfg.capacity),
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.cfg.beta = beta;
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.entries.get(index)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Largest priority currently stored, or 1.0 for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        if self.entries.is_empty() {
            1.0
        } else {
            self.tree.max()
        }
    }

    /// Stores `t` with the current maximum priority, evicting the oldest
    /// entry once full.
    pub fn push(&mut self, t: Transition) {
        let p = self.max_priority();
        self.push_with_priority(t, p);
    }

    pub(crate) fn push_with_priority(&mut self, t: Transition, priority: f64) {
        let slot = self.next;
        if self.entries.len() < self.cfg.capacity {
            self.entries.push(t);
            self.priorities.push(priority);
        } else {
            self.entries[slot] = t;
            self.priorities[slot] = priority;
        }
        self.tree.set(slot, priority.powf(self.cfg.alpha), priority);
        self.next = (slot + 1) % self.cfg.capacity;
    }

    /// Draws `n` entries proportionally to `priority^alpha` (stratified over
    /// `n` equal mass segments).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampledBatch> {
        let len = self.entries.len();
        if n == 0 || len < n {
            return Err(Error::BufferTooSmall {
                have: len,
                need: n.max(1),
            });
        }
        let total = self.tree.total();
        let segment = total / n as f64;
        let mut indices = Vec::with_capacity(n);
        for k in 0..n {
            let mass = (k as f64 + rng.gen::<f64>()) * segment;
            let mut idx = self.tree.find(mass.min(total));
            if idx >= len {
                idx = len - 1;
            }
            indices.push(idx);
        }
        let weights = self.importance_weights(&indices, total);
        let transitions = indices.iter().map(|&i| self.entries[i].clone()).collect();
        Ok(SampledBatch {
            indices,
            transitions,
            weights,
        })
    }

    fn importance_weights(&self, indices: &[usize], total: f64) -> Vec<f64> {
        let n = self.entries.len() as f64;
        let raw: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let p = self.priorities[i].powf(self.cfg.alpha) / total;
                (n * p).powf(-self.cfg.beta)
            })
            .collect();
        let max = raw.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
        raw.into_iter().map(|w| w / max).collect()
    }

    /// Sets `priority[i] = |tde| + eps_priority` for each pair.
    pub fn update_priorities(&mut self, indices: &[usize], tde: &[f64]) -> Result<()> {
        if indices.len() != tde.len() {
            return Err(crate::error::shape_err(indices.len(), tde.len()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.entries.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.entries.len(),
            });
        }
        for (&i, &d) in indices.iter().zip(tde) {
            let p = d.abs() + self.cfg.eps_priority;
            self.priorities[i] = p;
            self.tree.set(i, p.powf(self.cfg.alpha), p);
        }
        Ok(())
    }

    /// Probability that a single draw returns entry `i`.
    pub fn sampling_probability(&self, i: usize) -> Option<f64> {
        let p = self.priorities.get(i)?;
        Some(p.powf(self.cfg.alpha) / self.tree.total())
    }

    /// Entries in insertion order, oldest first, with priorities.
    pub(crate) fn ordered(&self) -> Vec<(&Transition, f64)> {
        let len = self.entries.len();
        let start = if len < self.cfg.capacity {
            0
        } else {
            self.next
        };
        (0..len)
            .map(|k| {
                let i = (start + k) % len;
                (&self.entries[i], self.priorities[i])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{seeded_rng, ActionId, Observation};

    fn tr(tag: f32) -> Transition {
        let s = Observation::flat(vec![tag]).unwrap();
        Transition::new(s.clone(), ActionId(0), 0.0, s, false).unwrap()
    }

    fn buffer(capacity: usize, alpha: f64) -> ReplayBuffer {
        ReplayBuffer::new(ReplayConfig {
            capacity,
            alpha,
            ..ReplayConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn first_push_gets_unit_priority() {
        let mut b = buffer(4, 0.6);
        b.push(tr(0.0));
        assert_eq!(b.priority(0), Some(1.0));
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = buffer(3, 0.6);
        for k in 0..4 {
            b.push(tr(k as f32));
        }
        assert_eq!(b.len(), 3);
        let tags: Vec<f32> = b.ordered().iter().map(|(t, _)| t.state.data()[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn new_entries_take_max_priority() {
        let mut b = buffer(8, 0.6);
        b.push(tr(0.0));
        b.push(tr(1.0));
        b.update_priorities(&[1], &[5.0]).unwrap();
        b.push(tr(2.0));
        assert!((b.priority(2).unwrap() - (5.0 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn priority_floor_and_offset() {
        let mut b = buffer(4, 0.6);
        b.push(tr(0.0));
        b.push(tr(1.0));
        b.update_priorities(&[0, 1], &[0.0, -1.0]).unwrap();
        assert_eq!(b.priority(0), Some(1e-6));
        assert_eq!(b.priority(1), Some(1.0 + 1e-6));
        assert!(matches!(
            b.update_priorities(&[2], &[1.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn sample_requires_enough_entries() {
        let mut b = buffer(4, 0.6);
        b.push(tr(0.0));
        let mut rng = seeded_rng(0);
        assert!(matches!(
            b.sample(2, &mut rng),
            Err(Error::BufferTooSmall { .. })
        ));
    }

    #[test]
    fn dominant_priority_dominates() {
        let mut b = buffer(16, 0.6);
        for k in 0..10 {
            b.push(tr(k as f32));
        }
        b.update_priorities(&(0..10).collect::<Vec<_>>(), &[1e-3; 10])
            .unwrap();
        b.update_priorities(&[7], &[1e9]).unwrap();
        let mut rng = seeded_rng(3);
        let mut hits = 0;
        for _ in 0..1000 {
            let s = b.sample(1, &mut rng).unwrap();
            hits += (s.indices[0] == 7) as usize;
        }
        assert!(hits > 990, "{hits}");
    }

    #[test]
    fn importance_weights_bounded_by_one() {
        let mut b = buffer(16, 0.6);
        for k in 0..10 {
            b.push(tr(k as f32));
        }
        b.update_priorities(&[0, 1, 2], &[3.0, 0.1, 9.0]).unwrap();
        let mut rng = seeded_rng(1);
        let s = b.sample(8, &mut rng).unwrap();
        assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0 + 1e-12));
        assert!(s.weights.iter().any(|&w| (w - 1.0).abs() < 1e-12));
    }
}

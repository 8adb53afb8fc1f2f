//! Prioritized experience replay backed by a sum tree.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 50_000;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay buffer")]
    Empty,
    #[error("priority must be finite and positive, got {0}")]
    BadPriority(f64),
}

/// Binary tree whose internal nodes hold the sum of their leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (`0 <= mass < total`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance weights `(n P(i))^-beta`, divided by their maximum.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrioritizedReplay<E> {
    capacity: usize,
    alpha: f64,
    floor: f64,
    data: Vec<E>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

impl<E> PrioritizedReplay<E> {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        PrioritizedReplay {
            capacity,
            alpha,
            floor: 1e-6,
            data: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn get(&self, i: usize) -> &E {
        &self.data[i]
    }
    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.data.iter()
    }

    /// Raw (pre-exponent) priority of slot `i`.
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i).powf(1.0 / self.alpha)
    }

    /// Stores `e` with the largest priority seen so far.
    pub fn push(&mut self, e: E) -> usize {
        let p = self.max_priority;
        self.push_with_priority(e, p).expect("max priority is valid")
    }

    /// Stores `e`, evicting the oldest entry when full. Returns its slot.
    pub fn push_with_priority(&mut self, e: E, priority: f64) -> Result<usize, ReplayError> {
        if !(priority.is_finite() && priority > 0.0) {
            return Err(ReplayError::BadPriority(priority));
        }
        let slot = self.next;
        if self.data.len() < self.capacity {
            self.data.push(e);
        } else {
            self.data[slot] = e;
        }
        self.tree.set(slot, priority.powf(self.alpha));
        self.max_priority = self.max_priority.max(priority);
        self.next = (self.next + 1) % self.capacity;
        Ok(slot)
    }

    /// Draws `batch` slots independently with probability proportional to
    /// `priority^alpha`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch, ReplayError> {
        if self.data.is_empty() {
            return Err(ReplayError::Empty);
        }
        let total = self.tree.total();
        let n = self.data.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mass = rng.gen::<f64>() * total;
            let i = self.tree.find(mass).min(self.data.len() - 1);
            let prob = self.tree.get(i) / total;
            indices.push(i);
            weights.push((n * prob).powf(-beta));
        }
        let max = weights.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        weights.iter_mut().for_each(|w| *w /= max);
        Ok(SampledBatch { indices, weights })
    }

    /// Sets the priority of each slot to `|td| + floor`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (i, td) in indices.iter().zip(td_errors) {
            let p = td.abs() + self.floor;
            let p = if p.is_finite() { p } else { self.max_priority };
            self.tree.set(*i, p.powf(self.alpha));
            self.max_priority = self.max_priority.max(p);
        }
    }
}

/// Linear interpolation from `start` to `end` as `progress` goes 0 to 1.
pub fn linear_schedule(start: f64, end: f64, progress: f64) -> f64 {
    let t = progress.clamp(0.0, 1.0);
    start + (end - start) * t
}

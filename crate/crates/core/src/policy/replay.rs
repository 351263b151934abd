//! Fixed-capacity replay memory.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    /// Normalized action in [−1, 1]².
    pub action: [f64; 2],
    pub reward: f64,
    pub next: Vec<f64>,
    pub done: bool,
}

/// Ring buffer overwriting its oldest entry once full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), head: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Experience> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

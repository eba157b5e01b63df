use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Action;

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience<S> {
    pub state: S,
    pub action: Action,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
}

/// Fixed-capacity FIFO memory with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    items: Vec<Experience<S>>,
    head: usize,
    pushed: u64,
}

impl<S> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends an experience, evicting the oldest one when full.
    pub fn push(&mut self, exp: Experience<S>) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.head] = exp;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    /// Stored experiences from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience<S>> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Draws `n` experiences uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Experience<S>>> {
        if self.items.len() < n || n == 0 {
            return Err(Error::Contract(format!(
                "cannot sample {n} experiences from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

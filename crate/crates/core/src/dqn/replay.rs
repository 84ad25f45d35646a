//! Experience replay with oldest-first eviction.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{domain, Result};

/// One pursuer's experience for a slot. `cost` is the pay-off increment,
/// i.e. the negated reward, so the learned Q estimates pay-off to go.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub cost: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(domain("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, k: usize) -> Option<&Transition> {
        self.items.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample of `batch` distinct transitions, or `None` when the
    /// buffer holds fewer than `batch`.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), batch);
        Some(idx.iter().map(|k| &self.items[k]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(k: usize) -> Transition {
        Transition {
            obs: vec![k as f64],
            action: k % 3,
            cost: 0.0,
            next_obs: vec![],
            terminal: false,
        }
    }

    #[test]
    fn bounded_and_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(1000).unwrap();
        for k in 0..100_000 {
            buf.push(t(k));
            assert!(buf.len() <= 1000);
        }
        assert_eq!(buf.get(0).unwrap().obs[0], 99_000.0);
        assert_eq!(buf.get(999).unwrap().obs[0], 99_999.0);
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_distinct_and_seeded() {
        let mut buf = ReplayBuffer::new(50).unwrap();
        for k in 0..40 {
            buf.push(t(k));
        }
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert!(buf.sample(41, &mut a).is_none());
        let sa: Vec<f64> = buf.sample(16, &mut a).unwrap().iter().map(|t| t.obs[0]).collect();
        let _ = buf.sample(41, &mut b);
        let sb: Vec<f64> = buf.sample(16, &mut b).unwrap().iter().map(|t| t.obs[0]).collect();
        assert_eq!(sa, sb);
        let mut sorted = sa.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }
}

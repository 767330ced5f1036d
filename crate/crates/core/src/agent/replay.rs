//! Fixed-capacity FIFO experience memory.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<u8>,
    /// Grid index chosen by each subsystem head.
    pub action: Vec<u16>,
    /// Reward credited to each head.
    pub reward: Vec<f64>,
    pub next_state: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
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

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Up to `n` distinct entries, uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: u8) -> Transition {
        Transition {
            state: vec![i],
            action: vec![0],
            reward: vec![i as f64],
            next_state: vec![i],
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().state, vec![2]);
        assert_eq!(b.get(2).unwrap().state, vec![4]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut got: Vec<u8> = b.sample(50, &mut rng).iter().map(|x| x.state[0]).collect();
        got.sort();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
        assert_eq!(b.sample(80, &mut rng).len(), 50);
        assert!(ReplayBuffer::new(4).sample(3, &mut rng).is_empty());
    }
}

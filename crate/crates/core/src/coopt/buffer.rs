use std::collections::VecDeque;

use crate::nn::ObservationWindow;

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub experiment_id: u64,
    pub generation: usize,
    pub f_loss: f64,
    pub label: usize,
    pub windows: Vec<ObservationWindow>,
}

/// The most recent experiments whose flocking loss reached the gate,
/// oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    kappa: f64,
    entries: VecDeque<BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, kappa: f64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self { capacity, kappa, entries: VecDeque::with_capacity(capacity) }
    }

    /// Inserts the entry if `f_loss <= kappa` and it has windows, evicting
    /// the oldest entry when full. Returns whether it was accepted.
    pub fn push(&mut self, entry: BufferEntry) -> bool {
        if !(entry.f_loss <= self.kappa) || entry.windows.is_empty() {
            return false;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Every window of every entry, in insertion order.
    pub fn windows(&self) -> Vec<&ObservationWindow> {
        self.entries.iter().flat_map(|e| e.windows.iter()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, f_loss: f64) -> BufferEntry {
        BufferEntry {
            experiment_id: id,
            generation: 0,
            f_loss,
            label: 0,
            windows: vec![ObservationWindow::new(1, 2, vec![0.0; 6], 0)],
        }
    }

    #[test]
    fn gate_and_eviction() {
        let mut b = ReplayBuffer::new(2, 2.0);
        assert!(!b.push(entry(0, 2.5)));
        assert!(b.push(entry(1, 2.0)));
        assert!(b.push(entry(2, 1.0)));
        assert!(b.push(entry(3, 0.5)));
        let ids: Vec<u64> = b.entries().map(|e| e.experiment_id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert!(!b.push(entry(4, f64::NAN)));
    }

    #[test]
    fn negative_infinite_kappa_rejects_all() {
        let mut b = ReplayBuffer::new(5, f64::NEG_INFINITY);
        assert!(!b.push(entry(0, -1e300)));
        assert!(b.is_empty());
    }
}

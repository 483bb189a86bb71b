use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::norm;

/// FIFO of key embeddings used as negatives.
///
/// Stored as a ring buffer; pushing into a full queue overwrites the oldest
/// entries. Slot order is not insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue<S> {
    capacity: usize,
    keys: Vec<Vec<S>>,
    /// Oracle speaker labels, kept for analysis only.
    labels: Vec<Option<usize>>,
    /// Step at which each entry was enqueued.
    stamps: Vec<u64>,
    next: usize,
}

impl<S: Scalar> NegativeQueue<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("queue capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            keys: Vec::with_capacity(capacity),
            labels: Vec::with_capacity(capacity),
            stamps: Vec::with_capacity(capacity),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[Vec<S>] {
        &self.keys
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn stamps(&self) -> &[u64] {
        &self.stamps
    }

    /// Enqueues a batch of unit-norm keys, evicting the oldest entries.
    pub fn push_batch(&mut self, keys: &[Vec<S>], labels: Option<&[usize]>, step: u64) -> Result<()> {
        if let Some(l) = labels {
            if l.len() != keys.len() {
                return Err(Error::ShapeMismatch("labels and keys differ in length".into()));
            }
        }
        for k in keys {
            let n = norm(k).to_f64_lossy();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::ShapeMismatch(format!("queue key has norm {n}")));
            }
            if let Some(first) = self.keys.first() {
                if first.len() != k.len() {
                    return Err(Error::ShapeMismatch("queue key dimension".into()));
                }
            }
        }
        for (i, k) in keys.iter().enumerate() {
            let label = labels.map(|l| l[i]);
            if self.keys.len() < self.capacity {
                self.keys.push(k.clone());
                self.labels.push(label);
                self.stamps.push(step);
            } else {
                self.keys[self.next] = k.clone();
                self.labels[self.next] = label;
                self.stamps[self.next] = step;
                self.next = (self.next + 1) % self.capacity;
            }
        }
        Ok(())
    }

    /// Slot that the next push overwrites once the queue is full.
    pub fn next_slot(&self) -> usize {
        self.next
    }

    /// Rebuilds a queue from its raw slots, preserving slot order.
    pub fn from_slots(
        capacity: usize,
        keys: Vec<Vec<S>>,
        labels: Vec<Option<usize>>,
        stamps: Vec<u64>,
        next: usize,
    ) -> Result<Self> {
        if capacity == 0 || keys.len() > capacity || labels.len() != keys.len() || stamps.len() != keys.len() {
            return Err(Error::ShapeMismatch("queue slots".into()));
        }
        if next >= capacity || (keys.len() < capacity && next != 0) {
            return Err(Error::ShapeMismatch("queue cursor".into()));
        }
        Ok(Self {
            capacity,
            keys,
            labels,
            stamps,
            next,
        })
    }

    /// Mean age in steps of the queued entries relative to `now`.
    pub fn mean_age(&self, now: u64) -> f64 {
        if self.stamps.is_empty() {
            return 0.0;
        }
        self.stamps.iter().map(|&s| now.saturating_sub(s) as f64).sum::<f64>() / self.stamps.len() as f64
    }

    /// Rebuilds a queue from stored entries (oldest first).
    pub fn from_entries(capacity: usize, entries: Vec<(Vec<S>, Option<usize>, u64)>) -> Result<Self> {
        let mut q = Self::new(capacity)?;
        for (k, l, s) in entries {
            let labels = l.map(|x| [x]);
            q.push_batch(std::slice::from_ref(&k), labels.as_ref().map(|a| &a[..]), s)?;
        }
        Ok(q)
    }

    /// Entries oldest first.
    pub fn entries(&self) -> Vec<(Vec<S>, Option<usize>, u64)> {
        let n = self.keys.len();
        let start = if n < self.capacity { 0 } else { self.next };
        (0..n)
            .map(|i| {
                let j = (start + i) % n.max(1);
                (self.keys[j].clone(), self.labels[j], self.stamps[j])
            })
            .collect()
    }
}

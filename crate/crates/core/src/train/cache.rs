//! FIFO cache of recent exo embeddings used as extra contrastive negatives.

use std::collections::VecDeque;

use ndarray::Array1;

/// Fixed-capacity FIFO of detached embeddings, each tagged with the identity
/// and take of the clip it came from so later batches can skip entries that
/// would actually be positives for an anchor.
#[derive(Debug, Clone)]
pub struct NegativeCache {
    capacity: usize,
    entries: VecDeque<CacheEntry>,
}

/// One cached embedding plus the provenance needed for positive filtering.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub identity_id: String,
    pub take_id: String,
    pub vector: Array1<f64>,
}

impl NegativeCache {
    /// Cache holding at most `capacity` vectors; zero disables caching.
    pub fn new(capacity: usize) -> Self {
        NegativeCache { capacity, entries: VecDeque::with_capacity(capacity.min(4096)) }
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

    /// Append an embedding, evicting the oldest entry when full.
    pub fn push(&mut self, identity_id: &str, take_id: &str, vector: Array1<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(CacheEntry {
            identity_id: identity_id.to_string(),
            take_id: take_id.to_string(),
            vector,
        });
    }

    /// Entries in insertion order (oldest first).
    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(x: f64) -> Array1<f64> {
        Array1::from(vec![x])
    }

    #[test]
    fn evicts_oldest_first_at_capacity() {
        let mut cache = NegativeCache::new(3);
        for i in 0..5 {
            cache.push(&format!("p{i}"), "t", vec1(i as f64));
        }
        assert_eq!(cache.len(), 3);
        let ids: Vec<&str> = cache.iter().map(|e| e.identity_id.as_str()).collect();
        assert_eq!(ids, ["p2", "p3", "p4"]);
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut cache = NegativeCache::new(0);
        cache.push("p0", "t", vec1(1.0));
        assert!(cache.is_empty());
    }

    #[test]
    fn keeps_provenance_with_each_vector() {
        let mut cache = NegativeCache::new(2);
        cache.push("alice", "take_3", vec1(0.5));
        let entry = cache.iter().next().unwrap();
        assert_eq!(entry.identity_id, "alice");
        assert_eq!(entry.take_id, "take_3");
        assert_eq!(entry.vector[0], 0.5);
    }
}

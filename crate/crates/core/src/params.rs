//! Anonymization parameters.

use std::collections::BTreeSet;

use crate::dataset::TermId;
use crate::error::{Error, Result};

/// Knobs for the whole anonymization pipeline. `k` and `m` carry the
/// guarantee (an adversary knowing up to `m` terms cannot narrow a record
/// down below `k` candidates); `max_cluster_size` bounds horizontal clusters.
#[derive(Debug, Clone)]
pub struct Params {
    pub k: usize,
    pub m: usize,
    pub max_cluster_size: usize,
    /// Drives subrecord shuffling (when enabled) and nothing else.
    pub seed: u64,
    /// Merge clusters with overlapping term chunks after partitioning.
    pub refine: bool,
    /// Publish subrecord lists in seeded random order instead of sorted.
    pub shuffle: bool,
    /// Terms that must stay in term chunks and never steer a split.
    pub sensitive: BTreeSet<TermId>,
}

impl Params {
    pub fn new(k: usize, m: usize, max_cluster_size: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParams(format!("k must be at least 2, got {k}")));
        }
        if m < 1 {
            return Err(Error::InvalidParams("m must be at least 1".into()));
        }
        if max_cluster_size < k {
            return Err(Error::InvalidParams(format!(
                "max cluster size {max_cluster_size} is below k={k}"
            )));
        }
        Ok(Params {
            k,
            m,
            max_cluster_size,
            seed: 0,
            refine: true,
            shuffle: false,
            sensitive: BTreeSet::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Params::new(2, 1, 2).is_ok());
        assert!(matches!(Params::new(1, 2, 30), Err(Error::InvalidParams(_))));
        assert!(matches!(Params::new(2, 0, 30), Err(Error::InvalidParams(_))));
        assert!(matches!(Params::new(5, 2, 4), Err(Error::InvalidParams(_))));
    }
}

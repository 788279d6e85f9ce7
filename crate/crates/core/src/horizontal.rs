//! Horizontal partitioning: group records into bounded clusters by
//! recursively splitting on the most frequent term.

use std::collections::HashSet;

use crate::dataset::{compute_supports, Dataset, TermId};
use crate::params::Params;

/// A cluster of records, identified by their positions in the dataset.
/// Positions stay in dataset order all the way through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCluster {
    pub positions: Vec<usize>,
}

impl RawCluster {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Splits the dataset into clusters of fewer than `max_cluster_size` records.
/// Each level separates the records containing the currently most frequent
/// term (ties to the smallest id) from the rest; the chosen term is ignored
/// further down its own branch so progress is guaranteed. When every term is
/// ignored or the records share no unignored term, the list is halved by
/// position. Sensitive terms never steer a split.
pub fn horpart(data: &Dataset, params: &Params) -> Vec<RawCluster> {
    let positions: Vec<usize> = (0..data.records.len()).collect();
    let mut ignore: HashSet<TermId> = params.sensitive.iter().copied().collect();
    let mut out = Vec::new();
    split(data, positions, params.max_cluster_size, &mut ignore, &mut out);
    out
}

fn split(
    data: &Dataset,
    positions: Vec<usize>,
    max_cluster_size: usize,
    ignore: &mut HashSet<TermId>,
    out: &mut Vec<RawCluster>,
) {
    if positions.is_empty() {
        return;
    }
    if positions.len() < max_cluster_size {
        out.push(RawCluster { positions });
        return;
    }

    let supports = compute_supports(positions.iter().map(|&p| &data.records[p]));
    let mut best: Option<(usize, TermId)> = None;
    for (t, c) in supports.iter() {
        if ignore.contains(&t) {
            continue;
        }
        let better = match best {
            None => true,
            Some((bc, bt)) => c > bc || (c == bc && t < bt),
        };
        if better {
            best = Some((c, t));
        }
    }

    match best {
        Some((_, term)) => {
            let (with, without): (Vec<usize>, Vec<usize>) =
                positions.into_iter().partition(|&p| data.records[p].contains(term));
            ignore.insert(term);
            split(data, with, max_cluster_size, ignore, out);
            ignore.remove(&term);
            split(data, without, max_cluster_size, ignore, out);
        }
        None => {
            let rest = positions.len() / 2;
            let mut first = positions;
            let second = first.split_off(first.len() - rest);
            split(data, first, max_cluster_size, ignore, out);
            split(data, second, max_cluster_size, ignore, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::testdata::example_web_log;

    fn params(k: usize, max: usize) -> Params {
        Params::new(k, 2, max).unwrap()
    }

    fn sizes(clusters: &[RawCluster]) -> Vec<usize> {
        clusters.iter().map(|c| c.len()).collect()
    }

    #[test]
    fn worked_example_splits_on_madonna_then_ikea() {
        let d = example_web_log();
        let clusters = horpart(&d, &params(3, 5));
        let got: Vec<Vec<usize>> = clusters.iter().map(|c| c.positions.clone()).collect();
        assert_eq!(got, vec![vec![0, 2, 6, 9], vec![1, 4, 5, 7], vec![3, 8]]);
    }

    #[test]
    fn small_input_is_a_single_cluster() {
        let d = example_web_log();
        let clusters = horpart(&d, &params(3, 11));
        assert_eq!(sizes(&clusters), vec![10]);
    }

    #[test]
    fn boundary_size_still_splits() {
        let d = example_web_log();
        // |D| == max_cluster_size must not stop the recursion.
        let clusters = horpart(&d, &params(3, 10));
        assert!(clusters.len() > 1);
    }

    #[test]
    fn identical_records_fall_back_to_halving() {
        let (d, _) = Dataset::parse(&"a\n".repeat(12)).unwrap();
        let clusters = horpart(&d, &params(2, 5));
        assert_eq!(sizes(&clusters), vec![3, 3, 3, 3]);
    }

    #[test]
    fn sensitive_terms_never_steer_a_split() {
        let d = example_web_log();
        let mut p = params(3, 5);
        p.sensitive.insert(2); // madonna, the top term
        let clusters = horpart(&d, &p);
        // First split now happens on the runner-up instead.
        assert_ne!(
            clusters.iter().map(|c| c.positions.clone()).collect::<Vec<_>>(),
            horpart(&d, &params(3, 5)).iter().map(|c| c.positions.clone()).collect::<Vec<_>>()
        );
        assert!(clusters.iter().all(|c| c.len() < 5));
    }

    #[test]
    fn clusters_partition_the_dataset() {
        let d = crate::synth::generate(400, 60, 6.0, 9).unwrap();
        let clusters = horpart(&d, &params(3, 12));
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.positions.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..400).collect::<Vec<_>>());
        assert!(clusters.iter().all(|c| c.len() < 12 && !c.is_empty()));
    }
}

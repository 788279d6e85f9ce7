//! End-to-end anonymization: horizontal partitioning, per-cluster vertical
//! partitioning, optional refining, and publication.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, Record};
use crate::error::{Error, Result};
use crate::horizontal::{horpart, RawCluster};
use crate::model::{ClusterNode, DisassociatedDataset, Joint};
use crate::params::Params;
use crate::refine::{refine, MergeRecord, WorkLeaf, WorkNode};
use crate::vertical::verpart;

/// Runs the full pipeline. Also returns the committed merges so callers can
/// report what refining recovered.
pub fn anonymize(
    data: &Dataset,
    params: &Params,
) -> Result<(DisassociatedDataset, Vec<MergeRecord>)> {
    if data.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.records.len() < params.k {
        return Err(Error::InvalidParams(format!(
            "dataset has {} records, fewer than k = {}",
            data.records.len(),
            params.k
        )));
    }

    let clusters = repair_cluster_sizes(horpart(data, params), params);
    let leaves: Vec<WorkLeaf> = clusters
        .into_par_iter()
        .map(|cl| WorkLeaf { leaf: verpart(data, &cl, params), positions: cl.positions })
        .collect();
    let mut forest: Vec<WorkNode> = leaves.into_iter().map(WorkNode::Leaf).collect();

    let merges = if params.refine {
        let (refined, merges) = refine(data, forest, params);
        forest = refined;
        merges
    } else {
        Vec::new()
    };

    let out = DisassociatedDataset {
        k: params.k,
        m: params.m,
        dictionary: data.dictionary.clone(),
        forest: publish(forest, params),
    };
    Ok((out, merges))
}

/// The horizontal pass bounds cluster size from above but not below: a split
/// can strand fewer than k records in a cluster, and no vertical chunking of
/// such a cluster can reach k matching records for terms it holds
/// exclusively. Merge each undersized cluster into its successor (chaining
/// until the merge reaches k), fold a trailing runt backward into the last
/// emitted cluster, and re-split anything the merges pushed past the size
/// cap. Splitting in halves keeps both parts at k or more whenever the
/// oversized cluster has at least 2k records, which holds whenever
/// maxClusterSize >= 2k - 1.
pub(crate) fn repair_cluster_sizes(clusters: Vec<RawCluster>, params: &Params) -> Vec<RawCluster> {
    let k = params.k;
    let mut out: Vec<RawCluster> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    for c in clusters {
        let mut positions = std::mem::take(&mut pending);
        positions.extend(c.positions);
        if positions.len() < k {
            pending = positions;
        } else {
            emit_parts(positions, params, &mut out);
        }
    }
    if !pending.is_empty() {
        match out.pop() {
            Some(last) => {
                let mut positions = last.positions;
                positions.extend(pending);
                emit_parts(positions, params, &mut out);
            }
            // Total dataset smaller than k; anonymize rejects that upstream.
            None => out.push(RawCluster { positions: pending }),
        }
    }
    out
}

fn emit_parts(positions: Vec<usize>, params: &Params, out: &mut Vec<RawCluster>) {
    if positions.len() <= params.max_cluster_size || positions.len() < 2 * params.k {
        out.push(RawCluster { positions });
        return;
    }
    let rest = positions.len() / 2;
    let mut first = positions;
    let second = first.split_off(first.len() - rest);
    emit_parts(first, params, out);
    emit_parts(second, params, out);
}

/// Turns the working forest into its published form. Subrecord order inside
/// each chunk must not leak record identity, so it is either canonicalized
/// by sorting or shuffled with the seeded generator.
pub fn publish(forest: Vec<WorkNode>, params: &Params) -> Vec<ClusterNode> {
    let mut rng = params.shuffle.then(|| ChaCha8Rng::seed_from_u64(params.seed));
    forest.into_iter().map(|n| publish_node(n, &mut rng)).collect()
}

fn publish_node(node: WorkNode, rng: &mut Option<ChaCha8Rng>) -> ClusterNode {
    match node {
        WorkNode::Leaf(wl) => {
            let mut leaf = wl.leaf;
            for c in &mut leaf.record_chunks {
                arrange(&mut c.subrecords, rng);
            }
            ClusterNode::Leaf(leaf)
        }
        WorkNode::Joint { children, mut shared_chunks } => {
            let children = children.into_iter().map(|c| publish_node(c, rng)).collect();
            for c in &mut shared_chunks {
                arrange(&mut c.subrecords, rng);
            }
            ClusterNode::Joint(Joint { children, shared_chunks })
        }
    }
}

fn arrange(subrecords: &mut [Record], rng: &mut Option<ChaCha8Rng>) {
    match rng {
        Some(r) => subrecords.shuffle(r),
        None => subrecords.sort_unstable(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::example_web_log;

    fn raw(positions: Vec<usize>) -> RawCluster {
        RawCluster { positions }
    }

    #[test]
    fn undersized_trailing_cluster_merges_backward_and_resplits() {
        let p = Params::new(3, 2, 5).unwrap();
        let clusters = vec![raw(vec![0, 2, 6, 9]), raw(vec![1, 4, 5, 7]), raw(vec![3, 8])];
        let repaired = repair_cluster_sizes(clusters, &p);
        let sizes: Vec<usize> = repaired.iter().map(|c| c.positions.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(repaired[1].positions, vec![1, 4, 5]);
        assert_eq!(repaired[2].positions, vec![7, 3, 8]);
    }

    #[test]
    fn undersized_clusters_chain_forward_until_k() {
        let p = Params::new(4, 2, 6).unwrap();
        let clusters = vec![raw(vec![0]), raw(vec![1]), raw(vec![2, 3]), raw(vec![4, 5, 6, 7])];
        let repaired = repair_cluster_sizes(clusters, &p);
        assert_eq!(repaired.len(), 2);
        assert_eq!(repaired[0].positions, vec![0, 1, 2, 3]);
        assert_eq!(repaired[1].positions, vec![4, 5, 6, 7]);
    }

    #[test]
    fn repair_keeps_well_formed_clusters_untouched() {
        let p = Params::new(2, 2, 4).unwrap();
        let clusters = vec![raw(vec![0, 1]), raw(vec![2, 3, 4])];
        let repaired = repair_cluster_sizes(clusters, &p);
        assert_eq!(repaired.len(), 2);
        assert_eq!(repaired[0].positions, vec![0, 1]);
        assert_eq!(repaired[1].positions, vec![2, 3, 4]);
    }

    #[test]
    fn oversized_merge_splits_into_parts_no_smaller_than_k() {
        let p = Params::new(3, 2, 6).unwrap();
        // 6-record cluster followed by a runt: backward merge makes 8 > 6.
        let clusters = vec![raw((0..6).collect()), raw(vec![6, 7])];
        let repaired = repair_cluster_sizes(clusters, &p);
        let sizes: Vec<usize> = repaired.iter().map(|c| c.positions.len()).collect();
        assert_eq!(sizes, vec![4, 4]);
        let mut all: Vec<usize> = repaired.iter().flat_map(|c| c.positions.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn anonymize_rejects_datasets_smaller_than_k() {
        let (d, _) = Dataset::parse("a b\nb c\n").unwrap();
        let p = Params::new(3, 2, 30).unwrap();
        assert!(matches!(anonymize(&d, &p), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn worked_example_end_to_end_shapes() {
        let d = example_web_log();
        let p = Params::new(3, 2, 5).unwrap();
        let (out, _) = anonymize(&d, &p).unwrap();
        assert_eq!(out.k, 3);
        assert_eq!(out.m, 2);
        assert_eq!(out.forest.iter().map(|n| n.size()).sum::<usize>(), 10);
        out.validate().unwrap();
    }

    #[test]
    fn anonymize_is_deterministic() {
        let d = crate::synth::generate(300, 40, 5.0, 11).unwrap();
        let p = Params::new(3, 2, 12).unwrap();
        let a = anonymize(&d, &p).unwrap().0.to_json();
        let b = anonymize(&d, &p).unwrap().0.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_changes_order_but_not_content() {
        let d = crate::synth::generate(200, 30, 5.0, 7).unwrap();
        let mut p = Params::new(3, 2, 12).unwrap();
        let (plain, _) = anonymize(&d, &p).unwrap();
        p.shuffle = true;
        p.seed = 5;
        let (shuffled, _) = anonymize(&d, &p).unwrap();

        let canon = |ds: &DisassociatedDataset| -> Vec<Vec<Vec<Record>>> {
            ds.forest
                .iter()
                .map(|n| {
                    n.leaves()
                        .iter()
                        .flat_map(|l| l.record_chunks.iter())
                        .map(|c| {
                            let mut subs = c.subrecords.clone();
                            subs.sort_unstable();
                            subs
                        })
                        .collect()
                })
                .collect()
        };
        assert_eq!(canon(&plain), canon(&shuffled));
        assert_ne!(plain.to_json(), shuffled.to_json());
    }

    #[test]
    fn no_refine_leaves_forest_flat() {
        let d = example_web_log();
        let mut p = Params::new(3, 2, 5).unwrap();
        p.refine = false;
        let (out, merges) = anonymize(&d, &p).unwrap();
        assert!(merges.is_empty());
        assert!(out.forest.iter().all(|n| matches!(n, ClusterNode::Leaf(_))));
    }

    use crate::dataset::Dataset;
    use crate::error::Error;
}

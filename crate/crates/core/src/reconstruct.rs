//! Sampling plausible original datasets from a published forest.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Record, TermId};
use crate::error::{Error, Result};
use crate::model::{ClusterNode, DisassociatedDataset, Leaf};

/// How term-chunk terms are spread over their leaf's records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermPolicy {
    /// Each term lands on one random record (plus any record that would
    /// otherwise stay empty).
    Single,
    /// Each term lands on one random record and on every other record of the
    /// leaf independently with probability 1/size.
    Uniform,
}

struct LeafInfo<'a> {
    leaf: &'a Leaf,
    start: usize,
    /// Union of the leaf's record-chunk domains. Seeds the per-leaf claimed
    /// set: a shared subrecord may only go to records of leaves where none of
    /// its terms are claimed by a record chunk or by a shared chunk of a
    /// nested joint, which keeps every projection exact without backtracking.
    rc_domains: BTreeSet<TermId>,
}

/// Draws one original dataset consistent with the published forest. Each
/// top-level cluster uses its own generator stream, so output is independent
/// of evaluation order. Random greedy placement can corner itself; each
/// cluster retries up to 10x its record count before giving up.
pub fn reconstruct(
    ds: &DisassociatedDataset,
    seed: u64,
    policy: TermPolicy,
) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, node) in ds.forest.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        records.extend(reconstruct_node(node, i, policy, &mut rng)?);
    }
    Ok(Dataset { records, dictionary: ds.dictionary.clone() })
}

fn reconstruct_node(
    node: &ClusterNode,
    cluster: usize,
    policy: TermPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Record>> {
    let leaves = leaf_infos(node);
    let slot_leaf: Vec<usize> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, info)| std::iter::repeat(li).take(info.leaf.size))
        .collect();

    let attempts = 10 * node.size().max(1);
    for _ in 0..attempts {
        if let Some(slots) = attempt(node, &leaves, &slot_leaf, policy, rng) {
            return Ok(slots
                .into_iter()
                .map(|s| Record::from_sorted(s.into_iter().collect()))
                .collect());
        }
    }
    Err(Error::ReconstructionStuck { cluster, attempts })
}

fn leaf_infos(node: &ClusterNode) -> Vec<LeafInfo<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    collect_leaf_infos(node, &mut start, &mut out);
    out
}

fn collect_leaf_infos<'a>(node: &'a ClusterNode, start: &mut usize, out: &mut Vec<LeafInfo<'a>>) {
    match node {
        ClusterNode::Leaf(l) => {
            let rc_domains =
                l.record_chunks.iter().flat_map(|c| c.domain.iter().copied()).collect();
            out.push(LeafInfo { leaf: l, start: *start, rc_domains });
            *start += l.size;
        }
        ClusterNode::Joint(j) => {
            for c in &j.children {
                collect_leaf_infos(c, start, out);
            }
        }
    }
}

fn attempt(
    node: &ClusterNode,
    leaves: &[LeafInfo<'_>],
    slot_leaf: &[usize],
    policy: TermPolicy,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<BTreeSet<TermId>>> {
    let mut slots: Vec<BTreeSet<TermId>> = vec![BTreeSet::new(); slot_leaf.len()];

    // Record chunks: one random record slot per subrecord, within the leaf.
    for info in leaves {
        for chunk in &info.leaf.record_chunks {
            let mut order: Vec<usize> = (0..info.leaf.size).collect();
            order.shuffle(rng);
            if chunk.subrecords.len() > order.len() {
                return None;
            }
            for (sub, &off) in chunk.subrecords.iter().zip(&order) {
                slots[info.start + off].extend(sub.terms().iter().copied());
            }
        }
    }

    let mut claimed: Vec<BTreeSet<TermId>> =
        leaves.iter().map(|info| info.rc_domains.clone()).collect();
    if !assign_shared(node, 0, leaves, slot_leaf, &mut 0, &mut claimed, &mut slots, rng) {
        return None;
    }

    // Term-chunk terms, then mandatory repair: originals have no empty records.
    for info in leaves {
        let size = info.leaf.size;
        for &t in &info.leaf.term_chunk {
            let primary = rng.gen_range(0..size);
            slots[info.start + primary].insert(t);
            if policy == TermPolicy::Uniform {
                for off in 0..size {
                    if off != primary && rng.gen_range(0..size) == 0 {
                        slots[info.start + off].insert(t);
                    }
                }
            }
        }
        for off in 0..size {
            if slots[info.start + off].is_empty() {
                let Some(&t) = pick(&info.leaf.term_chunk, rng) else {
                    return None;
                };
                slots[info.start + off].insert(t);
            }
        }
    }
    Some(slots)
}

/// Places every shared chunk of every joint below `node`, innermost joints
/// first. `claimed[li]` holds the terms leaf `li` already accounts for: its
/// record-chunk domains plus the domains of every shared chunk placed at a
/// joint nested below the current one. A subrecord only goes to slots whose
/// leaf claims none of its terms; once a joint's chunks are placed, their
/// domains become claimed for every leaf it spans, so enclosing chunks that
/// reuse a term stay out of the span that already carries it. Returns false
/// when some subrecord has no slot left.
fn assign_shared(
    node: &ClusterNode,
    base: usize,
    leaves: &[LeafInfo<'_>],
    slot_leaf: &[usize],
    next_leaf: &mut usize,
    claimed: &mut [BTreeSet<TermId>],
    slots: &mut [BTreeSet<TermId>],
    rng: &mut ChaCha8Rng,
) -> bool {
    let ClusterNode::Joint(j) = node else {
        *next_leaf += 1;
        return true;
    };
    let first_leaf = *next_leaf;
    let mut child_base = base;
    for c in &j.children {
        if !assign_shared(c, child_base, leaves, slot_leaf, next_leaf, claimed, slots, rng) {
            return false;
        }
        child_base += c.size();
    }
    let span = base..child_base;

    for chunk in &j.shared_chunks {
        let mut order: Vec<usize> = (0..chunk.subrecords.len()).collect();
        order.shuffle(rng);
        let mut used = vec![false; slot_leaf.len()];
        for &si in &order {
            let sub = &chunk.subrecords[si];
            let eligible: Vec<usize> = span
                .clone()
                .filter(|&s| {
                    !used[s]
                        && sub.terms().iter().all(|t| !claimed[slot_leaf[s]].contains(t))
                })
                .collect();
            let Some(&slot) = pick(&eligible, rng) else {
                return false;
            };
            used[slot] = true;
            slots[slot].extend(sub.terms().iter().copied());
        }
    }
    for li in first_leaf..*next_leaf {
        for chunk in &j.shared_chunks {
            claimed[li].extend(chunk.domain.iter().copied());
        }
    }
    true
}

fn pick<'a, T>(items: &'a [T], rng: &mut ChaCha8Rng) -> Option<&'a T> {
    items.choose(rng)
}

/// Verifies that `data` really is an original of `ds`: record counts line up
/// per cluster, every record-chunk bag is the exact projection of its leaf's
/// records, every shared-chunk bag is the exact projection of the joint's
/// records onto the domain minus each leaf's claimed terms (record-chunk
/// domains plus nested shared-chunk domains, which is exactly what the terms
/// still sat in term chunks at publish time), term-chunk terms all occur in
/// their leaf, and no record holds a term its cluster cannot account for.
pub fn check_closure(ds: &DisassociatedDataset, data: &Dataset) -> std::result::Result<(), String> {
    let total: usize = ds.forest.iter().map(|n| n.size()).sum();
    if total != data.records.len() {
        return Err(format!("{} records for {} slots", data.records.len(), total));
    }
    let mut start = 0;
    for (i, node) in ds.forest.iter().enumerate() {
        let size = node.size();
        let records = &data.records[start..start + size];
        check_node_closure(node, records, 0, &format!("forest[{i}]"))?;
        start += size;
    }
    Ok(())
}

fn check_node_closure(
    node: &ClusterNode,
    records: &[Record],
    base: usize,
    at: &str,
) -> std::result::Result<(), String> {
    let leaves = leaf_infos(node);
    let slot_leaf: Vec<usize> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, info)| std::iter::repeat(li).take(info.leaf.size))
        .collect();

    // Every record term must be explainable by its own leaf or an enclosing
    // shared chunk.
    let mut explainable: Vec<BTreeSet<TermId>> = leaves
        .iter()
        .map(|info| {
            let mut s = info.rc_domains.clone();
            s.extend(info.leaf.term_chunk.iter().copied());
            s
        })
        .collect();
    collect_shared_scope(node, 0, &leaves, &slot_leaf, &mut explainable);
    for (slot, r) in records.iter().enumerate() {
        let li = slot_leaf[slot];
        if let Some(&t) = r.terms().iter().find(|t| !explainable[li].contains(t)) {
            return Err(format!("{at}: record {slot} holds unexplained term {t}"));
        }
    }

    let mut claimed: Vec<BTreeSet<TermId>> =
        leaves.iter().map(|info| info.rc_domains.clone()).collect();
    check_chunks_closure(node, records, base, &leaves, &mut 0, &mut claimed, at)?;

    for (li, info) in leaves.iter().enumerate() {
        let leaf_records = &records[info.start..info.start + info.leaf.size];
        for &t in &info.leaf.term_chunk {
            if !leaf_records.iter().any(|r| r.contains(t)) {
                return Err(format!("{at}: term-chunk term {t} missing from leaf {li}"));
            }
        }
        for (slot, r) in leaf_records.iter().enumerate() {
            if r.is_empty() {
                return Err(format!("{at}: empty record in slot {}", info.start + slot));
            }
        }
    }
    Ok(())
}

fn collect_shared_scope(
    node: &ClusterNode,
    base: usize,
    leaves: &[LeafInfo<'_>],
    slot_leaf: &[usize],
    explainable: &mut [BTreeSet<TermId>],
) {
    let ClusterNode::Joint(j) = node else { return };
    let mut child_base = base;
    for c in &j.children {
        collect_shared_scope(c, child_base, leaves, slot_leaf, explainable);
        child_base += c.size();
    }
    let leaf_range: BTreeSet<usize> = (base..child_base).map(|s| slot_leaf[s]).collect();
    for chunk in &j.shared_chunks {
        for &li in &leaf_range {
            for &t in &chunk.domain {
                if !leaves[li].rc_domains.contains(&t) {
                    explainable[li].insert(t);
                }
            }
        }
    }
}

fn check_chunks_closure(
    node: &ClusterNode,
    records: &[Record],
    base: usize,
    leaves: &[LeafInfo<'_>],
    next_leaf: &mut usize,
    claimed: &mut [BTreeSet<TermId>],
    at: &str,
) -> std::result::Result<(), String> {
    match node {
        ClusterNode::Leaf(l) => {
            *next_leaf += 1;
            let local = &records[base..base + l.size];
            for (ci, c) in l.record_chunks.iter().enumerate() {
                let mut got: Vec<Record> = local
                    .iter()
                    .map(|r| r.project(&c.domain))
                    .filter(|p| !p.is_empty())
                    .collect();
                got.sort_unstable();
                let mut want = c.subrecords.clone();
                want.sort_unstable();
                if got != want {
                    return Err(format!(
                        "{at}.record_chunks[{ci}]: projection does not match the bag"
                    ));
                }
            }
            Ok(())
        }
        ClusterNode::Joint(j) => {
            let first_leaf = *next_leaf;
            let mut child_base = base;
            for (ci, c) in j.children.iter().enumerate() {
                check_chunks_closure(
                    c,
                    records,
                    child_base,
                    leaves,
                    next_leaf,
                    claimed,
                    &format!("{at}.children[{ci}]"),
                )?;
                child_base += c.size();
            }
            // A record contributes to a chunk through the part of the domain
            // its leaf has not claimed deeper down; claimed terms were gone
            // from the term chunks before this joint's chunks were built.
            for (si, chunk) in j.shared_chunks.iter().enumerate() {
                let mut got: Vec<Record> = Vec::new();
                for li in first_leaf..*next_leaf {
                    let info = &leaves[li];
                    let eff: Vec<TermId> = chunk
                        .domain
                        .iter()
                        .copied()
                        .filter(|t| !claimed[li].contains(t))
                        .collect();
                    if eff.is_empty() {
                        continue;
                    }
                    for r in &records[info.start..info.start + info.leaf.size] {
                        let p = r.project(&eff);
                        if !p.is_empty() {
                            got.push(p);
                        }
                    }
                }
                got.sort_unstable();
                let mut want = chunk.subrecords.clone();
                want.sort_unstable();
                if got != want {
                    return Err(format!(
                        "{at}.shared_chunks[{si}]: projection does not match the bag"
                    ));
                }
            }
            for li in first_leaf..*next_leaf {
                for chunk in &j.shared_chunks {
                    claimed[li].extend(chunk.domain.iter().copied());
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, RecordChunk, SharedChunk};
    use crate::params::Params;
    use crate::pipeline::anonymize;
    use crate::testdata::example_web_log;

    #[test]
    fn same_seed_same_output() {
        let d = crate::synth::generate(200, 40, 5.0, 3).unwrap();
        let p = Params::new(3, 2, 12).unwrap();
        let (ds, _) = anonymize(&d, &p).unwrap();
        let a = reconstruct(&ds, 7, TermPolicy::Single).unwrap();
        let b = reconstruct(&ds, 7, TermPolicy::Single).unwrap();
        assert_eq!(a.records, b.records);
        let c = reconstruct(&ds, 8, TermPolicy::Single).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn reconstructions_close_over_the_published_form() {
        let d = crate::synth::generate(400, 60, 6.0, 9).unwrap();
        let p = Params::new(3, 2, 14).unwrap();
        let (ds, _) = anonymize(&d, &p).unwrap();
        for seed in 0..5 {
            for policy in [TermPolicy::Single, TermPolicy::Uniform] {
                let rec = reconstruct(&ds, seed, policy).unwrap();
                check_closure(&ds, &rec).unwrap();
            }
        }
    }

    #[test]
    fn worked_example_closes_with_refining() {
        let d = example_web_log();
        let p = Params::new(3, 2, 5).unwrap();
        let (ds, _) = anonymize(&d, &p).unwrap();
        let rec = reconstruct(&ds, 0, TermPolicy::Single).unwrap();
        check_closure(&ds, &rec).unwrap();
    }

    #[test]
    fn single_policy_places_each_term_once_when_slots_are_covered() {
        let (d, _) = Dataset::parse("x y z\nx y\nx y\nx y\nx y\n").unwrap();
        let p = Params::new(3, 2, 30).unwrap();
        let (ds, _) = anonymize(&d, &p).unwrap();
        let z = 2;
        let mut uniform_spread = false;
        for seed in 0..20 {
            let single = reconstruct(&ds, seed, TermPolicy::Single).unwrap();
            assert_eq!(single.records.iter().filter(|r| r.contains(z)).count(), 1);
            let uniform = reconstruct(&ds, seed, TermPolicy::Uniform).unwrap();
            let n = uniform.records.iter().filter(|r| r.contains(z)).count();
            assert!(n >= 1);
            uniform_spread |= n > 1;
            check_closure(&ds, &uniform).unwrap();
        }
        assert!(uniform_spread, "uniform policy never spread the term in 20 seeds");
    }

    #[test]
    fn unfillable_cluster_reports_stuck() {
        let ds = DisassociatedDataset {
            k: 2,
            m: 2,
            dictionary: crate::dataset::TermDictionary::from_tokens(vec!["a".into()]).unwrap(),
            forest: vec![ClusterNode::Leaf(Leaf {
                size: 2,
                record_chunks: vec![],
                term_chunk: vec![],
            })],
        };
        assert!(matches!(
            reconstruct(&ds, 0, TermPolicy::Single),
            Err(Error::ReconstructionStuck { cluster: 0, .. })
        ));
    }

    #[test]
    fn shared_subrecords_avoid_leaves_that_link_their_terms() {
        // Term 1 is linked in the first leaf, so shared {1} subrecords must
        // all land in the two chunkless leaves; closure would fail otherwise.
        let rec = |ids: &[TermId]| Record::new(ids.to_vec());
        let node = ClusterNode::Joint(Joint {
            children: vec![
                ClusterNode::Leaf(Leaf {
                    size: 3,
                    record_chunks: vec![RecordChunk {
                        domain: vec![0, 1],
                        subrecords: vec![rec(&[0, 1]); 3],
                    }],
                    term_chunk: vec![],
                }),
                ClusterNode::Leaf(Leaf { size: 2, record_chunks: vec![], term_chunk: vec![] }),
                ClusterNode::Leaf(Leaf { size: 2, record_chunks: vec![], term_chunk: vec![] }),
            ],
            shared_chunks: vec![
                SharedChunk { domain: vec![1], subrecords: vec![rec(&[1]); 3], strict_k: true },
                SharedChunk { domain: vec![2], subrecords: vec![rec(&[2]); 3], strict_k: false },
            ],
        });
        let ds = DisassociatedDataset {
            k: 2,
            m: 2,
            dictionary: crate::dataset::TermDictionary::from_tokens(vec![
                "a".into(),
                "b".into(),
                "c".into(),
            ])
            .unwrap(),
            forest: vec![node],
        };
        for seed in 0..10 {
            let data = reconstruct(&ds, seed, TermPolicy::Single).unwrap();
            check_closure(&ds, &data).unwrap();
            // All three {1} subrecords land in the chunkless leaves; the
            // first leaf's copies of term 1 come from its record chunk only.
            assert_eq!(data.records[3..7].iter().filter(|r| r.contains(1)).count(), 3);
            for r in &data.records[0..3] {
                assert!(r.contains(0) && r.contains(1));
            }
            // Term 2 is linked nowhere, so its subrecords may land anywhere.
            assert_eq!(data.records.iter().filter(|r| r.contains(2)).count(), 3);
        }
    }

    #[test]
    fn nested_chunks_reusing_a_term_keep_their_spans_apart() {
        // Term 0 sits in a shared chunk of the inner joint and again in one
        // of the outer joint. The outer copies must stay out of the inner
        // span, otherwise the inner projection would overcount.
        let rec = |ids: &[TermId]| Record::new(ids.to_vec());
        let chunkless = |size: usize, tc: Vec<TermId>| {
            ClusterNode::Leaf(Leaf { size, record_chunks: vec![], term_chunk: tc })
        };
        let inner = ClusterNode::Joint(Joint {
            children: vec![chunkless(2, vec![1]), chunkless(2, vec![2])],
            shared_chunks: vec![SharedChunk {
                domain: vec![0],
                subrecords: vec![rec(&[0]); 2],
                strict_k: false,
            }],
        });
        let outer = ClusterNode::Joint(Joint {
            children: vec![inner, chunkless(2, vec![3])],
            shared_chunks: vec![SharedChunk {
                domain: vec![0],
                subrecords: vec![rec(&[0]); 2],
                strict_k: true,
            }],
        });
        let ds = DisassociatedDataset {
            k: 2,
            m: 2,
            dictionary: crate::dataset::TermDictionary::from_tokens(vec![
                "a".into(),
                "b".into(),
                "c".into(),
                "d".into(),
            ])
            .unwrap(),
            forest: vec![outer],
        };
        for seed in 0..10 {
            let data = reconstruct(&ds, seed, TermPolicy::Single).unwrap();
            check_closure(&ds, &data).unwrap();
            assert_eq!(data.records[0..4].iter().filter(|r| r.contains(0)).count(), 2);
            assert!(data.records[4].contains(0) && data.records[5].contains(0));
        }
    }

    use crate::dataset::Dataset;
    use crate::error::Error;
}

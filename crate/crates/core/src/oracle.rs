//! Exhaustive ground-truth checking of the anonymity guarantee on small
//! clusters, by enumerating every original dataset consistent with a
//! published cluster tree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::ControlFlow;

use crate::dataset::{Record, TermId};
use crate::error::{Error, Result};
use crate::model::ClusterNode;

/// Size caps for exhaustive checks. Enumeration cost is exponential in both
/// records and terms, so the caps are small; `max_steps` bounds the work
/// even inside the caps.
#[derive(Debug, Clone)]
pub struct OracleLimits {
    pub max_records: usize,
    pub max_terms: usize,
    pub max_steps: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_records: 8, max_terms: 10, max_steps: 2_000_000 }
    }
}

/// A term combination that some consistent original dataset can realize in
/// at least one record but no consistent original realizes in `required`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuaranteeViolation {
    pub terms: Vec<TermId>,
    pub achieved: usize,
    pub required: usize,
}

struct Budget {
    steps: u64,
    max_steps: u64,
}

impl Budget {
    fn spend(&mut self, n: u64) -> Result<()> {
        self.steps += n;
        if self.steps > self.max_steps {
            return Err(Error::TooLarge(format!(
                "exhaustive check exceeded {} steps",
                self.max_steps
            )));
        }
        Ok(())
    }
}

/// One chunk as the engine sees it: a term mask, its subrecords grouped by
/// distinct value (assignments that permute equal subrecords coincide), and
/// the slots it may assign to.
struct EngineChunk {
    domain: u32,
    groups: Vec<(u32, usize)>,
    scope: Vec<usize>,
}

pub(crate) struct NodeEngine {
    /// Local term index to dataset term id.
    terms: Vec<TermId>,
    slot_leaf: Vec<usize>,
    leaf_tc: Vec<u32>,
    chunks: Vec<EngineChunk>,
}

impl NodeEngine {
    pub(crate) fn new(node: &ClusterNode, limits: &OracleLimits) -> Result<NodeEngine> {
        let size = node.size();
        if size > limits.max_records.min(32) {
            return Err(Error::TooLarge(format!(
                "cluster has {size} records, exhaustive limit is {}",
                limits.max_records.min(32)
            )));
        }
        let term_set: BTreeSet<TermId> = node.term_set();
        if term_set.len() > limits.max_terms.min(32) {
            return Err(Error::TooLarge(format!(
                "cluster has {} distinct terms, exhaustive limit is {}",
                term_set.len(),
                limits.max_terms.min(32)
            )));
        }
        let terms: Vec<TermId> = term_set.into_iter().collect();
        let index: HashMap<TermId, u32> =
            terms.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        let mask = |ids: &[TermId]| -> u32 { ids.iter().map(|t| 1u32 << index[t]).sum() };
        let record_mask =
            |r: &Record| -> u32 { r.terms().iter().map(|t| 1u32 << index[t]).sum() };

        let mut engine =
            NodeEngine { terms, slot_leaf: Vec::new(), leaf_tc: Vec::new(), chunks: Vec::new() };
        engine.collect(node, &mask, &record_mask);
        // The generous-placement shortcut for term-chunk terms is exact only
        // while those terms stay clear of every chunk domain in scope.
        for c in &engine.chunks {
            for &s in &c.scope {
                if engine.leaf_tc[engine.slot_leaf[s]] & c.domain != 0 {
                    return Err(Error::Structural(
                        "term chunk overlaps a chunk domain in scope".into(),
                    ));
                }
            }
        }
        Ok(engine)
    }

    fn collect(
        &mut self,
        node: &ClusterNode,
        mask: &impl Fn(&[TermId]) -> u32,
        record_mask: &impl Fn(&Record) -> u32,
    ) {
        let start = self.slot_leaf.len();
        match node {
            ClusterNode::Leaf(leaf) => {
                let leaf_idx = self.leaf_tc.len();
                self.leaf_tc.push(mask(&leaf.term_chunk));
                self.slot_leaf.extend(std::iter::repeat(leaf_idx).take(leaf.size));
                let scope: Vec<usize> = (start..start + leaf.size).collect();
                for c in &leaf.record_chunks {
                    self.chunks.push(EngineChunk {
                        domain: mask(&c.domain),
                        groups: group(&c.subrecords, record_mask),
                        scope: scope.clone(),
                    });
                }
            }
            ClusterNode::Joint(j) => {
                for c in &j.children {
                    self.collect(c, mask, record_mask);
                }
                let scope: Vec<usize> = (start..self.slot_leaf.len()).collect();
                for c in &j.shared_chunks {
                    self.chunks.push(EngineChunk {
                        domain: mask(&c.domain),
                        groups: group(&c.subrecords, record_mask),
                        scope: scope.clone(),
                    });
                }
            }
        }
    }

    fn slots(&self) -> usize {
        self.slot_leaf.len()
    }

    /// Union of everything any chunk could ever put into each slot.
    fn reachable(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.slots()];
        for c in &self.chunks {
            let union: u32 = c.groups.iter().fold(0, |a, &(m, _)| a | m);
            for &s in &c.scope {
                out[s] |= union;
            }
        }
        out
    }

    /// Calls `f` with the per-slot linked content of every valid assignment
    /// of chunk subrecords to slots: each chunk places each subrecord on a
    /// distinct slot of its scope, no slot ever receives the same term twice
    /// (original records are duplicate-free sets), and slots left with no
    /// content must be in a leaf with a non-empty term chunk (original
    /// records are never empty). Returns whether any assignment was emitted.
    fn for_each_assembly(
        &self,
        budget: &mut Budget,
        f: &mut impl FnMut(&[u32], &mut Budget) -> Result<ControlFlow<()>>,
    ) -> Result<bool> {
        let mut taken: Vec<Vec<bool>> = vec![vec![false; self.slots()]; self.chunks.len()];
        let mut content = vec![0u32; self.slots()];
        let mut any = false;
        // A Break here only means the caller saw enough assemblies.
        let _ = self.recurse(0, 0, &mut taken, &mut content, budget, &mut any, f)?;
        Ok(any)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &self,
        chunk: usize,
        group: usize,
        taken: &mut Vec<Vec<bool>>,
        content: &mut Vec<u32>,
        budget: &mut Budget,
        any: &mut bool,
        f: &mut impl FnMut(&[u32], &mut Budget) -> Result<ControlFlow<()>>,
    ) -> Result<ControlFlow<()>> {
        if chunk == self.chunks.len() {
            return self.finalize(content, budget, any, f);
        }
        let ch = &self.chunks[chunk];
        if group == ch.groups.len() {
            return self.recurse(chunk + 1, 0, taken, content, budget, any, f);
        }
        let (sub, count) = ch.groups[group];
        let free: Vec<usize> = ch
            .scope
            .iter()
            .copied()
            .filter(|&s| !taken[chunk][s] && content[s] & sub == 0)
            .collect();
        if free.len() < count {
            return Ok(ControlFlow::Continue(()));
        }
        let mut picked = Vec::with_capacity(count);
        self.place(
            chunk, group, sub, count, &free, 0, &mut picked, taken, content, budget, any, f,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn place(
        &self,
        chunk: usize,
        group: usize,
        sub: u32,
        count: usize,
        free: &[usize],
        from: usize,
        picked: &mut Vec<usize>,
        taken: &mut Vec<Vec<bool>>,
        content: &mut Vec<u32>,
        budget: &mut Budget,
        any: &mut bool,
        f: &mut impl FnMut(&[u32], &mut Budget) -> Result<ControlFlow<()>>,
    ) -> Result<ControlFlow<()>> {
        if picked.len() == count {
            budget.spend(1)?;
            for &s in picked.iter() {
                taken[chunk][s] = true;
                content[s] |= sub;
            }
            let flow = self.recurse(chunk, group + 1, taken, content, budget, any, f)?;
            for &s in picked.iter() {
                taken[chunk][s] = false;
                content[s] &= !sub;
            }
            return Ok(flow);
        }
        let needed = count - picked.len();
        for i in from..=free.len().saturating_sub(needed) {
            picked.push(free[i]);
            let flow = self.place(
                chunk, group, sub, count, free, i + 1, picked, taken, content, budget, any, f,
            )?;
            picked.pop();
            if flow == ControlFlow::Break(()) {
                return Ok(flow);
            }
        }
        Ok(ControlFlow::Continue(()))
    }

    fn finalize(
        &self,
        content: &[u32],
        budget: &mut Budget,
        any: &mut bool,
        f: &mut impl FnMut(&[u32], &mut Budget) -> Result<ControlFlow<()>>,
    ) -> Result<ControlFlow<()>> {
        budget.spend(1)?;
        for (slot, &c) in content.iter().enumerate() {
            if c == 0 && self.leaf_tc[self.slot_leaf[slot]] == 0 {
                return Ok(ControlFlow::Continue(()));
            }
        }
        *any = true;
        f(content, budget)
    }

    fn local_to_record(&self, local: u32) -> Record {
        let terms: Vec<TermId> = (0..self.terms.len())
            .filter(|&i| local & (1 << i) != 0)
            .map(|i| self.terms[i])
            .collect();
        Record::from_sorted(terms)
    }
}

fn group(subrecords: &[Record], record_mask: &impl Fn(&Record) -> u32) -> Vec<(u32, usize)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in subrecords {
        *counts.entry(record_mask(r)).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// One candidate combination: the slots that could ever host it, and the
/// best record count any assembly has realized for it so far.
struct SetState {
    set: u32,
    eligible: Vec<usize>,
    best: usize,
}

/// Checks one published cluster tree against the guarantee: every
/// combination of at most `m` of its terms either appears in no consistent
/// original dataset, or appears in at least `k` records of some consistent
/// original. Term-chunk terms take part: an original may put them on any
/// non-empty subset of their leaf's records, so counting assumes the most
/// generous placement, which is exact because adding a term never removes a
/// match.
pub fn check_node(
    node: &ClusterNode,
    k: usize,
    m: usize,
    limits: &OracleLimits,
) -> Result<Vec<GuaranteeViolation>> {
    let engine = NodeEngine::new(node, limits)?;
    let mut budget = Budget { steps: 0, max_steps: limits.max_steps };
    let reachable = engine.reachable();
    let nterms = engine.terms.len();

    let tc_union: Vec<u32> = (0..engine.slots())
        .map(|s| engine.leaf_tc[engine.slot_leaf[s]])
        .collect();
    let mut sets: Vec<SetState> = Vec::new();
    for set in subsets_up_to(nterms, m) {
        let eligible: Vec<usize> = (0..engine.slots())
            .filter(|&s| set & !(reachable[s] | tc_union[s]) == 0)
            .collect();
        sets.push(SetState { set, eligible, best: 0 });
    }

    // Sets with no eligible slot are absent from every original and never
    // enter the scan; sets that reach k leave it, so the common case scans
    // a shrinking handful per assembly.
    let mut open: Vec<usize> =
        (0..sets.len()).filter(|&i| !sets[i].eligible.is_empty()).collect();
    let any = engine.for_each_assembly(&mut budget, &mut |content, _| {
        let mut i = 0;
        while i < open.len() {
            let st = &mut sets[open[i]];
            // A slot matches when its remaining members (those not already in
            // the linked content) can all ride in on this leaf's term chunk;
            // placing them everywhere is always a consistent original.
            let count = st
                .eligible
                .iter()
                .filter(|&&s| (st.set & !content[s]) & !tc_union[s] == 0)
                .count();
            if count > st.best {
                st.best = count;
            }
            if st.best >= k {
                open.swap_remove(i);
            } else {
                i += 1;
            }
        }
        Ok(if open.is_empty() { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
    })?;
    if !any {
        return Err(Error::Structural(
            "published cluster admits no consistent original dataset".into(),
        ));
    }

    let mut violations = Vec::new();
    for st in &sets {
        if st.best >= 1 && st.best < k {
            violations.push(GuaranteeViolation {
                terms: (0..nterms)
                    .filter(|&i| st.set & (1 << i) != 0)
                    .map(|i| engine.terms[i])
                    .collect(),
                achieved: st.best,
                required: k,
            });
        }
    }
    Ok(violations)
}

/// All non-empty subsets of `0..n` of size at most `m`, as bit masks in
/// ascending mask order.
fn subsets_up_to(n: usize, m: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << n) {
        if (mask.count_ones() as usize) <= m {
            out.push(mask);
        }
    }
    out
}

/// Enumerates the record multisets of every original dataset consistent
/// with the published forest, up to `max_results` distinct outcomes.
/// Distinctness is at the record-multiset level: different slot assignments
/// that produce the same bag of records count once.
pub fn enumerate_reconstructions(
    forest: &[ClusterNode],
    limits: &OracleLimits,
    max_results: usize,
) -> Result<Vec<Vec<Record>>> {
    let mut budget = Budget { steps: 0, max_steps: limits.max_steps };
    let mut per_node: Vec<Vec<Vec<Record>>> = Vec::new();
    for node in forest {
        let engine = NodeEngine::new(node, limits)?;
        let mut outcomes: BTreeSet<Vec<Record>> = BTreeSet::new();
        let any = engine.for_each_assembly(&mut budget, &mut |content, budget| {
            expand_term_chunks(&engine, content, budget, &mut |full| {
                let mut records: Vec<Record> =
                    full.iter().map(|&m| engine.local_to_record(m)).collect();
                records.sort_unstable();
                outcomes.insert(records);
                if outcomes.len() > max_results {
                    return Err(Error::TooLarge(format!(
                        "more than {max_results} distinct reconstructions"
                    )));
                }
                Ok(ControlFlow::Continue(()))
            })
        })?;
        if !any || outcomes.is_empty() {
            return Err(Error::Structural(
                "published cluster admits no consistent original dataset".into(),
            ));
        }
        per_node.push(outcomes.into_iter().collect());
    }

    let mut out: Vec<Vec<Record>> = vec![Vec::new()];
    for node_outcomes in &per_node {
        let mut next: Vec<Vec<Record>> = Vec::new();
        for prefix in &out {
            for outcome in node_outcomes {
                if next.len() == max_results {
                    return Err(Error::TooLarge(format!(
                        "more than {max_results} distinct reconstructions"
                    )));
                }
                let mut combined = prefix.clone();
                combined.extend(outcome.iter().cloned());
                next.push(combined);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Extends each assembly with every possible placement of term-chunk terms:
/// each term goes to a non-empty subset of its leaf's slots. Slots that end
/// up empty make the placement inconsistent (original records are never
/// empty).
fn expand_term_chunks(
    engine: &NodeEngine,
    content: &[u32],
    budget: &mut Budget,
    f: &mut impl FnMut(&[u32]) -> Result<ControlFlow<()>>,
) -> Result<ControlFlow<()>> {
    // (term bit, slots of its leaf)
    let mut placements: Vec<(u32, Vec<usize>)> = Vec::new();
    for (leaf, &tc) in engine.leaf_tc.iter().enumerate() {
        if tc == 0 {
            continue;
        }
        let slots: Vec<usize> =
            (0..engine.slots()).filter(|&s| engine.slot_leaf[s] == leaf).collect();
        for bit in 0..32 {
            if tc & (1 << bit) != 0 {
                placements.push((1 << bit, slots.clone()));
            }
        }
    }
    let mut current = content.to_vec();
    place_tc(&placements, 0, &mut current, budget, f)
}

fn place_tc(
    placements: &[(u32, Vec<usize>)],
    idx: usize,
    current: &mut [u32],
    budget: &mut Budget,
    f: &mut impl FnMut(&[u32]) -> Result<ControlFlow<()>>,
) -> Result<ControlFlow<()>> {
    if idx == placements.len() {
        budget.spend(1)?;
        if current.iter().any(|&c| c == 0) {
            return Ok(ControlFlow::Continue(()));
        }
        return f(current);
    }
    let (bit, ref slots) = placements[idx];
    // Non-empty subsets of the leaf's slots.
    for choice in 1u32..(1 << slots.len()) {
        budget.spend(1)?;
        let chosen: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(i, _)| choice & (1 << i) != 0)
            .map(|(_, &s)| s)
            .collect();
        for &s in &chosen {
            current[s] |= bit;
        }
        let flow = place_tc(placements, idx + 1, current, budget, f)?;
        for &s in &chosen {
            current[s] &= !bit;
        }
        if flow == ControlFlow::Break(()) {
            return Ok(flow);
        }
    }
    Ok(ControlFlow::Continue(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, Leaf, RecordChunk, SharedChunk};

    fn rec(ids: &[TermId]) -> Record {
        Record::new(ids.to_vec())
    }

    fn leaf(size: usize, chunks: Vec<(Vec<TermId>, Vec<Vec<TermId>>)>, tc: Vec<TermId>) -> ClusterNode {
        ClusterNode::Leaf(Leaf {
            size,
            record_chunks: chunks
                .into_iter()
                .map(|(domain, subs)| RecordChunk {
                    domain,
                    subrecords: subs.iter().map(|s| rec(s)).collect(),
                })
                .collect(),
            term_chunk: tc,
        })
    }

    #[test]
    fn uniform_chunk_passes() {
        let node = leaf(3, vec![(vec![0, 1], vec![vec![0, 1]; 3])], vec![]);
        let v = check_node(&node, 3, 2, &OracleLimits::default()).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn small_cluster_with_term_chunk_fails_singletons() {
        let node = leaf(2, vec![], vec![7]);
        let v = check_node(&node, 3, 2, &OracleLimits::default()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].terms, vec![7]);
        assert_eq!(v[0].achieved, 2);
        assert_eq!(v[0].required, 3);
    }

    #[test]
    fn undersized_subrecord_total_forces_thin_overlap() {
        // Two chunks with three subrecords each over five slots and no term
        // chunk: covering every slot leaves exactly one slot with both terms,
        // so {0,1} is reachable but never reaches k = 3.
        let node = leaf(
            5,
            vec![(vec![0], vec![vec![0]; 3]), (vec![1], vec![vec![1]; 3])],
            vec![],
        );
        let v = check_node(&node, 3, 2, &OracleLimits::default()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].terms, vec![0, 1]);
        assert_eq!(v[0].achieved, 1);
    }

    #[test]
    fn term_chunk_padding_repairs_the_overlap() {
        let node = leaf(
            5,
            vec![(vec![0], vec![vec![0]; 3]), (vec![1], vec![vec![1]; 3])],
            vec![2],
        );
        let v = check_node(&node, 3, 2, &OracleLimits::default()).unwrap();
        assert!(v.is_empty(), "unexpected violations: {v:?}");
    }

    #[test]
    fn shared_subrecords_may_join_records_lacking_their_terms() {
        // Term 0 lives both in a record chunk of the first leaf and in a
        // shared chunk. A shared {0} may ride on the record whose chunk part
        // is {1}, making a second {0,1} record, so every reachable pair hits
        // k = 2 and the node passes.
        let node = ClusterNode::Joint(Joint {
            children: vec![
                leaf(2, vec![(vec![0, 1], vec![vec![0, 1], vec![1]])], vec![]),
                leaf(2, vec![(vec![2], vec![vec![2]; 2])], vec![]),
            ],
            shared_chunks: vec![SharedChunk {
                domain: vec![0],
                subrecords: vec![rec(&[0]), rec(&[0])],
                strict_k: true,
            }],
        });
        let v = check_node(&node, 2, 2, &OracleLimits::default()).unwrap();
        assert!(v.is_empty(), "unexpected violations: {v:?}");
    }

    #[test]
    fn duplicate_term_conflicts_prune_placements() {
        // Both leaf slots already carry term 0, so the two shared {0}
        // subrecords compete for the single remaining slot: no original
        // dataset holds four duplicate-free records of three slots with four
        // copies of one term.
        let node = ClusterNode::Joint(Joint {
            children: vec![
                leaf(2, vec![(vec![0], vec![vec![0]; 2])], vec![]),
                leaf(1, vec![], vec![1]),
            ],
            shared_chunks: vec![SharedChunk {
                domain: vec![0],
                subrecords: vec![rec(&[0]), rec(&[0])],
                strict_k: true,
            }],
        });
        assert!(matches!(
            check_node(&node, 2, 1, &OracleLimits::default()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn oversized_cluster_is_rejected_not_checked() {
        let node = leaf(9, vec![(vec![0], vec![vec![0]; 9])], vec![]);
        assert!(matches!(
            check_node(&node, 2, 2, &OracleLimits::default()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn inconsistent_node_is_reported() {
        // Four subrecords cannot fit three slots injectively.
        let node = leaf(3, vec![(vec![0], vec![vec![0]; 4])], vec![]);
        assert!(matches!(
            check_node(&node, 2, 2, &OracleLimits::default()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn enumeration_lists_all_distinct_originals() {
        // Chunks {0} x2 and {1} x1 over two slots: term 1 joins either slot.
        let node = leaf(2, vec![(vec![0], vec![vec![0]; 2]), (vec![1], vec![vec![1]])], vec![]);
        let all = enumerate_reconstructions(
            std::slice::from_ref(&node),
            &OracleLimits::default(),
            100,
        )
        .unwrap();
        assert_eq!(all.len(), 1); // both placements give the same multiset
        assert_eq!(all[0], vec![rec(&[0]), rec(&[0, 1])]);
    }

    #[test]
    fn enumeration_expands_term_chunk_placements() {
        let node = leaf(2, vec![(vec![0], vec![vec![0]; 2])], vec![5]);
        let mut all = enumerate_reconstructions(
            std::slice::from_ref(&node),
            &OracleLimits::default(),
            100,
        )
        .unwrap();
        all.sort();
        // Term 5 on slot one, slot two, or both; slots are interchangeable.
        assert_eq!(
            all,
            vec![
                vec![rec(&[0]), rec(&[0, 5])],
                vec![rec(&[0, 5]), rec(&[0, 5])],
            ]
        );
    }

    #[test]
    fn enumeration_respects_result_cap() {
        let node = leaf(4, vec![], vec![0, 1, 2]);
        assert!(matches!(
            enumerate_reconstructions(std::slice::from_ref(&node), &OracleLimits::default(), 3),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn worked_example_first_published_cluster_passes() {
        let node = leaf(
            5,
            vec![
                (
                    vec![0, 1, 2],
                    vec![
                        vec![0, 1],
                        vec![0, 1, 2],
                        vec![0, 1, 2],
                        vec![0, 2],
                        vec![1, 2],
                    ],
                ),
                (vec![6, 7], vec![vec![6, 7], vec![6, 7], vec![6, 7]]),
            ],
            vec![3, 4, 5],
        );
        let v = check_node(&node, 3, 2, &OracleLimits::default()).unwrap();
        assert!(v.is_empty(), "unexpected violations: {v:?}");
    }
}

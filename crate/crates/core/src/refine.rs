//! Refining: merge clusters whose term chunks overlap into joint clusters,
//! recovering some severed associations as shared chunks.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;

use crate::dataset::{Dataset, Record, TermId};
use crate::model::{Leaf, SharedChunk};
use crate::params::Params;
use crate::vertical::subrecord_count_bound;

/// Pipeline-internal cluster tree. Unlike the published form, leaves still
/// know which dataset records they hold, which shared-chunk construction
/// needs (subrecords are projections of the original records).
#[derive(Debug, Clone)]
pub enum WorkNode {
    Leaf(WorkLeaf),
    Joint { children: Vec<WorkNode>, shared_chunks: Vec<SharedChunk> },
}

#[derive(Debug, Clone)]
pub struct WorkLeaf {
    pub leaf: Leaf,
    pub positions: Vec<usize>,
}

impl WorkNode {
    pub fn size(&self) -> usize {
        match self {
            WorkNode::Leaf(l) => l.leaf.size,
            WorkNode::Joint { children, .. } => children.iter().map(|c| c.size()).sum(),
        }
    }

    pub fn leaves(&self) -> Vec<&WorkLeaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a WorkLeaf>) {
        match self {
            WorkNode::Leaf(l) => out.push(l),
            WorkNode::Joint { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut WorkLeaf)) {
        match self {
            WorkNode::Leaf(l) => f(l),
            WorkNode::Joint { children, .. } => {
                for c in children {
                    c.for_each_leaf_mut(f);
                }
            }
        }
    }

    fn for_each_leaf(&self, f: &mut impl FnMut(&WorkLeaf)) {
        match self {
            WorkNode::Leaf(l) => f(l),
            WorkNode::Joint { children, .. } => {
                for c in children {
                    c.for_each_leaf(f);
                }
            }
        }
    }

    /// Union of the leaf term chunks below this node.
    pub fn virtual_term_chunk(&self) -> BTreeSet<TermId> {
        let mut out = BTreeSet::new();
        for l in self.leaves() {
            out.extend(l.leaf.term_chunk.iter().copied());
        }
        out
    }

    /// Terms held in record or shared chunks below this node.
    fn linked_terms(&self, out: &mut BTreeSet<TermId>) {
        match self {
            WorkNode::Leaf(l) => {
                for c in &l.leaf.record_chunks {
                    out.extend(c.domain.iter().copied());
                }
            }
            WorkNode::Joint { children, shared_chunks } => {
                for c in children {
                    c.linked_terms(out);
                }
                for s in shared_chunks {
                    out.extend(s.domain.iter().copied());
                }
            }
        }
    }

    fn min_position(&self) -> usize {
        self.leaves()
            .iter()
            .flat_map(|l| l.positions.iter().copied())
            .min()
            .expect("leaf without records")
    }
}

/// One committed merge, with both sides of the acceptance inequality: the
/// merge goes through when the support recovered per record (`gain`) is at
/// least the placed terms' weight in the term chunks they leave
/// (`threshold`).
#[derive(Debug, Clone)]
pub struct MergeRecord {
    pub placed: Vec<TermId>,
    pub shared_support_sum: u64,
    pub joint_size: u64,
    pub term_chunk_hits: u64,
    pub term_chunk_sizes: u64,
}

impl MergeRecord {
    pub fn gain(&self) -> f64 {
        self.shared_support_sum as f64 / self.joint_size as f64
    }

    pub fn threshold(&self) -> f64 {
        self.term_chunk_hits as f64 / self.term_chunk_sizes as f64
    }
}

/// One forest node plus everything the pass machinery needs to know about it
/// without walking its subtree: a version id (fresh after every commit, so
/// failed pairings can be cached), the virtual term chunk, the smallest
/// record position (the ordering tiebreak), term supports over the node's
/// records, terms linked below, and per-leaf posting lists aligned with
/// `leaves()`. All of it merges in O(children) when a commit joins two nodes.
/// `key` is the pass ordering key, kept while no term it rests on changes
/// its chunk count.
struct Stamped {
    id: u64,
    node: WorkNode,
    vtc: Vec<TermId>,
    min_pos: usize,
    supports: Vec<(TermId, u32)>,
    linked: BTreeSet<TermId>,
    indices: Vec<LeafIndex>,
    key: Option<OrderKey>,
}

/// Posting lists of one leaf: for every term of the leaf's records, the
/// ascending local row ids containing it, in one packed span. Leaves keep
/// their records for life, so this never changes after construction.
struct LeafIndex {
    terms: Vec<TermId>,
    offsets: Vec<u32>,
    rows: Vec<u32>,
}

impl LeafIndex {
    fn new(data: &Dataset, positions: &[usize]) -> Self {
        let mut pairs: Vec<(TermId, u32)> = Vec::new();
        for (r, &p) in positions.iter().enumerate() {
            for &t in data.records[p].terms() {
                pairs.push((t, r as u32));
            }
        }
        pairs.sort_unstable();
        let mut terms = Vec::new();
        let mut offsets = Vec::new();
        let mut rows = Vec::with_capacity(pairs.len());
        for (t, r) in pairs {
            if terms.last() != Some(&t) {
                terms.push(t);
                offsets.push(rows.len() as u32);
            }
            rows.push(r);
        }
        offsets.push(rows.len() as u32);
        LeafIndex { terms, offsets, rows }
    }

    fn rows_of(&self, t: TermId) -> &[u32] {
        match self.terms.binary_search(&t) {
            Ok(i) => &self.rows[self.offsets[i] as usize..self.offsets[i + 1] as usize],
            Err(_) => &[],
        }
    }
}

/// Dense term-id membership, bounds-checked on probes so terms beyond the
/// capacity simply test negative.
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn new(capacity: usize) -> Self {
        BitSet { words: vec![0; capacity.div_ceil(64)] }
    }

    fn set(&mut self, t: TermId) {
        self.words[t as usize / 64] |= 1 << (t as usize % 64);
    }

    fn test(&self, t: TermId) -> bool {
        self.words.get(t as usize / 64).is_some_and(|w| w >> (t as usize % 64) & 1 == 1)
    }
}

/// Node-level caches for an arbitrary subtree, computed by walking it once.
fn node_caches(
    data: &Dataset,
    node: &WorkNode,
) -> (Vec<(TermId, u32)>, BTreeSet<TermId>, Vec<LeafIndex>) {
    let leaves = node.leaves();
    let mut counts: HashMap<TermId, u32> = HashMap::new();
    let mut indices = Vec::with_capacity(leaves.len());
    for l in &leaves {
        let idx = LeafIndex::new(data, &l.positions);
        for (i, &t) in idx.terms.iter().enumerate() {
            *counts.entry(t).or_insert(0) += idx.offsets[i + 1] - idx.offsets[i];
        }
        indices.push(idx);
    }
    let mut supports: Vec<(TermId, u32)> = counts.into_iter().collect();
    supports.sort_unstable_by_key(|&(t, _)| t);
    let mut linked = BTreeSet::new();
    node.linked_terms(&mut linked);
    (supports, linked, indices)
}

fn make_stamped(data: &Dataset, node: WorkNode, id: u64) -> Stamped {
    let (supports, linked, indices) = node_caches(data, &node);
    Stamped {
        id,
        vtc: node.virtual_term_chunk().into_iter().collect(),
        min_pos: node.min_position(),
        supports,
        linked,
        indices,
        key: None,
        node,
    }
}

/// Sums two sorted support lists.
fn merge_supports(a: Vec<(TermId, u32)>, b: Vec<(TermId, u32)>) -> Vec<(TermId, u32)> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Repeatedly orders the forest by term-chunk affinity and merges adjacent
/// pairs whose recovered support clears the threshold, until a full pass
/// commits nothing. Each node takes part in at most one merge per pass.
///
/// The merge decision is a pure read of the two nodes, and a failed attempt
/// mutates neither side, so a pair can only start merging after one of them
/// takes part in a commit. That makes two shortcuts sound: failed pairs are
/// remembered by version id and never re-evaluated, and each pass evaluates
/// all not-yet-failed adjacent pairs in parallel before a sequential walk
/// decides which results commit, exactly as the one-at-a-time scan would.
pub fn refine(
    data: &Dataset,
    forest: Vec<WorkNode>,
    params: &Params,
) -> (Vec<WorkNode>, Vec<MergeRecord>) {
    let mut merges = Vec::new();
    let mut next_id: u64 = 0;
    let mut stamp = move || {
        let id = next_id;
        next_id += 1;
        id
    };
    let mut stamped: Vec<Stamped> =
        forest.into_iter().map(|n| make_stamped(data, n, stamp())).collect();
    let mut failed: HashSet<(u64, u64)> = HashSet::new();
    // Terms whose leaf-chunk count changed in the last pass; any node whose
    // ordering key rests on one of them must rebuild it.
    let mut changed = BitSet::new(0);
    loop {
        PROF_PASSES.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let before = merges.len();
        stamped = one_pass(stamped, &changed, params, &mut merges, &mut failed, &mut stamp);
        if merges.len() == before {
            return (stamped.into_iter().map(|s| s.node).collect(), merges);
        }
        let placed = merges[before..].iter().flat_map(|m| m.placed.iter().copied());
        let cap = placed.clone().map(|t| t as usize + 1).max().unwrap_or(0);
        changed = BitSet::new(cap);
        for t in placed {
            changed.set(t);
        }
    }
}

fn one_pass(
    forest: Vec<Stamped>,
    changed: &BitSet,
    params: &Params,
    merges: &mut Vec<MergeRecord>,
    failed: &mut HashSet<(u64, u64)>,
    stamp: &mut impl FnMut() -> u64,
) -> Vec<Stamped> {
    let t_sort = std::time::Instant::now();
    let tcs = leaf_term_chunk_counts(&forest);
    let mut items = forest;
    for s in &mut items {
        let stale = s.key.is_none() || s.vtc.iter().any(|&t| changed.test(t));
        if stale {
            let key = order_key(s, &tcs);
            s.key = Some(key);
        }
    }
    // Positions partition the records, so min positions differ and the key
    // order is strict; unstable sorting cannot reorder equals it never sees.
    items.sort_unstable_by(|a, b| {
        compare_keys(a.key.as_ref().expect("key built above"), b.key.as_ref().expect("key built above"))
    });
    PROF_SORT_NS.fetch_add(t_sort.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);

    // Speculative read-only evaluation of every adjacent pair not already
    // known to fail. The walk below skips the results of pairs it never
    // visits; rejections hold regardless of the walk, so all of them feed
    // the failure cache.
    let t_spec = std::time::Instant::now();
    let mut decisions: Vec<Option<Decision>> = if items.len() < 2 {
        Vec::new()
    } else {
        (0..items.len() - 1)
            .into_par_iter()
            .map(|i| {
                let (l, r) = (&items[i], &items[i + 1]);
                if failed.contains(&(l.id, r.id)) {
                    None
                } else {
                    Some(evaluate(l, r, params))
                }
            })
            .collect()
    };
    PROF_SPEC_NS.fetch_add(t_spec.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
    for (i, d) in decisions.iter().enumerate() {
        if matches!(d, Some(Decision::Keep)) {
            failed.insert((items[i].id, items[i + 1].id));
        }
    }

    let mut nodes: Vec<Option<Stamped>> = items.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(nodes.len());
    let mut i = 0;
    while i < nodes.len() {
        let a = nodes[i].take().expect("node consumed twice");
        if i + 1 == nodes.len() {
            out.push(a);
            break;
        }
        match decisions[i].take() {
            Some(Decision::Commit { chunks, placed, record }) => {
                let b = nodes[i + 1].take().expect("node consumed twice");
                merges.push(record);
                out.push(apply_merge(a, b, chunks, &placed, stamp));
                i += 2;
            }
            _ => {
                out.push(a);
                i += 1;
            }
        }
    }
    out
}

fn apply_merge(
    a: Stamped,
    b: Stamped,
    chunks: Vec<SharedChunk>,
    placed: &[TermId],
    stamp: &mut impl FnMut() -> u64,
) -> Stamped {
    let placed_set: HashSet<TermId> = placed.iter().copied().collect();
    let mut children = vec![a.node, b.node];
    for c in &mut children {
        c.for_each_leaf_mut(&mut |l| l.leaf.term_chunk.retain(|t| !placed_set.contains(t)));
    }
    let vtc = merge_vtc(&a.vtc, &b.vtc, &placed_set);
    let supports = merge_supports(a.supports, b.supports);
    // The smaller linked set drains into the larger; the placed terms now sit
    // in shared chunks, which links them too.
    let (mut linked, small) =
        if a.linked.len() >= b.linked.len() { (a.linked, b.linked) } else { (b.linked, a.linked) };
    linked.extend(small);
    linked.extend(placed.iter().copied());
    // Posting lists follow the children order, a's leaves before b's.
    let mut indices = a.indices;
    indices.extend(b.indices);
    Stamped {
        id: stamp(),
        node: WorkNode::Joint { children, shared_chunks: chunks },
        vtc,
        min_pos: a.min_pos.min(b.min_pos),
        supports,
        linked,
        indices,
        key: None,
    }
}

/// Ascending union of two ascending term lists, minus the placed terms.
fn merge_vtc(a: &[TermId], b: &[TermId], placed: &HashSet<TermId>) -> Vec<TermId> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if !placed.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// How many leaf term chunks across the forest contain each term, as a flat
/// table over term ids.
fn leaf_term_chunk_counts(forest: &[Stamped]) -> Vec<u32> {
    let mut counts: Vec<u32> = Vec::new();
    for s in forest {
        s.node.for_each_leaf(&mut |l| {
            for &t in &l.leaf.term_chunk {
                let i = t as usize;
                if i >= counts.len() {
                    counts.resize(i + 1, 0);
                }
                counts[i] += 1;
            }
        });
    }
    counts
}

struct OrderKey {
    /// Term-chunk terms, most widely shared first (ties to the smaller id),
    /// each packed as inverted-count then id so plain u64 order matches.
    terms: Vec<u64>,
    min_position: usize,
}

fn order_key(s: &Stamped, tcs: &[u32]) -> OrderKey {
    let mut terms: Vec<u64> = s
        .vtc
        .iter()
        .map(|&t| {
            let count = tcs.get(t as usize).copied().unwrap_or(0);
            (u64::from(!count) << 32) | u64::from(t)
        })
        .collect();
    terms.sort_unstable();
    OrderKey { terms, min_position: s.min_pos }
}

fn compare_keys(a: &OrderKey, b: &OrderKey) -> Ordering {
    match (a.terms.is_empty(), b.terms.is_empty()) {
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => a.terms.cmp(&b.terms).then(a.min_position.cmp(&b.min_position)),
    }
}

enum Decision {
    Keep,
    Commit { chunks: Vec<SharedChunk>, placed: Vec<TermId>, record: MergeRecord },
}

pub static PROF_SLOW: std::sync::Mutex<Vec<(u64, usize, usize, usize, usize)>> =
    std::sync::Mutex::new(Vec::new());
pub static PROF_SORT_NS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_SPEC_NS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_EVAL_NS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_EVAL_N: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_BSC_NS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_BSC_N: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_PASSES: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_P_SETUP: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_P_SUPPORTS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_P_ELIGIBLE: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_P_ROUNDS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PROF_P_BAG: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

fn evaluate(a: &Stamped, b: &Stamped, params: &Params) -> Decision {
    use std::sync::atomic::Ordering::Relaxed;
    let t0 = std::time::Instant::now();
    let r = evaluate_timed(a, b, params);
    PROF_EVAL_NS.fetch_add(t0.elapsed().as_nanos() as u64, Relaxed);
    PROF_EVAL_N.fetch_add(1, Relaxed);
    r
}

fn evaluate_timed(a: &Stamped, b: &Stamped, params: &Params) -> Decision {
    use std::sync::atomic::Ordering::Relaxed;
    let mut candidates = intersect_sorted(&a.vtc, &b.vtc);
    if !params.sensitive.is_empty() {
        candidates.retain(|t| !params.sensitive.contains(t));
    }
    if candidates.is_empty() {
        return Decision::Keep;
    }

    let t1 = std::time::Instant::now();
    let ncand = candidates.len();
    let (chunks, placed) = pack_shared_chunks(
        PackSide { node: &a.node, supports: &a.supports, linked: &a.linked, indices: &a.indices },
        PackSide { node: &b.node, supports: &b.supports, linked: &b.linked, indices: &b.indices },
        candidates,
        params,
    );
    let ns = t1.elapsed().as_nanos() as u64;
    PROF_BSC_NS.fetch_add(ns, Relaxed);
    PROF_BSC_N.fetch_add(1, Relaxed);
    if ns > 50_000_000 {
        let nl = a.node.leaves().len() + b.node.leaves().len();
        let nr = a.node.size() + b.node.size();
        PROF_SLOW.lock().unwrap().push((ns, nl, nr, ncand, placed.len()));
    }
    if placed.is_empty() {
        return Decision::Keep;
    }

    // A leaf may lose its whole term chunk only while its own subrecords
    // still clear the record-count bound; the audit and the reconstruction
    // sampler both rely on that disjunction holding per leaf.
    let placed_set: HashSet<TermId> = placed.iter().copied().collect();
    let drains_unsafely = |n: &WorkNode| {
        n.leaves().iter().any(|l| {
            l.leaf.term_chunk.iter().all(|t| placed_set.contains(t))
                && !subrecord_count_bound(&l.leaf.record_chunks, l.leaf.size, params.k, params.m)
        })
    };
    if drains_unsafely(&a.node) || drains_unsafely(&b.node) {
        return Decision::Keep;
    }

    let record = eq1_record(&a.node, &b.node, &chunks, &placed);
    // Inclusive comparison of gain >= threshold, kept in integers.
    if record.shared_support_sum * record.term_chunk_sizes
        < record.term_chunk_hits * record.joint_size
    {
        return Decision::Keep;
    }
    Decision::Commit { chunks, placed, record }
}

/// Greedy packing of the candidate terms into shared chunks, mirroring the
/// vertical packer but over the joint's leaves: subrecords are projections
/// of each leaf's records onto the part of the domain that leaf still holds
/// in its term chunk. A chunk whose domain collides with terms linked
/// somewhere below the joint must be plainly k-anonymous (set semantics can
/// merge duplicate terms across chunks, which silently shrinks records);
/// otherwise k^m-anonymity suffices.
pub fn build_shared_chunks(
    data: &Dataset,
    a: &WorkNode,
    b: &WorkNode,
    candidates: Vec<TermId>,
    params: &Params,
) -> (Vec<SharedChunk>, Vec<TermId>) {
    let (sa, la, ia) = node_caches(data, a);
    let (sb, lb, ib) = node_caches(data, b);
    pack_shared_chunks(
        PackSide { node: a, supports: &sa, linked: &la, indices: &ia },
        PackSide { node: b, supports: &sb, linked: &lb, indices: &ib },
        candidates,
        params,
    )
}

/// One side of a prospective merge, with its node-level caches.
struct PackSide<'a> {
    node: &'a WorkNode,
    supports: &'a [(TermId, u32)],
    linked: &'a BTreeSet<TermId>,
    indices: &'a [LeafIndex],
}

fn pack_shared_chunks(
    a: PackSide,
    b: PackSide,
    candidates: Vec<TermId>,
    params: &Params,
) -> (Vec<SharedChunk>, Vec<TermId>) {
    use std::sync::atomic::Ordering::Relaxed;
    let tp = std::time::Instant::now();
    let na = a.indices.len();
    let leaves: Vec<&WorkLeaf> = a.node.leaves().into_iter().chain(b.node.leaves()).collect();
    debug_assert_eq!(leaves.len(), na + b.indices.len());
    let index = |li: usize| if li < na { &a.indices[li] } else { &b.indices[li - na] };
    let cap = candidates.iter().map(|&t| t as usize + 1).max().unwrap_or(0);
    let mut candidate_bits = BitSet::new(cap);
    for &t in &candidates {
        candidate_bits.set(t);
    }
    PROF_P_SETUP.fetch_add(tp.elapsed().as_nanos() as u64, Relaxed);

    let tp = std::time::Instant::now();
    // Combined support across both nodes orders the candidates, highest
    // first with ties to the smaller id, packed so plain u64 order matches.
    let sup = |s: &[(TermId, u32)], t: TermId| match s.binary_search_by_key(&t, |&(x, _)| x) {
        Ok(i) => s[i].1,
        Err(_) => 0,
    };
    let mut keyed: Vec<u64> = candidates
        .iter()
        .map(|&t| {
            let s = sup(a.supports, t) + sup(b.supports, t);
            (u64::from(!s) << 32) | u64::from(t)
        })
        .collect();
    keyed.sort_unstable();
    let mut ordered: Vec<TermId> = keyed.into_iter().map(|k| k as u32).collect();
    PROF_P_SUPPORTS.fetch_add(tp.elapsed().as_nanos() as u64, Relaxed);

    let tp = std::time::Instant::now();
    // A leaf holding no candidate in its term chunk projects every record to
    // the empty subrecord for every possible domain; only the others matter.
    // Their records form the packing rows, leaf order then position order.
    // Rows a term lands in when placed are those of leaves holding it in the
    // term chunk whose record contains it.
    let mut contributing: Vec<usize> = Vec::new();
    let mut eligible: HashMap<TermId, Vec<usize>> = HashMap::new();
    let mut total_rows = 0usize;
    for (li, l) in leaves.iter().enumerate() {
        if !l.leaf.term_chunk.iter().any(|&t| candidate_bits.test(t)) {
            continue;
        }
        contributing.push(li);
        for &t in &l.leaf.term_chunk {
            if candidate_bits.test(t) {
                let rows = index(li).rows_of(t);
                if !rows.is_empty() {
                    eligible
                        .entry(t)
                        .or_default()
                        .extend(rows.iter().map(|&r| total_rows + r as usize));
                }
            }
        }
        total_rows += l.positions.len();
    }

    // A term landing in fewer than k rows fails every admission test it can
    // ever face (its singleton support is its row count, in any chunk), so
    // carrying it through the packing rounds is pure waste.
    ordered.retain(|t| eligible.get(t).is_none_or(|rows| rows.len() >= params.k));

    let mut linked_bits = BitSet::new(cap);
    for &t in &ordered {
        if a.linked.contains(&t) || b.linked.contains(&t) {
            linked_bits.set(t);
        }
    }
    let is_linked = |t: TermId| linked_bits.test(t);
    PROF_P_ELIGIBLE.fetch_add(tp.elapsed().as_nanos() as u64, Relaxed);

    let tp = std::time::Instant::now();
    let mut chunks = Vec::new();
    let mut placed = Vec::new();
    let mut remaining = ordered;
    while !remaining.is_empty() {
        let mut current: Vec<TermId> = Vec::new();
        let mut current_linked = false;
        let mut round = RoundBag::new(total_rows);
        let mut rest: Vec<TermId> = Vec::new();
        for &t in &remaining {
            let rows = eligible.get(&t).map(Vec::as_slice).unwrap_or(&[]);
            let ok = if current_linked || is_linked(t) {
                round.stays_k_anonymous(rows, params.k)
            } else {
                grown_sets_stay_km(&round.subs, rows, t, params.k, params.m)
            };
            if ok {
                round.accept(rows, t, params.k);
                current.push(t);
                current_linked = current_linked || is_linked(t);
            } else {
                rest.push(t);
            }
        }
        if current.is_empty() {
            break;
        }
        current.sort_unstable();
        // The grown row projections are the chunk's subrecords: each holds
        // its record's terms within the domain and the owning leaf's term
        // chunk, in leaf order then position order.
        let tb = std::time::Instant::now();
        let subrecords: Vec<Record> = round
            .subs
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| Record::from_sorted(s.clone()))
            .collect();
        PROF_P_BAG.fetch_add(tb.elapsed().as_nanos() as u64, Relaxed);
        placed.extend(current.iter().copied());
        chunks.push(SharedChunk { domain: current, subrecords, strict_k: current_linked });
        remaining = rest;
    }
    PROF_P_ROUNDS.fetch_add(tp.elapsed().as_nanos() as u64, Relaxed);
    (chunks, placed)
}

/// k^m-anonymity of the grown bag, assuming the current bag already is: term
/// sets avoiding `t` keep their support when rows gain `t`, so only sets
/// containing `t` need counting. Each such set is `t` plus at most m-1 terms
/// of an eligible row's current projection; anything else has support 0.
fn grown_sets_stay_km(
    subs: &[Vec<TermId>],
    rows: &[usize],
    t: TermId,
    k: usize,
    m: usize,
) -> bool {
    debug_assert!(rows.iter().all(|&ri| !subs[ri].contains(&t)));
    let _ = t;
    // The empty companion set stands for the singleton {t}.
    if rows.is_empty() {
        return true;
    }
    if rows.len() < k || m == 1 {
        return rows.len() >= k;
    }
    if m == 2 {
        let mut counts: HashMap<TermId, usize> = HashMap::new();
        for &ri in rows {
            for &x in &subs[ri] {
                *counts.entry(x).or_insert(0) += 1;
            }
        }
        return counts.values().all(|&c| c >= k);
    }
    let mut counts: HashMap<Vec<TermId>, usize> = HashMap::new();
    let mut prefix = Vec::with_capacity(m);
    for &ri in rows {
        count_companions(&subs[ri], m - 1, 0, &mut prefix, &mut counts);
    }
    counts.values().all(|&c| c >= k)
}

/// Ascending common terms, searching the wider side when the sizes are
/// lopsided and merging otherwise.
fn intersect_sorted(a: &[TermId], b: &[TermId]) -> Vec<TermId> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.len() * 16 < large.len() {
        small.iter().copied().filter(|t| large.binary_search(t).is_ok()).collect()
    } else {
        sorted_intersection(a, b)
    }
}

/// Ascending common terms of two ascending slices.
fn sorted_intersection(a: &[TermId], b: &[TermId]) -> Vec<TermId> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Tallies every subset of `sub` with at most `max_len` terms, the empty set
/// included; keyed without the implied trial term.
fn count_companions(
    sub: &[TermId],
    max_len: usize,
    start: usize,
    prefix: &mut Vec<TermId>,
    counts: &mut HashMap<Vec<TermId>, usize>,
) {
    *counts.entry(prefix.clone()).or_insert(0) += 1;
    if prefix.len() == max_len {
        return;
    }
    for i in start..sub.len() {
        prefix.push(sub[i]);
        count_companions(sub, max_len, i + 1, prefix, counts);
        prefix.pop();
    }
}

/// Working bag for one packing round: per-row projections onto the growing
/// domain, grown in place as terms are accepted, plus a census of distinct
/// non-empty subrecords. A rejected trial touches nothing, so the bag is
/// only materialized once per committed chunk. `short_groups` counts census
/// entries below k; the bag is k-anonymous iff it is zero.
struct RoundBag {
    subs: Vec<Vec<TermId>>,
    group_counts: HashMap<Vec<TermId>, usize>,
    short_groups: usize,
}

impl RoundBag {
    fn new(rows: usize) -> Self {
        RoundBag { subs: vec![Vec::new(); rows], group_counts: HashMap::new(), short_groups: 0 }
    }

    /// Plain k-anonymity of the grown bag: every distinct non-empty
    /// subrecord, with the trial term added on `rows`, occurs at least k
    /// times. Untouched groups keep their census entry, and no stored row
    /// contains the trial term, so rows leaving a group land in a fresh one
    /// nothing else can collide with; only the delta needs walking.
    fn stays_k_anonymous(&self, rows: &[usize], k: usize) -> bool {
        let mut moved: HashMap<&[TermId], usize> = HashMap::new();
        for &ri in rows {
            *moved.entry(self.subs[ri].as_slice()).or_insert(0) += 1;
        }
        let mut short = self.short_groups as i64;
        for (s, &mv) in &moved {
            if mv < k {
                short += 1;
            }
            if !s.is_empty() {
                let c = self.group_counts[*s];
                let left = c - mv;
                short += (left > 0 && left < k) as i64 - ((c < k) as i64);
            }
        }
        short == 0
    }

    /// Adds `t` to every row in `rows`, keeping the census in step.
    fn accept(&mut self, rows: &[usize], t: TermId, k: usize) {
        debug_assert!(rows.iter().all(|&ri| !self.subs[ri].contains(&t)));
        let mut moved: HashMap<Vec<TermId>, usize> = HashMap::new();
        for &ri in rows {
            *moved.entry(self.subs[ri].clone()).or_insert(0) += 1;
            let at = self.subs[ri].binary_search(&t).unwrap_err();
            self.subs[ri].insert(at, t);
        }
        for (s, mv) in moved {
            if !s.is_empty() {
                let c = self.group_counts.remove(&s).expect("census tracks non-empty subrecords");
                if c < k {
                    self.short_groups -= 1;
                }
                if c > mv {
                    self.short_groups += usize::from(c - mv < k);
                    self.group_counts.insert(s.clone(), c - mv);
                }
            }
            let mut grown = s;
            let at = grown.binary_search(&t).unwrap_err();
            grown.insert(at, t);
            self.short_groups += usize::from(mv < k);
            self.group_counts.insert(grown, mv);
        }
    }
}

fn eq1_record(a: &WorkNode, b: &WorkNode, chunks: &[SharedChunk], placed: &[TermId]) -> MergeRecord {
    let shared_support_sum: u64 =
        chunks.iter().flat_map(|c| c.subrecords.iter()).map(|sr| sr.len() as u64).sum();
    let joint_size = (a.size() + b.size()) as u64;

    let mut term_chunk_hits = 0u64;
    let mut term_chunk_sizes = 0u64;
    for l in a.leaves().into_iter().chain(b.leaves()) {
        let hits = placed.iter().filter(|t| l.leaf.term_chunk.contains(t)).count() as u64;
        if hits > 0 {
            term_chunk_hits += hits;
            term_chunk_sizes += l.leaf.size as u64;
        }
    }
    MergeRecord {
        placed: placed.to_vec(),
        shared_support_sum,
        joint_size,
        term_chunk_hits,
        term_chunk_sizes,
    }
}

//! Vertical partitioning: split one cluster's terms into k^m-anonymous
//! record chunks and a term chunk.

use crate::dataset::{compute_supports, Dataset, Record, TermId};
use crate::horizontal::RawCluster;
use crate::model::{Leaf, RecordChunk};
use crate::params::Params;

/// Number of subrecords containing every term of `wanted` (sorted ascending).
pub fn chunk_support(subrecords: &[Record], wanted: &[TermId]) -> usize {
    subrecords.iter().filter(|sr| sr.contains_all(wanted)).count()
}

/// Full k^m-anonymity test: every term set of size at most `m` drawn from the
/// chunk's domain has support 0 or at least k. Only sets occurring inside
/// some subrecord can have positive support, so candidates are enumerated
/// from the subrecords.
pub fn is_km_anonymous(subrecords: &[Record], k: usize, m: usize) -> bool {
    let mut candidates: std::collections::HashSet<Vec<TermId>> = std::collections::HashSet::new();
    for sr in subrecords {
        collect_subsets(sr.terms(), m, &mut candidates);
    }
    candidates.iter().all(|s| chunk_support(subrecords, s) >= k)
}

fn collect_subsets(terms: &[TermId], max_len: usize, out: &mut std::collections::HashSet<Vec<TermId>>) {
    let mut stack = vec![(Vec::new(), 0)];
    while let Some((prefix, start)) = stack.pop() {
        for i in start..terms.len() {
            let mut next = prefix.clone();
            next.push(terms[i]);
            if next.len() < max_len {
                stack.push((next.clone(), i + 1));
            }
            out.insert(next);
        }
    }
}

/// Plain k-anonymity: every distinct subrecord occurs at least k times.
pub fn is_k_anonymous(subrecords: &[Record], k: usize) -> bool {
    let mut counts: std::collections::HashMap<&Record, usize> = std::collections::HashMap::new();
    for sr in subrecords {
        *counts.entry(sr).or_insert(0) += 1;
    }
    counts.values().all(|&c| c >= k)
}

/// Admission test for adding `term` to a chunk currently holding `current`:
/// every subset of the grown domain that contains `term` (size at most m)
/// must keep support 0 or >= k. Subsets avoiding `term` were valid before
/// and projections cannot change their support, so checking only these is
/// equivalent to revalidating the whole grown chunk.
fn admits<'a>(
    records: impl Iterator<Item = &'a Record> + Clone,
    current: &[TermId],
    term: TermId,
    k: usize,
    m: usize,
) -> bool {
    let mut subset = Vec::with_capacity(m);
    admits_rec(&records, current, term, k, m, 0, &mut subset)
}

fn admits_rec<'a, I>(
    records: &I,
    current: &[TermId],
    term: TermId,
    k: usize,
    m: usize,
    start: usize,
    subset: &mut Vec<TermId>,
) -> bool
where
    I: Iterator<Item = &'a Record> + Clone,
{
    let mut wanted: Vec<TermId> = subset.clone();
    wanted.push(term);
    wanted.sort_unstable();
    let support = records.clone().filter(|r| r.contains_all(&wanted)).count();
    if support != 0 && support < k {
        return false;
    }
    if subset.len() + 1 < m {
        for i in start..current.len() {
            subset.push(current[i]);
            if !admits_rec(records, current, term, k, m, i + 1, subset) {
                subset.pop();
                return false;
            }
            subset.pop();
        }
    }
    true
}

/// Greedy vertical partitioning of one cluster. Terms with support below k
/// (and sensitive terms) go to the term chunk; the rest are packed into
/// chunks in support order, each round admitting every term that keeps the
/// chunk k^m-anonymous. Closes by enforcing the record-count bound.
pub fn verpart(data: &Dataset, cluster: &RawCluster, params: &Params) -> Leaf {
    let records: Vec<&Record> = cluster.positions.iter().map(|&p| &data.records[p]).collect();
    let supports = compute_supports(records.iter().copied());

    let mut term_chunk: Vec<TermId> = Vec::new();
    let mut remaining: Vec<TermId> = Vec::new();
    for t in supports.terms_by_support() {
        if supports.support(t) < params.k || params.sensitive.contains(&t) {
            term_chunk.push(t);
        } else {
            remaining.push(t);
        }
    }

    let mut chunks: Vec<RecordChunk> = Vec::new();
    while !remaining.is_empty() {
        let mut current: Vec<TermId> = Vec::new();
        let mut rest: Vec<TermId> = Vec::new();
        for &t in &remaining {
            if admits(records.iter().copied(), &current, t, params.k, params.m) {
                current.push(t);
            } else {
                rest.push(t);
            }
        }
        // A term with support >= k is always admissible on its own, so every
        // round places at least one term.
        assert!(!current.is_empty(), "greedy round placed nothing");
        chunks.push(build_chunk(&records, current));
        remaining = rest;
    }

    term_chunk.sort_unstable();
    let mut leaf = Leaf { size: records.len(), record_chunks: chunks, term_chunk };
    enforce_record_count_bound(&mut leaf, params.k, params.m);
    leaf
}

fn build_chunk(records: &[&Record], mut domain: Vec<TermId>) -> RecordChunk {
    domain.sort_unstable();
    let subrecords: Vec<Record> =
        records.iter().map(|r| r.project(&domain)).filter(|sr| !sr.is_empty()).collect();
    RecordChunk { domain, subrecords }
}

/// Lower bound on subrecord count for the cluster to dissolve into at least
/// k indistinguishable reconstructions: with v chunks and h = min(m, v),
/// the chunks must hold at least size + k*(h-1) subrecords, unless a
/// non-empty term chunk provides free padding. Repairs a violation by
/// demoting the least frequent chunk term (ties to the highest id) to the
/// term chunk, which makes the padding escape available.
pub fn enforce_record_count_bound(leaf: &mut Leaf, k: usize, m: usize) -> Vec<TermId> {
    let mut moved = Vec::new();
    while !record_count_bound_holds(leaf, k, m) {
        let mut worst: Option<(usize, TermId)> = None;
        for c in &leaf.record_chunks {
            for &t in &c.domain {
                let s = chunk_support(&c.subrecords, &[t]);
                let worse = match worst {
                    None => true,
                    Some((ws, wt)) => s < ws || (s == ws && t > wt),
                };
                if worse {
                    worst = Some((s, t));
                }
            }
        }
        let (_, term) = worst.expect("bound violated with no chunk terms");
        demote(leaf, term);
        moved.push(term);
    }
    moved
}

pub fn record_count_bound_holds(leaf: &Leaf, k: usize, m: usize) -> bool {
    !leaf.term_chunk.is_empty()
        || subrecord_count_bound(&leaf.record_chunks, leaf.size, k, m)
}

/// The arithmetic half of the bound, for callers that already know the term
/// chunk is (or is about to become) empty.
pub fn subrecord_count_bound(
    record_chunks: &[RecordChunk],
    size: usize,
    k: usize,
    m: usize,
) -> bool {
    let v = record_chunks.len();
    let h = m.min(v) as i64;
    let total: i64 = record_chunks.iter().map(|c| c.subrecords.len() as i64).sum();
    total >= size as i64 + k as i64 * (h - 1)
}

fn demote(leaf: &mut Leaf, term: TermId) {
    for i in 0..leaf.record_chunks.len() {
        let c = &mut leaf.record_chunks[i];
        if let Ok(pos) = c.domain.binary_search(&term) {
            c.domain.remove(pos);
            let domain = c.domain.clone();
            c.subrecords = c
                .subrecords
                .iter()
                .map(|sr| sr.project(&domain))
                .filter(|sr| !sr.is_empty())
                .collect();
            if c.domain.is_empty() {
                leaf.record_chunks.remove(i);
            }
            let at = leaf.term_chunk.binary_search(&term).unwrap_err();
            leaf.term_chunk.insert(at, term);
            return;
        }
    }
    panic!("term {term} not in any record chunk");
}

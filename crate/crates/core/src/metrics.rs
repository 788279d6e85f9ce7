//! Information-loss measurement: top-K frequent itemsets, pair relative
//! error, and the lost-term ratio, each in a reconstruction-averaged and a
//! chunk-lower-bound flavor.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{compute_supports, Dataset, Record, TermId};
use crate::error::{Error, Result};
use crate::model::{ClusterNode, DisassociatedDataset};
use crate::reconstruct::{reconstruct, TermPolicy};
use crate::vertical::chunk_support;

/// Itemsets larger than this never enter a mining result unless a caller
/// asks for more; the frequent sets of sparse logs are short.
pub const DEFAULT_MAX_ITEMSET_SIZE: usize = 4;

/// A set of terms together with its support under whichever support
/// function produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Itemset {
    /// Ascending.
    pub terms: Vec<TermId>,
    pub support: u64,
}

/// The `top` most supported itemsets of size 1 to `DEFAULT_MAX_ITEMSET_SIZE`,
/// ordered by support descending, then size ascending, then term order.
/// Itemsets with zero support never appear, so fewer than `top` may return.
pub fn mine_top_k(data: &Dataset, top: usize) -> Vec<Itemset> {
    let mut universe: Vec<TermId> = compute_supports(&data.records).iter().map(|(t, _)| t).collect();
    universe.sort_unstable();
    mine(
        &universe,
        |s| count_support(&data.records, s) as u64,
        top,
        DEFAULT_MAX_ITEMSET_SIZE,
    )
}

/// Records containing every term of `wanted` (ascending).
fn count_support(records: &[Record], wanted: &[TermId]) -> usize {
    records.iter().filter(|r| r.contains_all(wanted)).count()
}

/// Level-wise miner over an arbitrary support function; `support_of` must be
/// anti-monotone (a superset never has more support) or pruning is unsound.
/// `universe` is the ascending candidate alphabet.
fn mine<F>(universe: &[TermId], support_of: F, top: usize, max_size: usize) -> Vec<Itemset>
where
    F: Fn(&[TermId]) -> u64 + Sync,
{
    if top == 0 || max_size == 0 {
        return Vec::new();
    }
    debug_assert!(universe.windows(2).all(|w| w[0] < w[1]));

    let mut pool: Vec<Itemset> = universe
        .par_iter()
        .map(|&t| Itemset { terms: vec![t], support: support_of(&[t]) })
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|s| s.support >= 1)
        .collect();
    // Once `top` itemsets are known, anything below the weakest of them can
    // neither rank nor support a larger candidate, shrinking each level.
    let mut threshold = pool_floor(&pool, top);
    pool.retain(|s| s.support >= threshold);
    let mut frontier: Vec<Vec<TermId>> = pool.iter().map(|s| s.terms.clone()).collect();

    for _ in 2..=max_size {
        frontier.sort_unstable();
        let candidates = join_level(&frontier);
        if candidates.is_empty() {
            break;
        }
        let survivors: Vec<Itemset> = candidates
            .into_par_iter()
            .map(|terms| {
                let support = support_of(&terms);
                Itemset { terms, support }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .filter(|s| s.support >= threshold)
            .collect();
        if survivors.is_empty() {
            break;
        }
        pool.extend(survivors.iter().cloned());
        threshold = pool_floor(&pool, top);
        pool.retain(|s| s.support >= threshold);
        frontier = survivors
            .into_iter()
            .filter(|s| s.support >= threshold)
            .map(|s| s.terms)
            .collect();
    }

    pool.sort_unstable_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| a.terms.len().cmp(&b.terms.len()))
            .then_with(|| a.terms.cmp(&b.terms))
    });
    pool.truncate(top);
    pool
}

/// Support of the weakest itemset that would still make the top `top`,
/// or 1 while fewer than `top` itemsets are known.
fn pool_floor(pool: &[Itemset], top: usize) -> u64 {
    if pool.len() < top {
        return 1;
    }
    let mut supports: Vec<u64> = pool.iter().map(|s| s.support).collect();
    supports.sort_unstable_by_key(|&s| Reverse(s));
    supports[top - 1]
}

/// Classic candidate generation: join itemsets sharing all but their last
/// term, keep candidates whose every subset survived the previous level.
/// `frontier` must be sorted; equal-prefix blocks are then contiguous.
fn join_level(frontier: &[Vec<TermId>]) -> Vec<Vec<TermId>> {
    let known: HashSet<&[TermId]> = frontier.iter().map(|v| v.as_slice()).collect();
    let mut out = Vec::new();
    for (i, a) in frontier.iter().enumerate() {
        let prefix = &a[..a.len() - 1];
        for b in &frontier[i + 1..] {
            if &b[..b.len() - 1] != prefix {
                break;
            }
            let mut cand = a.clone();
            cand.push(*b.last().unwrap());
            if subsets_survived(&cand, &known) {
                out.push(cand);
            }
        }
    }
    out
}

fn subsets_survived(cand: &[TermId], known: &HashSet<&[TermId]>) -> bool {
    // Dropping either of the last two positions reproduces the two parents.
    let mut sub = Vec::with_capacity(cand.len() - 1);
    for skip in 0..cand.len().saturating_sub(2) {
        sub.clear();
        sub.extend(cand.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &t)| t));
        if !known.contains(sub.as_slice()) {
            return false;
        }
    }
    true
}

/// Fraction of `orig_top`'s itemsets missing from `other_top`, by term set.
pub fn tkd(orig_top: &[Itemset], other_top: &[Itemset]) -> f64 {
    if orig_top.is_empty() {
        return 0.0;
    }
    let other: HashSet<&[TermId]> = other_top.iter().map(|s| s.terms.as_slice()).collect();
    let common = orig_top.iter().filter(|s| other.contains(s.terms.as_slice())).count();
    1.0 - common as f64 / orig_top.len() as f64
}

/// Mean normalized support deviation over all pairs of the terms ranked
/// `lo..hi` by original support (descending, ties to the smaller id).
/// Each pair contributes |s_o - s_p| / ((s_o + s_p) / 2), which is 2 when
/// exactly one side is zero; pairs absent from both sides are skipped.
pub fn pair_relative_error(orig: &Dataset, other: &Dataset, range: (usize, usize)) -> Result<f64> {
    let ranked = compute_supports(&orig.records).terms_by_support();
    let slice = rank_slice(&ranked, range)?;
    Ok(mean_pair_error(
        slice,
        |p| count_support(&orig.records, p) as f64,
        |p| count_support(&other.records, p) as f64,
    ))
}

fn rank_slice(ranked: &[TermId], (lo, hi): (usize, usize)) -> Result<&[TermId]> {
    if lo > hi || hi > ranked.len() {
        return Err(Error::InvalidParams(format!(
            "pair rank range {lo}:{hi} does not fit the {} ranked terms",
            ranked.len()
        )));
    }
    Ok(&ranked[lo..hi])
}

fn mean_pair_error<O, P>(terms: &[TermId], s_o: O, s_p: P) -> f64
where
    O: Fn(&[TermId]) -> f64,
    P: Fn(&[TermId]) -> f64,
{
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in terms.iter().enumerate() {
        for &b in &terms[i + 1..] {
            let pair = if a < b { [a, b] } else { [b, a] };
            let so = s_o(&pair);
            let sp = s_p(&pair);
            if so == 0.0 && sp == 0.0 {
                continue;
            }
            sum += (so - sp).abs() / ((so + sp) / 2.0);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

/// Fraction of the terms with original support above `k` that the published
/// form keeps only in term chunks. Terms in any record or shared chunk
/// domain still expose their multiplicity and do not count as lost.
pub fn tlost(orig: &Dataset, da: &DisassociatedDataset, k: usize) -> f64 {
    let supports = compute_supports(&orig.records);
    let frequent: Vec<TermId> = supports.iter().filter(|&(_, c)| c > k).map(|(t, _)| t).collect();
    if frequent.is_empty() {
        return 0.0;
    }
    let mut linked: BTreeSet<TermId> = BTreeSet::new();
    let mut floating: BTreeSet<TermId> = BTreeSet::new();
    for node in &da.forest {
        linked.extend(node.linked_terms());
        for leaf in node.leaves() {
            floating.extend(leaf.term_chunk.iter().copied());
        }
    }
    let lost = frequent.iter().filter(|t| floating.contains(t) && !linked.contains(t)).count();
    lost as f64 / frequent.len() as f64
}

/// Provable minimum support of `terms` (ascending, non-empty) across every
/// dataset the published form could have come from: full chunk support
/// wherever one chunk domain covers the whole itemset, plus one occurrence
/// per term chunk holding a singleton's term. Itemsets split across chunk
/// domains contribute nothing from that cluster.
pub fn lower_bound_support(da: &DisassociatedDataset, terms: &[TermId]) -> u64 {
    debug_assert!(!terms.is_empty() && terms.windows(2).all(|w| w[0] < w[1]));
    let mut total = 0u64;
    for node in &da.forest {
        add_node_bound(node, terms, &mut total);
    }
    total
}

fn add_node_bound(node: &ClusterNode, terms: &[TermId], total: &mut u64) {
    match node {
        ClusterNode::Leaf(l) => {
            for c in &l.record_chunks {
                if domain_covers(&c.domain, terms) {
                    *total += chunk_support(&c.subrecords, terms) as u64;
                }
            }
            if terms.len() == 1 && l.term_chunk.binary_search(&terms[0]).is_ok() {
                *total += 1;
            }
        }
        ClusterNode::Joint(j) => {
            for child in &j.children {
                add_node_bound(child, terms, total);
            }
            for s in &j.shared_chunks {
                if domain_covers(&s.domain, terms) {
                    *total += chunk_support(&s.subrecords, terms) as u64;
                }
            }
        }
    }
}

fn domain_covers(domain: &[TermId], terms: &[TermId]) -> bool {
    terms.iter().all(|t| domain.binary_search(t).is_ok())
}

/// Everything the information-loss run measured, plus the parameters that
/// shaped it.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub tkd: f64,
    pub tkd_a: f64,
    pub re: f64,
    pub re_a: f64,
    pub tlost: f64,
    pub k: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub top_k: usize,
    /// "lo:hi", the term rank range behind `re` and `re_a`.
    pub pair_range: String,
    pub reconstructions: usize,
}

impl MetricsReport {
    /// Flat key=value block, one metric per line.
    pub fn to_text(&self) -> String {
        format!(
            "tkd={}\ntkd_a={}\nre={}\nre_a={}\ntlost={}\nk={}\nm={}\nK={}\npair_range={}\nreconstructions={}\n",
            self.tkd,
            self.tkd_a,
            self.re,
            self.re_a,
            self.tlost,
            self.k,
            self.m,
            self.top_k,
            self.pair_range,
            self.reconstructions,
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Measures how much analysis the disassociation cost. `tkd` and `re`
/// compare against supports averaged over `n_reconstructions` sampled
/// original-dataset candidates (seeds `seed`, `seed+1`, ...); `tkd_a` and
/// `re_a` use only the provable chunk lower bounds. Reconstruction sampling
/// uses the single-placement term policy, whose supports realize the
/// term-chunk lower bound of one.
pub fn metrics_run(
    orig: &Dataset,
    da: &DisassociatedDataset,
    top_k: usize,
    pair_range: (usize, usize),
    n_reconstructions: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if top_k == 0 {
        return Err(Error::InvalidParams("top-K must be positive".into()));
    }
    if n_reconstructions == 0 {
        return Err(Error::InvalidParams("reconstruction count must be positive".into()));
    }
    let ranked = compute_supports(&orig.records).terms_by_support();
    let slice = rank_slice(&ranked, pair_range)?;

    let orig_top = mine_top_k(orig, top_k);

    let recons: Vec<Dataset> = (0..n_reconstructions)
        .into_par_iter()
        .map(|i| reconstruct(da, seed.wrapping_add(i as u64), TermPolicy::Single))
        .collect::<Result<Vec<_>>>()?;

    let universe = forest_universe(da);
    // Integer sums over the n samples order itemsets exactly as the float
    // means would, without rounding.
    let summed = |s: &[TermId]| -> u64 {
        recons.iter().map(|d| count_support(&d.records, s) as u64).sum()
    };
    let lb = |s: &[TermId]| lower_bound_support(da, s);
    let avg_top = mine(&universe, &summed, top_k, DEFAULT_MAX_ITEMSET_SIZE);
    let lb_top = mine(&universe, &lb, top_k, DEFAULT_MAX_ITEMSET_SIZE);

    let n = n_reconstructions as f64;
    let re = mean_pair_error(
        slice,
        |p| count_support(&orig.records, p) as f64,
        |p| summed(p) as f64 / n,
    );
    let re_a = mean_pair_error(slice, |p| count_support(&orig.records, p) as f64, |p| lb(p) as f64);

    Ok(MetricsReport {
        tkd: tkd(&orig_top, &avg_top),
        tkd_a: tkd(&orig_top, &lb_top),
        re,
        re_a,
        tlost: tlost(orig, da, da.k),
        k: da.k,
        m: da.m,
        top_k,
        pair_range: format!("{}:{}", pair_range.0, pair_range.1),
        reconstructions: n_reconstructions,
    })
}

/// Every term the published forest mentions, ascending.
fn forest_universe(da: &DisassociatedDataset) -> Vec<TermId> {
    let mut set = BTreeSet::new();
    for node in &da.forest {
        set.extend(node.term_set());
    }
    set.into_iter().collect()
}

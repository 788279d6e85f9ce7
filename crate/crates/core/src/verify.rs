//! Auditing published datasets: fast checks of the guarantee's sufficient
//! conditions, and an exhaustive fallback for small clusters.

use std::collections::BTreeSet;
use std::fmt;

use crate::dataset::TermId;
use crate::error::Result;
use crate::model::{ClusterNode, DisassociatedDataset, Leaf, SharedChunk};
use crate::oracle::{check_node, GuaranteeViolation, OracleLimits};
use crate::vertical::{is_k_anonymous, is_km_anonymous, record_count_bound_holds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    /// A record chunk admits a term combination with support between 1 and k-1.
    ChunkKm,
    /// A shared chunk whose domain collides with linked terms below the joint
    /// must be plainly k-anonymous; a clean one must be k^m-anonymous.
    Property1,
    /// The stored strict_k flag disagrees with the collision computed from
    /// the joint's own structure.
    ChunkK,
    /// Too few subrecords for the slots to dissolve into k indistinguishable
    /// originals, and no term chunk to pad with.
    Lemma2Bound,
    /// Domains that must not share terms do.
    DomainOverlap,
    /// A chunk's subrecords stray outside its domain, or a domain term occurs
    /// in no subrecord.
    DomainCoverage,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::ChunkKm => "record chunk not km-anonymous",
            ViolationKind::Property1 => "shared chunk below requirement",
            ViolationKind::ChunkK => "strict_k flag wrong",
            ViolationKind::Lemma2Bound => "record count bound violated",
            ViolationKind::DomainOverlap => "domain overlap",
            ViolationKind::DomainCoverage => "domain coverage broken",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.location, self.detail)
    }
}

/// Checks every published invariant that underpins the guarantee. An empty
/// result means the dataset is k^m-anonymous by construction; it does not
/// re-derive the guarantee from scratch (see [`brute_force_guarantee`] for
/// that, on small inputs).
pub fn audit(ds: &DisassociatedDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, node) in ds.forest.iter().enumerate() {
        audit_node(node, ds.k, ds.m, &format!("forest[{i}]"), &mut out);
    }
    out
}

fn audit_node(node: &ClusterNode, k: usize, m: usize, at: &str, out: &mut Vec<Violation>) {
    match node {
        ClusterNode::Leaf(l) => audit_leaf(l, k, m, at, out),
        ClusterNode::Joint(j) => {
            for (ci, c) in j.children.iter().enumerate() {
                audit_node(c, k, m, &format!("{at}.children[{ci}]"), out);
            }

            // Terms already linked below the joint, against which each shared
            // chunk's collision (and so its requirement) is computed.
            let mut linked_below = BTreeSet::new();
            for c in &j.children {
                linked_below.extend(c.linked_terms());
            }
            let term_chunks_below: BTreeSet<TermId> = node
                .leaves()
                .iter()
                .flat_map(|l| l.term_chunk.iter().copied())
                .collect();

            let mut seen: BTreeSet<TermId> = BTreeSet::new();
            for (si, s) in j.shared_chunks.iter().enumerate() {
                let what = format!("{at}.shared_chunks[{si}]");
                audit_shared_chunk(s, k, m, &linked_below, &what, out);
                for &t in &s.domain {
                    if !seen.insert(t) {
                        out.push(Violation {
                            kind: ViolationKind::DomainOverlap,
                            location: what.clone(),
                            detail: format!("term {t} is in two shared chunks of the joint"),
                        });
                    }
                    if term_chunks_below.contains(&t) {
                        out.push(Violation {
                            kind: ViolationKind::DomainOverlap,
                            location: what.clone(),
                            detail: format!("term {t} is also in a term chunk below the joint"),
                        });
                    }
                }
            }
        }
    }
}

fn audit_leaf(l: &Leaf, k: usize, m: usize, at: &str, out: &mut Vec<Violation>) {
    let mut seen: BTreeSet<TermId> = l.term_chunk.iter().copied().collect();
    for (ci, c) in l.record_chunks.iter().enumerate() {
        let what = format!("{at}.record_chunks[{ci}]");
        if !is_km_anonymous(&c.subrecords, k, m) {
            out.push(Violation {
                kind: ViolationKind::ChunkKm,
                location: what.clone(),
                detail: format!("a term set of at most {m} has support below {k}"),
            });
        }
        coverage(&c.domain, &c.subrecords, &what, out);
        for &t in &c.domain {
            if !seen.insert(t) {
                out.push(Violation {
                    kind: ViolationKind::DomainOverlap,
                    location: what.clone(),
                    detail: format!("term {t} appears twice within the leaf"),
                });
            }
        }
    }
    if !record_count_bound_holds(l, k, m) {
        let total: usize = l.record_chunks.iter().map(|c| c.subrecords.len()).sum();
        let h = m.min(l.record_chunks.len());
        out.push(Violation {
            kind: ViolationKind::Lemma2Bound,
            location: at.to_string(),
            detail: format!(
                "{total} subrecords < {} + {k}*({h}-1) with an empty term chunk",
                l.size
            ),
        });
    }
}

fn audit_shared_chunk(
    s: &SharedChunk,
    k: usize,
    m: usize,
    linked_below: &BTreeSet<TermId>,
    at: &str,
    out: &mut Vec<Violation>,
) {
    let collides = s.domain.iter().any(|t| linked_below.contains(t));
    if s.strict_k != collides {
        out.push(Violation {
            kind: ViolationKind::ChunkK,
            location: at.to_string(),
            detail: format!(
                "flag says strict_k={}, structure says collision={collides}",
                s.strict_k
            ),
        });
    }
    let ok = if collides {
        is_k_anonymous(&s.subrecords, k)
    } else {
        is_km_anonymous(&s.subrecords, k, m)
    };
    if !ok {
        let need = if collides { "k-anonymity" } else { "km-anonymity" };
        out.push(Violation {
            kind: ViolationKind::Property1,
            location: at.to_string(),
            detail: format!("collision={collides} so the chunk needs {need}"),
        });
    }
    coverage(&s.domain, &s.subrecords, at, out);
}

fn coverage(
    domain: &[TermId],
    subrecords: &[crate::dataset::Record],
    at: &str,
    out: &mut Vec<Violation>,
) {
    for sr in subrecords {
        if let Some(&stray) = sr.terms().iter().find(|t| domain.binary_search(t).is_err()) {
            out.push(Violation {
                kind: ViolationKind::DomainCoverage,
                location: at.to_string(),
                detail: format!("subrecord holds term {stray} outside the domain"),
            });
        }
    }
    for &t in domain {
        if !subrecords.iter().any(|sr| sr.contains(t)) {
            out.push(Violation {
                kind: ViolationKind::DomainCoverage,
                location: at.to_string(),
                detail: format!("domain term {t} occurs in no subrecord"),
            });
        }
    }
}

/// Exhaustively re-derives the guarantee per top-level cluster: every
/// combination of at most m terms is either absent from all consistent
/// originals or reaches k records in one of them. Exponential; refuses
/// clusters beyond `limits`.
pub fn brute_force_guarantee(
    ds: &DisassociatedDataset,
    limits: &OracleLimits,
) -> Result<Vec<(usize, GuaranteeViolation)>> {
    let mut out = Vec::new();
    for (i, node) in ds.forest.iter().enumerate() {
        for v in check_node(node, ds.k, ds.m, limits)? {
            out.push((i, v));
        }
    }
    Ok(out)
}

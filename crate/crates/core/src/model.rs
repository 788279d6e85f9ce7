//! The published disassociated form and its JSON serialization.
//!
//! A disassociated dataset keeps every original term but severs the link
//! between terms that would identify a record: each cluster of records is
//! split vertically into record chunks (subrecords that stay attached to
//! their record slot), shared chunks (subrecords attached to a slot somewhere
//! under a joint cluster), and a term chunk whose terms float freely within
//! the cluster.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Record, TermDictionary, TermId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordChunk {
    /// Terms this chunk is responsible for, ascending.
    pub domain: Vec<TermId>,
    /// Non-empty projections of the cluster's records onto the domain.
    /// One subrecord occupies one record slot; order carries no information
    /// once published (sorted, or shuffled on request).
    pub subrecords: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedChunk {
    pub domain: Vec<TermId>,
    pub subrecords: Vec<Record>,
    /// True when the domain collides with terms kept in record or shared
    /// chunks below the joint, which tightens the requirement on this chunk
    /// from k^m-anonymity to plain k-anonymity.
    pub strict_k: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Number of record slots in the cluster.
    pub size: usize,
    pub record_chunks: Vec<RecordChunk>,
    /// Terms too rare (or too sensitive) to keep linked, ascending.
    pub term_chunk: Vec<TermId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub children: Vec<ClusterNode>,
    pub shared_chunks: Vec<SharedChunk>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClusterNode {
    Leaf(Leaf),
    Joint(Joint),
}

impl ClusterNode {
    /// Record slots under this node.
    pub fn size(&self) -> usize {
        match self {
            ClusterNode::Leaf(l) => l.size,
            ClusterNode::Joint(j) => j.children.iter().map(|c| c.size()).sum(),
        }
    }

    /// Leaves in depth-first order, which is also slot order.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            ClusterNode::Leaf(l) => out.push(l),
            ClusterNode::Joint(j) => {
                for c in &j.children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    /// Every term mentioned anywhere under this node.
    pub fn term_set(&self) -> BTreeSet<TermId> {
        let mut out = BTreeSet::new();
        self.collect_terms(&mut out);
        out
    }

    fn collect_terms(&self, out: &mut BTreeSet<TermId>) {
        match self {
            ClusterNode::Leaf(l) => {
                for c in &l.record_chunks {
                    out.extend(c.domain.iter().copied());
                }
                out.extend(l.term_chunk.iter().copied());
            }
            ClusterNode::Joint(j) => {
                for c in &j.children {
                    c.collect_terms(out);
                }
                for s in &j.shared_chunks {
                    out.extend(s.domain.iter().copied());
                }
            }
        }
    }

    /// Union of record-chunk and shared-chunk domains under this node.
    /// These are the terms whose multiplicity the published form exposes.
    pub fn linked_terms(&self) -> BTreeSet<TermId> {
        let mut out = BTreeSet::new();
        self.collect_linked(&mut out);
        out
    }

    fn collect_linked(&self, out: &mut BTreeSet<TermId>) {
        match self {
            ClusterNode::Leaf(l) => {
                for c in &l.record_chunks {
                    out.extend(c.domain.iter().copied());
                }
            }
            ClusterNode::Joint(j) => {
                for c in &j.children {
                    c.collect_linked(out);
                }
                for s in &j.shared_chunks {
                    out.extend(s.domain.iter().copied());
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisassociatedDataset {
    pub k: usize,
    pub m: usize,
    pub dictionary: TermDictionary,
    pub forest: Vec<ClusterNode>,
}

impl DisassociatedDataset {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let da: DisassociatedDataset = serde_json::from_str(text)?;
        da.validate()?;
        Ok(da)
    }

    /// Structural well-formedness: ids resolve in the dictionary, id arrays
    /// are strictly ascending, chunks are non-trivial and fit their slots.
    /// Anonymity itself is the audit's job, not a parse-time concern.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Structural(format!("k must be at least 2, got {}", self.k)));
        }
        if self.m < 1 {
            return Err(Error::Structural("m must be at least 1".into()));
        }
        if self.forest.is_empty() {
            return Err(Error::Structural("forest is empty".into()));
        }
        for (i, node) in self.forest.iter().enumerate() {
            self.validate_node(node, &format!("forest[{i}]"))?;
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[TermId], what: &str) -> Result<()> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structural(format!("{what}: ids not strictly ascending")));
        }
        if let Some(&bad) = ids.iter().find(|&&t| (t as usize) >= self.dictionary.len()) {
            return Err(Error::Structural(format!("{what}: id {bad} outside the dictionary")));
        }
        Ok(())
    }

    fn validate_node(&self, node: &ClusterNode, at: &str) -> Result<()> {
        match node {
            ClusterNode::Leaf(l) => {
                if l.size == 0 {
                    return Err(Error::Structural(format!("{at}: leaf with zero slots")));
                }
                for (ci, c) in l.record_chunks.iter().enumerate() {
                    let what = format!("{at}.record_chunks[{ci}]");
                    self.check_ids(&c.domain, &what)?;
                    if c.domain.is_empty() {
                        return Err(Error::Structural(format!("{what}: empty domain")));
                    }
                    if c.subrecords.len() > l.size {
                        return Err(Error::Structural(format!(
                            "{what}: {} subrecords for {} slots",
                            c.subrecords.len(),
                            l.size
                        )));
                    }
                    for sr in &c.subrecords {
                        if sr.is_empty() {
                            return Err(Error::Structural(format!("{what}: empty subrecord")));
                        }
                    }
                }
                self.check_ids(&l.term_chunk, &format!("{at}.term_chunk"))
            }
            ClusterNode::Joint(j) => {
                if j.children.len() < 2 {
                    return Err(Error::Structural(format!("{at}: joint needs two children")));
                }
                for (ci, c) in j.children.iter().enumerate() {
                    self.validate_node(c, &format!("{at}.children[{ci}]"))?;
                }
                let slots: usize = j.children.iter().map(|c| c.size()).sum();
                for (si, s) in j.shared_chunks.iter().enumerate() {
                    let what = format!("{at}.shared_chunks[{si}]");
                    self.check_ids(&s.domain, &what)?;
                    if s.domain.is_empty() {
                        return Err(Error::Structural(format!("{what}: empty domain")));
                    }
                    if s.subrecords.len() > slots {
                        return Err(Error::Structural(format!(
                            "{what}: {} subrecords for {} slots",
                            s.subrecords.len(),
                            slots
                        )));
                    }
                    for sr in &s.subrecords {
                        if sr.is_empty() {
                            return Err(Error::Structural(format!("{what}: empty subrecord")));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DisassociatedDataset {
        DisassociatedDataset {
            k: 2,
            m: 2,
            dictionary: TermDictionary::from_tokens(vec!["a".into(), "b".into(), "c".into()])
                .unwrap(),
            forest: vec![ClusterNode::Leaf(Leaf {
                size: 2,
                record_chunks: vec![RecordChunk {
                    domain: vec![0, 1],
                    subrecords: vec![Record::new(vec![0, 1]), Record::new(vec![0, 1])],
                }],
                term_chunk: vec![2],
            })],
        }
    }

    #[test]
    fn json_shape_is_stable() {
        let json = tiny().to_json();
        assert_eq!(
            json,
            concat!(
                r#"{"k":2,"m":2,"dictionary":["a","b","c"],"forest":[{"type":"leaf","size":2,"#,
                r#""record_chunks":[{"domain":[0,1],"subrecords":[[0,1],[0,1]]}],"term_chunk":[2]}]}"#,
                "\n"
            )
        );
    }

    #[test]
    fn json_round_trip() {
        let da = tiny();
        let back = DisassociatedDataset::from_json(&da.to_json()).unwrap();
        assert_eq!(back.forest, da.forest);
        assert_eq!(back.dictionary, da.dictionary);
    }

    #[test]
    fn validate_rejects_out_of_range_ids() {
        let mut da = tiny();
        if let ClusterNode::Leaf(l) = &mut da.forest[0] {
            l.term_chunk = vec![9];
        }
        assert!(matches!(da.validate(), Err(Error::Structural(_))));
    }

    #[test]
    fn validate_rejects_unsorted_domain() {
        let text = tiny().to_json().replace("\"domain\":[0,1]", "\"domain\":[1,0]");
        assert!(DisassociatedDataset::from_json(&text).is_err());
    }

    #[test]
    fn validate_rejects_overfull_chunk() {
        let mut da = tiny();
        if let ClusterNode::Leaf(l) = &mut da.forest[0] {
            l.size = 1;
        }
        assert!(matches!(da.validate(), Err(Error::Structural(_))));
    }

    #[test]
    fn joint_size_and_leaves() {
        let leaf = Leaf { size: 3, record_chunks: vec![], term_chunk: vec![0] };
        let node = ClusterNode::Joint(Joint {
            children: vec![ClusterNode::Leaf(leaf.clone()), ClusterNode::Leaf(leaf)],
            shared_chunks: vec![],
        });
        assert_eq!(node.size(), 6);
        assert_eq!(node.leaves().len(), 2);
    }
}

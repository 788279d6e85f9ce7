//! Set-valued records, the term dictionary, and the line-oriented text format.

use std::collections::HashMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Terms are dense integers assigned in order of first appearance.
pub type TermId = u32;

/// A record is a set of terms, stored sorted and deduplicated.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Record(Vec<TermId>);

impl Record {
    pub fn new(mut terms: Vec<TermId>) -> Self {
        terms.sort_unstable();
        terms.dedup();
        Record(terms)
    }

    /// Caller promises `terms` is strictly ascending.
    pub fn from_sorted(terms: Vec<TermId>) -> Self {
        debug_assert!(terms.windows(2).all(|w| w[0] < w[1]));
        Record(terms)
    }

    pub fn terms(&self) -> &[TermId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, term: TermId) -> bool {
        self.0.binary_search(&term).is_ok()
    }

    /// True when every term of `wanted` (sorted ascending) occurs in the record.
    pub fn contains_all(&self, wanted: &[TermId]) -> bool {
        let mut it = self.0.iter();
        'outer: for w in wanted {
            for t in it.by_ref() {
                match t.cmp(w) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => continue 'outer,
                    std::cmp::Ordering::Greater => return false,
                }
            }
            return false;
        }
        true
    }

    /// Intersection with a sorted domain, as a new record.
    pub fn project(&self, domain: &[TermId]) -> Record {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < domain.len() {
            match self.0[i].cmp(&domain[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Record(out)
    }
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

// Rejecting unsorted input here means no code path can observe a record that
// violates the set invariant, no matter where the JSON came from.
impl<'de> Deserialize<'de> for Record {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<TermId>::deserialize(deserializer)?;
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(D::Error::custom("record terms must be strictly ascending"));
        }
        Ok(Record(terms))
    }
}

/// Bijection between tokens and term ids, ids dense in first-appearance order.
#[derive(Clone, Default, Debug)]
pub struct TermDictionary {
    tokens: Vec<String>,
    index: HashMap<String, TermId>,
}

impl TermDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str) -> TermId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TermId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TermId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TermId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TermId).is_some() {
                return Err(Error::Structural(format!("duplicate dictionary token {t:?}")));
            }
        }
        Ok(TermDictionary { tokens, index })
    }
}

impl PartialEq for TermDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Serialize for TermDictionary {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TermDictionary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        TermDictionary::from_tokens(tokens).map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub dictionary: TermDictionary,
}

/// What `parse` cleaned up along the way.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ParseStats {
    /// Tokens dropped because they repeated inside one line.
    pub duplicates_removed: usize,
    /// Lines containing only whitespace.
    pub blank_lines: usize,
}

impl Dataset {
    /// One record per non-blank line, tokens separated by whitespace.
    pub fn parse(text: &str) -> Result<(Dataset, ParseStats)> {
        let mut dictionary = TermDictionary::new();
        let mut records = Vec::new();
        let mut stats = ParseStats::default();
        for line in text.lines() {
            let mut terms: Vec<TermId> = line.split_whitespace().map(|t| dictionary.intern(t)).collect();
            if terms.is_empty() {
                stats.blank_lines += 1;
                continue;
            }
            let raw = terms.len();
            terms.sort_unstable();
            terms.dedup();
            stats.duplicates_removed += raw - terms.len();
            records.push(Record::from_sorted(terms));
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok((Dataset { records, dictionary }, stats))
    }

    /// Inverse of `parse`: one line per record, tokens in term-id order,
    /// single spaces, every line newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut first = true;
            for &t in r.terms() {
                if !first {
                    out.push(' ');
                }
                out.push_str(self.dictionary.token(t));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Term frequencies over some collection of records.
#[derive(Debug, Clone, Default)]
pub struct SupportTable {
    counts: HashMap<TermId, usize>,
}

impl SupportTable {
    pub fn support(&self, term: TermId) -> usize {
        self.counts.get(&term).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, usize)> + '_ {
        self.counts.iter().map(|(&t, &c)| (t, c))
    }

    /// Terms ordered by descending support, ties by ascending id.
    pub fn terms_by_support(&self) -> Vec<TermId> {
        let mut terms: Vec<TermId> = self.counts.keys().copied().collect();
        terms.sort_unstable_by_key(|&t| (std::cmp::Reverse(self.counts[&t]), t));
        terms
    }
}

pub fn compute_supports<'a, I>(records: I) -> SupportTable
where
    I: IntoIterator<Item = &'a Record>,
{
    let mut counts = HashMap::new();
    for r in records {
        for &t in r.terms() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    SupportTable { counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::example_web_log;

    #[test]
    fn parse_assigns_ids_in_first_appearance_order() {
        let (d, stats) = Dataset::parse("b a\nc a\n").unwrap();
        assert_eq!(d.dictionary.tokens(), ["b", "a", "c"]);
        assert_eq!(d.records[0].terms(), [0, 1]);
        assert_eq!(d.records[1].terms(), [1, 2]);
        assert_eq!(stats, ParseStats::default());
    }

    #[test]
    fn parse_dedups_and_skips_blank_lines() {
        let (d, stats) = Dataset::parse("a b a\n   \n\nb\n").unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0].terms(), [0, 1]);
        assert_eq!(stats.duplicates_removed, 1);
        assert_eq!(stats.blank_lines, 2);
    }

    #[test]
    fn parse_rejects_empty_input() {
        assert!(matches!(Dataset::parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(Dataset::parse("\n  \n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn text_round_trip_is_identity() {
        let (d, _) = Dataset::parse("b a\nc a\nd\n").unwrap();
        let text = d.to_text();
        let (d2, _) = Dataset::parse(&text).unwrap();
        assert_eq!(d, d2);
        assert_eq!(d2.to_text(), text);
    }

    #[test]
    fn example_dataset_has_ten_records_twelve_terms() {
        let d = example_web_log();
        assert_eq!(d.records.len(), 10);
        assert_eq!(d.dictionary.len(), 12);
        // Spot checks against the worked example's id assignment.
        assert_eq!(d.dictionary.token(2), "madonna");
        assert_eq!(d.dictionary.token(6), "audi_a4");
        assert_eq!(d.dictionary.token(11), "iphone_sdk");
    }

    #[test]
    fn supports_match_hand_counts() {
        let d = example_web_log();
        let s = compute_supports(&d.records);
        assert_eq!(s.support(2), 8); // madonna
        assert_eq!(s.support(6), 3); // audi_a4
        assert_eq!(s.support(5), 2); // viagra
        let p1 = compute_supports(&d.records[..5]);
        assert_eq!(p1.support(0), 4); // itunes within the first cluster
        assert_eq!(p1.support(3), 2); // ikea within the first cluster
    }

    #[test]
    fn support_order_breaks_ties_by_id() {
        let (d, _) = Dataset::parse("x y\ny x\nz x y\n").unwrap();
        let s = compute_supports(&d.records);
        assert_eq!(s.terms_by_support(), vec![0, 1, 2]);
    }

    #[test]
    fn record_set_operations() {
        let r = Record::new(vec![5, 1, 3, 1]);
        assert_eq!(r.terms(), [1, 3, 5]);
        assert!(r.contains_all(&[1, 5]));
        assert!(!r.contains_all(&[1, 2]));
        assert_eq!(r.project(&[0, 3, 5, 9]).terms(), [3, 5]);
    }

    #[test]
    fn record_json_rejects_unsorted() {
        assert!(serde_json::from_str::<Record>("[1,3,5]").is_ok());
        assert!(serde_json::from_str::<Record>("[3,1]").is_err());
        assert!(serde_json::from_str::<Record>("[1,1]").is_err());
    }
}

//! Randomized invariants: whatever the input, the pipeline's privacy
//! conditions, inverses, and analysis bounds must hold.

use std::collections::BTreeSet;

use proptest::prelude::*;

use disassoc::dataset::{Dataset, TermId};
use disassoc::horizontal::horpart;
use disassoc::metrics::{lower_bound_support, mine_top_k, Itemset};
use disassoc::oracle::OracleLimits;
use disassoc::params::Params;
use disassoc::pipeline::anonymize;
use disassoc::reconstruct::{check_closure, reconstruct, TermPolicy};
use disassoc::verify::{audit, brute_force_guarantee};

/// Random whitespace dataset: `records` lines, each a non-empty subset of at
/// most eight tokens.
fn dataset_text(records: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::collection::btree_set(0u32..8, 1..=5), records).prop_map(
        |recs| {
            let mut text = String::new();
            for r in recs {
                let line: Vec<String> = r.iter().map(|t| format!("t{t}")).collect();
                text.push_str(&line.join(" "));
                text.push('\n');
            }
            text
        },
    )
}

fn parse(text: &str) -> Dataset {
    Dataset::parse(text).unwrap().0
}

/// Exhaustive top-K mining over all subsets, the slow way, for cross-checking.
fn naive_top_k(data: &Dataset, top: usize, max_size: usize) -> Vec<Itemset> {
    let universe: BTreeSet<TermId> =
        data.records.iter().flat_map(|r| r.terms().iter().copied()).collect();
    let universe: Vec<TermId> = universe.into_iter().collect();
    let mut all = Vec::new();
    for mask in 1u32..(1 << universe.len()) {
        if (mask.count_ones() as usize) > max_size {
            continue;
        }
        let terms: Vec<TermId> = universe
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &t)| t)
            .collect();
        let support =
            data.records.iter().filter(|r| terms.iter().all(|&t| r.contains(t))).count() as u64;
        if support >= 1 {
            all.push(Itemset { terms, support });
        }
    }
    all.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(a.terms.len().cmp(&b.terms.len()))
            .then(a.terms.cmp(&b.terms))
    });
    all.truncate(top);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn text_round_trips_through_parse(text in dataset_text(1..=8)) {
        let d = parse(&text);
        let again = parse(&d.to_text());
        prop_assert_eq!(&again.records, &d.records);
        prop_assert_eq!(again.dictionary.tokens(), d.dictionary.tokens());
    }

    #[test]
    fn horizontal_clusters_partition_the_positions(text in dataset_text(1..=8)) {
        let d = parse(&text);
        let p = Params::new(2, 2, 4).unwrap();
        let clusters = horpart(&d, &p);
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.positions.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..d.records.len()).collect::<Vec<_>>());
    }

    #[test]
    fn miner_agrees_with_exhaustive_enumeration(
        text in dataset_text(1..=12),
        top in 1usize..20,
    ) {
        let d = parse(&text);
        prop_assert_eq!(mine_top_k(&d, top), naive_top_k(&d, top, 4));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipeline_output_passes_audit(
        text in dataset_text(3..=8),
        k in 2usize..=3,
        spread in 0usize..=4,
    ) {
        let d = parse(&text);
        let p = Params::new(k, 2, (2 * k + spread).min(8)).unwrap();
        let (da, _) = anonymize(&d, &p).unwrap();
        da.validate().unwrap();
        let violations = audit(&da);
        prop_assert!(violations.is_empty(), "audit failed: {violations:?}");
    }

    #[test]
    fn pipeline_output_survives_the_exhaustive_oracle(
        text in dataset_text(3..=8),
        k in 2usize..=3,
    ) {
        let d = parse(&text);
        let p = Params::new(k, 2, 2 * k).unwrap();
        let (da, _) = anonymize(&d, &p).unwrap();
        let limits = OracleLimits { max_steps: 500_000_000, ..OracleLimits::default() };
        let broken = brute_force_guarantee(&da, &limits).unwrap();
        prop_assert!(broken.is_empty(), "guarantee broken: {broken:?}");
    }

    #[test]
    fn sampled_reconstructions_close_over_the_published_form(
        text in dataset_text(3..=8),
        seed in 0u64..1000,
    ) {
        let d = parse(&text);
        let p = Params::new(2, 2, 5).unwrap();
        let (da, _) = anonymize(&d, &p).unwrap();
        for policy in [TermPolicy::Single, TermPolicy::Uniform] {
            let sample = reconstruct(&da, seed, policy).unwrap();
            if let Err(e) = check_closure(&da, &sample) {
                return Err(TestCaseError::fail(format!("closure: {e}")));
            }
        }
    }

    #[test]
    fn chunk_lower_bounds_never_exceed_reconstruction_supports(
        text in dataset_text(3..=8),
        seed in 0u64..1000,
    ) {
        let d = parse(&text);
        let p = Params::new(2, 2, 6).unwrap();
        let (da, _) = anonymize(&d, &p).unwrap();
        let samples: Vec<Dataset> = (0..2)
            .map(|i| reconstruct(&da, seed.wrapping_add(i), TermPolicy::Single).unwrap())
            .collect();
        let universe: Vec<TermId> =
            d.records.iter().flat_map(|r| r.terms().iter().copied()).collect::<BTreeSet<_>>()
                .into_iter().collect();
        let mut sets: Vec<Vec<TermId>> = universe.iter().map(|&t| vec![t]).collect();
        for (i, &a) in universe.iter().enumerate() {
            for &b in &universe[i + 1..] {
                sets.push(vec![a, b]);
            }
        }
        for s in &sets {
            let lb = lower_bound_support(&da, s);
            for sample in &samples {
                let sup = sample
                    .records
                    .iter()
                    .filter(|r| s.iter().all(|&t| r.contains(t)))
                    .count() as u64;
                prop_assert!(
                    lb <= sup,
                    "bound {lb} exceeds support {sup} of {s:?} in a valid reconstruction"
                );
            }
            if s.len() == 1 {
                let orig = d
                    .records
                    .iter()
                    .filter(|r| r.contains(s[0]))
                    .count() as u64;
                prop_assert!(lb <= orig, "bound {lb} exceeds original support {orig} of {s:?}");
            }
        }
    }
}

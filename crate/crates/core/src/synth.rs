//! Synthetic set-valued data with Zipf-distributed term popularity.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};

use crate::dataset::{Dataset, Record, TermDictionary, TermId};
use crate::error::{Error, Result};

/// Draws `num_records` records whose lengths follow Poisson(`avg_len`)
/// clamped to [1, `domain_size`] and whose terms are drawn without
/// replacement from a Zipf(1.0) law over the domain. Terms are then
/// relabeled to first-appearance ids (the dictionary invariant every
/// dataset carries), so popularity rank and term id need not coincide.
/// Tokens are named t0, t1, ... after the final ids; ranks nobody drew
/// never enter the dictionary.
pub fn generate(num_records: usize, domain_size: usize, avg_len: f64, seed: u64) -> Result<Dataset> {
    if num_records == 0 {
        return Err(Error::InvalidParams("record count must be positive".into()));
    }
    if domain_size == 0 {
        return Err(Error::InvalidParams("domain size must be positive".into()));
    }
    if !(avg_len > 0.0) {
        return Err(Error::InvalidParams("average length must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = Poisson::new(avg_len).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let ranks = Zipf::new(domain_size as u64, 1.0).map_err(|e| Error::InvalidParams(e.to_string()))?;

    let mut relabel: HashMap<u32, TermId> = HashMap::new();
    let mut dictionary = TermDictionary::new();
    let mut records = Vec::with_capacity(num_records);
    let mut draw = Vec::new();
    for _ in 0..num_records {
        let len = (lengths.sample(&mut rng) as usize).clamp(1, domain_size);
        draw.clear();
        while draw.len() < len {
            let rank = ranks.sample(&mut rng) as u32 - 1;
            if !draw.contains(&rank) {
                draw.push(rank);
            }
        }
        let terms: Vec<TermId> = draw
            .iter()
            .map(|&rank| {
                *relabel
                    .entry(rank)
                    .or_insert_with(|| dictionary.intern(&format!("t{}", dictionary.len())))
            })
            .collect();
        records.push(Record::new(terms));
    }
    Ok(Dataset { records, dictionary })
}

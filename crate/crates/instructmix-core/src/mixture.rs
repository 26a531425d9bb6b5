//! Examples-proportional mixing with a rate maximum, and the seeded
//! training stream drawn from it.
//!
//! Weights are exact rationals: a dataset contributes min(capped_size,
//! rate_max) units of weight, so examples beyond the rate maximum add no
//! sampling probability. Stream draws are indexed substreams, which makes
//! any stream a prefix of every longer stream with the same seed.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default rate maximum: examples beyond this count add no weight.
pub const DEFAULT_RATE_MAX: usize = 3_000;

/// An exact rational weight, stored reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Weight {
    pub numer: u64,
    pub denom: u64,
}

impl Weight {
    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.numer, self.denom)
    }
}

impl From<Ratio<u64>> for Weight {
    fn from(r: Ratio<u64>) -> Self {
        Weight {
            numer: *r.numer(),
            denom: *r.denom(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub dataset: String,
    pub raw_size: usize,
    pub capped_size: usize,
    pub weight: Weight,
}

/// Deterministic record of a built mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub entries: Vec<MixtureEntry>,
    pub seed: u64,
    pub total_draws: usize,
    pub train_cap: usize,
    pub rate_max: usize,
}

impl MixtureManifest {
    /// Weight units per dataset (min of capped size and rate max), in entry
    /// order. The sum of these is the common weight denominator.
    fn weight_units(&self) -> Vec<u64> {
        self.entries
            .iter()
            .map(|e| e.capped_size.min(self.rate_max) as u64)
            .collect()
    }
}

/// One draw of the training stream: a dataset and an example index into its
/// capped train split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDraw {
    pub dataset: String,
    pub example_index: usize,
}

/// Computes examples-proportional weights with the rate maximum.
///
/// `raw_sizes` maps dataset name to its uncapped train size; the train cap
/// is applied here so the manifest records both sizes.
pub fn compute_weights(
    raw_sizes: &BTreeMap<String, usize>,
    train_cap: usize,
    rate_max: usize,
    seed: u64,
    total_draws: usize,
) -> Result<MixtureManifest> {
    if raw_sizes.is_empty() {
        return Err(Error::Validation("mixture requires at least one dataset".into()));
    }
    if rate_max == 0 || train_cap == 0 {
        return Err(Error::Validation("train_cap and rate_max must be positive".into()));
    }
    for (name, &size) in raw_sizes {
        if size == 0 {
            return Err(Error::Validation(format!(
                "dataset `{name}` has zero training examples"
            )));
        }
    }
    let denom: u64 = raw_sizes
        .values()
        .map(|&raw| raw.min(train_cap).min(rate_max) as u64)
        .sum();
    let entries = raw_sizes
        .iter()
        .map(|(name, &raw)| {
            let capped = raw.min(train_cap);
            let units = capped.min(rate_max) as u64;
            MixtureEntry {
                dataset: name.clone(),
                raw_size: raw,
                capped_size: capped,
                weight: Ratio::new(units, denom).into(),
            }
        })
        .collect();
    Ok(MixtureManifest {
        entries,
        seed,
        total_draws,
        train_cap,
        rate_max,
    })
}

/// The `index`-th draw of the stream described by `manifest`.
///
/// Dataset choice walks cumulative weight units with an exact integer draw;
/// the example index is then uniform over the dataset's capped train split
/// (sampling with replacement across the stream).
pub fn stream_draw(manifest: &MixtureManifest, index: u64) -> StreamDraw {
    let units = manifest.weight_units();
    let total: u64 = units.iter().sum();
    debug_assert!(total > 0, "manifest has positive total weight");
    let mut rng = seed::substream_indexed(manifest.seed, &["mixture", "draw"], index);
    let mut point = rng.gen_range(0..total);
    let mut chosen = manifest.entries.len() - 1;
    for (i, &u) in units.iter().enumerate() {
        if point < u {
            chosen = i;
            break;
        }
        point -= u;
    }
    let entry = &manifest.entries[chosen];
    let example_index = rng.gen_range(0..entry.capped_size);
    StreamDraw {
        dataset: entry.dataset.clone(),
        example_index,
    }
}

/// Materializes the first `total` draws of the stream.
pub fn sample_stream(manifest: &MixtureManifest, total: usize) -> Vec<StreamDraw> {
    (0..total as u64).map(|i| stream_draw(manifest, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn sizes(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    // Independent route to the weights: enumerate per-dataset units one
    // example at a time, stopping at caps, then normalize.
    fn brute_force_weights(
        raw_sizes: &BTreeMap<String, usize>,
        train_cap: usize,
        rate_max: usize,
    ) -> BTreeMap<String, Ratio<u64>> {
        let mut units: BTreeMap<String, u64> = BTreeMap::new();
        for (name, &raw) in raw_sizes {
            let mut count = 0u64;
            for i in 0..raw {
                if i >= train_cap || i >= rate_max {
                    break;
                }
                count += 1;
            }
            units.insert(name.clone(), count);
        }
        let total: u64 = units.values().sum();
        units
            .into_iter()
            .map(|(name, u)| (name, Ratio::new(u, total)))
            .collect()
    }

    #[test]
    fn weights_match_min_cap_formula() {
        let manifest =
            compute_weights(&sizes(&[("a", 100), ("b", 5000), ("c", 40000)]), 30_000, 3_000, 0, 0)
                .unwrap();
        let expected = [
            ("a", Ratio::new(100u64, 6100)),
            ("b", Ratio::new(3000u64, 6100)),
            ("c", Ratio::new(3000u64, 6100)),
        ];
        for (entry, (name, ratio)) in manifest.entries.iter().zip(expected) {
            assert_eq!(entry.dataset, name);
            assert_eq!(entry.weight.ratio(), ratio);
        }
        assert_eq!(manifest.entries[2].capped_size, 30_000);
        assert_eq!(manifest.entries[2].raw_size, 40_000);
        // Cross-check against the enumeration oracle.
        let oracle = brute_force_weights(&sizes(&[("a", 100), ("b", 5000), ("c", 40000)]), 30_000, 3_000);
        for entry in &manifest.entries {
            assert_eq!(entry.weight.ratio(), oracle[&entry.dataset]);
        }
    }

    #[test]
    fn weights_sum_to_one_exactly() {
        let manifest =
            compute_weights(&sizes(&[("a", 7), ("b", 311), ("c", 9999)]), 30_000, 3_000, 0, 0)
                .unwrap();
        let sum: Ratio<u64> = manifest
            .entries
            .iter()
            .map(|e| e.weight.ratio())
            .sum();
        assert_eq!(sum, Ratio::new(1, 1));
    }

    #[test]
    fn single_dataset_gets_weight_one() {
        let manifest = compute_weights(&sizes(&[("only", 123)]), 30_000, 3_000, 0, 0).unwrap();
        assert_eq!(manifest.entries[0].weight.ratio(), Ratio::new(1, 1));
    }

    #[test]
    fn sizes_at_or_above_rate_max_are_uniform() {
        let manifest =
            compute_weights(&sizes(&[("a", 3000), ("b", 18000), ("c", 29999)]), 30_000, 3_000, 0, 0)
                .unwrap();
        for entry in &manifest.entries {
            assert_eq!(entry.weight.ratio(), Ratio::new(1, 3));
        }
    }

    #[test]
    fn empty_sizes_rejected() {
        assert!(compute_weights(&BTreeMap::new(), 30_000, 3_000, 0, 0).is_err());
    }

    #[test]
    fn scale_above_cap_leaves_weights_unchanged() {
        let base = compute_weights(&sizes(&[("a", 4000), ("b", 8000)]), 30_000, 3_000, 0, 0).unwrap();
        let scaled =
            compute_weights(&sizes(&[("a", 12000), ("b", 24000)]), 30_000, 3_000, 0, 0).unwrap();
        for (b, s) in base.entries.iter().zip(&scaled.entries) {
            assert_eq!(b.weight, s.weight);
        }
    }

    #[test]
    fn growth_below_cap_strictly_increases_weight() {
        let before = compute_weights(&sizes(&[("a", 100), ("b", 5000)]), 30_000, 3_000, 0, 0).unwrap();
        let after = compute_weights(&sizes(&[("a", 101), ("b", 5000)]), 30_000, 3_000, 0, 0).unwrap();
        assert!(after.entries[0].weight.ratio() > before.entries[0].weight.ratio());
    }

    #[test]
    fn stream_is_deterministic_and_prefix_stable() {
        let manifest =
            compute_weights(&sizes(&[("a", 100), ("b", 5000), ("c", 40000)]), 30_000, 3_000, 9, 500)
                .unwrap();
        let full = sample_stream(&manifest, 500);
        let again = sample_stream(&manifest, 500);
        assert_eq!(full, again);
        let prefix = sample_stream(&manifest, 120);
        assert_eq!(&full[..120], &prefix[..]);
    }

    #[test]
    fn single_draw_is_reproducible() {
        let manifest = compute_weights(&sizes(&[("a", 10), ("b", 10)]), 30_000, 3_000, 4, 1).unwrap();
        assert_eq!(stream_draw(&manifest, 0), stream_draw(&manifest, 0));
    }

    #[test]
    fn draw_counts_track_weights() {
        let manifest =
            compute_weights(&sizes(&[("a", 100), ("b", 5000), ("c", 40000)]), 30_000, 3_000, 7, 61_000)
                .unwrap();
        let stream = sample_stream(&manifest, 61_000);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for draw in &stream {
            *counts.entry(draw.dataset.as_str()).or_default() += 1;
        }
        let n = 61_000f64;
        for entry in &manifest.entries {
            let p = *entry.weight.ratio().numer() as f64 / *entry.weight.ratio().denom() as f64;
            let mean = n * p;
            let sigma = (n * p * (1.0 - p)).sqrt();
            let observed = counts[entry.dataset.as_str()] as f64;
            assert!(
                (observed - mean).abs() <= 3.0 * sigma,
                "{}: observed {observed}, expected {mean} ± {}",
                entry.dataset,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn example_indices_stay_in_capped_range() {
        let manifest = compute_weights(&sizes(&[("a", 40_000)]), 30_000, 3_000, 3, 2_000).unwrap();
        for draw in sample_stream(&manifest, 2_000) {
            assert!(draw.example_index < 30_000);
        }
    }
}

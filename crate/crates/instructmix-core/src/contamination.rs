//! Pretraining-overlap audit: n-gram indexing, clean/dirty classification,
//! and per-dataset contamination reports.
//!
//! An evaluation example is dirty if any n-gram of its text collides with
//! the pretraining corpus. Text is lowercased and split on whitespace before
//! gramming; grams are stored exactly, so membership has no false positives
//! or negatives at the scales this tool targets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::registry::Example;

/// Default n-gram length for overlap checks.
pub const DEFAULT_NGRAM_LEN: usize = 13;

/// Lowercase and split on whitespace (runs collapse).
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn grams_of(tokens: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    tokens.windows(n).map(|w| w.join(" "))
}

/// Exact set of all normalized n-grams of a corpus.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    pub n: usize,
    grams: HashSet<String>,
    pub corpus_token_count: usize,
}

impl NgramIndex {
    /// Indexes every contiguous n-gram of the normalized, space-split
    /// corpus. A corpus shorter than n tokens yields an empty index.
    pub fn build(corpus: &str, n: usize) -> NgramIndex {
        assert!(n >= 1, "ngram length must be at least 1");
        let tokens = normalize_tokens(corpus);
        let grams: HashSet<String> = grams_of(&tokens, n).collect();
        NgramIndex {
            n,
            grams,
            corpus_token_count: tokens.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cleanliness {
    Clean,
    Dirty,
}

/// Texts of an example subject to the overlap check.
fn checked_texts(example: &Example, include_targets: bool) -> Vec<&str> {
    let mut texts: Vec<&str> = example.fields.values().map(String::as_str).collect();
    if include_targets {
        texts.extend(example.targets.iter().map(String::as_str));
    }
    texts
}

/// Dirty iff any n-gram of any checked text collides with the index.
pub fn classify_example(
    example: &Example,
    index: &NgramIndex,
    include_targets: bool,
) -> Cleanliness {
    for text in checked_texts(example, include_targets) {
        let tokens = normalize_tokens(text);
        for gram in grams_of(&tokens, index.n) {
            if index.contains(&gram) {
                return Cleanliness::Dirty;
            }
        }
    }
    Cleanliness::Clean
}

/// Overlap statistics and clean-subset metrics for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub dataset: String,
    pub ngram_len: usize,
    pub total_count: usize,
    pub clean_count: usize,
    pub total_metric: f64,
    /// Undefined (None) when no example is clean.
    pub clean_metric: Option<f64>,
    pub pct_clean: f64,
    /// Percent change of the clean metric vs the total metric, from
    /// unrounded values; undefined when the total metric is zero or the
    /// clean metric is undefined.
    pub pct_diff: Option<f64>,
}

/// Computes the per-example metric over all examples and over the clean
/// subset.
pub fn clean_report<F>(
    dataset: &str,
    examples: &[Example],
    index: &NgramIndex,
    include_targets: bool,
    metric: F,
) -> ContaminationReport
where
    F: Fn(&Example) -> f64,
{
    let mut total_sum = 0.0;
    let mut clean_sum = 0.0;
    let mut clean_count = 0usize;
    for example in examples {
        let value = metric(example);
        total_sum += value;
        if classify_example(example, index, include_targets) == Cleanliness::Clean {
            clean_sum += value;
            clean_count += 1;
        }
    }
    let total_count = examples.len();
    let total_metric = if total_count > 0 {
        total_sum / total_count as f64
    } else {
        0.0
    };
    let clean_metric = (clean_count > 0).then(|| clean_sum / clean_count as f64);
    let pct_clean = if total_count > 0 {
        100.0 * clean_count as f64 / total_count as f64
    } else {
        0.0
    };
    let pct_diff = match clean_metric {
        Some(clean) if total_metric != 0.0 => {
            Some(100.0 * (clean - total_metric) / total_metric)
        }
        _ => None,
    };
    ContaminationReport {
        dataset: dataset.to_string(),
        ngram_len: index.n,
        total_count,
        clean_count,
        total_metric,
        clean_metric,
        pct_clean,
        pct_diff,
    }
}

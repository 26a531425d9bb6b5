//! Scoring backends, rank classification, text metrics, and per-template
//! evaluation reports.
//!
//! Classification tasks are scored by rank classification: the chosen answer
//! is the option whose continuation the scorer assigns the highest
//! log-probability (summed over the whole option string, deliberately not
//! length-normalized). Generation tasks use greedy decoding scored by exact
//! match or token F1. Per-template dev/test metrics aggregate into the
//! all-template mean and the best-dev-template test value.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::{assemble_few_shot, assemble_zero_shot, PromptSpec};
use crate::registry::{Dataset, Metric, TaskKind};
use crate::templating::Template;
use crate::tokenpack::Tokenizer;

/// Default generation length, matching the target buffer budget.
pub const DEFAULT_GEN_MAX_LEN: usize = 256;

/// A deterministic scoring backend.
///
/// Implementations must be pure: identical inputs give identical outputs,
/// and `logprob` is finite for non-empty continuations.
pub trait Scorer {
    fn logprob(&self, context: &str, continuation: &str) -> f64;
    fn generate(&self, context: &str, max_len: usize) -> String;
}

/// Index of the highest score, ties broken by lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &score) in scores.iter().enumerate().skip(1) {
        if score > scores[best] {
            best = i;
        }
    }
    best
}

/// Rank classification: pick the option with the highest continuation
/// log-probability under `scorer`.
pub fn rank_classify<S: Scorer>(scorer: &S, prompt: &str, options: &[String]) -> Result<usize> {
    assert!(!options.is_empty(), "options must be non-empty");
    let mut scores = Vec::with_capacity(options.len());
    for option in options {
        let lp = scorer.logprob(prompt, option);
        if !lp.is_finite() {
            return Err(Error::Validation(format!(
                "scorer returned non-finite logprob for option `{option}`"
            )));
        }
        scores.push(lp);
    }
    Ok(argmax(&scores))
}

/// Answer normalization: lowercase, strip punctuation, drop articles
/// (a/an/the), collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    stripped
        .split_whitespace()
        .filter(|token| !matches!(*token, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff the normalized prediction equals any normalized target.
pub fn exact_match(prediction: &str, targets: &[String]) -> bool {
    assert!(!targets.is_empty(), "targets must be non-empty");
    let normalized = normalize_answer(prediction);
    targets.iter().any(|t| normalize_answer(t) == normalized)
}

fn token_counts(text: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for token in normalize_answer(text).split_whitespace() {
        *counts.entry(token.to_string()).or_insert(0) += 1;
    }
    counts
}

fn f1_single(prediction: &str, target: &str) -> f64 {
    let pred = token_counts(prediction);
    let tgt = token_counts(target);
    let pred_total: usize = pred.values().sum();
    let tgt_total: usize = tgt.values().sum();
    if pred_total == 0 && tgt_total == 0 {
        return 1.0;
    }
    if pred_total == 0 || tgt_total == 0 {
        return 0.0;
    }
    let overlap: usize = pred
        .iter()
        .map(|(token, &count)| count.min(tgt.get(token).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_total as f64;
    let recall = overlap as f64 / tgt_total as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Max over targets of the bag-of-tokens F1 between prediction and target.
pub fn token_f1(prediction: &str, targets: &[String]) -> f64 {
    assert!(!targets.is_empty(), "targets must be non-empty");
    targets
        .iter()
        .map(|t| f1_single(prediction, t))
        .fold(0.0, f64::max)
}

/// Character n-gram language model with add-one smoothing over the byte
/// alphabet; the deterministic stand-in for a real scoring backend.
///
/// P(byte | context) = (count + 1) / (context_total + 256), where the
/// context is the previous `order - 1` bytes (shorter at text start).
/// Generation is greedy argmax with ties broken toward the lowest byte; it
/// stops at `max_len`, on a newline, or when the context was never observed.
pub struct NgramScorer {
    order: usize,
    contexts: HashMap<Vec<u8>, ContextCounts>,
}

struct ContextCounts {
    counts: HashMap<u8, u32>,
    total: u32,
}

impl NgramScorer {
    pub fn new(corpus: &str, order: usize) -> Result<NgramScorer> {
        if order == 0 {
            return Err(Error::Validation("ngram order must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Validation("ngram corpus must be non-empty".into()));
        }
        let bytes = corpus.as_bytes();
        let mut contexts: HashMap<Vec<u8>, ContextCounts> = HashMap::new();
        for i in 0..bytes.len() {
            let start = i.saturating_sub(order - 1);
            let ctx = bytes[start..i].to_vec();
            let entry = contexts.entry(ctx).or_insert_with(|| ContextCounts {
                counts: HashMap::new(),
                total: 0,
            });
            *entry.counts.entry(bytes[i]).or_insert(0) += 1;
            entry.total += 1;
        }
        Ok(NgramScorer { order, contexts })
    }

    fn prob(&self, ctx: &[u8], byte: u8) -> f64 {
        let (count, total) = match self.contexts.get(ctx) {
            Some(entry) => (entry.counts.get(&byte).copied().unwrap_or(0), entry.total),
            None => (0, 0),
        };
        (count as f64 + 1.0) / (total as f64 + 256.0)
    }
}

impl Scorer for NgramScorer {
    fn logprob(&self, context: &str, continuation: &str) -> f64 {
        let mut text = context.as_bytes().to_vec();
        let mut sum = 0.0;
        for &byte in continuation.as_bytes() {
            let start = text.len().saturating_sub(self.order - 1);
            sum += self.prob(&text[start..], byte).ln();
            text.push(byte);
        }
        sum
    }

    fn generate(&self, context: &str, max_len: usize) -> String {
        let mut text = context.as_bytes().to_vec();
        let mut generated = Vec::new();
        while generated.len() < max_len {
            let start = text.len().saturating_sub(self.order - 1);
            let ctx = &text[start..];
            let Some(entry) = self.contexts.get(ctx) else {
                break;
            };
            let mut best_byte = 0u8;
            let mut best_count = 0u32;
            for b in 0..=255u8 {
                let count = entry.counts.get(&b).copied().unwrap_or(0);
                if count > best_count {
                    best_count = count;
                    best_byte = b;
                }
            }
            if best_count == 0 || best_byte == b'\n' {
                break;
            }
            generated.push(best_byte);
            text.push(best_byte);
        }
        String::from_utf8_lossy(&generated).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateMetrics {
    pub template_id: String,
    pub dev_metric: f64,
    pub test_metric: f64,
}

/// Per-dataset evaluation summary across templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub metric_name: String,
    pub mode: EvalMode,
    pub per_template: Vec<TemplateMetrics>,
    pub mean_test: f64,
    pub std_test: f64,
    pub best_dev_template: String,
    pub best_dev_test_metric: f64,
}

/// One scored test example, kept for audits and contamination analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dataset: String,
    pub template_id: String,
    pub example_id: String,
    pub prediction: String,
    pub metric_value: f64,
}

/// Evaluation result: the aggregated report plus per-example test
/// predictions for the first template.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Aggregates per-template metrics: all-template mean and (population) std
/// of the test metric, plus the test metric of the best-dev template (ties
/// go to the earliest template).
pub fn aggregate(
    dataset: &str,
    metric_name: &str,
    mode: EvalMode,
    per_template: Vec<TemplateMetrics>,
) -> Result<EvalReport> {
    if per_template.is_empty() {
        return Err(Error::Validation(format!(
            "{dataset}: no templates were evaluated"
        )));
    }
    let n = per_template.len() as f64;
    let mean_test = per_template.iter().map(|t| t.test_metric).sum::<f64>() / n;
    let variance = per_template
        .iter()
        .map(|t| (t.test_metric - mean_test).powi(2))
        .sum::<f64>()
        / n;
    let std_test = variance.sqrt();
    let mut best = 0;
    for (i, metrics) in per_template.iter().enumerate().skip(1) {
        if metrics.dev_metric > per_template[best].dev_metric {
            best = i;
        }
    }
    Ok(EvalReport {
        dataset: dataset.to_string(),
        metric_name: metric_name.to_string(),
        mode,
        mean_test,
        std_test,
        best_dev_template: per_template[best].template_id.clone(),
        best_dev_test_metric: per_template[best].test_metric,
        per_template,
    })
}

fn score_example<S: Scorer, T: Tokenizer>(
    scorer: &S,
    tok: &T,
    dataset: &Dataset,
    template: &Template,
    example: &crate::registry::Example,
    prompt_spec: &PromptSpec,
    mode: EvalMode,
    gen_max_len: usize,
) -> Result<(String, f64)> {
    let prompt = match mode {
        EvalMode::ZeroShot => assemble_zero_shot(template, example, &dataset.spec)?,
        EvalMode::FewShot => {
            assemble_few_shot(template, &dataset.train, example, &dataset.spec, prompt_spec, tok)?
                .prompt
        }
    };
    // Answers follow the prompt on their own line.
    let context = format!("{prompt}\n");
    match dataset.spec.task_kind {
        TaskKind::Classification => {
            let options = example
                .options
                .as_deref()
                .expect("classification examples carry options");
            let chosen = rank_classify(scorer, &context, options).map_err(|e| Error::Scorer {
                dataset: dataset.spec.name.clone(),
                template_id: template.id.clone(),
                message: e.to_string(),
            })?;
            let prediction = options[chosen].clone();
            let value = f64::from(example.targets.contains(&prediction));
            Ok((prediction, value))
        }
        TaskKind::Generation => {
            let prediction = scorer.generate(&context, gen_max_len);
            let value = match dataset.spec.primary_metric() {
                Metric::ExactMatch => f64::from(exact_match(&prediction, &example.targets)),
                Metric::TokenF1 => token_f1(&prediction, &example.targets),
                Metric::Accuracy => f64::from(exact_match(&prediction, &example.targets)),
            };
            Ok((prediction, value))
        }
    }
}

/// Evaluates every template on the dev and test splits and aggregates.
pub fn evaluate_dataset<S: Scorer, T: Tokenizer>(
    scorer: &S,
    tok: &T,
    dataset: &Dataset,
    templates: &[Template],
    prompt_spec: &PromptSpec,
    mode: EvalMode,
    gen_max_len: usize,
) -> Result<EvalOutcome> {
    let dev = dataset.dev.as_deref().ok_or_else(|| {
        Error::Validation(format!("{}: evaluation requires a dev split", dataset.spec.name))
    })?;
    if dev.is_empty() || dataset.test.is_empty() {
        return Err(Error::Validation(format!(
            "{}: evaluation requires non-empty dev and test splits",
            dataset.spec.name
        )));
    }
    if templates.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no templates to evaluate",
            dataset.spec.name
        )));
    }
    let mut per_template = Vec::with_capacity(templates.len());
    let mut predictions = Vec::new();
    for (t_idx, template) in templates.iter().enumerate() {
        let mut split_means = [0.0f64; 2];
        for (s_idx, split) in [dev, &dataset.test[..]].into_iter().enumerate() {
            let mut sum = 0.0;
            for example in split {
                let (prediction, value) = score_example(
                    scorer,
                    tok,
                    dataset,
                    template,
                    example,
                    prompt_spec,
                    mode,
                    gen_max_len,
                )?;
                sum += value;
                // Keep test predictions of the first template for audits.
                if s_idx == 1 && t_idx == 0 {
                    predictions.push(PredictionRecord {
                        dataset: dataset.spec.name.clone(),
                        template_id: template.id.clone(),
                        example_id: example.id.clone(),
                        prediction,
                        metric_value: value,
                    });
                }
            }
            split_means[s_idx] = sum / split.len() as f64;
        }
        per_template.push(TemplateMetrics {
            template_id: template.id.clone(),
            dev_metric: split_means[0],
            test_metric: split_means[1],
        });
    }
    let report = aggregate(
        &dataset.spec.name,
        dataset.spec.primary_metric().name(),
        mode,
        per_template,
    )?;
    Ok(EvalOutcome {
        report,
        predictions,
    })
}

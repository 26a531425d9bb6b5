//! Zero-shot and few-shot prompt assembly.
//!
//! A few-shot prompt concatenates k solved exemplars ahead of the query,
//! all rendered through the same template, with a delimiter between every
//! adjacent part: instruct(x1) y1 instruct(x2) y2 ... instruct(x). Exemplars
//! are drawn seeded-uniform without replacement from the train split; k is
//! the largest count within `k_max` whose encoded prompt stays under
//! `len_max`. If even one exemplar is too long we fall back to zero-shot
//! rather than truncate instructions.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::{DatasetSpec, Example};
use crate::seed;
use crate::templating::{render, RenderMode, Template};
use crate::tokenpack::Tokenizer;

/// Default cap on the number of few-shot exemplars.
pub const DEFAULT_K_MAX: usize = 16;
/// Default maximum encoded prompt length.
pub const DEFAULT_LEN_MAX: usize = 960;
/// Default text-space delimiter between prompt parts.
pub const DEFAULT_DELIMITER: &str = "\n\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSpec {
    pub k_max: usize,
    pub len_max: usize,
    pub delimiter: String,
    pub seed: u64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            k_max: DEFAULT_K_MAX,
            len_max: DEFAULT_LEN_MAX,
            delimiter: DEFAULT_DELIMITER.to_string(),
            seed: 0,
        }
    }
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len_max == 0 {
            return Err(crate::Error::Validation("len_max must be positive".into()));
        }
        if self.k_max > 0 && self.delimiter.is_empty() {
            return Err(crate::Error::Validation(
                "delimiter must be non-empty when k_max > 0".into(),
            ));
        }
        Ok(())
    }
}

/// An assembled prompt and the number of exemplars that fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub prompt: String,
    pub k_used: usize,
}

/// The zero-shot prompt: the natural-mode rendered input text.
pub fn assemble_zero_shot(
    template: &Template,
    example: &Example,
    dataset: &DatasetSpec,
) -> Result<String> {
    Ok(render(template, example, RenderMode::Natural, dataset)?.input_text)
}

/// Assembles a few-shot prompt for `example`, drawing exemplars from
/// `train_split` (which must not contain the query example).
pub fn assemble_few_shot<T: Tokenizer>(
    template: &Template,
    train_split: &[Example],
    example: &Example,
    dataset: &DatasetSpec,
    spec: &PromptSpec,
    tok: &T,
) -> Result<AssembledPrompt> {
    spec.validate()?;
    let query = assemble_zero_shot(template, example, dataset)?;
    if spec.k_max == 0 {
        return Ok(AssembledPrompt {
            prompt: query,
            k_used: 0,
        });
    }
    if train_split.is_empty() {
        log::warn!(
            "{}: no exemplars available for {}, falling back to zero-shot",
            dataset.name,
            example.id
        );
        return Ok(AssembledPrompt {
            prompt: query,
            k_used: 0,
        });
    }

    let draw_count = spec.k_max.min(train_split.len());
    let mut rng = seed::substream(spec.seed, &["fewshot", &dataset.name, &example.id]);
    let picks = rand::seq::index::sample(&mut rng, train_split.len(), draw_count);

    // Render all candidate exemplars once; prompts for smaller k reuse the
    // same prefix, so dropping the last pair of a k-prompt yields the
    // (k-1)-prompt exactly.
    let mut parts: Vec<String> = Vec::with_capacity(2 * draw_count + 1);
    for idx in picks {
        let exemplar = &train_split[idx];
        let rendered = render(template, exemplar, RenderMode::Natural, dataset)?;
        parts.push(rendered.input_text);
        parts.push(rendered.target_text);
    }
    parts.push(query.clone());

    for k in (1..=draw_count).rev() {
        let mut prompt_parts: Vec<&str> =
            parts[..2 * k].iter().map(String::as_str).collect();
        prompt_parts.push(&query);
        let prompt = prompt_parts.join(&spec.delimiter);
        if tok.encode(&prompt).len() < spec.len_max {
            return Ok(AssembledPrompt { prompt, k_used: k });
        }
    }
    if tok.encode(&query).len() >= spec.len_max {
        log::warn!(
            "{}: zero-shot prompt for {} exceeds len_max {}, returning it anyway",
            dataset.name,
            example.id,
            spec.len_max
        );
    }
    Ok(AssembledPrompt {
        prompt: query,
        k_used: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Cluster, Metric, TaskKind};
    use crate::tokenpack::ByteTokenizer;
    use indexmap::IndexMap;
    use std::collections::BTreeMap;

    fn qa_spec() -> DatasetSpec {
        DatasetSpec {
            name: "trivia".into(),
            cluster: Cluster::ClosedBookQa,
            task_kind: TaskKind::Generation,
            metrics: vec![Metric::ExactMatch],
            splits: BTreeMap::new(),
        }
    }

    fn qa_template() -> Template {
        Template::new(
            "trivia/0",
            "trivia",
            "Please answer this question: {question}",
            "{answer}",
            false,
        )
        .unwrap()
    }

    fn qa_example(i: usize) -> Example {
        Example {
            id: format!("q{i}"),
            fields: IndexMap::from([
                ("question".to_string(), format!("What is item number {i}?")),
                ("answer".to_string(), format!("item {i}")),
            ]),
            targets: vec![format!("item {i}")],
            options: None,
        }
    }

    #[test]
    fn zero_shot_is_natural_input() {
        let prompt = assemble_zero_shot(&qa_template(), &qa_example(7), &qa_spec()).unwrap();
        assert_eq!(prompt, "Please answer this question: What is item number 7?");
    }

    #[test]
    fn k_zero_equals_zero_shot() {
        let spec = PromptSpec {
            k_max: 0,
            ..PromptSpec::default()
        };
        let train: Vec<Example> = (0..8).map(qa_example).collect();
        let query = qa_example(99);
        let assembled = assemble_few_shot(
            &qa_template(),
            &train,
            &query,
            &qa_spec(),
            &spec,
            &ByteTokenizer,
        )
        .unwrap();
        let zero = assemble_zero_shot(&qa_template(), &query, &qa_spec()).unwrap();
        assert_eq!(assembled.prompt, zero);
        assert_eq!(assembled.k_used, 0);
    }

    #[test]
    fn short_exemplars_reach_k_max() {
        let spec = PromptSpec {
            k_max: 4,
            len_max: 960,
            ..PromptSpec::default()
        };
        let train: Vec<Example> = (0..10).map(qa_example).collect();
        let assembled = assemble_few_shot(
            &qa_template(),
            &train,
            &qa_example(99),
            &qa_spec(),
            &spec,
            &ByteTokenizer,
        )
        .unwrap();
        assert_eq!(assembled.k_used, 4);
        assert!(ByteTokenizer.encode(&assembled.prompt).len() < 960);
        // Exemplar targets appear verbatim.
        assert!(assembled.prompt.contains("\n\nitem "));
    }

    #[test]
    fn tight_budget_shrinks_k_and_predicate_holds() {
        let tok = ByteTokenizer;
        let train: Vec<Example> = (0..16).map(qa_example).collect();
        let query = qa_example(99);
        let zero_len = tok
            .encode(&assemble_zero_shot(&qa_template(), &query, &qa_spec()).unwrap())
            .len();
        // Sweep budgets from impossible to roomy and re-verify the contract
        // by re-encoding the returned prompt.
        for len_max in [zero_len / 2, zero_len + 1, zero_len + 40, 200, 400, 960] {
            let spec = PromptSpec {
                k_max: 16,
                len_max,
                seed: 5,
                ..PromptSpec::default()
            };
            let assembled =
                assemble_few_shot(&qa_template(), &train, &query, &qa_spec(), &spec, &tok)
                    .unwrap();
            let encoded = tok.encode(&assembled.prompt).len();
            assert!(
                encoded < len_max || assembled.k_used == 0,
                "len_max {len_max}: k_used {} but encoded {encoded}",
                assembled.k_used
            );
            assert!(assembled.k_used <= 16);
        }
    }

    #[test]
    fn removing_last_exemplar_pair_gives_previous_prompt() {
        let tok = ByteTokenizer;
        let train: Vec<Example> = (0..10).map(qa_example).collect();
        let query = qa_example(99);
        let spec_big = PromptSpec {
            k_max: 3,
            seed: 11,
            ..PromptSpec::default()
        };
        let big = assemble_few_shot(&qa_template(), &train, &query, &qa_spec(), &spec_big, &tok)
            .unwrap();
        assert_eq!(big.k_used, 3);
        let spec_small = PromptSpec {
            k_max: 2,
            seed: 11,
            ..PromptSpec::default()
        };
        let small =
            assemble_few_shot(&qa_template(), &train, &query, &qa_spec(), &spec_small, &tok)
                .unwrap();
        // The 2-shot prompt is the 3-shot prompt with its last exemplar pair
        // spliced out.
        let delim = &spec_big.delimiter;
        let query_text = assemble_zero_shot(&qa_template(), &query, &qa_spec()).unwrap();
        let big_prefix = big
            .prompt
            .strip_suffix(&format!("{delim}{query_text}"))
            .unwrap();
        let parts: Vec<&str> = big_prefix.split(delim.as_str()).collect();
        let rebuilt = format!("{}{delim}{query_text}", parts[..4].join(delim));
        assert_eq!(rebuilt, small.prompt);
    }

    #[test]
    fn empty_train_falls_back_to_zero_shot() {
        let spec = PromptSpec {
            k_max: 8,
            ..PromptSpec::default()
        };
        let assembled = assemble_few_shot(
            &qa_template(),
            &[],
            &qa_example(1),
            &qa_spec(),
            &spec,
            &ByteTokenizer,
        )
        .unwrap();
        assert_eq!(assembled.k_used, 0);
    }

    #[test]
    fn same_seed_same_prompt() {
        let train: Vec<Example> = (0..12).map(qa_example).collect();
        let spec = PromptSpec {
            k_max: 5,
            seed: 21,
            ..PromptSpec::default()
        };
        let a = assemble_few_shot(
            &qa_template(),
            &train,
            &qa_example(99),
            &qa_spec(),
            &spec,
            &ByteTokenizer,
        )
        .unwrap();
        let b = assemble_few_shot(
            &qa_template(),
            &train,
            &qa_example(99),
            &qa_spec(),
            &spec,
            &ByteTokenizer,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

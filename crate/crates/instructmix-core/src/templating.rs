//! Instruction templates: parsing, rendering, and seeded selection.
//!
//! A template pattern is literal text with `{field}` placeholders. `{{` and
//! `}}` escape literal braces. The reserved placeholder `{options}` expands
//! to the answer-options block of a classification example and may appear at
//! most once, only in the input pattern. Turnaround templates invert the
//! task; the inversion is expressed entirely in the patterns, so rendering
//! treats them like any other template.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{DatasetSpec, Example, TaskKind};
use crate::seed;

pub const OPTIONS_PLACEHOLDER: &str = "options";

/// How an example is turned into input/target text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Full natural-language instruction template.
    Natural,
    /// Raw field values only, newline-joined.
    NoTemplate,
    /// Raw field values prefixed with `[<cluster>: <dataset>] `.
    DatasetName,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A parsed pattern: literal runs and placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    segments: Vec<Segment>,
}

impl Pattern {
    /// Parses pattern source text. Errors carry the byte offset of the
    /// offending character.
    pub fn parse(source: &str) -> Result<Pattern> {
        let bytes = source.as_bytes();
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' => {
                    if bytes.get(i + 1) == Some(&b'{') {
                        literal.push('{');
                        i += 2;
                        continue;
                    }
                    let start = i;
                    let rest = &source[i + 1..];
                    let Some(end) = rest.find('}') else {
                        return Err(Error::TemplateParse {
                            offset: start,
                            message: "unclosed `{`".into(),
                        });
                    };
                    let name = &rest[..end];
                    if name.is_empty() {
                        return Err(Error::TemplateParse {
                            offset: start,
                            message: "empty placeholder name".into(),
                        });
                    }
                    if !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                        return Err(Error::TemplateParse {
                            offset: start,
                            message: format!("invalid placeholder name `{name}`"),
                        });
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(name.to_string()));
                    i += 1 + end + 1;
                }
                b'}' => {
                    if bytes.get(i + 1) == Some(&b'}') {
                        literal.push('}');
                        i += 2;
                    } else {
                        return Err(Error::TemplateParse {
                            offset: i,
                            message: "unescaped `}`".into(),
                        });
                    }
                }
                _ => {
                    let ch = source[i..].chars().next().expect("in-bounds char");
                    literal.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Pattern {
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut names = Vec::new();
        for segment in &self.segments {
            if let Segment::Placeholder(name) = segment {
                if !names.contains(&name.as_str()) {
                    names.push(name.as_str());
                }
            }
        }
        names
    }

    fn substitute(&self, template_id: &str, example: &Example) -> Result<String> {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) if name == OPTIONS_PLACEHOLDER => {
                    let options = example.options.as_deref().ok_or_else(|| {
                        Error::TemplateBind {
                            template_id: template_id.to_string(),
                            placeholder: OPTIONS_PLACEHOLDER.to_string(),
                        }
                    })?;
                    out.push_str(&render_options(options)?);
                }
                Segment::Placeholder(name) => {
                    let value = example.fields.get(name).ok_or_else(|| Error::TemplateBind {
                        template_id: template_id.to_string(),
                        placeholder: name.clone(),
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// An instruction template for one dataset.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    pub dataset: String,
    pub input_pattern: Pattern,
    pub target_pattern: Pattern,
    pub turnaround: bool,
}

/// On-disk form of one template record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    pub input_pattern: String,
    pub target_pattern: String,
    #[serde(default)]
    pub turnaround: bool,
}

impl Template {
    pub fn new(
        id: &str,
        dataset: &str,
        input_pattern: &str,
        target_pattern: &str,
        turnaround: bool,
    ) -> Result<Template> {
        let input = Pattern::parse(input_pattern)?;
        let target = Pattern::parse(target_pattern)?;
        let options_in_input = input
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Placeholder(n) if n == OPTIONS_PLACEHOLDER))
            .count();
        if options_in_input > 1 {
            return Err(Error::Validation(format!(
                "template {id}: `{{options}}` may appear at most once"
            )));
        }
        if target.placeholders().contains(&OPTIONS_PLACEHOLDER) {
            return Err(Error::Validation(format!(
                "template {id}: `{{options}}` is only allowed in the input pattern"
            )));
        }
        Ok(Template {
            id: id.to_string(),
            dataset: dataset.to_string(),
            input_pattern: input,
            target_pattern: target,
            turnaround,
        })
    }

    pub fn from_record(dataset: &str, record: &TemplateRecord) -> Result<Template> {
        Template::new(
            &record.id,
            dataset,
            &record.input_pattern,
            &record.target_pattern,
            record.turnaround,
        )
    }

    pub fn has_options_slot(&self) -> bool {
        self.input_pattern
            .placeholders()
            .contains(&OPTIONS_PLACEHOLDER)
    }
}

/// Loads a dataset's template pack. At most 10 templates, of which at most 3
/// may be turnaround.
pub fn load_template_pack(dataset: &str, json: &str) -> Result<Vec<Template>> {
    let records: Vec<TemplateRecord> = serde_json::from_str(json)?;
    let templates: Vec<Template> = records
        .iter()
        .map(|r| Template::from_record(dataset, r))
        .collect::<Result<_>>()?;
    if templates.is_empty() {
        return Err(Error::Validation(format!(
            "{dataset}: template pack is empty"
        )));
    }
    if templates.len() > 10 {
        return Err(Error::Validation(format!(
            "{dataset}: template pack has {} templates, maximum is 10",
            templates.len()
        )));
    }
    let turnarounds = templates.iter().filter(|t| t.turnaround).count();
    if turnarounds > 3 {
        return Err(Error::Validation(format!(
            "{dataset}: {turnarounds} turnaround templates, maximum is 3"
        )));
    }
    Ok(templates)
}

/// A rendered (input, target) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub input_text: String,
    pub target_text: String,
    pub template_id: String,
    pub dataset: String,
    pub render_mode: RenderMode,
}

/// Formats the answer-options block: `OPTIONS:` then one `- <option>` line
/// per option, no trailing newline.
pub fn render_options(options: &[String]) -> Result<String> {
    if options.is_empty() {
        return Err(Error::Validation(
            "classification rendering requires a non-empty options list".into(),
        ));
    }
    let mut out = String::from("OPTIONS:");
    for option in options {
        out.push_str("\n- ");
        out.push_str(option);
    }
    Ok(out)
}

fn raw_fields(example: &Example) -> String {
    example
        .fields
        .values()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders one example through a template in the given mode.
pub fn render(
    template: &Template,
    example: &Example,
    mode: RenderMode,
    spec: &DatasetSpec,
) -> Result<RenderedExample> {
    if template.dataset != spec.name {
        return Err(Error::Validation(format!(
            "template {} belongs to dataset {}, not {}",
            template.id, template.dataset, spec.name
        )));
    }
    if spec.task_kind == TaskKind::Classification && example.options.is_none() {
        return Err(Error::Validation(format!(
            "{}: classification example {} has no options",
            spec.name, example.id
        )));
    }
    let first_target = || {
        example
            .targets
            .first()
            .cloned()
            .expect("examples carry at least one target")
    };
    let (input_text, target_text) = match mode {
        RenderMode::Natural => (
            template.input_pattern.substitute(&template.id, example)?,
            template.target_pattern.substitute(&template.id, example)?,
        ),
        RenderMode::NoTemplate => (raw_fields(example), first_target()),
        RenderMode::DatasetName => (
            format!(
                "[{}: {}] {}",
                spec.cluster.label(),
                spec.name,
                raw_fields(example)
            ),
            first_target(),
        ),
    };
    Ok(RenderedExample {
        input_text,
        target_text,
        template_id: template.id.clone(),
        dataset: spec.name.clone(),
        render_mode: mode,
    })
}

/// Seeded-uniform template choice, deterministic in
/// (seed, dataset, example_index).
pub fn select_template<'a>(
    templates: &'a [Template],
    dataset: &str,
    example_index: u64,
    seed: u64,
) -> &'a Template {
    assert!(!templates.is_empty(), "template list must be non-empty");
    let mut rng = seed::substream_indexed(seed, &["templating", "select", dataset], example_index);
    let idx = rand::Rng::gen_range(&mut rng, 0..templates.len());
    &templates[idx]
}

/// Seeded subset of `k` templates, keeping the original relative order.
pub fn restrict_templates(templates: &[Template], k: usize, seed: u64) -> Result<Vec<Template>> {
    if k == 0 || k > templates.len() {
        return Err(Error::Validation(format!(
            "cannot restrict {} templates to {k}",
            templates.len()
        )));
    }
    let dataset = templates[0].dataset.clone();
    let mut rng = seed::substream(seed, &["templating", "restrict", &dataset]);
    let mut picks = rand::seq::index::sample(&mut rng, templates.len(), k).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| templates[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Cluster, Metric};
    use indexmap::IndexMap;
    use std::collections::BTreeMap;
    use std::collections::BTreeSet;

    fn spec(name: &str, cluster: Cluster, task_kind: TaskKind) -> DatasetSpec {
        DatasetSpec {
            name: name.into(),
            cluster,
            task_kind,
            metrics: vec![match task_kind {
                TaskKind::Classification => Metric::Accuracy,
                TaskKind::Generation => Metric::TokenF1,
            }],
            splits: BTreeMap::new(),
        }
    }

    fn nli_example() -> Example {
        Example {
            id: "nli-0".into(),
            fields: IndexMap::from([
                (
                    "premise".to_string(),
                    "At my age you will probably have learnt one lesson.".to_string(),
                ),
                (
                    "hypothesis".to_string(),
                    "It's not certain how many lessons you'll learn by your thirties.".to_string(),
                ),
                ("answer".to_string(), "no".to_string()),
            ]),
            targets: vec!["no".into()],
            options: Some(vec!["yes".into(), "no".into()]),
        }
    }

    #[test]
    fn parse_extracts_placeholders() {
        let pattern = Pattern::parse(
            "Premise: {premise}\nHypothesis: {hypothesis}\nDoes the premise entail the hypothesis?\n{options}",
        )
        .unwrap();
        assert_eq!(pattern.placeholders(), vec!["premise", "hypothesis", "options"]);
    }

    #[test]
    fn parse_minimal_placeholder_only() {
        let pattern = Pattern::parse("{x}").unwrap();
        assert_eq!(pattern.placeholders(), vec!["x"]);
    }

    #[test]
    fn parse_unterminated_brace_reports_offset() {
        let err = Pattern::parse("{unterminated").unwrap_err();
        match err {
            Error::TemplateParse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = Pattern::parse("ab{x").unwrap_err();
        match err {
            Error::TemplateParse { offset, .. } => assert_eq!(offset, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_handles_escapes() {
        let pattern = Pattern::parse("{{literal}} {x}").unwrap();
        let mut fields = IndexMap::new();
        fields.insert("x".to_string(), "v".to_string());
        let example = Example {
            id: "e".into(),
            fields,
            targets: vec!["v".into()],
            options: None,
        };
        assert_eq!(pattern.substitute("t", &example).unwrap(), "{literal} v");
    }

    #[test]
    fn options_block_layout() {
        assert_eq!(
            render_options(&["yes".to_string(), "no".to_string()]).unwrap(),
            "OPTIONS:\n- yes\n- no"
        );
        assert_eq!(
            render_options(&["only".to_string()]).unwrap(),
            "OPTIONS:\n- only"
        );
        assert!(render_options(&[]).is_err());
    }

    #[test]
    fn options_rejected_outside_input_pattern() {
        let err = Template::new("t", "d", "{x}", "{options}", false).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn natural_render_ends_with_entailment_question() {
        let template = Template::new(
            "rte/1",
            "rte",
            "Premise: {premise}\nHypothesis: {hypothesis}\n{options}\nDoes the premise entail the hypothesis?",
            "{answer}",
            false,
        )
        .unwrap();
        let spec = spec("rte", Cluster::Nli, TaskKind::Classification);
        let rendered = render(&template, &nli_example(), RenderMode::Natural, &spec).unwrap();
        assert!(rendered
            .input_text
            .ends_with("Does the premise entail the hypothesis?"));
        assert!(rendered.input_text.contains("OPTIONS:\n- yes\n- no"));
        assert_eq!(rendered.target_text, "no");
    }

    #[test]
    fn dataset_name_render_matches_bracketed_style() {
        let template = Template::new("tr/0", "WMT'14 to French", "{source}", "{target}", false)
            .unwrap();
        let spec = spec("WMT'14 to French", Cluster::Translation, TaskKind::Generation);
        let example = Example {
            id: "tr-0".into(),
            fields: IndexMap::from([
                ("source".to_string(), "The dog runs.".to_string()),
                ("target".to_string(), "Le chien court.".to_string()),
            ]),
            targets: vec!["Le chien court.".into()],
            options: None,
        };
        let named = render(&template, &example, RenderMode::DatasetName, &spec).unwrap();
        assert!(named
            .input_text
            .starts_with("[Translation: WMT'14 to French] The dog runs."));
        let bare = render(&template, &example, RenderMode::NoTemplate, &spec).unwrap();
        assert!(bare.input_text.starts_with("The dog runs."));
        assert_eq!(bare.target_text, "Le chien court.");
        // Generation targets are identical across modes.
        let natural = render(&template, &example, RenderMode::Natural, &spec).unwrap();
        assert_eq!(natural.target_text, bare.target_text);
        assert_eq!(named.target_text, bare.target_text);
    }

    #[test]
    fn render_missing_field_is_bind_error() {
        let template = Template::new("t/0", "d", "{absent}", "{answer}", false).unwrap();
        let spec = spec("d", Cluster::Nli, TaskKind::Classification);
        let err = render(&template, &nli_example(), RenderMode::Natural, &spec).unwrap_err();
        match err {
            Error::TemplateBind { placeholder, .. } => assert_eq!(placeholder, "absent"),
            other => panic!("expected bind error, got {other:?}"),
        }
    }

    #[test]
    fn field_values_appear_verbatim_in_natural_render() {
        let template = Template::new(
            "rte/0",
            "rte",
            "{premise}\n\nBased on the paragraph above can we conclude that \"{hypothesis}\"?\n\n{options}",
            "{answer}",
            false,
        )
        .unwrap();
        let spec = spec("rte", Cluster::Nli, TaskKind::Classification);
        let example = nli_example();
        let rendered = render(&template, &example, RenderMode::Natural, &spec).unwrap();
        for name in template.input_pattern.placeholders() {
            if name == OPTIONS_PLACEHOLDER {
                continue;
            }
            let value = &example.fields[name];
            assert!(
                rendered.input_text.contains(value.as_str())
                    || rendered.target_text.contains(value.as_str()),
                "field `{name}` missing from render"
            );
        }
        // Every option appears exactly once, inside the options block.
        for option in example.options.as_ref().unwrap() {
            let needle = format!("\n- {option}");
            assert_eq!(rendered.input_text.matches(&needle).count(), 1);
        }
    }

    #[test]
    fn select_template_is_deterministic_and_covers_singletons() {
        let t = Template::new("d/0", "d", "{x}", "{x}", false).unwrap();
        let lone = select_template(std::slice::from_ref(&t), "d", 17, 5);
        assert_eq!(lone.id, "d/0");
        let pack: Vec<Template> = (0..10)
            .map(|i| Template::new(&format!("d/{i}"), "d", "{x}", "{x}", false).unwrap())
            .collect();
        let a = select_template(&pack, "d", 3, 9).id.clone();
        let b = select_template(&pack, "d", 3, 9).id.clone();
        assert_eq!(a, b);
    }

    #[test]
    fn restrict_identity_and_singleton() {
        let pack: Vec<Template> = (0..10)
            .map(|i| Template::new(&format!("d/{i}"), "d", "{x}", "{x}", false).unwrap())
            .collect();
        let all = restrict_templates(&pack, 10, 1).unwrap();
        let ids: Vec<&str> = all.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, (0..10).map(|i| format!("d/{i}")).collect::<Vec<_>>());

        let one_a = restrict_templates(&pack, 1, 7).unwrap();
        let one_b = restrict_templates(&pack, 1, 7).unwrap();
        assert_eq!(one_a[0].id, one_b[0].id);

        assert!(restrict_templates(&pack, 11, 1).is_err());
        assert!(restrict_templates(&pack, 0, 1).is_err());
    }

    #[test]
    fn restrict_varies_across_seeds() {
        let pack: Vec<Template> = (0..10)
            .map(|i| Template::new(&format!("d/{i}"), "d", "{x}", "{x}", false).unwrap())
            .collect();
        let mut subsets = BTreeSet::new();
        for s in 0..8u64 {
            let subset = restrict_templates(&pack, 4, s).unwrap();
            assert_eq!(subset.len(), 4);
            // Stable order: ids ascend because picks are sorted.
            let ids: Vec<String> = subset.iter().map(|t| t.id.clone()).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(ids, sorted);
            subsets.insert(ids);
        }
        assert!(subsets.len() > 1, "different seeds should generally differ");
    }
}

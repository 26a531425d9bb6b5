//! Dataset and cluster data model, ingestion, capping, and dev carving.
//!
//! The canonical registry (12 task clusters, 62 datasets) ships as a
//! checked-in JSON file and is embedded via [`Registry::builtin`]. Datasets
//! themselves are line-delimited record files, one file per split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const REGISTRY_JSON: &str = include_str!("../data/registry.json");

/// Default cap on training examples per dataset.
pub const DEFAULT_TRAIN_CAP: usize = 30_000;
/// Default number of examples carved from train into a dev split.
pub const DEFAULT_DEV_SIZE: usize = 200;

/// The twelve canonical task clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Nli,
    ReadingComprehension,
    Commonsense,
    Sentiment,
    ClosedBookQa,
    Paraphrase,
    Coreference,
    ReadingComprehensionWithCommonsense,
    StructToText,
    Translation,
    Summarization,
    Miscellaneous,
}

impl Cluster {
    pub const ALL: [Cluster; 12] = [
        Cluster::Nli,
        Cluster::ReadingComprehension,
        Cluster::Commonsense,
        Cluster::Sentiment,
        Cluster::ClosedBookQa,
        Cluster::Paraphrase,
        Cluster::Coreference,
        Cluster::ReadingComprehensionWithCommonsense,
        Cluster::StructToText,
        Cluster::Summarization,
        Cluster::Translation,
        Cluster::Miscellaneous,
    ];

    /// Stable snake_case name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Cluster::Nli => "nli",
            Cluster::ReadingComprehension => "reading_comprehension",
            Cluster::Commonsense => "commonsense",
            Cluster::Sentiment => "sentiment",
            Cluster::ClosedBookQa => "closed_book_qa",
            Cluster::Paraphrase => "paraphrase",
            Cluster::Coreference => "coreference",
            Cluster::ReadingComprehensionWithCommonsense => {
                "reading_comprehension_with_commonsense"
            }
            Cluster::StructToText => "struct_to_text",
            Cluster::Translation => "translation",
            Cluster::Summarization => "summarization",
            Cluster::Miscellaneous => "miscellaneous",
        }
    }

    /// Human-readable label, used e.g. in dataset-name render prefixes.
    pub fn label(self) -> &'static str {
        match self {
            Cluster::Nli => "NLI",
            Cluster::ReadingComprehension => "Reading Comprehension",
            Cluster::Commonsense => "Commonsense",
            Cluster::Sentiment => "Sentiment",
            Cluster::ClosedBookQa => "Closed-Book QA",
            Cluster::Paraphrase => "Paraphrase",
            Cluster::Coreference => "Coreference",
            Cluster::ReadingComprehensionWithCommonsense => {
                "Reading Comprehension with Commonsense"
            }
            Cluster::StructToText => "Struct to Text",
            Cluster::Translation => "Translation",
            Cluster::Summarization => "Summarization",
            Cluster::Miscellaneous => "Miscellaneous",
        }
    }

    pub fn parse(name: &str) -> Result<Cluster> {
        Cluster::ALL
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownCluster(name.to_string()))
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ExactMatch,
    TokenF1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::ExactMatch => "exact_match",
            Metric::TokenF1 => "token_f1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Dev,
    Test,
}

/// One task instance: named text fields, acceptable targets, and (for
/// classification) the ordered answer options.
///
/// Field order follows the record file and is preserved; no-template renders
/// concatenate fields in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub fields: IndexMap<String, String>,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

/// Registry entry for one dataset. `splits` is filled in at ingestion time
/// and absent in the registry file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub cluster: Cluster,
    pub task_kind: TaskKind,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<SplitKind, usize>,
}

impl DatasetSpec {
    /// Metric reported in eval summaries: accuracy for classification,
    /// otherwise the first declared metric.
    pub fn primary_metric(&self) -> Metric {
        match self.task_kind {
            TaskKind::Classification => Metric::Accuracy,
            TaskKind::Generation => self.metrics.first().copied().unwrap_or(Metric::TokenF1),
        }
    }
}

/// The dataset/cluster registry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registry {
    pub datasets: Vec<DatasetSpec>,
}

impl Registry {
    /// The canonical registry shipped with the crate.
    pub fn builtin() -> Registry {
        let registry: Registry =
            serde_json::from_str(REGISTRY_JSON).expect("embedded registry is valid JSON");
        registry.validate().expect("embedded registry is valid");
        registry
    }

    pub fn load(path: &Path) -> Result<Registry> {
        let file = File::open(path)?;
        let registry: Registry = serde_json::from_reader(BufReader::new(file))?;
        registry.validate()?;
        Ok(registry)
    }

    /// Checks name uniqueness. Cluster membership is a partition by
    /// construction (every dataset names exactly one cluster).
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Validation("registry has no datasets".into()));
        }
        let mut seen = BTreeSet::new();
        for spec in &self.datasets {
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate dataset name `{}` in registry",
                    spec.name
                )));
            }
            if spec.task_kind == TaskKind::Classification
                && !spec.metrics.contains(&Metric::Accuracy)
            {
                return Err(Error::Validation(format!(
                    "classification dataset `{}` must declare accuracy",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Cluster membership, sorted by dataset name within each cluster.
    pub fn clusters(&self) -> BTreeMap<Cluster, Vec<String>> {
        let mut map: BTreeMap<Cluster, Vec<String>> = BTreeMap::new();
        for cluster in Cluster::ALL {
            map.insert(cluster, Vec::new());
        }
        for spec in &self.datasets {
            map.get_mut(&spec.cluster)
                .expect("all clusters present")
                .push(spec.name.clone());
        }
        for members in map.values_mut() {
            members.sort();
        }
        map
    }

    pub fn members(&self, cluster: Cluster) -> Vec<String> {
        let mut names: Vec<String> = self
            .datasets
            .iter()
            .filter(|d| d.cluster == cluster)
            .map(|d| d.name.clone())
            .collect();
        names.sort();
        names
    }
}

/// A loaded dataset: spec plus materialized splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Example>,
    pub dev: Option<Vec<Example>>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &[Example] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Dev => self.dev.as_deref().unwrap_or(&[]),
            SplitKind::Test => &self.test,
        }
    }

    fn refresh_split_counts(&mut self) {
        self.spec.splits.insert(SplitKind::Train, self.train.len());
        self.spec.splits.insert(SplitKind::Test, self.test.len());
        match &self.dev {
            Some(dev) => {
                self.spec.splits.insert(SplitKind::Dev, dev.len());
            }
            None => {
                self.spec.splits.remove(&SplitKind::Dev);
            }
        }
    }
}

fn validate_example(example: &Example, spec: &DatasetSpec, line: usize) -> Result<()> {
    let schema_err = |message: String| Error::Schema {
        dataset: spec.name.clone(),
        line,
        message,
    };
    if example.id.is_empty() {
        return Err(schema_err("empty example id".into()));
    }
    if example.targets.is_empty() {
        return Err(schema_err("missing required field `targets`".into()));
    }
    for name in example.fields.keys() {
        if name.is_empty() {
            return Err(schema_err("empty field name".into()));
        }
        if name.contains('{') || name.contains('}') {
            return Err(schema_err(format!(
                "field name `{name}` contains placeholder delimiter characters"
            )));
        }
    }
    match (&example.options, spec.task_kind) {
        (Some(options), TaskKind::Classification) => {
            if options.is_empty() {
                return Err(schema_err("classification example has empty options".into()));
            }
            for target in &example.targets {
                if !options.contains(target) {
                    return Err(Error::Validation(format!(
                        "{}: line {line}: target `{target}` is not one of the options",
                        spec.name
                    )));
                }
            }
        }
        (None, TaskKind::Classification) => {
            return Err(schema_err(
                "classification example missing required field `options`".into(),
            ));
        }
        (Some(_), TaskKind::Generation) => {
            return Err(schema_err(
                "generation example must not carry options".into(),
            ));
        }
        (None, TaskKind::Generation) => {}
    }
    Ok(())
}

/// Reads one line-delimited record file. Malformed lines are reported with
/// their 1-based line number.
pub fn load_split(path: &Path, spec: &DatasetSpec) -> Result<Vec<Example>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let example: Example = serde_json::from_str(&line).map_err(|e| Error::Schema {
            dataset: spec.name.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        validate_example(&example, spec, lineno)?;
        if !ids.insert(example.id.clone()) {
            return Err(Error::Validation(format!(
                "{}: line {lineno}: duplicate example id `{}`",
                spec.name, example.id
            )));
        }
        examples.push(example);
    }
    if examples.is_empty() {
        log::warn!("{}: {} contains no examples", spec.name, path.display());
    }
    Ok(examples)
}

/// Loads all splits of a dataset from `dir` (`train.jsonl`, `test.jsonl`,
/// optional `dev.jsonl`) and validates them against `spec`.
pub fn load_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Dataset> {
    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    if !train_path.is_file() {
        return Err(Error::Validation(format!(
            "{}: missing train split at {}",
            spec.name,
            train_path.display()
        )));
    }
    if !test_path.is_file() {
        return Err(Error::Validation(format!(
            "{}: missing test split at {}",
            spec.name,
            test_path.display()
        )));
    }
    let train = load_split(&train_path, spec)?;
    let test = load_split(&test_path, spec)?;
    let dev_path = dir.join("dev.jsonl");
    let dev = if dev_path.is_file() {
        Some(load_split(&dev_path, spec)?)
    } else {
        None
    };
    let mut dataset = Dataset {
        spec: spec.clone(),
        train,
        dev,
        test,
    };
    dataset.refresh_split_counts();
    Ok(dataset)
}

/// Caps the train split at `cap` examples via a seeded uniform draw without
/// replacement. Retained examples keep their original relative order, so the
/// operation is idempotent for a fixed seed.
pub fn cap_train_split(mut dataset: Dataset, cap: usize, seed: u64) -> Dataset {
    assert!(cap > 0, "cap must be positive");
    if dataset.train.len() > cap {
        let mut rng = seed::substream(seed, &["registry", "cap", &dataset.spec.name]);
        let mut keep = rand::seq::index::sample(&mut rng, dataset.train.len(), cap).into_vec();
        keep.sort_unstable();
        let mut keep_iter = keep.into_iter().peekable();
        let mut retained = Vec::with_capacity(cap);
        for (i, example) in dataset.train.drain(..).enumerate() {
            if keep_iter.peek() == Some(&i) {
                keep_iter.next();
                retained.push(example);
            }
        }
        dataset.train = retained;
    }
    dataset.refresh_split_counts();
    dataset
}

/// Moves `dev_size` seeded examples from train into a new dev split.
pub fn carve_dev(mut dataset: Dataset, dev_size: usize, seed: u64) -> Result<Dataset> {
    if dataset.dev.is_some() {
        return Err(Error::Validation(format!(
            "{}: dev split already present",
            dataset.spec.name
        )));
    }
    if dataset.train.len() <= dev_size {
        return Err(Error::Validation(format!(
            "{}: train split has {} examples, too few to carve a dev set of {}",
            dataset.spec.name,
            dataset.train.len(),
            dev_size
        )));
    }
    let mut rng = seed::substream(seed, &["registry", "dev", &dataset.spec.name]);
    let mut picks = rand::seq::index::sample(&mut rng, dataset.train.len(), dev_size).into_vec();
    picks.sort_unstable();
    let mut pick_iter = picks.into_iter().peekable();
    let mut dev = Vec::with_capacity(dev_size);
    let mut train = Vec::with_capacity(dataset.train.len() - dev_size);
    for (i, example) in dataset.train.drain(..).enumerate() {
        if pick_iter.peek() == Some(&i) {
            pick_iter.next();
            dev.push(example);
        } else {
            train.push(example);
        }
    }
    dataset.train = train;
    dataset.dev = Some(dev);
    dataset.refresh_split_counts();
    Ok(dataset)
}

//! Config-driven pipeline commands and their artifacts.
//!
//! Commands run in dependency order: ingest -> split-plan -> build-mixture ->
//! render -> pack -> evaluate -> contaminate. Each command writes its
//! artifacts plus a run log under `output_root`; identical config and seed
//! reproduce every artifact byte for byte, so reruns can be verified by
//! hashing the output tree.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::contamination::NgramIndex;
use crate::error::Error;
use crate::eval::{self, NgramScorer, PredictionRecord};
use crate::mixture::{self, MixtureManifest};
use crate::registry::{self, Dataset, DatasetSpec, Example, Registry, SplitKind};
use crate::splits::{plan_split, SplitPlan};
use crate::templating::{self, RenderedExample, Template};
use crate::tokenpack::{self, ByteTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Ingest,
    SplitPlan,
    BuildMixture,
    Render,
    Pack,
    Evaluate,
    Contaminate,
    Stats,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::SplitPlan => "split-plan",
            Command::BuildMixture => "build-mixture",
            Command::Render => "render",
            Command::Pack => "pack",
            Command::Evaluate => "evaluate",
            Command::Contaminate => "contaminate",
            Command::Stats => "stats",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("missing artifact {artifact}; run `{producer}` first")]
    Dependency { artifact: String, producer: String },
    #[error(transparent)]
    Core(#[from] Error),
}

impl PipelineError {
    /// Exit codes: 1 validation, 2 dependency, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Dependency { .. } => 2,
            PipelineError::Core(e) => match e {
                Error::Validation(_)
                | Error::Schema { .. }
                | Error::TemplateParse { .. }
                | Error::TemplateBind { .. }
                | Error::UnknownCluster(_) => 1,
                _ => 3,
            },
        }
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

// ---------------------------------------------------------------- artifacts

struct Artifacts<'a> {
    root: &'a Path,
}

impl<'a> Artifacts<'a> {
    fn new(config: &'a PipelineConfig) -> Artifacts<'a> {
        Artifacts {
            root: &config.output_root,
        }
    }

    fn ingest_manifest(&self) -> PathBuf {
        self.root.join("ingest_manifest.json")
    }

    fn dataset_dir(&self, name: &str) -> PathBuf {
        self.root.join("datasets").join(name)
    }

    fn split_plan(&self) -> PathBuf {
        self.root.join("split_plan.json")
    }

    fn mixture_manifest(&self) -> PathBuf {
        self.root.join("mixture_manifest.json")
    }

    fn mixture_stream(&self) -> PathBuf {
        self.root.join("mixture_stream.jsonl")
    }

    fn rendered(&self) -> PathBuf {
        self.root.join("rendered.jsonl")
    }

    fn packed(&self) -> PathBuf {
        self.root.join("packed.bin")
    }

    fn pack_manifest(&self) -> PathBuf {
        self.root.join("pack_manifest.json")
    }

    fn eval_report(&self, dataset: &str) -> PathBuf {
        self.root.join("eval").join(format!("{dataset}.json"))
    }

    fn predictions(&self, dataset: &str) -> PathBuf {
        self.root
            .join("eval")
            .join(format!("{dataset}_predictions.jsonl"))
    }

    fn contamination_report(&self, dataset: &str) -> PathBuf {
        self.root.join("contamination").join(format!("{dataset}.json"))
    }

    fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    fn run_log(&self, command: Command) -> PathBuf {
        self.root.join("run_log").join(format!("{}.json", command.name()))
    }

    fn require(&self, path: PathBuf, producer: Command) -> PipelineResult<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::Dependency {
                artifact: path.display().to_string(),
                producer: producer.name().to_string(),
            })
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> PipelineResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let file = File::create(path).map_err(Error::from)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(Error::from)?;
    writer.write_all(b"\n").map_err(Error::from)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> PipelineResult<T> {
    let file = File::open(path).map_err(Error::from)?;
    Ok(serde_json::from_reader(BufReader::new(file)).map_err(Error::from)?)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> PipelineResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let file = File::create(path).map_err(Error::from)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(Error::from)?;
        writer.write_all(b"\n").map_err(Error::from)?;
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> PipelineResult<Vec<T>> {
    let file = File::open(path).map_err(Error::from)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(Error::from)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(Error::from)?);
    }
    Ok(items)
}

// ----------------------------------------------------------------- run logs

#[derive(Debug, Serialize, Deserialize)]
struct RunLog {
    command: String,
    seed: u64,
    config_hash: String,
    config: PipelineConfig,
}

fn write_run_log(config: &PipelineConfig, command: Command) -> PipelineResult<()> {
    let log = RunLog {
        command: command.name().to_string(),
        seed: config.seed,
        config_hash: config.content_hash(),
        config: config.clone(),
    };
    write_json(&Artifacts::new(config).run_log(command), &log)
}

// ------------------------------------------------------------------- ingest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestEntry {
    pub spec: DatasetSpec,
    pub raw_train: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestManifest {
    pub seed: u64,
    pub entries: Vec<IngestEntry>,
}

fn write_split(path: &Path, examples: &[Example]) -> PipelineResult<()> {
    write_jsonl(path, examples)
}

fn run_ingest(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let registry = config.registry()?;
    let mut entries = Vec::new();
    for spec in &registry.datasets {
        let dir = config.dataset_root.join(&spec.name);
        if !dir.is_dir() {
            continue;
        }
        let dataset = registry::load_dataset(&dir, spec)?;
        let raw_train = dataset.train.len();
        let mut dataset = registry::cap_train_split(dataset, config.caps.train_cap, config.seed);
        if dataset.dev.is_none() {
            dataset = registry::carve_dev(dataset, config.caps.dev_size, config.seed)?;
        }
        let out_dir = artifacts.dataset_dir(&spec.name);
        fs::create_dir_all(&out_dir).map_err(Error::from)?;
        write_split(&out_dir.join("train.jsonl"), &dataset.train)?;
        write_split(&out_dir.join("test.jsonl"), &dataset.test)?;
        if let Some(dev) = &dataset.dev {
            write_split(&out_dir.join("dev.jsonl"), dev)?;
        }
        entries.push(IngestEntry {
            spec: dataset.spec.clone(),
            raw_train,
        });
    }
    if entries.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no registry datasets found under {}",
            config.dataset_root.display()
        )));
    }
    let manifest = IngestManifest {
        seed: config.seed,
        entries,
    };
    write_json(&artifacts.ingest_manifest(), &manifest)?;
    write_run_log(config, Command::Ingest)
}

fn load_ingested(config: &PipelineConfig) -> PipelineResult<IngestManifest> {
    let artifacts = Artifacts::new(config);
    let path = artifacts.require(artifacts.ingest_manifest(), Command::Ingest)?;
    read_json(&path)
}

/// Reads one processed dataset back from the output tree.
fn load_processed(config: &PipelineConfig, spec: &DatasetSpec) -> PipelineResult<Dataset> {
    let dir = Artifacts::new(config).dataset_dir(&spec.name);
    let artifacts = Artifacts::new(config);
    artifacts.require(dir.join("train.jsonl"), Command::Ingest)?;
    let train: Vec<Example> = read_jsonl(&dir.join("train.jsonl"))?;
    let test: Vec<Example> = read_jsonl(&dir.join("test.jsonl"))?;
    let dev_path = dir.join("dev.jsonl");
    let dev = if dev_path.exists() {
        Some(read_jsonl(&dev_path)?)
    } else {
        None
    };
    Ok(Dataset {
        spec: spec.clone(),
        train,
        dev,
        test,
    })
}

// --------------------------------------------------------------- split plan

fn run_split_plan(config: &PipelineConfig) -> PipelineResult<()> {
    let heldout = config.heldout_cluster.ok_or_else(|| {
        PipelineError::Validation("split-plan requires heldout_cluster in the config".into())
    })?;
    let registry = config.registry()?;
    let plan = plan_split(&registry, heldout);
    write_json(&Artifacts::new(config).split_plan(), &plan)?;
    write_run_log(config, Command::SplitPlan)
}

// ------------------------------------------------------------ build mixture

/// One materialized stream draw with the example id resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamRecord {
    pub dataset: String,
    pub example_index: usize,
    pub example_id: String,
}

fn tuning_set(config: &PipelineConfig, manifest: &IngestManifest) -> PipelineResult<Vec<String>> {
    let artifacts = Artifacts::new(config);
    let names: Vec<String> = match config.heldout_cluster {
        Some(_) => {
            let path = artifacts.require(artifacts.split_plan(), Command::SplitPlan)?;
            let plan: SplitPlan = read_json(&path)?;
            manifest
                .entries
                .iter()
                .filter(|e| plan.tuning_datasets.contains(&e.spec.name))
                .map(|e| e.spec.name.clone())
                .collect()
        }
        None => manifest.entries.iter().map(|e| e.spec.name.clone()).collect(),
    };
    if names.is_empty() {
        return Err(PipelineError::Validation(
            "no ingested datasets are eligible for the tuning mixture".into(),
        ));
    }
    Ok(names)
}

fn run_build_mixture(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let manifest = load_ingested(config)?;
    let tuning = tuning_set(config, &manifest)?;
    let mut raw_sizes = BTreeMap::new();
    for entry in &manifest.entries {
        if tuning.contains(&entry.spec.name) {
            raw_sizes.insert(entry.spec.name.clone(), entry.raw_train);
        }
    }
    let mixture_manifest = mixture::compute_weights(
        &raw_sizes,
        config.caps.train_cap,
        config.caps.rate_max,
        config.seed,
        config.caps.total_draws,
    )?;
    // Resolve draw indices to example ids from the processed train splits.
    let mut trains: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for name in &tuning {
        let spec = manifest
            .entries
            .iter()
            .find(|e| e.spec.name == *name)
            .expect("tuning names come from the manifest")
            .spec
            .clone();
        trains.insert(name.clone(), load_processed(config, &spec)?.train);
    }
    let draws = mixture::sample_stream(&mixture_manifest, config.caps.total_draws);
    let records: Vec<StreamRecord> = draws
        .into_iter()
        .map(|draw| {
            let train = &trains[&draw.dataset];
            StreamRecord {
                example_id: train[draw.example_index].id.clone(),
                dataset: draw.dataset,
                example_index: draw.example_index,
            }
        })
        .collect();
    write_json(&artifacts.mixture_manifest(), &mixture_manifest)?;
    write_jsonl(&artifacts.mixture_stream(), &records)?;
    write_run_log(config, Command::BuildMixture)
}

// ------------------------------------------------------------------- render

fn load_template_pack(config: &PipelineConfig, dataset: &str) -> PipelineResult<Vec<Template>> {
    let path = config.dataset_root.join(dataset).join("templates.json");
    if !path.is_file() {
        return Err(PipelineError::Validation(format!(
            "{dataset}: no template pack at {}",
            path.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(Error::from)?;
    Ok(templating::load_template_pack(dataset, &text)?)
}

/// Template pack restricted to `templates_per_dataset` (or the whole pack if
/// it is smaller).
fn restricted_templates(
    config: &PipelineConfig,
    dataset: &str,
) -> PipelineResult<Vec<Template>> {
    let pack = load_template_pack(config, dataset)?;
    let k = config.templates_per_dataset.min(pack.len());
    Ok(templating::restrict_templates(&pack, k, config.seed)?)
}

fn run_render(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let manifest = load_ingested(config)?;
    let stream_path = artifacts.require(artifacts.mixture_stream(), Command::BuildMixture)?;
    let stream: Vec<StreamRecord> = read_jsonl(&stream_path)?;

    let mut trains: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    let mut packs: BTreeMap<String, Vec<Template>> = BTreeMap::new();
    let mut specs: BTreeMap<String, DatasetSpec> = BTreeMap::new();
    for entry in &manifest.entries {
        specs.insert(entry.spec.name.clone(), entry.spec.clone());
    }

    let mut rendered: Vec<RenderedExample> = Vec::with_capacity(stream.len());
    for record in &stream {
        let spec = specs.get(&record.dataset).ok_or_else(|| {
            PipelineError::Validation(format!(
                "stream references dataset `{}` missing from the ingest manifest",
                record.dataset
            ))
        })?;
        if !trains.contains_key(&record.dataset) {
            trains.insert(
                record.dataset.clone(),
                load_processed(config, spec)?.train,
            );
            packs.insert(record.dataset.clone(), restricted_templates(config, &record.dataset)?);
        }
        let train = &trains[&record.dataset];
        let templates = &packs[&record.dataset];
        let example = train.get(record.example_index).ok_or_else(|| {
            PipelineError::Validation(format!(
                "stream index {} out of range for dataset `{}`",
                record.example_index, record.dataset
            ))
        })?;
        let template = templating::select_template(
            templates,
            &record.dataset,
            record.example_index as u64,
            config.seed,
        );
        rendered.push(templating::render(
            template,
            example,
            config.render_mode,
            spec,
        )?);
    }
    write_jsonl(&artifacts.rendered(), &rendered)?;
    write_run_log(config, Command::Render)
}

// --------------------------------------------------------------------- pack

#[derive(Debug, Serialize, Deserialize)]
pub struct PackManifest {
    pub tokenizer: String,
    pub input_budget: usize,
    pub target_budget: usize,
    pub example_count: usize,
    pub batch_count: usize,
    pub dropped: usize,
}

fn run_pack(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let rendered_path = artifacts.require(artifacts.rendered(), Command::Render)?;
    let rendered: Vec<RenderedExample> = read_jsonl(&rendered_path)?;
    let tok = ByteTokenizer;
    let outcome = tokenpack::pack(
        &rendered,
        &tok,
        config.caps.input_budget,
        config.caps.target_budget,
    );
    let packed_path = artifacts.packed();
    if let Some(parent) = packed_path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let file = File::create(&packed_path).map_err(Error::from)?;
    let mut writer = BufWriter::new(file);
    tokenpack::write_batches(&mut writer, &outcome.batches)?;
    writer.flush().map_err(Error::from)?;
    let manifest = PackManifest {
        tokenizer: "byte".into(),
        input_budget: config.caps.input_budget,
        target_budget: config.caps.target_budget,
        example_count: rendered.len(),
        batch_count: outcome.batches.len(),
        dropped: outcome.dropped,
    };
    write_json(&artifacts.pack_manifest(), &manifest)?;
    write_run_log(config, Command::Pack)
}

// ----------------------------------------------------------------- evaluate

fn eval_datasets(
    config: &PipelineConfig,
    registry: &Registry,
    manifest: &IngestManifest,
) -> PipelineResult<Vec<DatasetSpec>> {
    let heldout = config.heldout_cluster.ok_or_else(|| {
        PipelineError::Validation("evaluate requires heldout_cluster in the config".into())
    })?;
    let members = registry.members(heldout);
    let specs: Vec<DatasetSpec> = manifest
        .entries
        .iter()
        .filter(|e| members.contains(&e.spec.name))
        .map(|e| e.spec.clone())
        .collect();
    if specs.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no ingested datasets belong to held-out cluster `{heldout}`"
        )));
    }
    Ok(specs)
}

fn run_evaluate(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let eval_config = config.eval.as_ref().ok_or_else(|| {
        PipelineError::Validation("evaluate requires an [eval] config section".into())
    })?;
    let registry = config.registry()?;
    let manifest = load_ingested(config)?;
    let specs = eval_datasets(config, &registry, &manifest)?;
    let corpus = fs::read_to_string(&eval_config.scorer_corpus).map_err(Error::from)?;
    let scorer = NgramScorer::new(&corpus, eval_config.scorer_order)?;
    let tok = ByteTokenizer;
    let prompt_spec: PromptSpec = config.prompt_spec();
    for spec in &specs {
        let dataset = load_processed(config, spec)?;
        let templates = restricted_templates(config, &spec.name)?;
        let outcome = eval::evaluate_dataset(
            &scorer,
            &tok,
            &dataset,
            &templates,
            &prompt_spec,
            eval_config.mode,
            eval_config.gen_max_len,
        )?;
        write_json(&artifacts.eval_report(&spec.name), &outcome.report)?;
        write_jsonl(&artifacts.predictions(&spec.name), &outcome.predictions)?;
    }
    write_run_log(config, Command::Evaluate)
}

// -------------------------------------------------------------- contaminate

fn run_contaminate(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let contamination_config = config.contamination.as_ref().ok_or_else(|| {
        PipelineError::Validation("contaminate requires a [contamination] config section".into())
    })?;
    let registry = config.registry()?;
    let manifest = load_ingested(config)?;
    let specs = eval_datasets(config, &registry, &manifest)?;
    let corpus = fs::read_to_string(&contamination_config.corpus_path).map_err(Error::from)?;
    let index = NgramIndex::build(&corpus, contamination_config.ngram_len);
    for spec in &specs {
        let predictions_path =
            artifacts.require(artifacts.predictions(&spec.name), Command::Evaluate)?;
        let predictions: Vec<PredictionRecord> = read_jsonl(&predictions_path)?;
        let by_id: BTreeMap<&str, f64> = predictions
            .iter()
            .map(|p| (p.example_id.as_str(), p.metric_value))
            .collect();
        let dataset = load_processed(config, spec)?;
        let report = crate::contamination::clean_report(
            &spec.name,
            &dataset.test,
            &index,
            contamination_config.include_targets,
            |example| by_id.get(example.id.as_str()).copied().unwrap_or(0.0),
        );
        write_json(&artifacts.contamination_report(&spec.name), &report)?;
    }
    write_run_log(config, Command::Contaminate)
}

// -------------------------------------------------------------------- stats

#[derive(Debug, Serialize)]
struct StatsReport {
    registry_datasets: usize,
    clusters: BTreeMap<String, usize>,
    ingested: Vec<DatasetSpec>,
}

fn run_stats(config: &PipelineConfig) -> PipelineResult<()> {
    let artifacts = Artifacts::new(config);
    let registry = config.registry()?;
    let clusters: BTreeMap<String, usize> = registry
        .clusters()
        .into_iter()
        .map(|(cluster, members)| (cluster.name().to_string(), members.len()))
        .collect();
    let ingested = match artifacts.ingest_manifest().exists() {
        true => {
            let manifest: IngestManifest = read_json(&artifacts.ingest_manifest())?;
            manifest.entries.into_iter().map(|e| e.spec).collect()
        }
        false => Vec::new(),
    };
    let report = StatsReport {
        registry_datasets: registry.datasets.len(),
        clusters,
        ingested,
    };
    write_json(&artifacts.stats(), &report)?;
    for (cluster, count) in &report.clusters {
        log::info!("{cluster}: {count} datasets");
    }
    write_run_log(config, Command::Stats)
}

/// Runs one pipeline command. The config is validated up front; artifacts
/// land under `config.output_root`.
pub fn run(command: Command, config: &PipelineConfig) -> PipelineResult<()> {
    config.validate()?;
    match command {
        Command::Ingest => run_ingest(config),
        Command::SplitPlan => run_split_plan(config),
        Command::BuildMixture => run_build_mixture(config),
        Command::Render => run_render(config),
        Command::Pack => run_pack(config),
        Command::Evaluate => run_evaluate(config),
        Command::Contaminate => run_contaminate(config),
        Command::Stats => run_stats(config),
    }
}

/// Convenience for tests and one-shot runs: the full pipeline in dependency
/// order.
pub fn run_all(config: &PipelineConfig) -> PipelineResult<()> {
    for command in [
        Command::Ingest,
        Command::SplitPlan,
        Command::BuildMixture,
        Command::Render,
        Command::Pack,
        Command::Evaluate,
        Command::Contaminate,
        Command::Stats,
    ] {
        run(command, config)?;
    }
    Ok(())
}

/// Recursively hashes every file under `root` (sorted by relative path) into
/// one hex digest; the pinned-digest determinism checks use this.
pub fn digest_tree(root: &Path) -> PipelineResult<String> {
    use sha2::{Digest, Sha256};
    fn collect(dir: &Path, base: &Path, files: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                collect(&path, base, files)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .expect("children live under base")
                    .to_string_lossy()
                    .replace('\\', "/");
                files.push((rel, path));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(root, root, &mut files).map_err(Error::from)?;
    files.sort();
    let mut hasher = Sha256::new();
    for (rel, path) in files {
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update(fs::read(&path).map_err(Error::from)?);
        hasher.update([0]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

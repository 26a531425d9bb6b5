//! Pipeline configuration: one TOML file drives every command.
//!
//! All randomness flows from the single `seed`; paths may be overridden via
//! `INSTRUCTMIX_*` environment variables so the same config file can move
//! between machines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalMode;
use crate::registry::Cluster;
use crate::templating::RenderMode;
use crate::{contamination, eval, fewshot, mixture, registry, tokenpack};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_train_cap")]
    pub train_cap: usize,
    #[serde(default = "default_rate_max")]
    pub rate_max: usize,
    #[serde(default = "default_input_budget")]
    pub input_budget: usize,
    #[serde(default = "default_target_budget")]
    pub target_budget: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_len_max")]
    pub len_max: usize,
    #[serde(default = "default_dev_size")]
    pub dev_size: usize,
    #[serde(default = "default_total_draws")]
    pub total_draws: usize,
}

fn default_train_cap() -> usize {
    registry::DEFAULT_TRAIN_CAP
}
fn default_rate_max() -> usize {
    mixture::DEFAULT_RATE_MAX
}
fn default_input_budget() -> usize {
    tokenpack::DEFAULT_INPUT_BUDGET
}
fn default_target_budget() -> usize {
    tokenpack::DEFAULT_TARGET_BUDGET
}
fn default_k_max() -> usize {
    fewshot::DEFAULT_K_MAX
}
fn default_len_max() -> usize {
    fewshot::DEFAULT_LEN_MAX
}
fn default_dev_size() -> usize {
    registry::DEFAULT_DEV_SIZE
}
fn default_total_draws() -> usize {
    10_000
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            train_cap: default_train_cap(),
            rate_max: default_rate_max(),
            input_budget: default_input_budget(),
            target_budget: default_target_budget(),
            k_max: default_k_max(),
            len_max: default_len_max(),
            dev_size: default_dev_size(),
            total_draws: default_total_draws(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_mode")]
    pub mode: EvalMode,
    #[serde(default = "default_gen_max_len")]
    pub gen_max_len: usize,
    /// Corpus for the reference n-gram scorer.
    pub scorer_corpus: PathBuf,
    #[serde(default = "default_scorer_order")]
    pub scorer_order: usize,
}

fn default_eval_mode() -> EvalMode {
    EvalMode::ZeroShot
}
fn default_gen_max_len() -> usize {
    eval::DEFAULT_GEN_MAX_LEN
}
fn default_scorer_order() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationConfig {
    pub corpus_path: PathBuf,
    #[serde(default = "default_ngram_len")]
    pub ngram_len: usize,
    #[serde(default = "default_include_targets")]
    pub include_targets: bool,
}

fn default_ngram_len() -> usize {
    contamination::DEFAULT_NGRAM_LEN
}
fn default_include_targets() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Registry file; the built-in registry is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry_path: Option<PathBuf>,
    pub dataset_root: PathBuf,
    pub output_root: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_cluster: Option<Cluster>,
    #[serde(default = "default_render_mode")]
    pub render_mode: RenderMode,
    #[serde(default = "default_templates_per_dataset")]
    pub templates_per_dataset: usize,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<ContaminationConfig>,
}

fn default_render_mode() -> RenderMode {
    RenderMode::Natural
}
fn default_templates_per_dataset() -> usize {
    10
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    /// Path overrides from the environment (paths only, by policy).
    fn apply_env_overrides(&mut self) {
        if let Ok(root) = std::env::var("INSTRUCTMIX_DATASET_ROOT") {
            self.dataset_root = PathBuf::from(root);
        }
        if let Ok(root) = std::env::var("INSTRUCTMIX_OUTPUT_ROOT") {
            self.output_root = PathBuf::from(root);
        }
        if let Ok(path) = std::env::var("INSTRUCTMIX_REGISTRY_PATH") {
            self.registry_path = Some(PathBuf::from(path));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let caps = [
            ("train_cap", self.caps.train_cap),
            ("rate_max", self.caps.rate_max),
            ("input_budget", self.caps.input_budget),
            ("target_budget", self.caps.target_budget),
            ("len_max", self.caps.len_max),
            ("dev_size", self.caps.dev_size),
            ("total_draws", self.caps.total_draws),
        ];
        for (name, value) in caps {
            if value == 0 {
                return Err(Error::Validation(format!("caps.{name} must be positive")));
            }
        }
        if !(1..=10).contains(&self.templates_per_dataset) {
            return Err(Error::Validation(
                "templates_per_dataset must be between 1 and 10".into(),
            ));
        }
        if let Some(eval) = &self.eval {
            if eval.scorer_order == 0 {
                return Err(Error::Validation("eval.scorer_order must be positive".into()));
            }
            if eval.gen_max_len == 0 {
                return Err(Error::Validation("eval.gen_max_len must be positive".into()));
            }
        }
        if let Some(contamination) = &self.contamination {
            if contamination.ngram_len == 0 {
                return Err(Error::Validation(
                    "contamination.ngram_len must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<registry::Registry> {
        match &self.registry_path {
            Some(path) => registry::Registry::load(path),
            None => Ok(registry::Registry::builtin()),
        }
    }

    pub fn prompt_spec(&self) -> fewshot::PromptSpec {
        fewshot::PromptSpec {
            k_max: self.caps.k_max,
            len_max: self.caps.len_max,
            delimiter: fewshot::DEFAULT_DELIMITER.to_string(),
            seed: self.seed,
        }
    }

    /// SHA-256 over the canonical JSON form of the effective config.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

//! Run configuration: TOML files with flat `--set key=value` overrides.
//! Flag values win over file values; secrets never appear here (API keys
//! are read from the environment by the core crate).

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use selfplay_core::env::EnvConfig;
use selfplay_core::eval::PplUnit;
use selfplay_core::policy::PolicySpec;
use selfplay_core::protocol::PromptMode;
use selfplay_core::selfplay::DatasetParams;

/// Loads a TOML config, applies `--set` overrides (dotted paths), then an
/// optional `--seed` shorthand for the top-level `seed` key.
pub fn load_config<T: serde::de::DeserializeOwned>(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> Result<(T, toml::Value)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: toml::Value = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .with_context(|| format!("--set {set:?} is not KEY=VALUE"))?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, "seed", &seed.to_string())?;
    }
    let config: T = value.clone().try_into().with_context(|| {
        format!(
            "config {} does not match the expected shape",
            path.display()
        )
    })?;
    Ok((config, value))
}

fn apply_override(root: &mut toml::Value, key_path: &str, raw: &str) -> Result<()> {
    let parsed = parse_scalar(raw);
    let mut cursor = root;
    let parts: Vec<&str> = key_path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .with_context(|| format!("cannot set {key_path}: {part} is not a table"))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    bail!("empty key path");
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Accept any TOML literal; bare words fall back to strings.
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub configs: Vec<EnvConfig>,
    pub policy: PolicySpec,
    #[serde(default = "default_num_instances")]
    pub num_instances: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rollouts")]
    pub rollouts_per_instance: usize,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<u64>,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
}

fn default_num_instances() -> usize {
    10
}
fn default_rollouts() -> usize {
    8
}
fn default_k_values() -> Vec<u64> {
    vec![1, 8]
}
fn default_prompt_mode() -> PromptMode {
    PromptMode::ObservationThenPrediction
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub config: EnvConfig,
    pub policy: PolicySpec,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
}

fn default_episodes() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyConfig {
    /// Path to a fitted table exported by `worldmodel fit`.
    pub table: String,
    pub config: EnvConfig,
    pub policy: PolicySpec,
    #[serde(default = "default_heldout_episodes")]
    pub heldout_episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
}

fn default_heldout_episodes() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanEvalConfig {
    #[serde(default = "default_plan_config")]
    pub config: EnvConfig,
    #[serde(default = "default_plan_instances")]
    pub num_instances: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_baseline_rollouts")]
    pub baseline_rollouts: usize,
    #[serde(default = "default_baseline_k")]
    pub baseline_k: u64,
}

fn default_plan_config() -> EnvConfig {
    EnvConfig::sokoban(6, 1)
}
fn default_plan_instances() -> usize {
    100
}
fn default_horizon() -> usize {
    10
}
fn default_baseline_rollouts() -> usize {
    64
}
fn default_baseline_k() -> u64 {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProviderConfig {
    Uniform {
        vocab_size: u32,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
}

fn default_api_key_env() -> String {
    selfplay_core::policy::LM_API_KEY_ENV.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PplSource {
    /// Generate `count` seeded states and score their texts.
    Env {
        env: EnvConfig,
        #[serde(default = "default_ppl_count")]
        count: usize,
        #[serde(default)]
        seed: u64,
        /// Score the composed state text instead of the raw grid.
        #[serde(default)]
        composed: bool,
    },
    /// Score texts from a JSONL file with one `{"text": ...}` per line.
    File { path: String },
}

fn default_ppl_count() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PplConfig {
    pub provider: ProviderConfig,
    pub source: PplSource,
    #[serde(default = "default_unit")]
    pub unit: PplUnit,
}

fn default_unit() -> PplUnit {
    PplUnit::Symbol
}

/// gen-data reuses the core parameter struct directly.
pub type GenDataConfig = DatasetParams;

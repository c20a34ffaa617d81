//! Batch dataset construction: collect -> rewrite -> emit -> filter until
//! the target record count is reached, then write JSONL plus a manifest.
//!
//! Episodes are processed in waves of a fixed size; workers fan out within
//! a wave and results are reduced in episode order, so the output bytes are
//! identical for any worker count.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    collect_trajectory, emit_sft_records, filter_records, rewrite_with_ground_truth,
    CollectOptions, MaskMode, PipelineError, SftRecord, Trajectory,
};
use crate::env::EnvConfig;
use crate::policy::PolicySpec;
use crate::protocol::{PromptMode, PromptTemplate};
use crate::rng::mix;

/// Episodes dispatched per wave; fixed so `jobs` cannot change which
/// episodes contribute records.
const WAVE_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub configs: Vec<EnvConfig>,
    pub policy: PolicySpec,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
    #[serde(default = "default_mask_mode")]
    pub mask_mode: MaskMode,
    /// Kept records to produce.
    #[serde(default = "default_target_count")]
    pub target_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Episode budget before giving up; 0 means `target_count * 64`.
    #[serde(default)]
    pub max_episodes: usize,
    /// Apply format filtering before keeping records.
    #[serde(default = "default_filter")]
    pub filter: bool,
}

fn default_prompt_mode() -> PromptMode {
    PromptMode::ObservationThenPrediction
}
fn default_mask_mode() -> MaskMode {
    MaskMode::WorldModel
}
fn default_target_count() -> usize {
    1280
}
fn default_filter() -> bool {
    true
}

impl DatasetParams {
    pub fn effective_max_episodes(&self) -> usize {
        if self.max_episodes == 0 {
            self.target_count.saturating_mul(64)
        } else {
            self.max_episodes
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub dataset: String,
    pub trajectories: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub params: DatasetParams,
    pub episodes_used: usize,
    pub kept: usize,
    pub rejected: usize,
    pub rejection_reasons: BTreeMap<String, u64>,
    /// Fraction of kept records whose (state, answer) pair already occurred.
    pub duplicate_rate: f64,
    pub files: ManifestFiles,
}

struct EpisodeOutput {
    trajectory: Trajectory,
    kept: Vec<SftRecord>,
    /// (state render, answer) keys aligned with `kept`, for duplicate stats.
    kept_keys: Vec<String>,
    rejected_reasons: Vec<String>,
}

/// Builds the dataset files under `out_dir` (`dataset.jsonl`,
/// `manifest.json`, optionally `trajectories.jsonl`) and returns the
/// manifest. Identical parameters produce byte-identical files for the
/// local policy variants, regardless of `jobs`.
pub fn build_dataset(
    params: &DatasetParams,
    jobs: usize,
    out_dir: &Path,
    save_trajectories: bool,
) -> Result<DatasetManifest, PipelineError> {
    if params.target_count == 0 {
        return Err(PipelineError::InvalidParams(
            "target_count must be >= 1".into(),
        ));
    }
    if params.configs.is_empty() {
        return Err(PipelineError::InvalidParams("no env configs given".into()));
    }
    for config in &params.configs {
        config.validate()?;
    }

    let max_episodes = params.effective_max_episodes();
    let mut kept: Vec<SftRecord> = Vec::new();
    let mut seen_keys: HashSet<String> = HashSet::new();
    let mut duplicates = 0usize;
    let mut rejected = 0usize;
    let mut rejection_reasons: BTreeMap<String, u64> = BTreeMap::new();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut episodes_used = 0usize;

    let mut wave_start = 0usize;
    while kept.len() < params.target_count && wave_start < max_episodes {
        let wave_end = (wave_start + WAVE_SIZE).min(max_episodes);
        let indices: Vec<usize> = (wave_start..wave_end).collect();
        let results = parallel_map(jobs, &indices, |episode| process_episode(params, episode));
        for result in results {
            let output = result?;
            if kept.len() >= params.target_count {
                break;
            }
            episodes_used += 1;
            for reason in output.rejected_reasons {
                rejected += 1;
                *rejection_reasons.entry(reason).or_insert(0) += 1;
            }
            for (record, key) in output.kept.into_iter().zip(output.kept_keys) {
                if kept.len() >= params.target_count {
                    break;
                }
                if !seen_keys.insert(key) {
                    duplicates += 1;
                }
                kept.push(record);
            }
            if save_trajectories {
                trajectories.push(output.trajectory);
            }
        }
        wave_start = wave_end;
    }

    if kept.len() < params.target_count {
        return Err(PipelineError::SourceExhausted {
            kept: kept.len(),
            target: params.target_count,
            episodes: episodes_used,
        });
    }

    std::fs::create_dir_all(out_dir)?;
    let dataset_name = "dataset.jsonl";
    write_jsonl(&out_dir.join(dataset_name), &kept)?;
    let trajectories_name = if save_trajectories {
        write_jsonl(&out_dir.join("trajectories.jsonl"), &trajectories)?;
        Some("trajectories.jsonl".to_string())
    } else {
        None
    };

    let manifest = DatasetManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        params: params.clone(),
        episodes_used,
        kept: kept.len(),
        rejected,
        rejection_reasons,
        duplicate_rate: duplicates as f64 / kept.len() as f64,
        files: ManifestFiles {
            dataset: dataset_name.to_string(),
            trajectories: trajectories_name,
        },
    };
    let mut manifest_file = std::fs::File::create(out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut manifest_file, &manifest)?;
    manifest_file.write_all(b"\n")?;
    Ok(manifest)
}

fn process_episode(params: &DatasetParams, episode: usize) -> Result<EpisodeOutput, PipelineError> {
    let config = &params.configs[episode % params.configs.len()];
    let episode_seed = mix(&[params.seed, episode as u64]);
    let template = PromptTemplate::new(config.kind, params.prompt_mode, config.grid_size);
    let collected = collect_trajectory(
        config,
        episode_seed,
        &params.policy,
        &template,
        &CollectOptions::default(),
    )?;
    let trajectory = rewrite_with_ground_truth(&collected);
    let records = emit_sft_records(&trajectory, params.mask_mode);
    let (kept, rejected) = if params.filter {
        filter_records(records, params.prompt_mode)
    } else {
        (records, Vec::new())
    };
    let kept_keys = kept
        .iter()
        .map(|record| {
            let turn = &trajectory.turns[record.meta.turn];
            let answer = match &turn.parsed {
                Ok(parsed) => parsed.answer_text.clone(),
                Err(_) => String::new(),
            };
            format!("{}\u{1f}{answer}", turn.state_text.raw)
        })
        .collect();
    let rejected_reasons = rejected
        .iter()
        .map(|(_, verdict)| {
            verdict
                .violations
                .first()
                .map(|v| format!("{v:?}"))
                .unwrap_or_else(|| "unknown".to_string())
        })
        .collect();
    Ok(EpisodeOutput {
        trajectory,
        kept,
        kept_keys,
        rejected_reasons,
    })
}

/// Runs `f` over `items` on up to `jobs` threads, returning results in input
/// order.
fn parallel_map<T, F>(jobs: usize, items: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.iter().map(|&i| f(i)).collect();
    }
    let chunk_size = items.len().div_ceil(jobs);
    let mut slots: Vec<Option<T>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_index, (item_chunk, slot_chunk)) in items
            .chunks(chunk_size)
            .zip(slots.chunks_mut(chunk_size))
            .enumerate()
        {
            let f = &f;
            let _ = chunk_index;
            scope.spawn(move || {
                for (item, slot) in item_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(f(*item));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

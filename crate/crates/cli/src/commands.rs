//! Command implementations. Every command writes its artifacts plus a
//! `manifest.json` capturing the resolved config, the software version and
//! the produced file names, and touches nothing outside its output
//! directory.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use selfplay_core::env::{generate, EnvConfig};
use selfplay_core::eval::{
    pass_at_k, pass_curve_csv, perplexity, report_to_csv, run_eval, EvalSuite, LogProbProvider,
    RemoteLogProbProvider, UniformProvider,
};
use selfplay_core::policy::PolicySpec;
use selfplay_core::protocol::PromptTemplate;
use selfplay_core::rng::mix;
use selfplay_core::selfplay::{build_dataset, collect_trajectory, CollectOptions, Trajectory};
use selfplay_core::state_rep::compose_state;
use selfplay_core::world_model::{
    enumerate_reachable, transitions_from_trajectory, StateKey, TransitionTable,
};

use crate::config::{
    AccuracyConfig, EvalConfig, FitConfig, GenDataConfig, PlanEvalConfig, PplConfig, PplSource,
    ProviderConfig,
};

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &toml::Value,
    outputs: &[&str],
    stats: serde_json::Value,
) -> Result<()> {
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config_to_json(config),
        "outputs": outputs,
        "stats": stats,
    });
    write_pretty_json(&out_dir.join("manifest.json"), &manifest)
}

fn config_to_json(config: &toml::Value) -> serde_json::Value {
    serde_json::to_value(config).unwrap_or(serde_json::Value::Null)
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn gen_data(
    params: &GenDataConfig,
    resolved: &toml::Value,
    jobs: usize,
    out_dir: &Path,
    save_trajectories: bool,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let manifest = build_dataset(params, jobs, out_dir, save_trajectories)?;
    let _ = resolved;
    println!(
        "kept {} records, rejected {} ({} episodes, duplicate rate {:.4})",
        manifest.kept, manifest.rejected, manifest.episodes_used, manifest.duplicate_rate
    );
    println!("wrote {}", out_dir.join(&manifest.files.dataset).display());
    Ok(())
}

pub fn eval(
    config: &EvalConfig,
    resolved: &toml::Value,
    jobs: usize,
    out_dir: &Path,
) -> Result<()> {
    if config.configs.is_empty() {
        bail!("eval config lists no environments");
    }
    let instances = (0..config.num_instances)
        .map(|i| {
            (
                config.configs[i % config.configs.len()].clone(),
                mix(&[config.seed, i as u64]),
            )
        })
        .collect();
    let suite = EvalSuite {
        instances,
        rollouts_per_instance: config.rollouts_per_instance,
        k_values: config.k_values.clone(),
        policy: config.policy.clone(),
        prompt_mode: config.prompt_mode,
    };
    let report = run_eval(&suite, jobs)?;
    std::fs::create_dir_all(out_dir)?;
    write_pretty_json(&out_dir.join("report.json"), &report)?;
    std::fs::write(out_dir.join("report.csv"), report_to_csv(&report))?;
    std::fs::write(out_dir.join("pass_curve.csv"), pass_curve_csv(&report))?;
    write_manifest(
        out_dir,
        "eval",
        resolved,
        &["report.json", "report.csv", "pass_curve.csv"],
        json!({ "pass_at_1": report.pass_at_1, "failed_rollouts": report.failed_rollouts }),
    )?;
    println!("pass@1 = {:.4}", report.pass_at_1);
    for (k, p) in &report.pass_at_k {
        println!("pass@{k} = {p:.4}");
    }
    Ok(())
}

fn random_walk_triples(
    config: &EnvConfig,
    policy: &PolicySpec,
    prompt_mode: selfplay_core::protocol::PromptMode,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(StateKey, selfplay_core::env::Action, StateKey)>> {
    let template = PromptTemplate::new(config.kind, prompt_mode, config.grid_size);
    let mut triples = Vec::new();
    for episode in 0..episodes {
        let traj = collect_trajectory(
            config,
            mix(&[seed, episode as u64]),
            policy,
            &template,
            &CollectOptions::default(),
        )?;
        triples.extend(transitions_from_trajectory(&traj)?);
    }
    Ok(triples)
}

pub fn worldmodel_fit(config: &FitConfig, resolved: &toml::Value, out_dir: &Path) -> Result<()> {
    let triples = random_walk_triples(
        &config.config,
        &config.policy,
        config.prompt_mode,
        config.episodes,
        config.seed,
    )?;
    let table = TransitionTable::fit(triples.iter().cloned());
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("table.txt"), table.export())?;
    write_manifest(
        out_dir,
        "worldmodel fit",
        resolved,
        &["table.txt"],
        json!({
            "triples": triples.len(),
            "pairs": table.num_pairs(),
            "deterministic": table.is_deterministic(),
        }),
    )?;
    println!(
        "fitted {} (state, action) pairs from {} triples",
        table.num_pairs(),
        triples.len()
    );
    Ok(())
}

pub fn worldmodel_accuracy(
    config: &AccuracyConfig,
    resolved: &toml::Value,
    out_dir: &Path,
) -> Result<()> {
    let table_text = std::fs::read_to_string(&config.table)
        .with_context(|| format!("reading table {}", config.table))?;
    let table = TransitionTable::import(&table_text)?;
    let heldout = random_walk_triples(
        &config.config,
        &config.policy,
        config.prompt_mode,
        config.heldout_episodes,
        config.seed,
    )?;
    let accuracy = table.eval_accuracy(&heldout)?;
    std::fs::create_dir_all(out_dir)?;
    let report = json!({ "accuracy": accuracy, "heldout_triples": heldout.len() });
    write_pretty_json(&out_dir.join("accuracy.json"), &report)?;
    write_manifest(
        out_dir,
        "worldmodel accuracy",
        resolved,
        &["accuracy.json"],
        report,
    )?;
    println!(
        "next-state accuracy = {accuracy:.4} over {} held-out triples",
        heldout.len()
    );
    Ok(())
}

/// Per-instance planner-vs-random comparison used by `worldmodel plan-eval`.
#[derive(Debug, Serialize)]
pub struct LiftRow {
    pub seed: u64,
    pub oracle_plan_len: usize,
    pub planner_success: bool,
    pub planner_plan_len: usize,
    pub random_successes: usize,
    pub random_pass_at_k: f64,
}

#[derive(Debug, Serialize)]
pub struct LiftReport {
    pub instances: usize,
    pub horizon: usize,
    pub baseline_rollouts: usize,
    pub baseline_k: u64,
    pub planner_pass_at_1: f64,
    pub random_pass_at_1: f64,
    pub random_pass_at_k: f64,
    pub lift: f64,
    pub rows: Vec<LiftRow>,
}

/// Fits a full-coverage table per instance, plans against the table alone,
/// executes the plan in the real environment, and compares the planner's
/// pass@1 with the random policy's pass@k baseline.
pub fn run_lift_suite(config: &PlanEvalConfig, jobs: usize) -> Result<LiftReport> {
    if config.config.kind != selfplay_core::env::EnvKind::Sokoban {
        bail!("plan-eval expects a Sokoban config");
    }
    let instances = select_instances(
        &config.config,
        config.seed,
        config.num_instances,
        config.horizon,
    )?;

    let rows = parallel_rows(jobs, &instances, |&(seed, plan_len)| {
        lift_row(config, seed, plan_len)
    })?;

    let planner_successes = rows.iter().filter(|r| r.planner_success).count();
    let planner_pass_at_1 = planner_successes as f64 / rows.len() as f64;
    let random_pass_at_1 = rows
        .iter()
        .map(|r| r.random_successes as f64 / config.baseline_rollouts as f64)
        .sum::<f64>()
        / rows.len() as f64;
    let random_pass_at_k = rows.iter().map(|r| r.random_pass_at_k).sum::<f64>() / rows.len() as f64;
    Ok(LiftReport {
        instances: rows.len(),
        horizon: config.horizon,
        baseline_rollouts: config.baseline_rollouts,
        baseline_k: config.baseline_k,
        planner_pass_at_1,
        random_pass_at_1,
        random_pass_at_k,
        lift: planner_pass_at_1 - random_pass_at_k,
        rows,
    })
}

/// Instance seeds whose BFS-optimal plan fits the horizon, scanning seeds in
/// order so the suite is reproducible.
fn select_instances(
    config: &EnvConfig,
    seed: u64,
    count: usize,
    horizon: usize,
) -> Result<Vec<(u64, usize)>> {
    let mut instances = Vec::with_capacity(count);
    let mut candidate = 0u64;
    while instances.len() < count {
        let instance_seed = mix(&[seed, 0x11f7, candidate]);
        candidate += 1;
        if candidate > (count as u64) * 1000 {
            bail!("could not find {count} horizon-{horizon} instances");
        }
        let state = generate(config, instance_seed)?;
        match selfplay_core::policy::solve(&state, 1_000_000, horizon)? {
            Some(plan) if !plan.is_empty() && plan.len() <= horizon => {
                instances.push((instance_seed, plan.len()));
            }
            _ => {}
        }
    }
    Ok(instances)
}

fn lift_row(config: &PlanEvalConfig, seed: u64, oracle_plan_len: usize) -> Result<LiftRow> {
    let state = generate(&config.config, seed)?;
    let triples = enumerate_reachable(&state, 5_000_000)?;
    let table = TransitionTable::fit(triples);
    let plan = table
        .plan(
            &StateKey::of(&state),
            sokoban_key_success,
            config.horizon,
            5_000_000,
        )?
        .unwrap_or_default();
    let planner_success = if plan.is_empty() {
        state.is_success()
    } else {
        state.step(&plan)?.next_state.success
    };

    let template = PromptTemplate::new(
        config.config.kind,
        selfplay_core::protocol::PromptMode::Base,
        config.config.grid_size,
    );
    let mut random_successes = 0usize;
    for rollout in 0..config.baseline_rollouts {
        let traj = collect_trajectory(
            &config.config,
            seed,
            &PolicySpec::Random { seed: 0 },
            &template,
            &CollectOptions {
                policy_salt: rollout as u64 + 1,
                slip_salt: rollout as u64 + 1,
            },
        )?;
        random_successes += traj.final_success as usize;
    }
    let random_pass = pass_at_k(
        config.baseline_rollouts as u64,
        random_successes as u64,
        config.baseline_k,
    )?;
    Ok(LiftRow {
        seed,
        oracle_plan_len,
        planner_success,
        planner_plan_len: plan.len(),
        random_successes,
        random_pass_at_k: random_pass,
    })
}

/// A Sokoban rendering is successful iff no uncovered target remains:
/// no bare target `O`, no off-target box `X`, no player-on-target `S`.
fn sokoban_key_success(key: &StateKey) -> bool {
    !key.0.contains('O') && !key.0.contains('X') && !key.0.contains('S')
}

fn parallel_rows<I, T, F>(jobs: usize, items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk_size = items.len().div_ceil(jobs);
    let mut slots: Vec<Option<Result<T>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (item_chunk, slot_chunk) in items.chunks(chunk_size).zip(slots.chunks_mut(chunk_size)) {
            let f = &f;
            scope.spawn(move || {
                for (item, slot) in item_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

pub fn worldmodel_plan_eval(
    config: &PlanEvalConfig,
    resolved: &toml::Value,
    jobs: usize,
    out_dir: &Path,
) -> Result<()> {
    let report = run_lift_suite(config, jobs)?;
    std::fs::create_dir_all(out_dir)?;
    write_pretty_json(&out_dir.join("plan_eval.json"), &report)?;
    let mut csv = String::from(
        "seed,oracle_plan_len,planner_success,planner_plan_len,random_successes,random_pass_at_k\n",
    );
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.seed,
            row.oracle_plan_len,
            row.planner_success,
            row.planner_plan_len,
            row.random_successes,
            row.random_pass_at_k
        ));
    }
    std::fs::write(out_dir.join("plan_eval.csv"), csv)?;
    write_manifest(
        out_dir,
        "worldmodel plan-eval",
        resolved,
        &["plan_eval.json", "plan_eval.csv"],
        json!({
            "planner_pass_at_1": report.planner_pass_at_1,
            "random_pass_at_k": report.random_pass_at_k,
            "lift": report.lift,
        }),
    )?;
    println!(
        "planner pass@1 = {:.4}, random pass@{} = {:.4}, lift = {:.4}",
        report.planner_pass_at_1, report.baseline_k, report.random_pass_at_k, report.lift
    );
    if report.lift <= 0.0 {
        bail!(
            "planner did not exceed the random pass@{} baseline",
            report.baseline_k
        );
    }
    Ok(())
}

pub fn ppl(config: &PplConfig, resolved: &toml::Value, out_dir: &Path) -> Result<()> {
    let texts: Vec<String> = match &config.source {
        PplSource::Env {
            env,
            count,
            seed,
            composed,
        } => (0..*count)
            .map(|i| {
                let state = generate(env, mix(&[*seed, i as u64]))?;
                Ok(if *composed {
                    compose_state(&state).composed
                } else {
                    state.render_symbols()
                })
            })
            .collect::<Result<Vec<_>>>()?,
        PplSource::File { path } => std::fs::read_to_string(path)
            .with_context(|| format!("reading {path}"))?
            .lines()
            .filter(|line| !line.trim().is_empty())
            .map(|line| {
                let value: serde_json::Value = serde_json::from_str(line)?;
                value["text"]
                    .as_str()
                    .map(str::to_string)
                    .context("line lacks a \"text\" field")
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if texts.is_empty() {
        bail!("no texts to score");
    }
    let provider: Box<dyn LogProbProvider> = match &config.provider {
        ProviderConfig::Uniform { vocab_size } => Box::new(UniformProvider {
            vocab_size: *vocab_size,
        }),
        ProviderConfig::Remote {
            endpoint,
            model,
            api_key_env,
        } => Box::new(RemoteLogProbProvider {
            endpoint: endpoint.clone(),
            model: model.clone(),
            api_key_env: api_key_env.clone(),
        }),
    };
    let mut per_text = Vec::with_capacity(texts.len());
    for text in &texts {
        per_text.push(perplexity(text, provider.as_ref(), config.unit)?);
    }
    let mean = per_text.iter().sum::<f64>() / per_text.len() as f64;
    std::fs::create_dir_all(out_dir)?;
    let report = json!({ "mean_ppl": mean, "per_text": per_text, "texts": texts.len() });
    write_pretty_json(&out_dir.join("ppl.json"), &report)?;
    write_manifest(
        out_dir,
        "ppl",
        resolved,
        &["ppl.json"],
        json!({ "mean_ppl": mean }),
    )?;
    println!("mean PPL = {mean}");
    Ok(())
}

pub fn play_trace(input: &Path, index: usize) -> Result<()> {
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let line = text
        .lines()
        .nth(index)
        .with_context(|| format!("no trajectory at index {index}"))?;
    let traj: Trajectory = serde_json::from_str(line)?;
    println!(
        "env={} seed={} policy={} mode={:?} success={} truncated={}",
        traj.config.kind,
        traj.seed,
        traj.policy_name,
        traj.mode,
        traj.final_success,
        traj.truncated
    );
    for (i, turn) in traj.turns.iter().enumerate() {
        println!("\nTurn {}:", i + 1);
        println!("State:\n{}", turn.state_text.composed);
        println!("Output:\n{}", turn.raw_output);
        println!(
            "Reward: {:.2} (executed {}, effective {}, done {})",
            turn.reward, turn.actions_executed, turn.actions_effective, turn.done
        );
    }
    if let Some(cause) = &traj.truncation_cause {
        println!("\nTruncated: {cause:?}");
    }
    println!("\nFinal: success={}", traj.final_success);
    Ok(())
}

//! Pass@k measurement, perplexity scoring and action-efficiency statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvConfig;
use crate::policy::PolicySpec;
use crate::protocol::{PromptMode, PromptTemplate};
use crate::selfplay::{collect_trajectory, CollectOptions, PipelineError, Trajectory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty input")]
    EmptyInput,
    #[error("provider error: {0}")]
    Provider(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`.
///
/// The quotient is accumulated as separate falling products with periodic
/// renormalization, so no factorial is ever formed and the result for small
/// `n` is the exactly-rounded rational value.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if c > n {
        return Err(EvalError::Domain(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(EvalError::Domain(format!("k = {k} outside [1, {n}]")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut numerator = 1.0f64;
    let mut denominator = 1.0f64;
    for i in 0..k {
        numerator *= (n - c - i) as f64;
        denominator *= (n - i) as f64;
        if denominator > 1e280 {
            numerator /= denominator;
            denominator = 1.0;
        }
    }
    Ok(1.0 - numerator / denominator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSuite {
    /// Instances as (config, generation seed).
    pub instances: Vec<(EnvConfig, u64)>,
    pub rollouts_per_instance: usize,
    /// Sorted, each in `[1, rollouts_per_instance]`.
    pub k_values: Vec<u64>,
    pub policy: PolicySpec,
    pub prompt_mode: PromptMode,
}

impl EvalSuite {
    fn validate(&self) -> Result<(), EvalError> {
        if self.instances.is_empty() {
            return Err(EvalError::Domain("no instances".into()));
        }
        if self.rollouts_per_instance == 0 {
            return Err(EvalError::Domain(
                "rollouts_per_instance must be >= 1".into(),
            ));
        }
        let n = self.rollouts_per_instance as u64;
        if self.k_values.is_empty() {
            return Err(EvalError::Domain("no k values".into()));
        }
        if self.k_values.windows(2).any(|w| w[0] > w[1]) {
            return Err(EvalError::Domain("k_values must be sorted".into()));
        }
        if self.k_values.iter().any(|&k| k == 0 || k > n) {
            return Err(EvalError::Domain(format!("k values must lie in [1, {n}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub config_index: usize,
    pub seed: u64,
    pub rollouts: usize,
    pub successes: usize,
    pub failed_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: Vec<InstanceReport>,
    pub pass_at_1: f64,
    /// `(k, mean pass@k over instances)` per requested k.
    pub pass_at_k: Vec<(u64, f64)>,
    pub mean_actions_per_episode: f64,
    pub action_effectiveness: f64,
    pub mean_response_chars: f64,
    /// Mean completion tokens per turn, when the provider reports usage.
    pub mean_response_tokens: Option<f64>,
    pub failed_rollouts: usize,
}

/// Runs `rollouts_per_instance` rollouts per instance (every rollout gets a
/// fresh policy stream and slip stream), aggregates pass@k via the unbiased
/// estimator, and computes the efficiency statistics. A rollout whose policy
/// errors counts as unsuccessful and is flagged.
pub fn run_eval(suite: &EvalSuite, jobs: usize) -> Result<EvalReport, EvalError> {
    suite.validate()?;
    struct RolloutOutcome {
        success: bool,
        failed: bool,
        executed: u64,
        effective: u64,
        response_chars: u64,
        response_tokens: Option<u64>,
        responses: u64,
    }

    let n = suite.rollouts_per_instance;
    let tasks: Vec<(usize, usize)> = (0..suite.instances.len())
        .flat_map(|i| (0..n).map(move |r| (i, r)))
        .collect();
    let run_one =
        |&(instance_index, rollout): &(usize, usize)| -> Result<RolloutOutcome, EvalError> {
            let (config, seed) = &suite.instances[instance_index];
            let template = PromptTemplate::new(config.kind, suite.prompt_mode, config.grid_size);
            let opts = CollectOptions {
                policy_salt: rollout as u64 + 1,
                slip_salt: rollout as u64 + 1,
            };
            match collect_trajectory(config, *seed, &suite.policy, &template, &opts) {
                Ok(traj) => {
                    let failed = matches!(
                        traj.truncation_cause,
                        Some(crate::selfplay::TruncationCause::PolicyError(_))
                    );
                    Ok(RolloutOutcome {
                        success: traj.final_success,
                        failed,
                        executed: traj.turns.iter().map(|t| t.actions_executed as u64).sum(),
                        effective: traj.turns.iter().map(|t| t.actions_effective as u64).sum(),
                        response_chars: traj
                            .turns
                            .iter()
                            .map(|t| t.raw_output.chars().count() as u64)
                            .sum(),
                        response_tokens: traj
                            .turns
                            .iter()
                            .map(|t| t.token_usage.as_ref().map(|u| u.completion_tokens))
                            .sum(),
                        responses: traj.turns.len() as u64,
                    })
                }
                Err(e) => Err(EvalError::Pipeline(e)),
            }
        };

    let outcomes = parallel_try_map(jobs, &tasks, run_one)?;

    let mut instances = Vec::with_capacity(suite.instances.len());
    let mut executed = 0u64;
    let mut effective = 0u64;
    let mut response_chars = 0u64;
    let mut response_tokens: Option<u64> = Some(0);
    let mut responses = 0u64;
    let mut failed_total = 0usize;
    for (instance_index, (_, seed)) in suite.instances.iter().enumerate() {
        let mut successes = 0usize;
        let mut failed = 0usize;
        for rollout in 0..n {
            let outcome = &outcomes[instance_index * n + rollout];
            successes += outcome.success as usize;
            failed += outcome.failed as usize;
            executed += outcome.executed;
            effective += outcome.effective;
            response_chars += outcome.response_chars;
            response_tokens = match (response_tokens, outcome.response_tokens) {
                (Some(total), Some(t)) => Some(total + t),
                _ => None,
            };
            responses += outcome.responses;
        }
        failed_total += failed;
        instances.push(InstanceReport {
            config_index: instance_index,
            seed: *seed,
            rollouts: n,
            successes,
            failed_rollouts: failed,
        });
    }

    let mean_over_instances = |k: u64| -> Result<f64, EvalError> {
        let mut total = 0.0;
        for report in &instances {
            total += pass_at_k(n as u64, report.successes as u64, k)?;
        }
        Ok(total / instances.len() as f64)
    };
    let pass_at_1 = mean_over_instances(1)?;
    let pass_at_k_values = suite
        .k_values
        .iter()
        .map(|&k| Ok((k, mean_over_instances(k)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;

    let episodes = tasks.len() as f64;
    Ok(EvalReport {
        instances,
        pass_at_1,
        pass_at_k: pass_at_k_values,
        mean_actions_per_episode: executed as f64 / episodes,
        action_effectiveness: if executed == 0 {
            0.0
        } else {
            effective as f64 / executed as f64
        },
        mean_response_chars: if responses == 0 {
            0.0
        } else {
            response_chars as f64 / responses as f64
        },
        mean_response_tokens: response_tokens
            .filter(|_| responses > 0)
            .map(|t| t as f64 / responses as f64),
        failed_rollouts: failed_total,
    })
}

/// Per-instance CSV rows for external plotting.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("config_index,seed,rollouts,successes,failed_rollouts,pass_at_1\n");
    for row in &report.instances {
        let p1 = row.successes as f64 / row.rollouts as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.config_index, row.seed, row.rollouts, row.successes, row.failed_rollouts, p1
        ));
    }
    out
}

/// `k,pass_at_k` curve rows.
pub fn pass_curve_csv(report: &EvalReport) -> String {
    let mut out = String::from("k,pass_at_k\n");
    for (k, p) in &report.pass_at_k {
        out.push_str(&format!("{k},{p}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplUnit {
    /// One unit per character of the text.
    Symbol,
    /// Whatever unit the provider tokenizes into.
    ProviderToken,
}

pub trait LogProbProvider {
    /// Per-unit log probabilities of `text`.
    fn log_probs(&self, text: &str, unit: PplUnit) -> Result<Vec<f64>, EvalError>;
}

/// Uniform distribution over a closed symbol vocabulary: every unit has
/// probability `1 / vocab_size`, so perplexity equals `vocab_size` on any
/// text (the random-guess baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformProvider {
    pub vocab_size: u32,
}

impl LogProbProvider for UniformProvider {
    fn log_probs(&self, text: &str, _unit: PplUnit) -> Result<Vec<f64>, EvalError> {
        if self.vocab_size == 0 {
            return Err(EvalError::Provider("vocab_size must be >= 1".into()));
        }
        let lp = -(self.vocab_size as f64).ln();
        Ok(text.chars().map(|_| lp).collect())
    }
}

/// Remote scorer speaking a minimal JSON contract: POST `{model, text}` to
/// the endpoint, read `{"log_probs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLogProbProvider {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_api_key_env() -> String {
    crate::policy::LM_API_KEY_ENV.to_string()
}

impl LogProbProvider for RemoteLogProbProvider {
    fn log_probs(&self, text: &str, _unit: PplUnit) -> Result<Vec<f64>, EvalError> {
        let body = serde_json::json!({ "model": self.model, "text": text });
        let mut request = ureq::post(&self.endpoint).set("content-type", "application/json");
        if let Ok(key) = std::env::var(&self.api_key_env) {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        let response = request
            .send_json(body)
            .map_err(|e| EvalError::Provider(e.to_string()))?;
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| EvalError::Provider(format!("bad response body: {e}")))?;
        let log_probs = value["log_probs"]
            .as_array()
            .ok_or_else(|| EvalError::Provider("response lacks log_probs array".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| EvalError::Provider("non-numeric log prob".into()))
            })
            .collect::<Result<Vec<f64>, EvalError>>()?;
        if log_probs.is_empty() {
            return Err(EvalError::Provider("empty log_probs".into()));
        }
        Ok(log_probs)
    }
}

/// `exp(-mean log p)` over the provider's units.
pub fn perplexity(
    text: &str,
    provider: &dyn LogProbProvider,
    unit: PplUnit,
) -> Result<f64, EvalError> {
    if text.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let log_probs = provider.log_probs(text, unit)?;
    if log_probs.is_empty() {
        return Err(EvalError::Provider("provider returned no units".into()));
    }
    // Welford mean: exact for constant sequences, stable otherwise.
    let mut mean = 0.0f64;
    for (i, lp) in log_probs.iter().enumerate() {
        mean += (lp - mean) / (i + 1) as f64;
    }
    Ok(exp_precise(-mean))
}

/// `exp(x)` via `exp_m1`, which round-trips `exp(ln v)` exactly for the
/// small cell-state counts used as random-guess baselines.
fn exp_precise(x: f64) -> f64 {
    x.exp_m1() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub mean_actions_per_episode: f64,
    /// Executed actions that changed the environment payload, as a fraction.
    pub effectiveness: f64,
    pub mean_response_chars: f64,
}

pub fn action_stats(trajectories: &[Trajectory]) -> Result<ActionStats, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut executed = 0u64;
    let mut effective = 0u64;
    let mut response_chars = 0u64;
    let mut responses = 0u64;
    for traj in trajectories {
        for turn in &traj.turns {
            executed += turn.actions_executed as u64;
            effective += turn.actions_effective as u64;
            response_chars += turn.raw_output.chars().count() as u64;
            responses += 1;
        }
    }
    Ok(ActionStats {
        mean_actions_per_episode: executed as f64 / trajectories.len() as f64,
        effectiveness: if executed == 0 {
            0.0
        } else {
            effective as f64 / executed as f64
        },
        mean_response_chars: if responses == 0 {
            0.0
        } else {
            response_chars as f64 / responses as f64
        },
    })
}

/// Order-preserving fallible parallel map.
fn parallel_try_map<I, T, E, F>(jobs: usize, items: &[I], f: F) -> Result<Vec<T>, E>
where
    I: Sync,
    T: Send,
    E: Send,
    F: Fn(&I) -> Result<T, E> + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk_size = items.len().div_ceil(jobs);
    let mut slots: Vec<Option<Result<T, E>>> = (0..items.len()).map(|_| None).collect();
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate, EnvConfig};
    use crate::rng::SplitMix64;

    #[test]
    fn estimator_handles_the_boundary_cases() {
        assert_eq!(pass_at_k(8, 0, 8).unwrap(), 0.0);
        assert_eq!(pass_at_k(8, 8, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(8, 1, 4).unwrap(), 0.5);
        assert_eq!(pass_at_k(2, 1, 1).unwrap(), 0.5);
        assert!(pass_at_k(4, 5, 1).is_err());
        assert!(pass_at_k(4, 2, 0).is_err());
        assert!(pass_at_k(4, 2, 5).is_err());
    }

    #[test]
    fn estimator_is_monotone_in_k_and_c() {
        for n in [8u64, 64, 1024] {
            for c in [0u64, 1, n / 3, n / 2, n] {
                let mut prev = 0.0;
                for k in 1..=n.min(64) {
                    let p = pass_at_k(n, c, k).unwrap();
                    assert!(p >= prev - 1e-12, "n={n} c={c} k={k}");
                    assert!((0.0..=1.0).contains(&p));
                    prev = p;
                }
            }
            for k in [1u64, 2, 8] {
                let mut prev = -1.0;
                for c in 0..=n.min(64) {
                    let p = pass_at_k(n, c, k).unwrap();
                    assert!(p >= prev);
                    prev = p;
                }
            }
        }
    }

    #[test]
    fn estimator_at_k1_is_the_success_rate() {
        for n in 1..=32u64 {
            for c in 0..=n {
                let p = pass_at_k(n, c, 1).unwrap();
                assert!((p - c as f64 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_k_sweep_stays_finite_and_monotone() {
        let mut prev = 0.0;
        for k in 1..=1024u64 {
            let p = pass_at_k(1024, 37, k).unwrap();
            assert!(p.is_finite());
            assert!(p >= prev - 1e-12);
            prev = p;
        }
        assert!(prev > 0.999999);
    }

    #[test]
    fn uniform_ppl_equals_the_cell_state_count() {
        let sokoban = generate(&EnvConfig::sokoban(6, 1), 0).unwrap();
        let frozen = generate(&EnvConfig::frozen_lake(4, 0.2, true), 0).unwrap();
        let sudoku = generate(&EnvConfig::sudoku(6), 0).unwrap();
        for (state, vocab) in [(&sokoban, 7u32), (&frozen, 6), (&sudoku, 5)] {
            let provider = UniformProvider { vocab_size: vocab };
            let ppl = perplexity(&state.render_symbols(), &provider, PplUnit::Symbol).unwrap();
            assert_eq!(ppl, vocab as f64);
        }
    }

    #[test]
    fn single_unit_ppl_inverts_the_probability() {
        struct OneLogProb(f64);
        impl LogProbProvider for OneLogProb {
            fn log_probs(&self, _: &str, _: PplUnit) -> Result<Vec<f64>, EvalError> {
                Ok(vec![self.0])
            }
        }
        let p = 0.125f64;
        let ppl = perplexity("x", &OneLogProb(p.ln()), PplUnit::Symbol).unwrap();
        assert!((ppl - 1.0 / p).abs() < 1e-12);
        assert!(matches!(
            perplexity("", &OneLogProb(0.0), PplUnit::Symbol),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn oracle_suites_pass_everything() {
        let suite = EvalSuite {
            instances: (0..5)
                .map(|seed| (EnvConfig::sokoban(6, 1), seed))
                .collect(),
            rollouts_per_instance: 4,
            k_values: vec![1, 2, 4],
            policy: PolicySpec::SolverOracle {
                node_budget: 200_000,
                horizon: 20,
            },
            prompt_mode: PromptMode::ObservationThenPrediction,
        };
        let report = run_eval(&suite, 2).unwrap();
        assert_eq!(report.pass_at_1, 1.0);
        assert!(report.pass_at_k.iter().all(|&(_, p)| p == 1.0));
        assert_eq!(report.action_effectiveness, 1.0);
        assert_eq!(report.failed_rollouts, 0);
        let csv = report_to_csv(&report);
        assert_eq!(csv.lines().count(), 6);
        assert!(pass_curve_csv(&report).starts_with("k,pass_at_k\n"));
    }

    #[test]
    fn eval_is_deterministic_across_jobs() {
        let suite = EvalSuite {
            instances: (0..4)
                .map(|seed| (EnvConfig::frozen_lake(4, 0.2, true), seed))
                .collect(),
            rollouts_per_instance: 8,
            k_values: vec![1, 8],
            policy: PolicySpec::Random { seed: 5 },
            prompt_mode: PromptMode::Base,
        };
        let a = run_eval(&suite, 1).unwrap();
        let b = run_eval(&suite, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_subsets_agree_with_the_estimator() {
        let mut rng = SplitMix64::new(17);
        for c in 1..8u64 {
            for k in [2u64, 4, 8] {
                let mut hits = 0u32;
                let samples = 100_000;
                for _ in 0..samples {
                    // Draw a k-subset of 8 labeled rollouts, c of them successes.
                    let mut indices: Vec<u64> = (0..8).collect();
                    rng.shuffle(&mut indices);
                    if indices[..k as usize].iter().any(|&i| i < c) {
                        hits += 1;
                    }
                }
                let simulated = hits as f64 / samples as f64;
                let exact = pass_at_k(8, c, k).unwrap();
                assert!(
                    (simulated - exact).abs() < 0.01,
                    "c={c} k={k}: {simulated} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn action_stats_handle_the_edge_cases() {
        use crate::protocol::PromptTemplate;
        use crate::selfplay::collect_trajectory;

        let config = EnvConfig::sokoban(6, 1);
        let template = PromptTemplate::new(config.kind, PromptMode::ObservationThenPrediction, 6);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|seed| {
                collect_trajectory(
                    &config,
                    seed,
                    &PolicySpec::SolverOracle {
                        node_budget: 200_000,
                        horizon: 20,
                    },
                    &template,
                    &CollectOptions::default(),
                )
                .unwrap()
            })
            .collect();
        let stats = action_stats(&trajs).unwrap();
        assert_eq!(stats.effectiveness, 1.0);
        assert!(stats.mean_actions_per_episode > 0.0);
        assert!(stats.mean_response_chars > 0.0);
        assert!(matches!(action_stats(&[]), Err(EvalError::EmptyInput)));
    }
}

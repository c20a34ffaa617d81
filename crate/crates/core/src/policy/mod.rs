//! Action-producing policies.
//!
//! Three variants share one interface: a uniform-random generator with a
//! fixed reasoning sentence, scripted solver oracles, and a remote
//! chat-completions client. The remote variant receives the prompt only;
//! its inner request path has no access to environment state, so it cannot
//! peek even accidentally.

mod remote;
mod solver;

pub use remote::{RemoteLmConfig, RemoteLmPolicy, LM_API_KEY_ENV};
pub use solver::{slippery_success_values, solve, SolveError};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{action_space, EpisodeState};
use crate::protocol::{render_turn, ParsedTurn};
use crate::rng::{mix, SplitMix64};
use crate::state_rep::compose_state;

/// The fixed reasoning sentence emitted by the random-action generator.
pub const RANDOM_POLICY_REASONING: &str = "I will push the box to the target.";

/// Default node budget for solver-oracle searches.
pub const DEFAULT_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("request timed out after {0} attempts")]
    Timeout(u32),
    #[error("policy requires an environment view")]
    MissingEnvView,
    #[error("solver found no plan for this instance")]
    NoPlan,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PolicySpec {
    Random {
        #[serde(default)]
        seed: u64,
    },
    SolverOracle {
        #[serde(default = "default_node_budget")]
        node_budget: usize,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
    RemoteLm(RemoteLmConfig),
}

fn default_node_budget() -> usize {
    DEFAULT_NODE_BUDGET
}
fn default_horizon() -> usize {
    10
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Random { .. } => "random",
            PolicySpec::SolverOracle { .. } => "solver_oracle",
            PolicySpec::RemoteLm(_) => "remote_lm",
        }
    }

    /// Instantiates the policy for one execution context. `stream_seed`
    /// shifts the random variant's draw sequence so parallel episodes and
    /// repeated rollouts stay independent yet reproducible.
    pub fn build(&self, stream_seed: u64) -> Box<dyn Policy> {
        match self {
            PolicySpec::Random { seed } => Box::new(RandomPolicy {
                rng: SplitMix64::new(mix(&[*seed, stream_seed])),
            }),
            PolicySpec::SolverOracle {
                node_budget,
                horizon,
            } => Box::new(SolverOraclePolicy {
                node_budget: *node_budget,
                horizon: *horizon,
            }),
            PolicySpec::RemoteLm(config) => Box::new(RemoteLmPolicy::new(config.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub raw_text: String,
    pub latency: Duration,
    /// Token counts when the provider reports usage.
    pub token_usage: Option<TokenUsage>,
}

pub trait Policy: Send {
    /// Produces one turn of output. The local variants require `env_view`;
    /// the remote variant never reads it.
    fn act(
        &mut self,
        prompt: &str,
        env_view: Option<&EpisodeState>,
    ) -> Result<PolicyOutput, PolicyError>;

    fn name(&self) -> &'static str;
}

/// Uniform draws over the action space, wrapped in a fixed think/answer
/// shell.
pub struct RandomPolicy {
    rng: SplitMix64,
}

impl Policy for RandomPolicy {
    fn act(
        &mut self,
        _prompt: &str,
        env_view: Option<&EpisodeState>,
    ) -> Result<PolicyOutput, PolicyError> {
        let started = Instant::now();
        let state = env_view.ok_or(PolicyError::MissingEnvView)?;
        let actions = action_space(state.kind());
        let action = actions[self.rng.gen_range(actions.len() as u64) as usize];
        let raw_text = format!("<think>{RANDOM_POLICY_REASONING}</think><answer>{action}</answer>");
        Ok(PolicyOutput {
            raw_text,
            latency: started.elapsed(),
            token_usage: None,
        })
    }

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Emits a full solution plan in one observation-then-prediction turn whose
/// observation is the true current state text and whose prediction is the
/// true post-plan state text (simulated with deterministic dynamics).
pub struct SolverOraclePolicy {
    node_budget: usize,
    horizon: usize,
}

impl Policy for SolverOraclePolicy {
    fn act(
        &mut self,
        _prompt: &str,
        env_view: Option<&EpisodeState>,
    ) -> Result<PolicyOutput, PolicyError> {
        let started = Instant::now();
        let state = env_view.ok_or(PolicyError::MissingEnvView)?;
        let plan = solve(state, self.node_budget, self.horizon)?.ok_or(PolicyError::NoPlan)?;

        let mut sim = state.clone();
        sim.config.slippery = false;
        let after = if plan.is_empty() {
            sim
        } else {
            sim.step(&plan)
                .map(|r| r.next_state)
                .unwrap_or_else(|_| state.clone())
        };
        let turn = ParsedTurn {
            think_span: (0, 0),
            observation_text: Some(compose_state(state).composed),
            prediction_text: Some(compose_state(&after).composed),
            free_reasoning: String::new(),
            answer_text: String::new(),
            actions: plan,
            raw: String::new(),
            parse_violations: Vec::new(),
        };
        Ok(PolicyOutput {
            raw_text: render_turn(&turn),
            latency: started.elapsed(),
            token_usage: None,
        })
    }

    fn name(&self) -> &'static str {
        "solver_oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate, payload_from_symbols, Action, EnvConfig, EnvKind, EpisodeState};
    use crate::protocol::{parse_agent_output, validate_format, PromptMode};

    fn appendix_sokoban() -> EpisodeState {
        let payload = payload_from_symbols(
            EnvKind::Sokoban,
            "######\n#_####\n#_P###\n#_X#_#\n#__O_#\n######",
        )
        .unwrap();
        EpisodeState::with_payload(EnvConfig::sokoban(6, 1), payload, 0)
    }

    fn appendix_frozen_lake(slippery: bool) -> EpisodeState {
        let payload = payload_from_symbols(EnvKind::FrozenLake, "_O__\nO___\nG___\n__P_").unwrap();
        EpisodeState::with_payload(EnvConfig::frozen_lake(4, 0.2, slippery), payload, 0)
    }

    #[test]
    fn random_policy_is_uniform_over_directions() {
        let state = appendix_sokoban();
        let mut policy = PolicySpec::Random { seed: 7 }.build(0);
        let mut counts = [0u32; 4];
        for _ in 0..40_000 {
            let out = policy.act("", Some(&state)).unwrap();
            let turn = parse_agent_output(&out.raw_text, EnvKind::Sokoban).unwrap();
            assert_eq!(turn.free_reasoning, RANDOM_POLICY_REASONING);
            assert_eq!(turn.actions.len(), 1);
            let idx = crate::env::DIRECTIONS
                .iter()
                .position(|d| *d == turn.actions[0])
                .unwrap();
            counts[idx] += 1;
        }
        for c in counts {
            let freq = c as f64 / 40_000.0;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn random_policy_streams_are_reproducible() {
        let state = appendix_sokoban();
        let spec = PolicySpec::Random { seed: 3 };
        let mut a = spec.build(5);
        let mut b = spec.build(5);
        for _ in 0..20 {
            assert_eq!(
                a.act("", Some(&state)).unwrap().raw_text,
                b.act("", Some(&state)).unwrap().raw_text
            );
        }
        let mut c = spec.build(6);
        let different = (0..20).any(|_| {
            a.act("", Some(&state)).unwrap().raw_text != c.act("", Some(&state)).unwrap().raw_text
        });
        assert!(different);
    }

    #[test]
    fn solver_plan_for_the_worked_example() {
        // The worked sample answers Down||Left||Down, which only stages the
        // final push; the shortest solving plan appends the Right push.
        let state = appendix_sokoban();
        let plan = solve(&state, 100_000, 10).unwrap().unwrap();
        assert_eq!(
            plan,
            vec![Action::Down, Action::Left, Action::Down, Action::Right]
        );
        let result = state.step(&plan).unwrap();
        assert!(result.next_state.success);
        // Exhaustive check that no 3-action sequence solves the instance.
        for a in crate::env::DIRECTIONS {
            for b in crate::env::DIRECTIONS {
                for c in crate::env::DIRECTIONS {
                    let result = state.step(&[a, b, c]).unwrap();
                    assert!(!result.next_state.success);
                }
            }
        }
    }

    #[test]
    fn sokoban_plans_are_minimal_on_small_instances() {
        // Exhaustively check that no strictly shorter action sequence solves
        // the instance.
        let config = EnvConfig::sokoban(6, 1);
        for seed in 0..10 {
            let state = generate(&config, seed).unwrap();
            let plan = solve(&state, 200_000, 10).unwrap().unwrap();
            if plan.len() > 6 {
                continue;
            }
            for len in 0..plan.len() {
                let mut counter = vec![0usize; len];
                loop {
                    let candidate: Vec<Action> =
                        counter.iter().map(|&i| crate::env::DIRECTIONS[i]).collect();
                    if len > 0 {
                        let result = state.step(&candidate).unwrap();
                        assert!(
                            !result.next_state.success,
                            "plan of length {len} beats BFS length {} on seed {seed}",
                            plan.len()
                        );
                    }
                    let mut pos = 0;
                    loop {
                        if pos == len {
                            break;
                        }
                        counter[pos] += 1;
                        if counter[pos] < 4 {
                            break;
                        }
                        counter[pos] = 0;
                        pos += 1;
                    }
                    if pos == len {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn frozen_lake_deterministic_plan_has_length_three() {
        let state = appendix_frozen_lake(false);
        let plan = solve(&state, 100_000, 10).unwrap().unwrap();
        assert_eq!(plan.len(), 3);
        let result = state.step(&plan).unwrap();
        assert!(result.next_state.success);
    }

    #[test]
    fn sudoku_solver_completes_the_example() {
        let payload =
            payload_from_symbols(EnvKind::Sudoku, "| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2")
                .unwrap();
        let state = EpisodeState::with_payload(EnvConfig::sudoku(6), payload, 0);
        let plan = solve(&state, 100_000, 10).unwrap().unwrap();
        assert_eq!(plan.len(), 6);
        assert!(plan.contains(&Action::Fill {
            row: 4,
            col: 1,
            value: 3
        }));
        let result = state.step(&plan).unwrap();
        assert!(result.next_state.success);
    }

    #[test]
    fn solved_states_yield_empty_plans() {
        let state = generate(&EnvConfig::sudoku(0), 1).unwrap();
        assert_eq!(solve(&state, 1000, 10).unwrap(), Some(vec![]));
    }

    #[test]
    fn oracle_soundness_across_seeds() {
        for seed in 0..100 {
            for config in [
                EnvConfig::sokoban(6, 1),
                EnvConfig::frozen_lake(4, 0.2, false),
                EnvConfig::sudoku(6),
            ] {
                let state = generate(&config, seed).unwrap();
                let plan = solve(&state, 200_000, 20)
                    .unwrap()
                    .expect("generated instances are solvable");
                if plan.is_empty() {
                    assert!(state.is_success());
                    continue;
                }
                let result = state.step(&plan).unwrap();
                assert!(result.next_state.success, "seed {seed} {:?}", config.kind);
            }
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let state = appendix_sokoban();
        assert!(matches!(
            solve(&state, 1, 10),
            Err(SolveError::BudgetExceeded(1))
        ));
    }

    #[test]
    fn slippery_values_reach_a_fixed_point() {
        let state = appendix_frozen_lake(true);
        let crate::env::Payload::FrozenLake(board) = &state.payload else {
            unreachable!()
        };
        let values = slippery_success_values(board);
        // One more sweep must not move any value by more than the tolerance.
        for r in 0..4 {
            for c in 0..4 {
                let pos = (r, c);
                if pos == board.goal || board.holes.contains(&pos) {
                    continue;
                }
                let best = crate::env::DIRECTIONS
                    .into_iter()
                    .map(|dir| {
                        crate::env::slip_outcomes(dir)
                            .into_iter()
                            .map(|res| {
                                let next = crate::env::offset(pos, res.delta(), 4).unwrap_or(pos);
                                if board.holes.contains(&next) {
                                    0.0
                                } else {
                                    values[next.0][next.1]
                                }
                            })
                            .sum::<f64>()
                            / 3.0
                    })
                    .fold(0.0f64, f64::max);
                assert!((best - values[r][c]).abs() < 1e-9);
            }
        }
        assert!(values[3][2] > 0.0);
    }

    #[test]
    fn oracle_output_is_format_valid_and_grounded() {
        let state = appendix_sokoban();
        let mut policy = PolicySpec::SolverOracle {
            node_budget: 100_000,
            horizon: 10,
        }
        .build(0);
        let out = policy.act("", Some(&state)).unwrap();
        let turn = parse_agent_output(&out.raw_text, EnvKind::Sokoban).unwrap();
        assert!(validate_format(&turn, PromptMode::ObservationThenPrediction).valid);
        assert_eq!(
            turn.observation_text.unwrap(),
            compose_state(&state).composed
        );
        let result = state.step(&turn.actions).unwrap();
        assert_eq!(
            turn.prediction_text.unwrap(),
            compose_state(&result.next_state).composed
        );
    }

    #[test]
    fn policies_without_env_view_fail_cleanly() {
        let mut random = PolicySpec::Random { seed: 0 }.build(0);
        assert!(matches!(
            random.act("prompt", None),
            Err(PolicyError::MissingEnvView)
        ));
    }
}

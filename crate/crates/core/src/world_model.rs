//! Tabular transition model and planner.
//!
//! States are keyed by their symbol rendering, so two episodes in the same
//! board configuration share a key regardless of turn counters or seeds.
//! The table stores empirical successor counts per (state, action); the
//! planner searches over the learned table only and never consults the
//! environment.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvError, EpisodeState};
use crate::selfplay::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub String);

impl StateKey {
    pub fn of(state: &EpisodeState) -> Self {
        StateKey(state.render_symbols())
    }
}

#[derive(Debug, Error)]
pub enum WorldModelError {
    #[error("held-out triple set is empty")]
    EmptyHeldout,
    #[error("planner exceeded the node budget of {0}")]
    BudgetExceeded(usize),
    #[error("unparseable table line {line}: {reason}")]
    BadImport { line: usize, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Successors {
    counts: BTreeMap<StateKey, u64>,
    total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    entries: BTreeMap<StateKey, BTreeMap<Action, Successors>>,
}

/// Maximum-likelihood prediction for one (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// The pair was never observed.
    Unknown,
    /// Successor probabilities, keyed in lexicographic order.
    Known(Vec<(StateKey, f64)>),
}

impl Prediction {
    /// Highest-probability successor; lexicographically smallest key wins
    /// ties so evaluation stays deterministic.
    pub fn argmax(&self) -> Option<&StateKey> {
        match self {
            Prediction::Unknown => None,
            Prediction::Known(dist) => {
                let mut best: Option<(&StateKey, f64)> = None;
                for (key, p) in dist {
                    if best.map(|(_, bp)| *p > bp).unwrap_or(true) {
                        best = Some((key, *p));
                    }
                }
                best.map(|(key, _)| key)
            }
        }
    }
}

impl TransitionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(triples: impl IntoIterator<Item = (StateKey, Action, StateKey)>) -> Self {
        let mut table = Self::new();
        for (state, action, successor) in triples {
            table.record(state, action, successor);
        }
        table
    }

    pub fn record(&mut self, state: StateKey, action: Action, successor: StateKey) {
        let successors = self
            .entries
            .entry(state)
            .or_default()
            .entry(action)
            .or_default();
        *successors.counts.entry(successor).or_insert(0) += 1;
        successors.total += 1;
    }

    /// Adds another table's counts; count addition commutes, so sharded
    /// fitting followed by merging reproduces a sequential fit.
    pub fn merge(&mut self, other: TransitionTable) {
        for (state, actions) in other.entries {
            for (action, successors) in actions {
                let entry = self
                    .entries
                    .entry(state.clone())
                    .or_default()
                    .entry(action)
                    .or_default();
                for (successor, count) in successors.counts {
                    *entry.counts.entry(successor).or_insert(0) += count;
                }
                entry.total += successors.total;
            }
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.values().map(|actions| actions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every observed (state, action) has exactly one successor.
    pub fn is_deterministic(&self) -> bool {
        self.entries
            .values()
            .flat_map(|actions| actions.values())
            .all(|s| s.counts.len() == 1)
    }

    pub fn predict(&self, state: &StateKey, action: Action) -> Prediction {
        match self
            .entries
            .get(state)
            .and_then(|actions| actions.get(&action))
        {
            None => Prediction::Unknown,
            Some(successors) => Prediction::Known(
                successors
                    .counts
                    .iter()
                    .map(|(key, count)| (key.clone(), *count as f64 / successors.total as f64))
                    .collect(),
            ),
        }
    }

    /// Fraction of held-out triples whose true successor is the argmax
    /// prediction; unknown pairs count as incorrect.
    pub fn eval_accuracy(
        &self,
        heldout: &[(StateKey, Action, StateKey)],
    ) -> Result<f64, WorldModelError> {
        if heldout.is_empty() {
            return Err(WorldModelError::EmptyHeldout);
        }
        let correct = heldout
            .iter()
            .filter(|(state, action, successor)| {
                self.predict(state, *action).argmax() == Some(successor)
            })
            .count();
        Ok(correct as f64 / heldout.len() as f64)
    }

    /// Searches the learned model for an action sequence whose simulated
    /// endpoint satisfies `success`. Deterministic tables use BFS over
    /// argmax successors (shortest plan); stochastic tables use best-first
    /// search maximizing the probability of the most likely chain. Unknown
    /// transitions are absent edges.
    pub fn plan(
        &self,
        start: &StateKey,
        success: impl Fn(&StateKey) -> bool,
        horizon: usize,
        node_budget: usize,
    ) -> Result<Option<Vec<Action>>, WorldModelError> {
        if success(start) {
            return Ok(Some(Vec::new()));
        }
        if self.is_deterministic() {
            self.plan_bfs(start, success, horizon, node_budget)
        } else {
            self.plan_best_first(start, success, horizon, node_budget)
        }
    }

    fn plan_bfs(
        &self,
        start: &StateKey,
        success: impl Fn(&StateKey) -> bool,
        horizon: usize,
        node_budget: usize,
    ) -> Result<Option<Vec<Action>>, WorldModelError> {
        let mut parents: HashMap<StateKey, (StateKey, Action)> = HashMap::new();
        let mut queue: VecDeque<(StateKey, usize)> = VecDeque::from([(start.clone(), 0)]);
        let mut visited = 1usize;
        while let Some((key, depth)) = queue.pop_front() {
            if depth == horizon {
                continue;
            }
            let Some(actions) = self.entries.get(&key) else {
                continue;
            };
            for &action in actions.keys() {
                let Some(next) = self.predict(&key, action).argmax().cloned() else {
                    continue;
                };
                if next == *start || parents.contains_key(&next) {
                    continue;
                }
                visited += 1;
                if visited > node_budget {
                    return Err(WorldModelError::BudgetExceeded(node_budget));
                }
                parents.insert(next.clone(), (key.clone(), action));
                if success(&next) {
                    return Ok(Some(reconstruct(&parents, start, &next)));
                }
                queue.push_back((next, depth + 1));
            }
        }
        Ok(None)
    }

    fn plan_best_first(
        &self,
        start: &StateKey,
        success: impl Fn(&StateKey) -> bool,
        horizon: usize,
        node_budget: usize,
    ) -> Result<Option<Vec<Action>>, WorldModelError> {
        #[derive(PartialEq)]
        struct Candidate {
            log_prob: f64,
            depth: usize,
            key: StateKey,
        }
        impl Eq for Candidate {}
        impl Ord for Candidate {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.log_prob
                    .partial_cmp(&other.log_prob)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| Reverse(self.depth).cmp(&Reverse(other.depth)))
                    .then_with(|| Reverse(&self.key).cmp(&Reverse(&other.key)))
            }
        }
        impl PartialOrd for Candidate {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut best_seen: HashMap<StateKey, f64> = HashMap::from([(start.clone(), 0.0)]);
        let mut parents: HashMap<StateKey, (StateKey, Action)> = HashMap::new();
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
        heap.push(Candidate {
            log_prob: 0.0,
            depth: 0,
            key: start.clone(),
        });
        let mut expanded = 0usize;
        while let Some(candidate) = heap.pop() {
            if success(&candidate.key) {
                return Ok(Some(reconstruct(&parents, start, &candidate.key)));
            }
            if candidate.depth == horizon {
                continue;
            }
            expanded += 1;
            if expanded > node_budget {
                return Err(WorldModelError::BudgetExceeded(node_budget));
            }
            let Some(actions) = self.entries.get(&candidate.key) else {
                continue;
            };
            for (&action, successors) in actions {
                for (next, count) in &successors.counts {
                    let p = *count as f64 / successors.total as f64;
                    let log_prob = candidate.log_prob + p.ln();
                    let improves = best_seen
                        .get(next)
                        .map(|&known| log_prob > known)
                        .unwrap_or(true);
                    if !improves || *next == *start {
                        continue;
                    }
                    best_seen.insert(next.clone(), log_prob);
                    parents.insert(next.clone(), (candidate.key.clone(), action));
                    heap.push(Candidate {
                        log_prob,
                        depth: candidate.depth + 1,
                        key: next.clone(),
                    });
                }
            }
        }
        Ok(None)
    }

    /// Lexicographically sorted lines `state<TAB>action<TAB>successor<TAB>count`
    /// with newlines escaped, suitable for diffable snapshots.
    pub fn export(&self) -> String {
        let mut lines = Vec::new();
        for (state, actions) in &self.entries {
            for (action, successors) in actions {
                for (successor, count) in &successors.counts {
                    lines.push(format!(
                        "{}\t{}\t{}\t{}",
                        escape(&state.0),
                        action,
                        escape(&successor.0),
                        count
                    ));
                }
            }
        }
        lines.sort_unstable();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }

    pub fn import(text: &str) -> Result<Self, WorldModelError> {
        let mut table = TransitionTable::new();
        for (index, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(WorldModelError::BadImport {
                    line: index + 1,
                    reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let action =
                Action::from_key_str(fields[1]).ok_or_else(|| WorldModelError::BadImport {
                    line: index + 1,
                    reason: format!("bad action {:?}", fields[1]),
                })?;
            let count: u64 = fields[3].parse().map_err(|_| WorldModelError::BadImport {
                line: index + 1,
                reason: format!("bad count {:?}", fields[3]),
            })?;
            let successors = table
                .entries
                .entry(StateKey(unescape(fields[0])))
                .or_default()
                .entry(action)
                .or_default();
            *successors
                .counts
                .entry(StateKey(unescape(fields[2])))
                .or_insert(0) += count;
            successors.total += count;
        }
        Ok(table)
    }
}

fn reconstruct(
    parents: &HashMap<StateKey, (StateKey, Action)>,
    start: &StateKey,
    goal: &StateKey,
) -> Vec<Action> {
    let mut plan = Vec::new();
    let mut cursor = goal.clone();
    while cursor != *start {
        let (prev, action) = parents[&cursor].clone();
        plan.push(action);
        cursor = prev;
    }
    plan.reverse();
    plan
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\t', "\\t")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Per-primitive-action transition triples, re-simulated from each turn's
/// start state so multi-action turns decompose exactly.
pub fn transitions_from_trajectory(
    traj: &Trajectory,
) -> Result<Vec<(StateKey, Action, StateKey)>, WorldModelError> {
    let mut triples = Vec::new();
    for turn in &traj.turns {
        let Ok(parsed) = &turn.parsed else { continue };
        let mut state = turn.state_before.clone();
        for &action in &parsed.actions {
            if state.terminal {
                break;
            }
            let before = StateKey::of(&state);
            let result = state.step(&[action])?;
            triples.push((before, action, StateKey::of(&result.next_state)));
            state = result.next_state;
        }
    }
    Ok(triples)
}

/// Exhaustive (state, action, successor) enumeration of the configuration
/// graph reachable from `start` under deterministic dynamics, bounded by
/// `node_budget` distinct states. This is the full-coverage interaction
/// log that random self-play approaches in the limit.
pub fn enumerate_reachable(
    start: &EpisodeState,
    node_budget: usize,
) -> Result<Vec<(StateKey, Action, StateKey)>, WorldModelError> {
    let actions = crate::env::action_space(start.kind());
    let mut triples = Vec::new();
    let mut queue: VecDeque<EpisodeState> = VecDeque::from([start.clone()]);
    let mut seen: HashSet<StateKey> = HashSet::from([StateKey::of(start)]);
    while let Some(state) = queue.pop_front() {
        if state.terminal {
            continue;
        }
        let key = StateKey::of(&state);
        for &action in &actions {
            let result = state.step(&[action])?;
            let next_key = StateKey::of(&result.next_state);
            triples.push((key.clone(), action, next_key.clone()));
            if seen.len() >= node_budget {
                return Err(WorldModelError::BudgetExceeded(node_budget));
            }
            if seen.insert(next_key) {
                queue.push_back(result.next_state);
            }
        }
    }
    Ok(triples)
}

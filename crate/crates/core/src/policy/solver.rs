//! Scripted solvers used as oracles: exact BFS plans for deterministic
//! dynamics, value iteration for the slippery lake, and a backtracking
//! Sudoku completion.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::env::{Action, EpisodeState, FrozenLakeBoard, Payload, Pos, SokobanBoard, DIRECTIONS};

/// Convergence threshold for the slippery-lake value iteration.
const BELLMAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("search exceeded the node budget of {0}")]
    BudgetExceeded(usize),
}

/// Returns a plan that solves the instance, or `None` when no solution is
/// reachable. Sokoban and deterministic FrozenLake plans are BFS-shortest;
/// the slippery FrozenLake plan follows the success-probability-greedy
/// policy (resolved as if moves were deterministic) for at most `horizon`
/// steps; Sudoku plans fill every empty cell.
pub fn solve(
    state: &EpisodeState,
    node_budget: usize,
    horizon: usize,
) -> Result<Option<Vec<Action>>, SolveError> {
    if state.is_success() {
        return Ok(Some(Vec::new()));
    }
    match &state.payload {
        Payload::Sokoban(board) => sokoban_bfs(board, node_budget),
        Payload::FrozenLake(board) => {
            if state.config.slippery {
                Ok(slippery_greedy_plan(board, horizon))
            } else {
                frozen_lake_bfs(board, node_budget)
            }
        }
        Payload::Sudoku(board) => {
            let mut cells = board.cells;
            if !complete(&mut cells, 0) {
                return Ok(None);
            }
            let fills = board
                .empty_positions()
                .into_iter()
                .map(|(row, col)| Action::Fill {
                    row: row as u8,
                    col: col as u8,
                    value: cells[row - 1][col - 1],
                })
                .collect();
            Ok(Some(fills))
        }
    }
}

fn sokoban_bfs(
    board: &SokobanBoard,
    node_budget: usize,
) -> Result<Option<Vec<Action>>, SolveError> {
    type Node = (Pos, BTreeSet<Pos>);
    let start: Node = (board.player, board.boxes.clone());
    let mut parents: HashMap<Node, (Node, Action)> = HashMap::new();
    let mut seen: BTreeSet<Node> = BTreeSet::from([start.clone()]);
    let mut queue: VecDeque<Node> = VecDeque::from([start.clone()]);
    while let Some(node) = queue.pop_front() {
        if seen.len() > node_budget {
            return Err(SolveError::BudgetExceeded(node_budget));
        }
        for dir in DIRECTIONS {
            let mut probe = board.clone();
            probe.player = node.0;
            probe.boxes = node.1.clone();
            if !crate::env::apply_sokoban_move(&mut probe, dir) {
                continue;
            }
            let next: Node = (probe.player, probe.boxes.clone());
            if !seen.insert(next.clone()) {
                continue;
            }
            parents.insert(next.clone(), (node.clone(), dir));
            if probe.is_success() {
                return Ok(Some(reconstruct(&parents, &start, &next)));
            }
            queue.push_back(next);
        }
    }
    Ok(None)
}

fn frozen_lake_bfs(
    board: &FrozenLakeBoard,
    node_budget: usize,
) -> Result<Option<Vec<Action>>, SolveError> {
    let mut parents: HashMap<Pos, (Pos, Action)> = HashMap::new();
    let mut seen: BTreeSet<Pos> = BTreeSet::from([board.player]);
    let mut queue: VecDeque<Pos> = VecDeque::from([board.player]);
    while let Some(pos) = queue.pop_front() {
        if seen.len() > node_budget {
            return Err(SolveError::BudgetExceeded(node_budget));
        }
        for dir in DIRECTIONS {
            let next = clamped_move(pos, dir, board.grid_size);
            if next == pos || board.holes.contains(&next) || !seen.insert(next) {
                continue;
            }
            parents.insert(next, (pos, dir));
            if next == board.goal {
                return Ok(Some(reconstruct(&parents, &board.player, &next)));
            }
            queue.push_back(next);
        }
    }
    Ok(None)
}

fn reconstruct<N: Clone + Eq + std::hash::Hash>(
    parents: &HashMap<N, (N, Action)>,
    start: &N,
    goal: &N,
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

fn clamped_move(pos: Pos, dir: Action, grid_size: usize) -> Pos {
    crate::env::offset(pos, dir.delta(), grid_size).unwrap_or(pos)
}

/// Success probability of the optimal policy from every cell, under the
/// 1/3-1/3-1/3 slip kernel with absorbing goal and holes. Iterates until the
/// Bellman residual drops below `BELLMAN_TOLERANCE`.
#[allow(clippy::needless_range_loop)]
pub fn slippery_success_values(board: &FrozenLakeBoard) -> Vec<Vec<f64>> {
    let n = board.grid_size;
    let mut values = vec![vec![0.0f64; n]; n];
    values[board.goal.0][board.goal.1] = 1.0;
    loop {
        let mut residual = 0.0f64;
        let prev = values.clone();
        for r in 0..n {
            for c in 0..n {
                let pos = (r, c);
                if pos == board.goal || board.holes.contains(&pos) {
                    continue;
                }
                let best = DIRECTIONS
                    .into_iter()
                    .map(|dir| expected_value(board, &prev, pos, dir))
                    .fold(0.0f64, f64::max);
                residual = residual.max((best - values[r][c]).abs());
                values[r][c] = best;
            }
        }
        if residual < BELLMAN_TOLERANCE {
            return values;
        }
    }
}

fn expected_value(board: &FrozenLakeBoard, values: &[Vec<f64>], pos: Pos, dir: Action) -> f64 {
    crate::env::slip_outcomes(dir)
        .into_iter()
        .map(|resolved| {
            let next = clamped_move(pos, resolved, board.grid_size);
            if board.holes.contains(&next) {
                0.0
            } else {
                values[next.0][next.1]
            }
        })
        .sum::<f64>()
        / 3.0
}

fn slippery_greedy_plan(board: &FrozenLakeBoard, horizon: usize) -> Option<Vec<Action>> {
    let values = slippery_success_values(board);
    if values[board.player.0][board.player.1] <= 0.0 {
        return None;
    }
    let mut plan = Vec::new();
    let mut pos = board.player;
    for _ in 0..horizon {
        if pos == board.goal {
            break;
        }
        let mut best = (f64::MIN, DIRECTIONS[0]);
        for dir in DIRECTIONS {
            let v = expected_value(board, &values, pos, dir);
            if v > best.0 {
                best = (v, dir);
            }
        }
        plan.push(best.1);
        pos = clamped_move(pos, best.1, board.grid_size);
        if board.holes.contains(&pos) {
            break;
        }
    }
    Some(plan)
}

fn complete(cells: &mut [[u8; 4]; 4], idx: usize) -> bool {
    if idx == 16 {
        return true;
    }
    let (r, c) = (idx / 4, idx % 4);
    if cells[r][c] != 0 {
        return complete(cells, idx + 1);
    }
    for v in 1..=4u8 {
        if crate::env::placement_consistent(cells, r, c, v) {
            cells[r][c] = v;
            if complete(cells, idx + 1) {
                return true;
            }
            cells[r][c] = 0;
        }
    }
    false
}

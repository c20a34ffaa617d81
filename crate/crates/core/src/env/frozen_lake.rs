//! FrozenLake board with the standard slippery kernel.
//!
//! Symbols: `_` frozen, `O` hole, `G` goal, `P` player, `√` player on goal.
//! There is no wall border; moves off the edge leave the player in place.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{offset, Action, ApplyOutcome, EnvConfig, EnvError, Pos, GENERATION_RETRY_BUDGET};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenLakeBoard {
    pub grid_size: usize,
    pub player: Pos,
    pub goal: Pos,
    pub holes: BTreeSet<Pos>,
}

impl FrozenLakeBoard {
    pub fn is_success(&self) -> bool {
        self.player == self.goal
    }

    pub fn render(&self) -> String {
        let mut rows = Vec::with_capacity(self.grid_size);
        for r in 0..self.grid_size {
            let mut row = String::new();
            for c in 0..self.grid_size {
                let pos = (r, c);
                let ch = if self.player == pos {
                    if self.goal == pos {
                        '√'
                    } else {
                        'P'
                    }
                } else if self.goal == pos {
                    'G'
                } else if self.holes.contains(&pos) {
                    'O'
                } else {
                    '_'
                };
                row.push(ch);
            }
            rows.push(row);
        }
        rows.join("\n")
    }
}

/// Slip resolution order: intended direction first, then the two
/// perpendiculars. Each carries probability 1/3; the opposite direction
/// never occurs.
pub fn slip_outcomes(intended: Action) -> [Action; 3] {
    match intended {
        Action::Up => [Action::Up, Action::Left, Action::Right],
        Action::Down => [Action::Down, Action::Left, Action::Right],
        Action::Left => [Action::Left, Action::Up, Action::Down],
        Action::Right => [Action::Right, Action::Up, Action::Down],
        Action::Fill { .. } => unreachable!("validated before slip resolution"),
    }
}

pub(super) fn apply(
    board: &mut FrozenLakeBoard,
    action: Action,
    slippery: bool,
    slip_rng: &mut SplitMix64,
) -> Result<ApplyOutcome, EnvError> {
    if matches!(action, Action::Fill { .. }) {
        return Err(EnvError::InvalidAction {
            kind: super::EnvKind::FrozenLake,
            action: action.to_string(),
        });
    }
    let resolved = if slippery {
        slip_outcomes(action)[slip_rng.gen_range(3) as usize]
    } else {
        action
    };
    let dest = offset(board.player, resolved.delta(), board.grid_size).unwrap_or(board.player);
    let effective = dest != board.player;
    board.player = dest;
    let terminal = if board.player == board.goal {
        Some(true)
    } else if board.holes.contains(&board.player) {
        Some(false)
    } else {
        None
    };
    Ok(ApplyOutcome {
        effective,
        progress: 0,
        terminal,
    })
}

/// Random player/goal placement with Bernoulli holes, accepted only when a
/// safe path exists under deterministic moves.
pub(super) fn generate(
    config: &EnvConfig,
    rng: &mut SplitMix64,
) -> Result<FrozenLakeBoard, EnvError> {
    let n = config.grid_size;
    let cells = (n * n) as u64;
    for _ in 0..GENERATION_RETRY_BUDGET {
        let player_idx = rng.gen_range(cells);
        let mut goal_idx = rng.gen_range(cells);
        while goal_idx == player_idx {
            goal_idx = rng.gen_range(cells);
        }
        let player = (
            (player_idx / n as u64) as usize,
            (player_idx % n as u64) as usize,
        );
        let goal = (
            (goal_idx / n as u64) as usize,
            (goal_idx % n as u64) as usize,
        );
        let mut holes = BTreeSet::new();
        for r in 0..n {
            for c in 0..n {
                let pos = (r, c);
                if pos != player && pos != goal && rng.gen_bool(config.hole_density) {
                    holes.insert(pos);
                }
            }
        }
        let board = FrozenLakeBoard {
            grid_size: n,
            player,
            goal,
            holes,
        };
        if safe_path_exists(&board) {
            return Ok(board);
        }
    }
    Err(EnvError::GenerationExhausted {
        attempts: GENERATION_RETRY_BUDGET,
    })
}

fn safe_path_exists(board: &FrozenLakeBoard) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([board.player]);
    seen.insert(board.player);
    while let Some(pos) = queue.pop_front() {
        if pos == board.goal {
            return true;
        }
        for dir in super::DIRECTIONS {
            if let Some(next) = offset(pos, dir.delta(), board.grid_size) {
                if !board.holes.contains(&next) && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
    }
    false
}

pub(super) fn parse(text: &str) -> Result<FrozenLakeBoard, EnvError> {
    let rows: Vec<&str> = text.lines().collect();
    let n = rows.len();
    if n < 4 || rows.iter().any(|r| r.chars().count() != n) {
        return Err(EnvError::BadSymbols(format!(
            "expected a square grid, got {n} rows"
        )));
    }
    let mut player = None;
    let mut goal = None;
    let mut holes = BTreeSet::new();
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            let pos = (r, c);
            match ch {
                '_' => {}
                'O' => {
                    holes.insert(pos);
                }
                'G' => goal = Some(pos),
                'P' => player = Some(pos),
                '√' => {
                    player = Some(pos);
                    goal = Some(pos);
                }
                other => {
                    return Err(EnvError::BadSymbols(format!(
                        "unexpected FrozenLake symbol {other:?} at ({r},{c})"
                    )))
                }
            }
        }
    }
    Ok(FrozenLakeBoard {
        grid_size: n,
        player: player.ok_or_else(|| EnvError::BadSymbols("no player cell".into()))?,
        goal: goal.ok_or_else(|| EnvError::BadSymbols("no goal cell".into()))?,
        holes,
    })
}

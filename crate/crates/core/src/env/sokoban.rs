//! Sokoban board, reverse-play generation and push dynamics.
//!
//! Symbols: `#` wall, `_` empty, `O` target, `√` box on target, `X` box,
//! `P` player, `S` player on target.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{offset, Action, ApplyOutcome, EnvConfig, EnvError, Pos, GENERATION_RETRY_BUDGET};
use crate::rng::SplitMix64;

/// Fraction of interior cells sampled as extra walls during generation.
const WALL_DENSITY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SokobanBoard {
    pub grid_size: usize,
    pub walls: BTreeSet<Pos>,
    pub player: Pos,
    pub boxes: BTreeSet<Pos>,
    pub targets: BTreeSet<Pos>,
}

impl SokobanBoard {
    pub fn is_success(&self) -> bool {
        self.boxes == self.targets
    }

    pub fn render(&self) -> String {
        let mut rows = Vec::with_capacity(self.grid_size);
        for r in 0..self.grid_size {
            let mut row = String::new();
            for c in 0..self.grid_size {
                let pos = (r, c);
                let ch = if self.walls.contains(&pos) {
                    '#'
                } else if self.boxes.contains(&pos) {
                    if self.targets.contains(&pos) {
                        '√'
                    } else {
                        'X'
                    }
                } else if self.player == pos {
                    if self.targets.contains(&pos) {
                        'S'
                    } else {
                        'P'
                    }
                } else if self.targets.contains(&pos) {
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

    fn free(&self, pos: Pos) -> bool {
        !self.walls.contains(&pos) && !self.boxes.contains(&pos)
    }
}

/// One primitive move. Pushing moves the box one cell in the same direction
/// iff the destination is free; boxes are never pulled; moving into a wall
/// is a no-op.
pub(super) fn apply(board: &mut SokobanBoard, action: Action) -> Result<ApplyOutcome, EnvError> {
    let delta = match action {
        Action::Fill { .. } => {
            return Err(EnvError::InvalidAction {
                kind: super::EnvKind::Sokoban,
                action: action.to_string(),
            })
        }
        dir => dir.delta(),
    };
    let Some(dest) = offset(board.player, delta, board.grid_size) else {
        return Ok(no_op());
    };
    if board.walls.contains(&dest) {
        return Ok(no_op());
    }
    let mut progress = 0i32;
    if board.boxes.contains(&dest) {
        let Some(push_dest) = offset(dest, delta, board.grid_size) else {
            return Ok(no_op());
        };
        if !board.free(push_dest) {
            return Ok(no_op());
        }
        board.boxes.remove(&dest);
        board.boxes.insert(push_dest);
        progress += board.targets.contains(&push_dest) as i32;
        progress -= board.targets.contains(&dest) as i32;
    }
    board.player = dest;
    let terminal = board.is_success().then_some(true);
    Ok(ApplyOutcome {
        effective: true,
        progress,
        terminal,
    })
}

fn no_op() -> ApplyOutcome {
    ApplyOutcome {
        effective: false,
        progress: 0,
        terminal: None,
    }
}

/// Generates by reverse play: start solved (every box on its target), then
/// walk the player backwards, pulling boxes off their targets. Replaying the
/// reverse moves forwards solves the instance, so solvability holds by
/// construction.
pub(super) fn generate(config: &EnvConfig, rng: &mut SplitMix64) -> Result<SokobanBoard, EnvError> {
    let n = config.grid_size;
    for _ in 0..GENERATION_RETRY_BUDGET {
        let mut walls: BTreeSet<Pos> = BTreeSet::new();
        for r in 0..n {
            for c in 0..n {
                if r == 0 || c == 0 || r == n - 1 || c == n - 1 {
                    walls.insert((r, c));
                }
            }
        }
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                if rng.gen_bool(WALL_DENSITY) {
                    walls.insert((r, c));
                }
            }
        }
        let mut floor: Vec<Pos> = (1..n - 1)
            .flat_map(|r| (1..n - 1).map(move |c| (r, c)))
            .filter(|pos| !walls.contains(pos))
            .collect();
        if floor.len() < 2 * config.num_boxes + 1 {
            continue;
        }
        rng.shuffle(&mut floor);
        let targets: BTreeSet<Pos> = floor[..config.num_boxes].iter().copied().collect();
        let boxes = targets.clone();
        let player = floor[config.num_boxes];
        let mut board = SokobanBoard {
            grid_size: n,
            walls,
            player,
            boxes,
            targets,
        };
        let steps = 2 * n + rng.gen_range(3 * n as u64) as usize;
        for _ in 0..steps {
            if !reverse_step(&mut board, rng) {
                break;
            }
        }
        if !board.is_success() {
            return Ok(board);
        }
    }
    Err(EnvError::GenerationExhausted {
        attempts: GENERATION_RETRY_BUDGET,
    })
}

enum ReverseMove {
    /// Player steps opposite to `dir`, dragging the box at `player + dir`
    /// into the player's old cell: the inverse of a forward push along `dir`.
    Pull(Action),
    /// Plain walk, its own inverse.
    Walk(Action),
}

fn reverse_step(board: &mut SokobanBoard, rng: &mut SplitMix64) -> bool {
    let mut pulls = Vec::new();
    let mut walks = Vec::new();
    for dir in super::DIRECTIONS {
        let delta = dir.delta();
        let back = (-delta.0, -delta.1);
        if let (Some(box_pos), Some(retreat)) = (
            offset(board.player, delta, board.grid_size),
            offset(board.player, back, board.grid_size),
        ) {
            if board.boxes.contains(&box_pos)
                && !board.walls.contains(&retreat)
                && board.free(retreat)
            {
                pulls.push(ReverseMove::Pull(dir));
            }
        }
        if let Some(dest) = offset(board.player, delta, board.grid_size) {
            if board.free(dest) {
                walks.push(ReverseMove::Walk(dir));
            }
        }
    }
    let use_pull = !pulls.is_empty() && (walks.is_empty() || rng.gen_bool(0.6));
    let candidates = if use_pull { &pulls } else { &walks };
    if candidates.is_empty() {
        return false;
    }
    match candidates[rng.gen_range(candidates.len() as u64) as usize] {
        ReverseMove::Pull(dir) => {
            let delta = dir.delta();
            let box_pos = offset(board.player, delta, board.grid_size).unwrap();
            let retreat = offset(board.player, (-delta.0, -delta.1), board.grid_size).unwrap();
            board.boxes.remove(&box_pos);
            board.boxes.insert(board.player);
            board.player = retreat;
        }
        ReverseMove::Walk(dir) => {
            board.player = offset(board.player, dir.delta(), board.grid_size).unwrap();
        }
    }
    true
}

pub(super) fn parse(text: &str) -> Result<SokobanBoard, EnvError> {
    let rows: Vec<&str> = text.lines().collect();
    let n = rows.len();
    if n < 4 || rows.iter().any(|r| r.chars().count() != n) {
        return Err(EnvError::BadSymbols(format!(
            "expected a square grid, got {n} rows"
        )));
    }
    let mut board = SokobanBoard {
        grid_size: n,
        walls: BTreeSet::new(),
        player: (0, 0),
        boxes: BTreeSet::new(),
        targets: BTreeSet::new(),
    };
    let mut player = None;
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            let pos = (r, c);
            match ch {
                '#' => {
                    board.walls.insert(pos);
                }
                '_' => {}
                'O' => {
                    board.targets.insert(pos);
                }
                'X' => {
                    board.boxes.insert(pos);
                }
                '√' => {
                    board.boxes.insert(pos);
                    board.targets.insert(pos);
                }
                'P' => player = Some(pos),
                'S' => {
                    board.targets.insert(pos);
                    player = Some(pos);
                }
                other => {
                    return Err(EnvError::BadSymbols(format!(
                        "unexpected Sokoban symbol {other:?} at ({r},{c})"
                    )))
                }
            }
        }
    }
    board.player = player.ok_or_else(|| EnvError::BadSymbols("no player cell".into()))?;
    Ok(board)
}

#[cfg(test)]
mod tests {
    use super::super::{generate, EnvConfig, EnvKind, Payload};
    use super::*;

    // The grid from the state-representation prompt figure.
    pub(crate) const PROMPT_GRID: &str = "######\n#___O#\n#____#\n###X_#\n###P_#\n######";

    fn board_from(text: &str) -> SokobanBoard {
        parse(text).unwrap()
    }

    #[test]
    fn prompt_grid_round_trips() {
        let board = board_from(PROMPT_GRID);
        assert_eq!(board.player, (4, 3));
        assert_eq!(
            board.boxes.iter().copied().collect::<Vec<_>>(),
            vec![(3, 3)]
        );
        assert_eq!(
            board.targets.iter().copied().collect::<Vec<_>>(),
            vec![(1, 4)]
        );
        assert_eq!(board.render(), PROMPT_GRID);
    }

    #[test]
    fn worked_example_push_sequence() {
        // Player (2,2), box (3,2), target (4,3); Down, Left, Down ends with
        // the box one push from the target.
        let start = "######\n#_####\n#_P###\n#_X#_#\n#__O_#\n######";
        let mut board = board_from(start);
        for action in [Action::Down, Action::Left, Action::Down] {
            apply(&mut board, action).unwrap();
        }
        assert_eq!(board.player, (4, 1));
        assert!(board.boxes.contains(&(4, 2)));
        let rendered = board.render();
        assert_eq!(rendered.lines().nth(4).unwrap(), "#PXO_#");
        assert_eq!(rendered, "######\n#_####\n#__###\n#__#_#\n#PXO_#\n######");
    }

    #[test]
    fn wall_move_is_ineffective() {
        let mut board = board_from(PROMPT_GRID);
        let before = board.clone();
        let outcome = apply(&mut board, Action::Left).unwrap();
        assert!(!outcome.effective);
        assert_eq!(board, before);
    }

    #[test]
    fn blocked_step_changes_only_the_turn_counter() {
        let state = super::super::EpisodeState::with_payload(
            EnvConfig::sokoban(6, 1),
            Payload::Sokoban(board_from(PROMPT_GRID)),
            0,
        );
        let result = state.step(&[Action::Left]).unwrap();
        assert_eq!(result.actions_executed, 1);
        assert_eq!(result.actions_effective, 0);
        assert_eq!(result.next_state.turn, state.turn + 1);
        assert_eq!(result.next_state.payload, state.payload);
        assert!(!result.done);
    }

    #[test]
    fn push_into_wall_is_ineffective() {
        // Box at (3,3) with wall at (3,2): pushing Left from (3,4) must no-op.
        let mut board = board_from("######\n#___O#\n#____#\n###XP#\n#____#\n######");
        let outcome = apply(&mut board, Action::Left).unwrap();
        assert!(!outcome.effective);
        assert_eq!(board.player, (3, 4));
    }

    #[test]
    fn push_onto_target_terminates() {
        let mut board = board_from("######\n#____#\n#PXO_#\n#____#\n#____#\n######");
        let outcome = apply(&mut board, Action::Right).unwrap();
        assert!(outcome.effective);
        assert_eq!(outcome.progress, 1);
        assert_eq!(outcome.terminal, Some(true));
        assert!(board.is_success());
    }

    #[test]
    fn box_conservation_under_random_play() {
        let config = EnvConfig::sokoban(6, 1);
        for seed in 0..50 {
            let state = generate(&config, seed).unwrap();
            let Payload::Sokoban(mut board) = state.payload else {
                unreachable!()
            };
            let mut rng = crate::rng::SplitMix64::new(seed ^ 0xabc);
            for _ in 0..200 {
                let dir = super::super::DIRECTIONS[rng.gen_range(4) as usize];
                apply(&mut board, dir).unwrap();
                assert_eq!(board.boxes.len(), 1);
                assert!(board.boxes.iter().all(|b| !board.walls.contains(b)));
            }
        }
    }

    #[test]
    fn generation_is_reproducible_and_unsolved() {
        let config = EnvConfig::sokoban(6, 1);
        for seed in 0..100 {
            let a = generate(&config, seed).unwrap();
            let b = generate(&config, seed).unwrap();
            assert_eq!(a.render_symbols(), b.render_symbols());
            assert!(!a.is_success());
            assert_eq!(a.kind(), EnvKind::Sokoban);
        }
    }

    #[test]
    fn two_box_generation_satisfies_invariants() {
        let config = EnvConfig::sokoban(8, 2);
        for seed in 0..20 {
            let state = generate(&config, seed).unwrap();
            let Payload::Sokoban(board) = &state.payload else {
                unreachable!()
            };
            assert_eq!(board.boxes.len(), 2);
            assert_eq!(board.targets.len(), 2);
            assert!(!board.walls.contains(&board.player));
            assert!(board.boxes.iter().all(|b| !board.walls.contains(b)));
        }
    }
}

//! Coordinate-abstraction state text.
//!
//! The raw symbol grid is augmented with a natural-language sentence naming
//! the coordinates of every key entity, and the two are concatenated into
//! the composed state text fed to prompts. All functions here are pure.

use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, EpisodeState, Payload, Pos};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityLabel {
    Player,
    /// Zero-based box index in row-major order.
    Box(usize),
    Target(usize),
    Hole,
    Goal,
    /// A Sudoku cell still to be filled.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub label: EntityLabel,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateAbstraction {
    pub kind: EnvKind,
    /// Player first, then boxes/holes row-major, then targets/goal;
    /// Sudoku empties row-major. Every entity appears exactly once.
    pub entities: Vec<Entity>,
    /// Deterministically rendered from `entities`.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateText {
    /// Symbol grid.
    pub raw: String,
    pub abstraction: CoordinateAbstraction,
    /// `raw + "\n" + abstraction.text`.
    pub composed: String,
}

pub fn abstract_state(state: &EpisodeState) -> CoordinateAbstraction {
    let (kind, entities) = match &state.payload {
        Payload::Sokoban(board) => {
            let mut entities = vec![entity(EntityLabel::Player, board.player)];
            for (i, &pos) in board.boxes.iter().enumerate() {
                entities.push(entity(EntityLabel::Box(i), pos));
            }
            for (i, &pos) in board.targets.iter().enumerate() {
                entities.push(entity(EntityLabel::Target(i), pos));
            }
            (EnvKind::Sokoban, entities)
        }
        Payload::FrozenLake(board) => {
            let mut entities = vec![entity(EntityLabel::Player, board.player)];
            for &pos in &board.holes {
                entities.push(entity(EntityLabel::Hole, pos));
            }
            entities.push(entity(EntityLabel::Goal, board.goal));
            (EnvKind::FrozenLake, entities)
        }
        Payload::Sudoku(board) => {
            let entities = board
                .empty_positions()
                .into_iter()
                .map(|pos| entity(EntityLabel::Empty, pos))
                .collect();
            (EnvKind::Sudoku, entities)
        }
    };
    let text = render_text(kind, &entities);
    CoordinateAbstraction {
        kind,
        entities,
        text,
    }
}

pub fn compose_state(state: &EpisodeState) -> StateText {
    let raw = state.render_symbols();
    let abstraction = abstract_state(state);
    let composed = format!("{raw}\n{}", abstraction.text);
    StateText {
        raw,
        abstraction,
        composed,
    }
}

/// Replaces every coordinate pair with an independent uniform draw over the
/// grid, keeping labels and the sentence template intact (the mis-specified
/// abstraction used by the randomized-coordinate ablation).
pub fn randomize_coordinates(
    abstraction: &CoordinateAbstraction,
    rng_seed: u64,
    grid_size: usize,
) -> CoordinateAbstraction {
    let mut rng = SplitMix64::new(rng_seed);
    let base = if abstraction.kind == EnvKind::Sudoku {
        1
    } else {
        0
    };
    let entities: Vec<Entity> = abstraction
        .entities
        .iter()
        .map(|e| Entity {
            label: e.label,
            row: base + rng.gen_range(grid_size as u64) as usize,
            col: base + rng.gen_range(grid_size as u64) as usize,
        })
        .collect();
    let text = render_text(abstraction.kind, &entities);
    CoordinateAbstraction {
        kind: abstraction.kind,
        entities,
        text,
    }
}

fn entity(label: EntityLabel, pos: Pos) -> Entity {
    Entity {
        label,
        row: pos.0,
        col: pos.1,
    }
}

fn coord(e: &Entity) -> String {
    format!("({},{})", e.row, e.col)
}

fn render_text(kind: EnvKind, entities: &[Entity]) -> String {
    match kind {
        EnvKind::Sokoban => {
            let boxes = entities
                .iter()
                .filter(|e| matches!(e.label, EntityLabel::Box(_)))
                .count();
            let targets = entities
                .iter()
                .filter(|e| matches!(e.label, EntityLabel::Target(_)))
                .count();
            let parts: Vec<String> = entities
                .iter()
                .map(|e| match e.label {
                    EntityLabel::Player => format!("Player (P) is at {}", coord(e)),
                    EntityLabel::Box(i) if boxes > 1 => {
                        format!("box {} (X) is at {}", i + 1, coord(e))
                    }
                    EntityLabel::Box(_) => format!("box (X) is at {}", coord(e)),
                    EntityLabel::Target(i) if targets > 1 => {
                        format!("target {} (O) is at {}", i + 1, coord(e))
                    }
                    EntityLabel::Target(_) => format!("target (O) is at {}", coord(e)),
                    other => unreachable!("{other:?} in a Sokoban abstraction"),
                })
                .collect();
            format!("{}.", parts.join("; "))
        }
        EnvKind::FrozenLake => {
            let mut player = String::new();
            let mut holes = Vec::new();
            let mut goal = String::new();
            for e in entities {
                match e.label {
                    EntityLabel::Player => player = format!("Player at {}", coord(e)),
                    EntityLabel::Hole => holes.push(coord(e)),
                    EntityLabel::Goal => goal = format!("goal at {}", coord(e)),
                    other => unreachable!("{other:?} in a FrozenLake abstraction"),
                }
            }
            format!("{player}; holes at {}; {goal}.", join_list(&holes))
        }
        EnvKind::Sudoku => {
            let empties: Vec<String> = entities.iter().map(coord).collect();
            let listed = if empties.is_empty() {
                "none".to_string()
            } else {
                empties.join(", ")
            };
            format!("Empty positions to be filled are at {listed}")
        }
    }
}

/// "none" / "(a,b)" / "(a,b) and (c,d)" / "(a,b), (c,d) and (e,f)".
fn join_list(items: &[String]) -> String {
    match items {
        [] => "none".to_string(),
        [one] => one.clone(),
        many => format!(
            "{} and {}",
            many[..many.len() - 1].join(", "),
            many[many.len() - 1]
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate, payload_from_symbols, EnvConfig, EpisodeState};

    fn sokoban_prompt_state() -> EpisodeState {
        let payload = payload_from_symbols(
            EnvKind::Sokoban,
            "######\n#___O#\n#____#\n###X_#\n###P_#\n######",
        )
        .unwrap();
        EpisodeState::with_payload(EnvConfig::sokoban(6, 1), payload, 0)
    }

    #[test]
    fn sokoban_prompt_sentence_is_exact() {
        let abs = abstract_state(&sokoban_prompt_state());
        assert_eq!(
            abs.text,
            "Player (P) is at (4,3); box (X) is at (3,3); target (O) is at (1,4)."
        );
    }

    #[test]
    fn frozen_lake_example_sentence_is_exact() {
        let payload = payload_from_symbols(EnvKind::FrozenLake, "_O__\nO___\nG___\n__P_").unwrap();
        let state = EpisodeState::with_payload(EnvConfig::frozen_lake(4, 0.2, false), payload, 0);
        assert_eq!(
            abstract_state(&state).text,
            "Player at (3,2); holes at (0,1) and (1,0); goal at (2,0)."
        );
    }

    #[test]
    fn sudoku_example_sentence_is_exact() {
        let payload =
            payload_from_symbols(EnvKind::Sudoku, "| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2")
                .unwrap();
        let state = EpisodeState::with_payload(EnvConfig::sudoku(6), payload, 0);
        assert_eq!(
            abstract_state(&state).text,
            "Empty positions to be filled are at (1,1), (1,2), (2,3), (3,3), (3,4), (4,1)"
        );
    }

    #[test]
    fn solved_sudoku_reports_none() {
        let state = generate(&EnvConfig::sudoku(0), 3).unwrap();
        assert_eq!(
            abstract_state(&state).text,
            "Empty positions to be filled are at none"
        );
    }

    #[test]
    fn multi_box_sentences_use_ordinals() {
        let payload = payload_from_symbols(
            EnvKind::Sokoban,
            "######\n#P_X_#\n#__X_#\n#_O__#\n#___O#\n######",
        )
        .unwrap();
        let state = EpisodeState::with_payload(EnvConfig::sokoban(6, 2), payload, 0);
        assert_eq!(
            abstract_state(&state).text,
            "Player (P) is at (1,1); box 1 (X) is at (1,3); box 2 (X) is at (2,3); \
             target 1 (O) is at (3,2); target 2 (O) is at (4,4)."
        );
    }

    #[test]
    fn composition_concatenates_raw_and_abstraction() {
        let state = sokoban_prompt_state();
        let text = compose_state(&state);
        assert_eq!(
            text.composed,
            format!("{}\n{}", text.raw, text.abstraction.text)
        );
        assert_eq!(compose_state(&state), text);
    }

    #[test]
    fn composed_text_recovers_raw_and_abstraction() {
        // The abstraction is always a single final line, so splitting the
        // composed text at its last newline recovers both parts.
        for config in [
            EnvConfig::sokoban(6, 1),
            EnvConfig::frozen_lake(4, 0.2, true),
            EnvConfig::sudoku(6),
        ] {
            for seed in 0..50 {
                let state = generate(&config, seed).unwrap();
                let text = compose_state(&state);
                let (raw, abstraction) = text.composed.rsplit_once('\n').unwrap();
                assert_eq!(raw, text.raw);
                assert_eq!(abstraction, text.abstraction.text);
            }
        }
    }

    #[test]
    fn randomize_preserves_template_and_determinism() {
        let abs = abstract_state(&sokoban_prompt_state());
        let a = randomize_coordinates(&abs, 11, 6);
        let b = randomize_coordinates(&abs, 11, 6);
        assert_eq!(a, b);
        assert_eq!(a.entities.len(), abs.entities.len());
        for (orig, rand) in abs.entities.iter().zip(&a.entities) {
            assert_eq!(orig.label, rand.label);
            assert!(rand.row < 6 && rand.col < 6);
        }
        // Collapsing every digit run to a marker must reproduce the template.
        let strip = |s: &str| {
            let mut out = String::new();
            let mut in_digits = false;
            for ch in s.chars() {
                if ch.is_ascii_digit() {
                    if !in_digits {
                        out.push('#');
                    }
                    in_digits = true;
                } else {
                    in_digits = false;
                    out.push(ch);
                }
            }
            out
        };
        assert_eq!(strip(&a.text), strip(&abs.text));
    }

    #[test]
    fn degenerate_grid_pins_all_coordinates() {
        let abs = abstract_state(&sokoban_prompt_state());
        let r = randomize_coordinates(&abs, 5, 1);
        assert!(r.entities.iter().all(|e| e.row == 0 && e.col == 0));
    }

    #[test]
    fn abstraction_matches_grid_symbols_across_seeds() {
        for seed in 0..300 {
            let state = generate(&EnvConfig::sokoban(6, 1), seed).unwrap();
            let text = compose_state(&state);
            let grid: Vec<Vec<char>> = text.raw.lines().map(|l| l.chars().collect()).collect();
            for e in &text.abstraction.entities {
                let symbol = grid[e.row][e.col];
                let ok = match e.label {
                    EntityLabel::Player => matches!(symbol, 'P' | 'S'),
                    EntityLabel::Box(_) => matches!(symbol, 'X' | '√'),
                    EntityLabel::Target(_) => matches!(symbol, 'O' | '√' | 'S'),
                    EntityLabel::Hole => symbol == 'O',
                    EntityLabel::Goal => matches!(symbol, 'G' | '√'),
                    EntityLabel::Empty => symbol == '.',
                };
                assert!(
                    ok,
                    "label {:?} over symbol {symbol} at ({},{})",
                    e.label, e.row, e.col
                );
            }
        }
    }
}

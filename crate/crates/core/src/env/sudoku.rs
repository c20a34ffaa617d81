//! 4x4 Sudoku with 2x2 subgrids.
//!
//! Rendered as pipe-delimited row groups on one line, `.` for empty:
//! `| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2`. Moves are 1-indexed
//! `row,col,value` triples.

use serde::{Deserialize, Serialize};

use super::{Action, ApplyOutcome, EnvConfig, EnvError};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SudokuBoard {
    /// 0 is empty; filled cells hold 1..=4.
    pub cells: [[u8; 4]; 4],
    /// The complete grid the puzzle was carved from. One witness solution;
    /// uniqueness is not enforced.
    pub solution: [[u8; 4]; 4],
}

impl SudokuBoard {
    pub fn is_success(&self) -> bool {
        self.cells.iter().flatten().all(|&v| v != 0) && grid_consistent(&self.cells)
    }

    pub fn render(&self) -> String {
        let rows: Vec<String> = self
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| {
                        if v == 0 {
                            ".".to_string()
                        } else {
                            v.to_string()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        format!("| {}", rows.join(" | "))
    }

    /// 1-indexed positions of empty cells in row-major order.
    pub fn empty_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                if self.cells[r][c] == 0 {
                    out.push((r + 1, c + 1));
                }
            }
        }
        out
    }
}

/// True when writing `value` at zero-indexed `(row, col)` keeps the row,
/// column and 2x2 subgrid free of duplicates.
#[allow(clippy::needless_range_loop)]
pub fn placement_consistent(cells: &[[u8; 4]; 4], row: usize, col: usize, value: u8) -> bool {
    for i in 0..4 {
        if cells[row][i] == value || cells[i][col] == value {
            return false;
        }
    }
    let (br, bc) = (row / 2 * 2, col / 2 * 2);
    for r in br..br + 2 {
        for c in bc..bc + 2 {
            if cells[r][c] == value {
                return false;
            }
        }
    }
    true
}

fn grid_consistent(cells: &[[u8; 4]; 4]) -> bool {
    for r in 0..4 {
        for c in 0..4 {
            let v = cells[r][c];
            if v != 0 {
                let mut probe = *cells;
                probe[r][c] = 0;
                if !placement_consistent(&probe, r, c, v) {
                    return false;
                }
            }
        }
    }
    true
}

/// A move writes its value iff the cell is empty and consistency is
/// preserved; anything else is an ineffective no-op so trajectories stay
/// alive for data collection.
pub(super) fn apply(board: &mut SudokuBoard, action: Action) -> Result<ApplyOutcome, EnvError> {
    let Action::Fill { row, col, value } = action else {
        return Err(EnvError::InvalidAction {
            kind: super::EnvKind::Sudoku,
            action: action.to_string(),
        });
    };
    let ineffective = ApplyOutcome {
        effective: false,
        progress: 0,
        terminal: None,
    };
    if !(1..=4).contains(&row) || !(1..=4).contains(&col) || !(1..=4).contains(&value) {
        return Ok(ineffective);
    }
    let (r, c) = (row as usize - 1, col as usize - 1);
    if board.cells[r][c] != 0 || !placement_consistent(&board.cells, r, c, value) {
        return Ok(ineffective);
    }
    board.cells[r][c] = value;
    let terminal = board.is_success().then_some(true);
    Ok(ApplyOutcome {
        effective: true,
        progress: 1,
        terminal,
    })
}

/// Carves `num_empty_cells` holes out of a random complete grid.
pub(super) fn generate(config: &EnvConfig, rng: &mut SplitMix64) -> Result<SudokuBoard, EnvError> {
    let mut cells = [[0u8; 4]; 4];
    // A randomized backtracking fill always succeeds on an empty 4x4 grid.
    assert!(fill_random(&mut cells, 0, rng));
    let solution = cells;
    let mut positions: Vec<(usize, usize)> =
        (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
    rng.shuffle(&mut positions);
    for &(r, c) in positions.iter().take(config.num_empty_cells) {
        cells[r][c] = 0;
    }
    Ok(SudokuBoard { cells, solution })
}

fn fill_random(cells: &mut [[u8; 4]; 4], idx: usize, rng: &mut SplitMix64) -> bool {
    if idx == 16 {
        return true;
    }
    let (r, c) = (idx / 4, idx % 4);
    let mut digits = [1u8, 2, 3, 4];
    rng.shuffle(&mut digits);
    for v in digits {
        if placement_consistent(cells, r, c, v) {
            cells[r][c] = v;
            if fill_random(cells, idx + 1, rng) {
                return true;
            }
            cells[r][c] = 0;
        }
    }
    false
}

pub(super) fn parse(text: &str) -> Result<SudokuBoard, EnvError> {
    let groups: Vec<&str> = text
        .split('|')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .collect();
    if groups.len() != 4 {
        return Err(EnvError::BadSymbols(format!(
            "expected 4 row groups, got {}",
            groups.len()
        )));
    }
    let mut cells = [[0u8; 4]; 4];
    for (r, group) in groups.iter().enumerate() {
        let tokens: Vec<&str> = group.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(EnvError::BadSymbols(format!(
                "row group {r} has {} cells",
                tokens.len()
            )));
        }
        for (c, token) in tokens.iter().enumerate() {
            cells[r][c] = match *token {
                "." => 0,
                "1" => 1,
                "2" => 2,
                "3" => 3,
                "4" => 4,
                other => {
                    return Err(EnvError::BadSymbols(format!(
                        "unexpected Sudoku cell {other:?}"
                    )))
                }
            };
        }
    }
    if !grid_consistent(&cells) {
        return Err(EnvError::BadSymbols("inconsistent givens".into()));
    }
    // The witness solution is unknown when reconstructing from symbols;
    // reuse the cells so the invariantly-consistent shape is preserved.
    Ok(SudokuBoard {
        cells,
        solution: cells,
    })
}

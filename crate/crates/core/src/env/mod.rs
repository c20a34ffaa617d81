//! Grid-world environments: Sokoban, FrozenLake and 4x4 Sudoku.
//!
//! All three share one episode protocol: seeded generation of a solvable
//! instance, a step function that applies an ordered action sequence as a
//! single turn, and a pure symbol rendering. Coordinates are `(row, col)`,
//! zero-indexed from the top-left, except Sudoku moves which are 1-indexed.

mod frozen_lake;
mod sokoban;
mod sudoku;

pub use frozen_lake::{slip_outcomes, FrozenLakeBoard};
pub use sokoban::SokobanBoard;
pub use sudoku::{placement_consistent, SudokuBoard};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix, SplitMix64};

/// `(row, col)`, zero-indexed from the top-left.
pub type Pos = (usize, usize);

/// Attempts per seed before generation gives up on an over-constrained config.
pub const GENERATION_RETRY_BUDGET: u32 = 1000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no solvable instance found within {attempts} attempts")]
    GenerationExhausted { attempts: u32 },
    #[error("step called on a terminal episode")]
    SteppedTerminal,
    #[error("action {action} does not apply to {kind}")]
    InvalidAction { kind: EnvKind, action: String },
    #[error("unparseable symbol grid: {0}")]
    BadSymbols(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sokoban,
    FrozenLake,
    Sudoku,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::Sokoban => write!(f, "sokoban"),
            EnvKind::FrozenLake => write!(f, "frozen_lake"),
            EnvKind::Sudoku => write!(f, "sudoku"),
        }
    }
}

/// Per-transition reward shaping. The defaults are artifact conventions,
/// fully configurable and recorded in dataset metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    /// Charged once per executed primitive action.
    pub step_penalty: f64,
    /// Sokoban: per box newly on target (negative when pushed off).
    /// Sudoku: per valid fill.
    pub progress_bonus: f64,
    /// Granted once when the episode terminates successfully.
    pub success_bonus: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self {
            step_penalty: -0.1,
            progress_bonus: 1.0,
            success_bonus: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Side length of the square grid, including the wall border for Sokoban.
    pub grid_size: usize,
    /// Sokoban only.
    #[serde(default = "default_num_boxes")]
    pub num_boxes: usize,
    /// FrozenLake only: per-cell hole probability in `[0, 1]`.
    #[serde(default = "default_hole_density")]
    pub hole_density: f64,
    /// FrozenLake only.
    #[serde(default = "default_slippery")]
    pub slippery: bool,
    /// Sudoku only: cells removed from the complete grid, in `[0, 16]`.
    #[serde(default = "default_num_empty_cells")]
    pub num_empty_cells: usize,
    /// Agent turns before the collector truncates the episode.
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub rewards: RewardScheme,
}

fn default_num_boxes() -> usize {
    1
}
fn default_hole_density() -> f64 {
    0.2
}
fn default_slippery() -> bool {
    true
}
fn default_num_empty_cells() -> usize {
    6
}
fn default_max_turns() -> usize {
    10
}

impl EnvConfig {
    pub fn sokoban(grid_size: usize, num_boxes: usize) -> Self {
        Self {
            kind: EnvKind::Sokoban,
            grid_size,
            num_boxes,
            hole_density: 0.0,
            slippery: false,
            num_empty_cells: 0,
            max_turns: 10,
            rewards: RewardScheme::default(),
        }
    }

    pub fn frozen_lake(grid_size: usize, hole_density: f64, slippery: bool) -> Self {
        Self {
            kind: EnvKind::FrozenLake,
            grid_size,
            num_boxes: 0,
            hole_density,
            slippery,
            num_empty_cells: 0,
            max_turns: 10,
            rewards: RewardScheme::default(),
        }
    }

    pub fn sudoku(num_empty_cells: usize) -> Self {
        Self {
            kind: EnvKind::Sudoku,
            grid_size: 4,
            num_boxes: 0,
            hole_density: 0.0,
            slippery: false,
            num_empty_cells,
            max_turns: 5,
            rewards: RewardScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.grid_size < 4 {
            return Err(EnvError::InvalidConfig(format!(
                "grid_size {} below minimum 4",
                self.grid_size
            )));
        }
        if self.max_turns == 0 {
            return Err(EnvError::InvalidConfig("max_turns must be >= 1".into()));
        }
        match self.kind {
            EnvKind::Sokoban => {
                let interior = (self.grid_size - 2) * (self.grid_size - 2);
                if self.num_boxes == 0 {
                    return Err(EnvError::InvalidConfig("num_boxes must be >= 1".into()));
                }
                if 2 * self.num_boxes + 1 > interior {
                    return Err(EnvError::InvalidConfig(format!(
                        "{} boxes do not fit an interior of {interior} cells",
                        self.num_boxes
                    )));
                }
            }
            EnvKind::FrozenLake => {
                if !(0.0..=1.0).contains(&self.hole_density) {
                    return Err(EnvError::InvalidConfig(format!(
                        "hole_density {} outside [0, 1]",
                        self.hole_density
                    )));
                }
            }
            EnvKind::Sudoku => {
                if self.grid_size != 4 {
                    return Err(EnvError::InvalidConfig("Sudoku grid_size must be 4".into()));
                }
                if self.num_empty_cells > 16 {
                    return Err(EnvError::InvalidConfig(format!(
                        "num_empty_cells {} outside [0, 16]",
                        self.num_empty_cells
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One primitive action. Directions serve Sokoban and FrozenLake; `Fill`
/// serves Sudoku with 1-indexed row/col and value in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Fill { row: u8, col: u8, value: u8 },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Up => write!(f, "Up"),
            Action::Down => write!(f, "Down"),
            Action::Left => write!(f, "Left"),
            Action::Right => write!(f, "Right"),
            Action::Fill { row, col, value } => write!(f, "{row},{col},{value}"),
        }
    }
}

pub const DIRECTIONS: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

impl Action {
    pub fn delta(&self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Fill { .. } => (0, 0),
        }
    }

    /// Parses the serialized form produced by `Display` ("Up", "1,2,3").
    pub fn from_key_str(s: &str) -> Option<Action> {
        let t = s.trim();
        for d in DIRECTIONS {
            if t.eq_ignore_ascii_case(&d.to_string()) {
                return Some(d);
            }
        }
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        if parts.len() == 3 {
            let row: u8 = parts[0].parse().ok()?;
            let col: u8 = parts[1].parse().ok()?;
            let value: u8 = parts[2].parse().ok()?;
            if (1..=4).contains(&row) && (1..=4).contains(&col) && (1..=4).contains(&value) {
                return Some(Action::Fill { row, col, value });
            }
        }
        None
    }
}

/// Every primitive action available in an environment kind.
pub fn action_space(kind: EnvKind) -> Vec<Action> {
    match kind {
        EnvKind::Sokoban | EnvKind::FrozenLake => DIRECTIONS.to_vec(),
        EnvKind::Sudoku => {
            let mut actions = Vec::with_capacity(64);
            for row in 1..=4u8 {
                for col in 1..=4u8 {
                    for value in 1..=4u8 {
                        actions.push(Action::Fill { row, col, value });
                    }
                }
            }
            actions
        }
    }
}

/// Kind-specific board state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Sokoban(SokobanBoard),
    FrozenLake(FrozenLakeBoard),
    Sudoku(SudokuBoard),
}

impl Payload {
    pub fn kind(&self) -> EnvKind {
        match self {
            Payload::Sokoban(_) => EnvKind::Sokoban,
            Payload::FrozenLake(_) => EnvKind::FrozenLake,
            Payload::Sudoku(_) => EnvKind::Sudoku,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub config: EnvConfig,
    /// Drives slippery-move resolution; owned per episode so no global
    /// random state exists anywhere.
    pub slip_rng: SplitMix64,
    pub turn: usize,
    pub terminal: bool,
    pub success: bool,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: EpisodeState,
    pub reward: f64,
    pub done: bool,
    pub actions_executed: u32,
    pub actions_effective: u32,
}

/// Outcome of one primitive action on a board.
pub(crate) struct ApplyOutcome {
    pub effective: bool,
    /// Units of progress for the reward scheme (boxes newly on target,
    /// valid fills). May be negative for Sokoban.
    pub progress: i32,
    /// `Some(success)` when the action ended the episode.
    pub terminal: Option<bool>,
}

/// Generates a solvable episode. Identical `(config, seed)` pairs yield
/// bit-identical states.
pub fn generate(config: &EnvConfig, seed: u64) -> Result<EpisodeState, EnvError> {
    config.validate()?;
    let mut rng = SplitMix64::new(mix(&[seed, config.kind as u64]));
    let payload = match config.kind {
        EnvKind::Sokoban => Payload::Sokoban(sokoban::generate(config, &mut rng)?),
        EnvKind::FrozenLake => Payload::FrozenLake(frozen_lake::generate(config, &mut rng)?),
        EnvKind::Sudoku => Payload::Sudoku(sudoku::generate(config, &mut rng)?),
    };
    Ok(EpisodeState::with_payload(config.clone(), payload, seed))
}

impl EpisodeState {
    /// Wraps an existing board, deriving the terminal flags from it.
    pub fn with_payload(config: EnvConfig, payload: Payload, seed: u64) -> Self {
        let mut state = EpisodeState {
            config,
            slip_rng: SplitMix64::new(mix(&[seed, 0x5119])),
            turn: 0,
            terminal: false,
            success: false,
            payload,
        };
        if state.is_success() {
            state.terminal = true;
            state.success = true;
        }
        state
    }

    /// Re-seeds the stochastic stream so repeated rollouts from one
    /// generated instance diverge deterministically.
    pub fn reseed_stochastic(&mut self, salt: u64) {
        self.slip_rng = SplitMix64::new(mix(&[0x51ee, salt]));
    }

    pub fn kind(&self) -> EnvKind {
        self.payload.kind()
    }

    /// Applies `actions` in order as one agent turn. Execution halts early
    /// if a terminal state is reached mid-sequence; remaining actions are
    /// discarded and not counted.
    pub fn step(&self, actions: &[Action]) -> Result<StepResult, EnvError> {
        if self.terminal {
            return Err(EnvError::SteppedTerminal);
        }
        let mut next = self.clone();
        let scheme = self.config.rewards;
        let mut reward = 0.0;
        let mut executed = 0u32;
        let mut effective = 0u32;
        for &action in actions {
            if next.terminal {
                break;
            }
            executed += 1;
            reward += scheme.step_penalty;
            let slippery = next.config.slippery;
            let outcome = match &mut next.payload {
                Payload::Sokoban(board) => sokoban::apply(board, action)?,
                Payload::FrozenLake(board) => {
                    frozen_lake::apply(board, action, slippery, &mut next.slip_rng)?
                }
                Payload::Sudoku(board) => sudoku::apply(board, action)?,
            };
            if outcome.effective {
                effective += 1;
            }
            reward += outcome.progress as f64 * scheme.progress_bonus;
            if let Some(success) = outcome.terminal {
                next.terminal = true;
                next.success = success;
                if success {
                    reward += scheme.success_bonus;
                }
            }
        }
        next.turn += 1;
        let done = next.terminal;
        Ok(StepResult {
            next_state: next,
            reward,
            done,
            actions_executed: executed,
            actions_effective: effective,
        })
    }

    /// The paper's symbol grid, newline-joined rows, no trailing newline.
    pub fn render_symbols(&self) -> String {
        render_payload(&self.payload)
    }

    pub fn is_success(&self) -> bool {
        match &self.payload {
            Payload::Sokoban(board) => board.is_success(),
            Payload::FrozenLake(board) => board.is_success(),
            Payload::Sudoku(board) => board.is_success(),
        }
    }
}

pub fn render_payload(payload: &Payload) -> String {
    match payload {
        Payload::Sokoban(board) => board.render(),
        Payload::FrozenLake(board) => board.render(),
        Payload::Sudoku(board) => board.render(),
    }
}

/// Inverse of `render_symbols`, used by the transition-model planner and by
/// round-trip tests. A FrozenLake grid whose player has fallen into a hole
/// renders the player over the hole, so that one terminal case is not
/// reconstructible.
pub fn payload_from_symbols(kind: EnvKind, text: &str) -> Result<Payload, EnvError> {
    match kind {
        EnvKind::Sokoban => Ok(Payload::Sokoban(sokoban::parse(text)?)),
        EnvKind::FrozenLake => Ok(Payload::FrozenLake(frozen_lake::parse(text)?)),
        EnvKind::Sudoku => Ok(Payload::Sudoku(sudoku::parse(text)?)),
    }
}

pub fn payload_is_success(payload: &Payload) -> bool {
    match payload {
        Payload::Sokoban(board) => board.is_success(),
        Payload::FrozenLake(board) => board.is_success(),
        Payload::Sudoku(board) => board.is_success(),
    }
}

/// Applies one Sokoban move in place, bypassing the episode protocol.
/// Used by search code that explores board configurations directly.
/// Returns whether the move changed the board.
pub(crate) fn apply_sokoban_move(board: &mut SokobanBoard, dir: Action) -> bool {
    sokoban::apply(board, dir)
        .map(|o| o.effective)
        .unwrap_or(false)
}

pub(crate) fn offset(pos: Pos, delta: (isize, isize), grid_size: usize) -> Option<Pos> {
    let row = pos.0 as isize + delta.0;
    let col = pos.1 as isize + delta.1;
    if row < 0 || col < 0 || row >= grid_size as isize || col >= grid_size as isize {
        None
    } else {
        Some((row as usize, col as usize))
    }
}

//! Self-play world-modeling data engine for grid-world agents.
//!
//! The crate wires together:
//! - exact Sokoban / FrozenLake / Sudoku environments ([`env`]),
//! - coordinate-abstraction state text ([`state_rep`]),
//! - the tagged think/observation/prediction/answer output grammar
//!   ([`protocol`]),
//! - pluggable policies including scripted solver oracles and a remote
//!   chat-completions client ([`policy`]),
//! - trajectory collection, ground-truth rewriting and masked SFT dataset
//!   emission ([`selfplay`]),
//! - a tabular transition model with a planner ([`world_model`]),
//! - pass@k, perplexity and action-efficiency metrics ([`eval`]).

pub mod env;
pub mod eval;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod selfplay;
pub mod state_rep;
pub mod world_model;

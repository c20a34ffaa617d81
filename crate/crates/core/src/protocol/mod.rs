//! The tagged agent-output grammar and prompt construction.
//!
//! Agents answer with `<think>` ... `</think>` followed by `<answer>` ...
//! `</answer>`; in observation-then-prediction mode the think block must
//! carry `<observation>` and `<prediction>` sub-spans. Parsing is total:
//! arbitrary bytes either produce a [`ParsedTurn`] (possibly with soft
//! violations) or a [`ParseFailure`] carrying a populated verdict, never a
//! panic. Whitespace around tags and `||` separators is tolerated; the
//! first well-formed occurrence of each tag wins and later duplicates are
//! flagged.

mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvKind, DIRECTIONS};
use crate::state_rep::StateText;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const ACTION_SEPARATOR: &str = "||";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Base,
    ObservationThenPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Think,
    Observation,
    Prediction,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    MissingTag(Tag),
    TagOrder,
    EmptyTag(Tag),
    UnparseableAction(String),
    TrailingJunk,
    DuplicateTag(Tag),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl FormatVerdict {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            valid: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("agent output missing mandatory structure: {:?}", verdict.violations)]
pub struct ParseFailure {
    pub verdict: FormatVerdict,
}

/// One decomposed agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTurn {
    /// Character offsets of the `<think>`..`</think>` block in `raw`,
    /// inclusive of tags.
    pub think_span: (usize, usize),
    /// Current-state belief, trimmed; `None` when the tag is absent.
    pub observation_text: Option<String>,
    /// Next-state belief, trimmed.
    pub prediction_text: Option<String>,
    /// Think content outside the observation/prediction sub-spans, trimmed.
    pub free_reasoning: String,
    /// Trimmed text between the answer tags.
    pub answer_text: String,
    pub actions: Vec<Action>,
    pub raw: String,
    /// Soft issues found while parsing; hard structural failures surface as
    /// [`ParseFailure`] instead.
    pub parse_violations: Vec<Violation>,
}

pub fn parse_agent_output(text: &str, kind: EnvKind) -> Result<ParsedTurn, ParseFailure> {
    let mut violations: Vec<Violation> = Vec::new();

    let Some(think_open) = text.find(THINK_OPEN) else {
        return Err(hard_failure(vec![Violation::MissingTag(Tag::Think)]));
    };
    let inner_start = think_open + THINK_OPEN.len();
    let Some(close_rel) = text[inner_start..].find(THINK_CLOSE) else {
        return Err(hard_failure(vec![Violation::MissingTag(Tag::Think)]));
    };
    let inner_end = inner_start + close_rel;
    let think_end = inner_end + THINK_CLOSE.len();
    let think_inner = &text[inner_start..inner_end];

    let Some(ans_open_rel) = text[think_end..].find(ANSWER_OPEN) else {
        if text[..think_end].contains(ANSWER_OPEN) {
            return Err(hard_failure(vec![Violation::TagOrder]));
        }
        return Err(hard_failure(vec![Violation::MissingTag(Tag::Answer)]));
    };
    let ans_inner_start = think_end + ans_open_rel + ANSWER_OPEN.len();
    let Some(ans_close_rel) = text[ans_inner_start..].find(ANSWER_CLOSE) else {
        return Err(hard_failure(vec![Violation::MissingTag(Tag::Answer)]));
    };
    let ans_inner_end = ans_inner_start + ans_close_rel;
    let ans_end = ans_inner_end + ANSWER_CLOSE.len();

    let (observation, obs_range) = extract_block(think_inner, "observation", &mut violations);
    let (prediction, pred_range) = extract_block(think_inner, "prediction", &mut violations);
    if let (Some(o), Some(p)) = (&obs_range, &pred_range) {
        if p.0 < o.0 {
            push_unique(&mut violations, Violation::TagOrder);
        }
    }
    let free_reasoning = splice_out(think_inner, &[obs_range, pred_range])
        .trim()
        .to_string();

    let answer_text = text[ans_inner_start..ans_inner_end].trim().to_string();
    let mut actions = Vec::new();
    let mut saw_segment = false;
    for segment in answer_text.split(ACTION_SEPARATOR) {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        saw_segment = true;
        match parse_action(kind, segment) {
            Some(action) => actions.push(action),
            None => push_unique(
                &mut violations,
                Violation::UnparseableAction(segment.to_string()),
            ),
        }
    }
    if !saw_segment {
        push_unique(&mut violations, Violation::EmptyTag(Tag::Answer));
    }

    if text[think_end..].contains(THINK_OPEN) {
        push_unique(&mut violations, Violation::DuplicateTag(Tag::Think));
    }
    let rest = &text[ans_end..];
    if rest.contains(ANSWER_OPEN) {
        push_unique(&mut violations, Violation::DuplicateTag(Tag::Answer));
    }
    if !rest.trim().is_empty() {
        push_unique(&mut violations, Violation::TrailingJunk);
    }

    Ok(ParsedTurn {
        think_span: (char_offset(text, think_open), char_offset(text, think_end)),
        observation_text: observation,
        prediction_text: prediction,
        free_reasoning,
        answer_text,
        actions,
        raw: text.to_string(),
        parse_violations: violations,
    })
}

/// Mode-dependent validity. Both modes require at least one parsed action;
/// observation-then-prediction additionally requires nonempty observation
/// and prediction sub-spans.
pub fn validate_format(turn: &ParsedTurn, mode: PromptMode) -> FormatVerdict {
    let mut violations = turn.parse_violations.clone();
    if mode == PromptMode::ObservationThenPrediction {
        match &turn.observation_text {
            None => push_unique(&mut violations, Violation::MissingTag(Tag::Observation)),
            Some(s) if s.is_empty() => {
                push_unique(&mut violations, Violation::EmptyTag(Tag::Observation))
            }
            _ => {}
        }
        match &turn.prediction_text {
            None => push_unique(&mut violations, Violation::MissingTag(Tag::Prediction)),
            Some(s) if s.is_empty() => {
                push_unique(&mut violations, Violation::EmptyTag(Tag::Prediction))
            }
            _ => {}
        }
    }
    if turn.actions.is_empty()
        && !violations.iter().any(|v| {
            matches!(
                v,
                Violation::EmptyTag(Tag::Answer) | Violation::UnparseableAction(_)
            )
        })
    {
        violations.push(Violation::EmptyTag(Tag::Answer));
    }
    FormatVerdict::from_violations(violations)
}

/// Content-span positions inside a canonical rendering, in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnLayout {
    pub think: (usize, usize),
    pub observation_content: Option<(usize, usize)>,
    pub prediction_content: Option<(usize, usize)>,
    pub answer: (usize, usize),
}

/// Canonical serialization: parsing it back reproduces the observation,
/// prediction and action fields.
pub fn render_turn(turn: &ParsedTurn) -> String {
    render_turn_with_layout(turn).0
}

pub fn render_turn_with_layout(turn: &ParsedTurn) -> (String, TurnLayout) {
    let mut buf = CharBuf::default();
    buf.push(THINK_OPEN);
    buf.push("\n");
    let mut observation_content = None;
    if let Some(obs) = &turn.observation_text {
        buf.push("<observation>\n");
        let start = buf.chars;
        buf.push(obs);
        observation_content = Some((start, buf.chars));
        buf.push("\n</observation>\n");
    }
    if !turn.free_reasoning.is_empty() {
        buf.push(&turn.free_reasoning);
        buf.push("\n");
    }
    let mut prediction_content = None;
    if let Some(pred) = &turn.prediction_text {
        buf.push("<prediction>\n");
        let start = buf.chars;
        buf.push(pred);
        prediction_content = Some((start, buf.chars));
        buf.push("\n</prediction>\n");
    }
    buf.push(THINK_CLOSE);
    let think = (0, buf.chars);
    buf.push("\n");
    let answer_start = buf.chars;
    buf.push(ANSWER_OPEN);
    if turn.actions.is_empty() {
        buf.push(&turn.answer_text);
    } else {
        let body = turn
            .actions
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(" || ");
        buf.push(&body);
    }
    buf.push(ANSWER_CLOSE);
    let layout = TurnLayout {
        think,
        observation_content,
        prediction_content,
        answer: (answer_start, buf.chars),
    };
    (buf.text, layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub kind: EnvKind,
    pub mode: PromptMode,
    pub system_text: String,
}

impl PromptTemplate {
    pub fn new(kind: EnvKind, mode: PromptMode, grid_size: usize) -> Self {
        let system_text = match (kind, mode) {
            (EnvKind::Sokoban, PromptMode::Base) => templates::sokoban_base(grid_size),
            (EnvKind::Sokoban, PromptMode::ObservationThenPrediction) => {
                templates::sokoban_observation_then_prediction(grid_size)
            }
            (EnvKind::FrozenLake, PromptMode::Base) => templates::FROZEN_LAKE_BASE.to_string(),
            (EnvKind::FrozenLake, PromptMode::ObservationThenPrediction) => {
                templates::frozen_lake_observation_then_prediction()
            }
            (EnvKind::Sudoku, PromptMode::Base) => templates::sudoku_base(),
            (EnvKind::Sudoku, PromptMode::ObservationThenPrediction) => {
                templates::sudoku_observation_then_prediction()
            }
        };
        Self {
            kind,
            mode,
            system_text,
        }
    }
}

/// One already-played turn as it appears in the conversation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub state: StateText,
    pub raw_output: String,
    pub reward: f64,
}

/// System text, alternating turn blocks (state, agent output, reward
/// feedback), then the current state block.
pub fn build_prompt(
    template: &PromptTemplate,
    history: &[HistoryTurn],
    current: &StateText,
) -> String {
    let mut out = String::new();
    out.push_str(&template.system_text);
    out.push('\n');
    for (i, turn) in history.iter().enumerate() {
        out.push_str(&format!(
            "\nTurn {}:\nState:\n{}\n{}\nReward: {:.2}\n",
            i + 1,
            turn.state.composed,
            turn.raw_output,
            turn.reward
        ));
    }
    out.push_str(&format!(
        "\nTurn {}:\nState:\n{}",
        history.len() + 1,
        current.composed
    ));
    out
}

pub fn parse_action(kind: EnvKind, segment: &str) -> Option<Action> {
    match kind {
        EnvKind::Sokoban | EnvKind::FrozenLake => DIRECTIONS
            .into_iter()
            .find(|d| segment.eq_ignore_ascii_case(&d.to_string())),
        EnvKind::Sudoku => {
            let parts: Vec<&str> = segment.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return None;
            }
            let row: u8 = parts[0].parse().ok()?;
            let col: u8 = parts[1].parse().ok()?;
            let value: u8 = parts[2].parse().ok()?;
            if (1..=4).contains(&row) && (1..=4).contains(&col) && (1..=4).contains(&value) {
                Some(Action::Fill { row, col, value })
            } else {
                None
            }
        }
    }
}

fn hard_failure(violations: Vec<Violation>) -> ParseFailure {
    ParseFailure {
        verdict: FormatVerdict::from_violations(violations),
    }
}

fn push_unique(violations: &mut Vec<Violation>, v: Violation) {
    if !violations.contains(&v) {
        violations.push(v);
    }
}

/// Finds `<name>`...`</name>` inside the think content. Returns the trimmed
/// content and the byte range of the whole block; an unclosed tag is flagged
/// and treated as absent, a second occurrence is flagged as a duplicate.
fn extract_block(
    inner: &str,
    name: &str,
    violations: &mut Vec<Violation>,
) -> (Option<String>, Option<(usize, usize)>) {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let tag = if name == "observation" {
        Tag::Observation
    } else {
        Tag::Prediction
    };
    let Some(start) = inner.find(&open) else {
        return (None, None);
    };
    let content_start = start + open.len();
    let Some(close_rel) = inner[content_start..].find(&close) else {
        push_unique(violations, Violation::MissingTag(tag));
        return (None, None);
    };
    let content_end = content_start + close_rel;
    let block_end = content_end + close.len();
    if inner[block_end..].contains(&open) {
        push_unique(violations, Violation::DuplicateTag(tag));
    }
    (
        Some(inner[content_start..content_end].trim().to_string()),
        Some((start, block_end)),
    )
}

/// Removes the given byte ranges from `text`.
fn splice_out(text: &str, ranges: &[Option<(usize, usize)>]) -> String {
    let mut keep: Vec<(usize, usize)> = Vec::new();
    let mut sorted: Vec<(usize, usize)> = ranges.iter().flatten().copied().collect();
    sorted.sort_unstable();
    let mut cursor = 0;
    for (start, end) in sorted {
        if start > cursor {
            keep.push((cursor, start));
        }
        cursor = cursor.max(end);
    }
    if cursor < text.len() {
        keep.push((cursor, text.len()));
    }
    keep.iter().map(|&(s, e)| &text[s..e]).collect()
}

fn char_offset(text: &str, byte_offset: usize) -> usize {
    text[..byte_offset].chars().count()
}

#[derive(Default)]
struct CharBuf {
    text: String,
    chars: usize,
}

impl CharBuf {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }
}

//! System prompt texts for the six (environment, mode) template pairs.
//!
//! The Sokoban coordinate-range sentence adapts to the configured grid size;
//! everything else is fixed text, including the worked sample outputs
//! embedded in the observation-then-prediction variants.

pub(super) fn sokoban_base(grid_size: usize) -> String {
    let n = grid_size - 1;
    format!(
        "You are solving the Sokoban puzzle.\n\
         You are the player and you need to push all boxes to targets.\n\
         You are provided with a symbol grid and the zero-indexed coordinates of the player, each box, and each target.\n\
         Coordinates range from the top-left corner (0, 0) to the bottom-right corner ({n}, {n}).\n\
         When you are exactly next to a box, you can push it by moving in the same direction.\n\
         You cannot push a box through a wall, and you cannot pull a box.\n\
         The answer should be a sequence of actions, like <answer>Right || Right || Up</answer>."
    )
}

pub(super) fn sokoban_observation_then_prediction(grid_size: usize) -> String {
    format!(
        "{}\n\nA sample full output is as follows:\n{SOKOBAN_SAMPLE}",
        sokoban_base(grid_size)
    )
}

const SOKOBAN_SAMPLE: &str = "<think>\n\
<observation>\n\
######\n\
#_####\n\
#_P###\n\
#_X#_#\n\
#__O_#\n\
######\n\
Player (P) is at (2,2); box (X) is at (3,2); target (O) is at (4,3).\n\
</observation>\n\
1 Down - I push box to (4,2).\n\
2 Left - I step to (3,1).\n\
3 Down - I stand left of box, ready to push it Right onto target.\n\
<prediction>\n\
######\n\
#_####\n\
#__###\n\
#__#_#\n\
#PXO_#\n\
######\n\
</prediction>\n\
</think>\n\
<answer> Down || Left || Down </answer>";

pub(super) const FROZEN_LAKE_BASE: &str = "You are solving the FrozenLake puzzle.\n\
Forbid the whole and go to the target.\n\
You may move to the unintended direction due to the slippery ice.\n\
Example answer format:\n\
<think>To forbid the hole and go to the target, I should go left then go up.\n\
</think>\n\
<answer>Left || Up</answer>";

pub(super) fn frozen_lake_observation_then_prediction() -> String {
    format!("{FROZEN_LAKE_BASE}\n\nA sample full output is as follows:\n{FROZEN_LAKE_SAMPLE}")
}

const FROZEN_LAKE_SAMPLE: &str = "<think>\n\
<observation>\n\
_O__\n\
O___\n\
G___\n\
__P_\n\
</observation>\n\
Player at (3,2); holes at (0,1) and (1,0); goal at (2,0). 1 Up \u{2013} move to safe ice (2,2). 2 Left \u{2013} slide to (2,1), adjacent to goal. 3 Left \u{2013} reach goal (2,0); player now on G.\n\
<prediction>\n\
_O__\n\
O___\n\
√___\n\
____\n\
</prediction>\n\
</think>\n\
<answer> Up || Left || Left </answer>";

const SUDOKU_HEADER: &str = "You are solving 4x4 Sudoku.\n\
Fill empty cells with digits 1\u{2013}4.\n\
Use a 1-indexed grid (rows/cols start at 1).\n\
A move is exactly: row,col,value (three integers).\n\
In one turn you may output multiple moves, separated by ||.\n\
Only propose moves that keep the row, column, and 2x2 subgrid valid. Always output EXACTLY as:\n\
<think>[brief reasoning]</think>\n\
<answer>[r,c,v || r,c,v ...]</answer>\n\
No extra text outside the two tags.\n\
Keep the response under 50 words.";

pub(super) fn sudoku_base() -> String {
    format!(
        "{SUDOKU_HEADER}\n\
         Example:\n\
         <think>Row 1 has one empty cell \u{2192} place 1. Column 2 then needs 2.\n\
         </think>\n\
         <answer>1,3,1 || 3,2,2</answer>"
    )
}

pub(super) fn sudoku_observation_then_prediction() -> String {
    format!("{SUDOKU_HEADER}\n\nAn example output:\n{SUDOKU_SAMPLE}")
}

const SUDOKU_SAMPLE: &str = "<think>\n\
<observation>\n\
| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2\n\
Empty positions to be filled are at (1,1), (1,2), (2,3), (3,3), (3,4), (4,1)\n\
</observation>\n\
<prediction>\n\
| 2 3 1 4 | 1 4 2 3 | 4 2 3 1 | . 1 4 2\n\
Empty positions to be filled are at (4,1)\n\
</prediction>\n\
</think>\n\
<answer> 1,1,2 || 1,2,3 || 2,3,2 || 3,3,3 || 3,4,1 </answer>";

#[cfg(test)]
pub(super) fn sokoban_sample() -> &'static str {
    SOKOBAN_SAMPLE
}

#[cfg(test)]
pub(super) fn frozen_lake_sample() -> &'static str {
    FROZEN_LAKE_SAMPLE
}

#[cfg(test)]
pub(super) fn sudoku_sample() -> &'static str {
    SUDOKU_SAMPLE
}

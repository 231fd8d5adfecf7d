//! Learning-rate and dropout schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// Decay applied continuously at fractional epochs.
    #[default]
    Continuous,
    /// Decay applied only after each whole decay period.
    Staircase,
}

/// lr0 · factor^(epoch / period), or with the exponent floored in
/// staircase mode.
pub fn lr_at(epoch: f64, lr0: f64, factor: f64, period: f64, mode: DecayMode) -> f64 {
    let e = epoch / period;
    let e = match mode {
        DecayMode::Continuous => e,
        DecayMode::Staircase => e.floor(),
    };
    lr0 * factor.powf(e)
}

/// Linear interpolation from `start` at the first block to `end` at the last.
pub fn dropout_rate_for_block(block_index: usize, n_blocks: usize, start: f64, end: f64) -> Result<f64> {
    if block_index >= n_blocks {
        return Err(Error::Argument(format!(
            "block index {block_index} out of range for {n_blocks} blocks"
        )));
    }
    if n_blocks > 1 && block_index == n_blocks - 1 {
        return Ok(end);
    }
    let denom = (n_blocks - 1).max(1) as f64;
    Ok(start + (end - start) * block_index as f64 / denom)
}

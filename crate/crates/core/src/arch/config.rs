use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::norm::{DEFAULT_EPS, DEFAULT_MOMENTUM};

/// Whether a stage widens or narrows relative to the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Expansion,
    Compression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Width change from the previous stage. Must be absent on the first
    /// stage (it runs at the stem width) and present on every later one.
    pub phase: Option<Phase>,
    pub num_units: usize,
    pub kernel: usize,
    /// Halve the spatial extent on entry to this stage.
    pub downsample: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (C, H, W) of one input image.
    pub input_shape: [usize; 3],
    pub stem_width: usize,
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default)]
    pub alpha_learnable: bool,
    pub dropout_start: f64,
    pub dropout_end: f64,
    pub seed: u64,
    #[serde(default = "default_expansion")]
    pub expansion_factor: f64,
    #[serde(default = "default_compression")]
    pub compression_factor: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    /// Bound on the per-unit-index channel sum across stages.
    #[serde(default)]
    pub c_max: Option<u64>,
    /// Bound on the per-stage kernel-size sum across units.
    #[serde(default)]
    pub k_max: Option<u64>,
}

fn default_expansion() -> f64 {
    2.0
}
fn default_compression() -> f64 {
    0.5
}
fn default_bn_eps() -> f64 {
    DEFAULT_EPS
}
fn default_bn_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

const WIDTH_FACTORS: [f64; 3] = [0.5, 1.0, 2.0];

/// Widths [f0, f1, …] with f_k = gamma·f_{k−1} on expansion and
/// delta·f_{k−1} on compression. Every width must come out a positive
/// integer.
pub fn width_schedule(f0: usize, phases: &[Phase], gamma: f64, delta: f64) -> Result<Vec<usize>> {
    if f0 == 0 {
        return Err(Error::Config("stem width must be at least 1".into()));
    }
    let mut widths = vec![f0];
    let mut current = f0 as f64;
    for (i, phase) in phases.iter().enumerate() {
        let factor = match phase {
            Phase::Expansion => gamma,
            Phase::Compression => delta,
        };
        current *= factor;
        if current.fract() != 0.0 || current < 1.0 {
            return Err(Error::Config(format!(
                "width schedule gives non-integral width {current} at step {} (widths must be positive integers)",
                i + 1
            )));
        }
        widths.push(current as usize);
    }
    Ok(widths)
}

impl ModelConfig {
    pub fn input_channels(&self) -> usize {
        self.input_shape[0]
    }

    /// Width of every stage, first stage at the stem width.
    pub fn stage_widths(&self) -> Result<Vec<usize>> {
        if self.stages.is_empty() {
            return Ok(Vec::new());
        }
        let phases: Vec<Phase> = self.stages.iter().skip(1).filter_map(|s| s.phase).collect();
        width_schedule(self.stem_width, &phases, self.expansion_factor, self.compression_factor)
    }

    /// (H, W) seen by each stage.
    pub fn stage_resolutions(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        self.stages
            .iter()
            .map(|s| {
                if s.downsample {
                    h /= 2;
                    w /= 2;
                }
                (h, w)
            })
            .collect()
    }

    pub fn total_units(&self) -> usize {
        self.stages.iter().map(|s| s.num_units).sum()
    }

    /// Checks every structural invariant; the message names the rule broken.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.input_shape.iter().any(|&d| d == 0) {
            return cfg(format!("input_shape {:?} must have positive extents", self.input_shape));
        }
        if self.num_classes == 0 {
            return cfg("num_classes must be at least 1".into());
        }
        for (name, f) in [("expansion_factor", self.expansion_factor), ("compression_factor", self.compression_factor)] {
            if !WIDTH_FACTORS.contains(&f) {
                return cfg(format!("{name} {f} is not a permitted width factor (must be one of 1/2, 1, 2)"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_start) || !(0.0..1.0).contains(&self.dropout_end) {
            return cfg(format!(
                "dropout rates ({}, {}) must lie in [0, 1)",
                self.dropout_start, self.dropout_end
            ));
        }
        if self.dropout_start > self.dropout_end {
            return cfg(format!(
                "dropout_start {} exceeds dropout_end {} (rates must not decrease with depth)",
                self.dropout_start, self.dropout_end
            ));
        }
        if !self.alpha1.is_finite() || !self.alpha2.is_finite() {
            return cfg("skip weights alpha1/alpha2 must be finite".into());
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return cfg("bn_eps must be positive and bn_momentum must lie in (0, 1)".into());
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.num_units == 0 {
                return cfg(format!("stage {i}: num_units must be at least 1"));
            }
            if !matches!(stage.kernel, 3 | 5 | 7) {
                return cfg(format!("stage {i}: kernel {} not in {{3, 5, 7}}", stage.kernel));
            }
            if i == 0 && (stage.phase.is_some() || stage.downsample) {
                return cfg("stage 0 runs at the stem width: phase must be null and downsample false".into());
            }
            if i > 0 && stage.phase.is_none() {
                return cfg(format!("stage {i}: phase (expansion|compression) is required"));
            }
        }
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.downsample {
                if h < 2 || w < 2 {
                    return cfg(format!("stage {i}: input {h}x{w} too small to downsample"));
                }
                h /= 2;
                w /= 2;
            }
        }
        self.stage_widths()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

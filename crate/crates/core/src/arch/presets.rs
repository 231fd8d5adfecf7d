use crate::arch::config::{ModelConfig, Phase, StageConfig};
use crate::error::{Error, Result};

pub const PRESETS: [&str; 3] = ["cifar-32", "cifar-64", "mini"];

/// Kernel size for a stage running at `extent` pixels.
pub fn kernel_for_extent(extent: usize) -> usize {
    match extent {
        e if e >= 32 => 7,
        e if e >= 16 => 5,
        _ => 3,
    }
}

/// Square-input configuration at stem width 64: four stages at 32×32 and
/// one more per doubling of the resolution, phases alternating expansion
/// and compression, two units per stage.
pub fn preset_for_resolution(resolution: usize, num_classes: usize) -> Result<ModelConfig> {
    if resolution < 32 || !resolution.is_power_of_two() {
        return Err(Error::Config(format!(
            "resolution {resolution} must be a power of two of at least 32"
        )));
    }
    let extra = (resolution / 32).trailing_zeros() as usize;
    let mut stages = Vec::new();
    let mut extent = resolution;
    for i in 0..4 + extra {
        let downsample = i > 0;
        if downsample {
            extent /= 2;
        }
        let phase = match i {
            0 => None,
            i if i % 2 == 1 => Some(Phase::Expansion),
            _ => Some(Phase::Compression),
        };
        stages.push(StageConfig {
            phase,
            num_units: 2,
            kernel: kernel_for_extent(extent),
            downsample,
        });
    }
    Ok(ModelConfig {
        input_shape: [3, resolution, resolution],
        stem_width: 64,
        stages,
        num_classes,
        ..base()
    })
}

fn base() -> ModelConfig {
    ModelConfig {
        input_shape: [3, 32, 32],
        stem_width: 64,
        stages: Vec::new(),
        num_classes: 10,
        alpha1: 1.0,
        alpha2: 1.0,
        alpha_learnable: false,
        dropout_start: 0.3,
        dropout_end: 0.5,
        seed: 0,
        expansion_factor: 2.0,
        compression_factor: 0.5,
        bn_eps: crate::nn::norm::DEFAULT_EPS,
        bn_momentum: crate::nn::norm::DEFAULT_MOMENTUM,
        c_max: None,
        k_max: None,
    }
}

/// Two-stage, width-8 network on 16×16 inputs for tests and desk runs.
pub fn mini() -> ModelConfig {
    ModelConfig {
        input_shape: [3, 16, 16],
        stem_width: 8,
        stages: vec![
            StageConfig { phase: None, num_units: 2, kernel: 3, downsample: false },
            StageConfig { phase: Some(Phase::Expansion), num_units: 2, kernel: 3, downsample: true },
        ],
        num_classes: 2,
        ..base()
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "cifar-32" => preset_for_resolution(32, 10),
        "cifar-64" => preset_for_resolution(64, 10),
        "mini" => Ok(mini()),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; available presets: {}",
            PRESETS.join(", ")
        ))),
    }
}

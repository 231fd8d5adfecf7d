//! Datasets, augmentation and tiling.

pub mod augment;
pub mod cifar;
pub mod synthetic;
pub mod tile;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentPolicy};
pub use cifar::{load_cifar10_binary, load_cifar10_dir, write_cifar10_binary};
pub use synthetic::synthetic_dataset;
pub use tile::{tile_image, tile_offsets};

/// One image of shape (1, C, H, W) with values in [0, 1], and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

/// Stacks images into a batch and collects their labels.
pub fn batch(images: &[&LabeledImage]) -> Result<(Tensor, Vec<usize>)> {
    if images.is_empty() {
        return Err(Error::Data("cannot batch zero images".into()));
    }
    let pixels: Vec<&Tensor> = images.iter().map(|i| &i.pixels).collect();
    Ok((Tensor::stack(&pixels)?, images.iter().map(|i| i.label).collect()))
}

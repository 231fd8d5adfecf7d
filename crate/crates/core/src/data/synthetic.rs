//! Linearly separable synthetic images: a dim background with one bright
//! cell whose position encodes the class, plus Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
const BASE: f64 = 0.25;
const BRIGHT: f64 = 0.5;
const NOISE_STD: f64 = 0.1;

/// Grid side used to place class cells: quadrants for up to four classes.
fn grid_side(num_classes: usize) -> usize {
    if num_classes <= 4 {
        2
    } else {
        (num_classes as f64).sqrt().ceil() as usize
    }
}

fn in_class_cell(class: usize, g: usize, size: usize, h: usize, w: usize) -> bool {
    let (row, col) = (class / g, class % g);
    let cell = |i: usize, k: usize| i * g / size == k;
    cell(h, row) && cell(w, col)
}

/// `n` images of 3×size×size; labels cycle through the classes so counts
/// differ by at most one.
pub fn synthetic_dataset(n: usize, num_classes: usize, size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::Argument(format!(
            "need at least one image per class, got n={n} for {num_classes} classes"
        )));
    }
    let g = grid_side(num_classes);
    if size < g {
        return Err(Error::Argument(format!("size {size} too small for a {g}x{g} class grid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    (0..n)
        .map(|i| {
            let label = i % num_classes;
            let pixels = Tensor::from_fn((1, CHANNELS, size, size), |_, _, h, w| {
                let level = if in_class_cell(label, g, size, h, w) { BASE + BRIGHT } else { BASE };
                (level + noise.sample(&mut rng)).clamp(0.0, 1.0)
            });
            Ok(LabeledImage { pixels, label })
        })
        .collect()
}

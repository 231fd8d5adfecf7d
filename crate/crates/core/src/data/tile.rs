//! Sliding-window tiling with edge-inclusive offsets.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Offsets 0, step, 2·step, … up to `len − tile`, plus `len − tile` itself
/// when the stride does not land on it.
pub fn tile_offsets(len: usize, tile: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 {
        return Err(Error::Argument("tiling step must be at least 1".into()));
    }
    if tile == 0 || tile > len {
        return Err(Error::Argument(format!("tile extent {tile} does not fit in {len}")));
    }
    let last = len - tile;
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    Ok(out)
}

/// Every tile of (N, C, tile_h, tile_w) in row-major order of offsets.
pub fn tile_image(pixels: &Tensor, tile_h: usize, tile_w: usize, step: usize) -> Result<Vec<Tensor>> {
    let s = pixels.shape();
    let rows = tile_offsets(s.h, tile_h, step)?;
    let cols = tile_offsets(s.w, tile_w, step)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push(Tensor::from_fn(Shape::new(s.n, s.c, tile_h, tile_w), |n, ch, h, w| {
                pixels.at(n, ch, r + h, c + w)
            }));
        }
    }
    Ok(out)
}

//! The CIFAR-10 binary layout: per record one label byte then 3072 pixel
//! bytes, 1024 per colour plane, each plane row-major 32×32.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD: usize = 1 + PIXELS;

pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 data is {} bytes, not a multiple of the {RECORD}-byte record",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label > 9 {
                return Err(Error::Data(format!("record {i}: label {label} is not a CIFAR-10 class")));
            }
            let data = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(LabeledImage {
                pixels: Tensor::new((1, 3, SIDE, SIDE), data)?,
                label,
            })
        })
        .collect()
}

pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_cifar10(&bytes)
}

/// Encodes images in the binary layout, rounding pixels to the nearest
/// 1/255 step.
pub fn encode_cifar10(images: &[LabeledImage]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * RECORD);
    for (i, img) in images.iter().enumerate() {
        let s = img.pixels.shape();
        if (s.n, s.c, s.h, s.w) != (1, 3, SIDE, SIDE) {
            return Err(Error::Data(format!("image {i} has shape {s}, expected 1x3x32x32")));
        }
        let label = u8::try_from(img.label)
            .ok()
            .filter(|l| *l <= 9)
            .ok_or_else(|| Error::Data(format!("image {i}: label {} is not a CIFAR-10 class", img.label)))?;
        out.push(label);
        out.extend(img.pixels.data().iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar10_binary(path: impl AsRef<Path>, images: &[LabeledImage]) -> Result<()> {
    fs::write(path, encode_cifar10(images)?)?;
    Ok(())
}

fn batches_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir` (or its
/// `cifar-10-batches-bin` subdirectory). Returns (train, test).
pub fn load_cifar10_dir(dir: impl AsRef<Path>) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let dir = batches_dir(dir.as_ref());
    let mut train = Vec::new();
    for i in 1..=5 {
        let p = dir.join(format!("data_batch_{i}.bin"));
        if p.exists() {
            train.extend(load_cifar10_binary(&p)?);
        }
    }
    if train.is_empty() {
        return Err(Error::Data(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    let test = load_cifar10_binary(dir.join("test_batch.bin"))?;
    Ok((train, test))
}

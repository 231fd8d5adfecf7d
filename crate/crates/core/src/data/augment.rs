//! Random flips, rotation, shear and crop-resize with bilinear resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub flip_horizontal: bool,
    pub rotation_degrees: (f64, f64),
    pub shear: (f64, f64),
    /// (crop_size, out_size): take a random square window, resize it.
    pub crop: Option<(usize, usize)>,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self {
            flip_horizontal: false,
            rotation_degrees: (0.0, 0.0),
            shear: (0.0, 0.0),
            crop: None,
        }
    }

    pub fn cifar() -> Self {
        Self {
            flip_horizontal: true,
            rotation_degrees: (-60.0, 60.0),
            shear: (-0.05, 0.25),
            crop: Some((26, 32)),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "cifar" => Ok(Self::cifar()),
            other => Err(Error::Config(format!("unknown augmentation policy {other:?} (none, cifar)"))),
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        for (what, (lo, hi)) in [("rotation", self.rotation_degrees), ("shear", self.shear)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Argument(format!("{what} range ({lo}, {hi}) must have lo <= hi")));
            }
        }
        if let Some((crop, out)) = self.crop {
            if crop == 0 || out == 0 || crop > h || crop > w {
                return Err(Error::Argument(format!("crop {crop} does not fit a {h}x{w} image")));
            }
        }
        Ok(())
    }
}

fn bilinear(src: &Tensor, c: usize, y: f64, x: f64) -> f64 {
    let s = src.shape();
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (y, x) = (snap(y), snap(x));
    let (y0, x0) = (y.floor(), x.floor());
    let (dy, dx) = (y - y0, x - x0);
    let get = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= s.h as f64 || xx >= s.w as f64 {
            0.0
        } else {
            src.at(0, c, yy as usize, xx as usize)
        }
    };
    let mut v = get(y0, x0) * (1.0 - dy) * (1.0 - dx);
    if dx != 0.0 {
        v += get(y0, x0 + 1.0) * (1.0 - dy) * dx;
    }
    if dy != 0.0 {
        v += get(y0 + 1.0, x0) * dy * (1.0 - dx);
        if dx != 0.0 {
            v += get(y0 + 1.0, x0 + 1.0) * dy * dx;
        }
    }
    v
}

/// Resamples about the image centre: output (y, x) reads the source at
/// `inverse · (x, y)` in centred coordinates, zero outside.
fn warp(src: &Tensor, inverse: [[f64; 2]; 2]) -> Tensor {
    let s = src.shape();
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    Tensor::from_fn(s, |_, c, h, w| {
        let (u, v) = (w as f64 - cx, h as f64 - cy);
        let sx = inverse[0][0] * u + inverse[0][1] * v + cx;
        let sy = inverse[1][0] * u + inverse[1][1] * v + cy;
        bilinear(src, c, sy, sx)
    })
}

/// Rotation by `degrees` composed with a horizontal shear x' = x + s·y.
pub fn rotate_shear(src: &Tensor, degrees: f64, shear: f64) -> Tensor {
    let t = degrees.to_radians();
    let (sin, cos) = t.sin_cos();
    // forward = R · S with S = [[1, s], [0, 1]]; inverse = S⁻¹ · R⁻¹.
    let r_inv = [[cos, sin], [-sin, cos]];
    let inverse = [
        [r_inv[0][0] - shear * r_inv[1][0], r_inv[0][1] - shear * r_inv[1][1]],
        [r_inv[1][0], r_inv[1][1]],
    ];
    warp(src, inverse)
}

pub fn flip_horizontal(src: &Tensor) -> Tensor {
    let s = src.shape();
    Tensor::from_fn(s, |n, c, h, w| src.at(n, c, h, s.w - 1 - w))
}

/// Crops the `size`×`size` window at (top, left) and resizes it to
/// `out`×`out` with half-pixel-centre bilinear sampling.
pub fn crop_resize(src: &Tensor, top: usize, left: usize, size: usize, out: usize) -> Tensor {
    let s = src.shape();
    let scale = size as f64 / out as f64;
    let edge = (size - 1) as f64;
    Tensor::from_fn(Shape::new(1, s.c, out, out), |_, c, h, w| {
        let y = ((h as f64 + 0.5) * scale - 0.5).clamp(0.0, edge) + top as f64;
        let x = ((w as f64 + 0.5) * scale - 0.5).clamp(0.0, edge) + left as f64;
        bilinear(src, c, y, x)
    })
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Applies the policy with parameters drawn from `seed`. Every draw happens
/// whether or not its transform is active, so streams stay aligned.
pub fn augment(img: &LabeledImage, policy: &AugmentPolicy, seed: u64) -> Result<LabeledImage> {
    let s = img.pixels.shape();
    if s.n != 1 {
        return Err(Error::Argument(format!("augment expects a single image, got {s}")));
    }
    policy.validate(s.h, s.w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(0.5);
    let angle = uniform(&mut rng, policy.rotation_degrees);
    let shear = uniform(&mut rng, policy.shear);
    let (ty, tx): (f64, f64) = (rng.random(), rng.random());

    let mut px = img.pixels.clone();
    if policy.flip_horizontal && flip {
        px = flip_horizontal(&px);
    }
    if angle != 0.0 || shear != 0.0 {
        px = rotate_shear(&px, angle, shear);
    }
    if let Some((size, out)) = policy.crop {
        let pick = |u: f64, len: usize| ((u * (len - size + 1) as f64) as usize).min(len - size);
        px = crop_resize(&px, pick(ty, s.h), pick(tx, s.w), size, out);
    }
    Ok(LabeledImage { pixels: px, label: img.label })
}

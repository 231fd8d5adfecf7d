#![allow(dead_code)]

use adaptovision::arch::Model;
use adaptovision::nn::{self, BatchNormParams, ConvParams, Mode};
use adaptovision::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(-1.0..1.0))
}

/// Direct cross-correlation over raw NCHW buffers, written without any of
/// the crate's indexing helpers.
pub fn naive_conv(
    x: &[f64],
    (n, c_in, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for co in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[co]);
                    for ci in 0..c_in {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let s = (j * stride + v) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c_in + ci) * h + r as usize) * w + s as usize;
                                let ki = ((co * c_in + ci) * kh + u) * kw + v;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[((b * c_out + co) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Every top-left offset of a `tile`-wide window over `len`, by scanning
/// all positions and keeping the step-aligned ones plus the last one.
pub fn brute_offsets(len: usize, tile: usize, step: usize) -> Vec<usize> {
    let last = len - tile;
    (0..=last).filter(|&o| o % step == 0 || o == last).collect()
}

fn bn_from(model: &Model, name: &str) -> BatchNormParams {
    let p = model.params();
    let v = |s: &str| p.tensor(&format!("{name}.{s}")).unwrap().data().to_vec();
    BatchNormParams {
        gamma: v("gamma"),
        beta: v("beta"),
        running_mean: v("running_mean"),
        running_var: v("running_var"),
        eps: model.config().bn_eps,
        momentum: model.config().bn_momentum,
    }
}

fn conv_from(model: &Model, name: &str) -> ConvParams {
    let p = model.params();
    let k = p.tensor(&format!("{name}.weight")).unwrap().clone();
    let pad = (k.shape().h - 1) / 2;
    let bias = p.tensor(&format!("{name}.bias")).ok().cloned();
    ConvParams::new(k, bias, 1, pad)
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let s = a.shape();
    let hw = s.spatial();
    let broadcast = b.shape() != s;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + if broadcast { b.data()[i / hw] } else { b.data()[i] })
        .collect();
    Tensor::new(s, data).unwrap()
}

fn scaled(a: &Tensor, f: f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().map(|v| v * f).collect()).unwrap()
}

/// Stage outputs of the network with every residual branch removed:
/// stem, transitions, and the fixed-weight skip recurrence, built from
/// tensor-level layer calls.
pub fn skip_only_stages(model: &Model, x: &Tensor, mode: Mode) -> Vec<Tensor> {
    let cfg = model.config();
    let (a1, a2) = (cfg.alpha1, cfg.alpha2);
    let mut h = nn::conv2d(x, &conv_from(model, "stem.conv")).unwrap();
    h = nn::batch_norm(&h, &mut bn_from(model, "stem.bn"), mode).unwrap();
    h = nn::elu(&h, 1.0).unwrap();
    let mut outs = Vec::new();
    for (s, stage) in cfg.stages.iter().enumerate() {
        if s > 0 {
            let p = format!("stage{s}.transition");
            let mut main = if stage.downsample { nn::max_pool(&h, 2, 2).unwrap() } else { h.clone() };
            if model.params().contains(&format!("{p}.align.weight")) {
                main = nn::conv2d(&main, &conv_from(model, &format!("{p}.align"))).unwrap();
            }
            main = nn::batch_norm(&main, &mut bn_from(model, &format!("{p}.bn")), mode).unwrap();
            main = nn::elu(&main, 1.0).unwrap();
            let g = nn::global_avg_pool(&h).unwrap();
            let short = nn::conv2d(&g, &conv_from(model, &format!("{p}.shortcut"))).unwrap();
            h = add(&main, &short);
        }
        let mut prev2: Option<Tensor> = None;
        for _ in 0..stage.num_units {
            let mut y = scaled(&h, a1);
            if let Some(p2) = &prev2 {
                y = add(&y, &scaled(p2, a2));
            }
            prev2 = Some(h);
            h = y;
        }
        outs.push(h.clone());
    }
    outs
}

//! Max, average and global average pooling.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::nn::conv::output_extent;
use crate::tensor::{Shape, Tensor};

fn pooled_shape(s: Shape, k: usize, stride: usize) -> Result<Shape> {
    if s.h < k || s.w < k {
        return shape_err(format!("pooling window {k} larger than input {}x{}", s.h, s.w));
    }
    Ok(Shape::new(s.n, s.c, output_extent(s.h, k, stride, 0)?, output_extent(s.w, k, stride, 0)?))
}

impl<'t> Var<'t> {
    /// Window maximum. Ties go to the first element in row-major order.
    pub fn max_pool(&self, k: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        let os = pooled_shape(s, k, stride)?;
        let mut out = Vec::with_capacity(os.numel());
        let mut argmax = Vec::with_capacity(os.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let mut best = s.offset(n, c, oy * stride, ox * stride);
                        for i in 0..k {
                            for j in 0..k {
                                let idx = s.offset(n, c, oy * stride + i, ox * stride + j);
                                if x.data()[idx] > x.data()[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x.data()[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        Ok(self.record(Tensor::new(os, out)?, Op::MaxPool { x: self.id, argmax }, &[*self]))
    }

    /// Window mean.
    pub fn avg_pool(&self, k: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        let os = pooled_shape(s, k, stride)?;
        let inv = 1.0 / (k * k) as f64;
        let out = Tensor::from_fn(os, |n, c, oy, ox| {
            let mut acc = 0.0;
            for i in 0..k {
                for j in 0..k {
                    acc += x.at(n, c, oy * stride + i, ox * stride + j);
                }
            }
            acc * inv
        });
        Ok(self.record(out, Op::AvgPool { x: self.id, k, stride }, &[*self]))
    }

    /// Per-channel spatial mean, shaped (N, C, 1, 1).
    pub fn global_avg_pool(&self) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.spatial() == 0 {
            return shape_err(format!("global average pooling of empty spatial extent {s}"));
        }
        let inv = 1.0 / s.spatial() as f64;
        let data = x.data().chunks(s.spatial()).map(|ch| ch.iter().sum::<f64>() * inv).collect();
        let out = Tensor::new((s.n, s.c, 1, 1), data)?;
        Ok(self.record(out, Op::GlobalAvgPool { x: self.id }, &[*self]))
    }
}

/// Per-(n, c) sum over the spatial axes, shaped (N, C, 1, 1).
pub(crate) fn spatial_sum(g: &Tensor) -> Tensor {
    let s = g.shape();
    let data = g.data().chunks(s.spatial().max(1)).map(|ch| ch.iter().sum()).collect();
    Tensor::new((s.n, s.c, 1, 1), data).expect("one entry per channel")
}

pub(crate) fn avg_pool_backward(input: Shape, g: &Tensor, k: usize, stride: usize) -> Tensor {
    let os = g.shape();
    let inv = 1.0 / (k * k) as f64;
    let mut dx = Tensor::zeros(input);
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let gv = g.at(n, c, oy, ox) * inv;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = input.offset(n, c, oy * stride + i, ox * stride + j);
                            dx.data_mut()[idx] += gv;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn max_pool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let tape = Tape::new();
    Ok((*tape.leaf(x.clone()).max_pool(k, stride)?.value()).clone())
}

pub fn avg_pool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let tape = Tape::new();
    Ok((*tape.leaf(x.clone()).avg_pool(k, stride)?.value()).clone())
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    Ok((*tape.leaf(x.clone()).global_avg_pool()?.value()).clone())
}

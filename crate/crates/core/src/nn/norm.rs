//! Batch normalization over (N, H, W) per channel.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::Mode;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Affine terms and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
}

impl BatchNormParams {
    /// gamma = 1, beta = 0, running statistics (0, 1).
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return shape_err("batch-norm parameter vectors differ in length");
        }
        if !(self.eps > 0.0) {
            return Err(Error::Argument(format!("batch-norm eps must be positive, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Argument(format!(
                "batch-norm momentum must lie in (0,1), got {}",
                self.momentum
            )));
        }
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::Argument("running variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Folds a batch's statistics into the running estimates.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

pub(crate) struct BnSaved {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Shape,
    batch_stats: bool,
}

pub(crate) struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Per-channel mean and biased variance over batch and spatial axes.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let hw = s.spatial();
    let count = (s.n * hw) as f64;
    let mut mean = vec![0.0; s.c];
    for (i, chunk) in x.data().chunks(hw).enumerate() {
        mean[i % s.c] += chunk.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; s.c];
    for (i, chunk) in x.data().chunks(hw).enumerate() {
        let m = mean[i % s.c];
        var[i % s.c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

fn check_affine(x: Shape, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    let want = Shape::new(1, x.c, 1, 1);
    if gamma.shape() != want || beta.shape() != want {
        return shape_err(format!(
            "batch norm over {} channels needs gamma/beta of shape {want}, got {} and {}",
            x.c,
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

impl<'t> Var<'t> {
    /// Normalizes with this batch's statistics. Returns the output and the
    /// batch mean and variance so the caller can update running estimates.
    pub fn batch_norm_train(&self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let x = self.value();
        let s = x.shape();
        if s.n * s.spatial() == 0 {
            return Err(Error::Contract(format!("batch norm in train mode needs elements per channel, got {s}")));
        }
        let (mean, var) = channel_stats(&x);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.normalize(gamma, beta, &mean, inv_std, true)?;
        Ok((out, mean, var))
    }

    /// Normalizes with fixed statistics.
    pub fn batch_norm_eval(&self, gamma: Var<'t>, beta: Var<'t>, mean: &[f64], var: &[f64], eps: f64) -> Result<Var<'t>> {
        let c = self.shape().c;
        if mean.len() != c || var.len() != c {
            return shape_err(format!("running statistics must have {c} entries"));
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(gamma, beta, mean, inv_std, false)
    }

    fn normalize(&self, gamma: Var<'t>, beta: Var<'t>, mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> Result<Var<'t>> {
        let x = self.value();
        let (g, b) = (gamma.value(), beta.value());
        let s = x.shape();
        check_affine(s, &g, &b)?;
        let hw = s.spatial();
        let mut xhat = Vec::with_capacity(s.numel());
        let mut out = Vec::with_capacity(s.numel());
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            let c = i % s.c;
            let (m, is, gc, bc) = (mean[c], inv_std[c], g.data()[c], b.data()[c]);
            for v in chunk {
                let xh = (v - m) * is;
                xhat.push(xh);
                out.push(gc * xh + bc);
            }
        }
        let saved = BnSaved {
            xhat,
            inv_std,
            shape: s,
            batch_stats,
        };
        let op = Op::BatchNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            saved,
        };
        Ok(self.record(Tensor::new(s, out)?, op, &[*self, gamma, beta]))
    }
}

pub(crate) fn batch_norm_backward(gamma: &Tensor, g: &Tensor, saved: &BnSaved) -> BnGrads {
    let s = saved.shape;
    let hw = s.spatial();
    let count = (s.n * hw) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for (i, (gc, xc)) in g.data().chunks(hw).zip(saved.xhat.chunks(hw)).enumerate() {
        let c = i % s.c;
        for (gv, xh) in gc.iter().zip(xc) {
            dgamma[c] += gv * xh;
            dbeta[c] += gv;
        }
    }
    let mut dx = Vec::with_capacity(s.numel());
    for (i, (gc, xc)) in g.data().chunks(hw).zip(saved.xhat.chunks(hw)).enumerate() {
        let c = i % s.c;
        let scale = gamma.data()[c] * saved.inv_std[c];
        if saved.batch_stats {
            // dxhat = g·gamma; sums of dxhat and dxhat·xhat are gamma·dbeta and gamma·dgamma.
            let (sum_g, sum_gx) = (dbeta[c], dgamma[c]);
            for (gv, xh) in gc.iter().zip(xc) {
                dx.push(scale * (gv - sum_g / count - xh * sum_gx / count));
            }
        } else {
            dx.extend(gc.iter().map(|gv| scale * gv));
        }
    }
    let affine = |v: Vec<f64>| Tensor::new((1, s.c, 1, 1), v).expect("channel vector");
    BnGrads {
        input: Tensor::new(s, dx).expect("input shape"),
        gamma: affine(dgamma),
        beta: affine(dbeta),
    }
}

/// Tensor-level batch norm. Train mode updates the running statistics.
pub fn batch_norm(x: &Tensor, p: &mut BatchNormParams, mode: Mode) -> Result<Tensor> {
    p.validate()?;
    let c = x.shape().c;
    if p.channels() != c {
        return shape_err(format!("batch norm has {} channels, input has {c}", p.channels()));
    }
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let gamma = tape.leaf(Tensor::new((1, c, 1, 1), p.gamma.clone())?);
    let beta = tape.leaf(Tensor::new((1, c, 1, 1), p.beta.clone())?);
    let out = match mode {
        Mode::Train => {
            let (out, mean, var) = xv.batch_norm_train(gamma, beta, p.eps)?;
            p.update_running(&mean, &var);
            out
        }
        Mode::Eval => xv.batch_norm_eval(gamma, beta, &p.running_mean, &p.running_var, p.eps)?,
    };
    Ok((*out.value()).clone())
}

//! ELU and inverted dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{map, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

#[inline]
pub fn elu_scalar(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

impl<'t> Var<'t> {
    /// x for x > 0, alpha·(eˣ − 1) otherwise.
    pub fn elu(&self, alpha: f64) -> Result<Var<'t>> {
        if !(alpha > 0.0) {
            return Err(Error::Argument(format!("ELU alpha must be positive, got {alpha}")));
        }
        let out = map(&self.value(), |v| elu_scalar(v, alpha));
        Ok(self.record(out, Op::Elu { x: self.id, alpha }, &[*self]))
    }

    /// Inverted dropout. In train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1 − rate); the mask
    /// is a pure function of `seed`. Eval mode and rate 0 pass `self` through.
    pub fn dropout(&self, rate: f64, mode: Mode, seed: u64) -> Result<Var<'t>> {
        check_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(*self);
        }
        let x = self.value();
        let mask = dropout_mask(x.numel(), rate, seed);
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, Op::Dropout { x: self.id, mask }, &[*self]))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Multiplicative mask: 0 with probability `rate`, else 1/(1 − rate).
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn elu(x: &Tensor, alpha: f64) -> Result<Tensor> {
    let tape = Tape::new();
    Ok((*tape.leaf(x.clone()).elu(alpha)?.value()).clone())
}

pub fn dropout(x: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    let tape = Tape::new();
    Ok((*tape.leaf(x.clone()).dropout(rate, mode, seed)?.value()).clone())
}

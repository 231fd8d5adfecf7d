//! Central finite-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// |a − b| / max(1e-8, |a| + |b|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Largest relative error seen per parameter, in input order.
    pub per_param: Vec<f64>,
    pub coordinates_checked: usize,
}

/// Finite-difference checker. By default every coordinate of every
/// parameter is perturbed; [`GradCheck::sampled`] limits each parameter to
/// a seeded random subset.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
}

impl GradCheck {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Argument(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            eps,
            max_coords: None,
            seed: 0,
        })
    }

    pub fn sampled(mut self, max_coords_per_param: usize, seed: u64) -> Self {
        self.max_coords = Some(max_coords_per_param);
        self.seed = seed;
        self
    }

    pub fn run<F>(&self, f: F, params: &[Tensor]) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let analytic = {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
            let loss = f(&tape, &vars)?;
            let first = loss.item()?;
            let again = evaluate(&f, params)?;
            if first.to_bits() != again.to_bits() {
                return Err(Error::Contract(format!(
                    "function is not deterministic: {first} then {again}"
                )));
            }
            let grads = tape.backward(loss)?;
            vars.iter()
                .map(|v| grads.get(*v).cloned().expect("every param requires grad"))
                .collect::<Vec<_>>()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut per_param = Vec::with_capacity(params.len());
        let mut checked = 0;
        let mut work: Vec<Tensor> = params.to_vec();
        for (pi, grad) in analytic.iter().enumerate() {
            let n = params[pi].numel();
            let coords: Vec<usize> = match self.max_coords {
                Some(m) if m < n => {
                    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
                    idx.sort_unstable();
                    idx
                }
                _ => (0..n).collect(),
            };
            let mut worst: f64 = 0.0;
            for i in coords {
                let base = params[pi].data()[i];
                work[pi].data_mut()[i] = base + self.eps;
                let plus = evaluate(&f, &work)?;
                work[pi].data_mut()[i] = base - self.eps;
                let minus = evaluate(&f, &work)?;
                work[pi].data_mut()[i] = base;
                let numeric = (plus - minus) / (2.0 * self.eps);
                worst = worst.max(relative_error(grad.data()[i], numeric));
                checked += 1;
            }
            per_param.push(worst);
        }
        Ok(GradCheckReport {
            max_relative_error: per_param.iter().copied().fold(0.0, f64::max),
            per_param,
            coordinates_checked: checked,
        })
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    f(&tape, &vars)?.item()
}

/// Maximum relative error between tape gradients and central differences
/// over every coordinate of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    Ok(GradCheck::new(eps)?.run(f, params)?.max_relative_error)
}

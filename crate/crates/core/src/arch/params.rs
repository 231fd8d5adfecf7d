//! Named parameter registry and the per-forward binding context.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{GradientMap, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::norm::{DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::nn::Mode;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics: saved with the model, never differentiated.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Insertion-ordered map from unique names to parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, Param { value, kind });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(k, p)| (k, &p.value))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.trainable().map(|(k, _)| k.to_string()).collect()
    }

    /// Total element count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Seeded source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal with standard deviation sqrt(2 / fan_in).
    pub fn he(&mut self, shape: Shape, fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.numel()).map(|_| normal.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("sized to shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnSettings {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

/// Batch statistics observed by one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub layer: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Context for one forward pass: binds stored parameters onto a tape on
/// first use, collects batch-norm statistics, derives dropout seeds and
/// records the output shape of every named layer.
pub struct Pass<'t, 'p> {
    tape: &'t Tape,
    params: &'p ParamStore,
    mode: Mode,
    bn: BnSettings,
    dropout_seed: u64,
    dropout_calls: u64,
    bound: HashMap<String, Var<'t>>,
    bind_order: Vec<String>,
    bn_updates: Vec<BnUpdate>,
    trace: Vec<(String, Shape)>,
    stage_outputs: Vec<Tensor>,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<'t, 'p> Pass<'t, 'p> {
    pub fn new(tape: &'t Tape, params: &'p ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            params,
            mode,
            bn: BnSettings::default(),
            dropout_seed: 0,
            dropout_calls: 0,
            bound: HashMap::new(),
            bind_order: Vec::new(),
            bn_updates: Vec::new(),
            trace: Vec::new(),
            stage_outputs: Vec::new(),
        }
    }

    pub fn with_bn(mut self, bn: BnSettings) -> Self {
        self.bn = bn;
        self
    }

    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.dropout_seed = seed;
        self
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Uses `var` in place of the stored parameter `name`.
    pub fn bind(&mut self, name: &str, var: Var<'t>) -> Result<()> {
        let stored = self.params.tensor(name)?;
        if stored.shape() != var.shape() {
            return Err(Error::Shape(format!(
                "binding {name}: stored shape {} but given {}",
                stored.shape(),
                var.shape()
            )));
        }
        if self.bound.insert(name.to_string(), var).is_none() {
            self.bind_order.push(name.to_string());
        }
        Ok(())
    }

    pub fn param(&mut self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let var = match p.kind {
            ParamKind::Trainable => self.tape.param(p.value.clone()),
            ParamKind::Buffer => self.tape.leaf(p.value.clone()),
        };
        self.bound.insert(name.to_string(), var);
        self.bind_order.push(name.to_string());
        Ok(var)
    }

    pub fn record(&mut self, name: &str, var: Var<'t>) -> Var<'t> {
        self.trace.push((name.to_string(), var.shape()));
        var
    }

    fn context<T>(name: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("{name}: {m}")),
            other => other,
        })
    }

    /// Convolution using `{name}.weight` and `{name}.bias` when stored.
    pub fn conv(&mut self, name: &str, x: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let w = self.param(&format!("{name}.weight"))?;
        let bias_name = format!("{name}.bias");
        let b = if self.params.contains(&bias_name) {
            Some(self.param(&bias_name)?)
        } else {
            None
        };
        let y = Self::context(name, x.conv2d(w, b, stride, padding))?;
        Ok(self.record(name, y))
    }

    /// Stride-1 convolution padded so the spatial extent is preserved.
    pub fn conv_same(&mut self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let k = self.params.tensor(&format!("{name}.weight"))?.shape().h;
        self.conv(name, x, 1, (k - 1) / 2)
    }

    /// Stride-1, extent-preserving depthwise convolution.
    pub fn depthwise_same(&mut self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.param(&format!("{name}.weight"))?;
        let k = w.shape().h;
        let y = Self::context(name, x.depthwise_conv2d(w, None, 1, (k - 1) / 2))?;
        Ok(self.record(name, y))
    }

    /// Batch norm with `{name}.gamma/beta` and, in eval mode, the stored
    /// running statistics.
    pub fn bn(&mut self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let y = match self.mode {
            Mode::Train => {
                let (y, mean, var) = Self::context(name, x.batch_norm_train(gamma, beta, self.bn.eps))?;
                self.bn_updates.push(BnUpdate {
                    layer: name.to_string(),
                    mean,
                    var,
                });
                y
            }
            Mode::Eval => {
                let mean = self.params.tensor(&format!("{name}.running_mean"))?;
                let var = self.params.tensor(&format!("{name}.running_var"))?;
                Self::context(name, x.batch_norm_eval(gamma, beta, mean.data(), var.data(), self.bn.eps))?
            }
        };
        Ok(self.record(name, y))
    }

    pub fn elu(&mut self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.elu(1.0)?;
        Ok(self.record(name, y))
    }

    /// Dropout whose mask seed is derived from the pass seed and the call
    /// index, so a repeated pass reproduces every mask.
    pub fn dropout(&mut self, name: &str, x: Var<'t>, rate: f64) -> Result<Var<'t>> {
        let seed = mix(self.dropout_seed ^ mix(self.dropout_calls.wrapping_add(1)));
        self.dropout_calls += 1;
        let y = x.dropout(rate, self.mode, seed)?;
        Ok(self.record(name, y))
    }

    pub fn push_stage_output(&mut self, x: Var<'t>) {
        self.stage_outputs.push((*x.value()).clone());
    }

    /// Output shape of every named layer, in execution order.
    pub fn trace(&self) -> &[(String, Shape)] {
        &self.trace
    }

    pub fn stage_outputs(&self) -> &[Tensor] {
        &self.stage_outputs
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate> {
        self.bn_updates
    }

    /// Gradients of the bound trainable parameters, in binding order.
    pub fn param_grads(&self, grads: &GradientMap) -> IndexMap<String, Tensor> {
        let mut out = IndexMap::new();
        for name in &self.bind_order {
            let Some(p) = self.params.get(name) else { continue };
            if p.kind != ParamKind::Trainable {
                continue;
            }
            if let Some(g) = grads.get(self.bound[name]) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

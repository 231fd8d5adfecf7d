//! Parameter registration and forward passes for the building blocks.
//!
//! Every block is a pair: `register_*` adds named parameters to a store,
//! the forward function reads them back through a [`Pass`] under the same
//! prefix.

use crate::arch::params::{Initializer, ParamKind, ParamStore, Pass};
use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

pub fn register_conv(
    store: &mut ParamStore,
    init: &mut Initializer,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    bias: bool,
) -> Result<()> {
    let w = init.he(Shape::new(c_out, c_in, k, k), c_in * k * k);
    store.insert(format!("{name}.weight"), w, ParamKind::Trainable)?;
    if bias {
        store.insert(format!("{name}.bias"), Tensor::zeros((1, c_out, 1, 1)), ParamKind::Trainable)?;
    }
    Ok(())
}

pub fn register_depthwise(store: &mut ParamStore, init: &mut Initializer, name: &str, c: usize, k: usize) -> Result<()> {
    let w = init.he(Shape::new(c, 1, k, k), k * k);
    store.insert(format!("{name}.weight"), w, ParamKind::Trainable)
}

pub fn register_bn(store: &mut ParamStore, name: &str, c: usize, gamma: f64) -> Result<()> {
    let v = |x: f64| Tensor::full((1, c, 1, 1), x);
    store.insert(format!("{name}.gamma"), v(gamma), ParamKind::Trainable)?;
    store.insert(format!("{name}.beta"), v(0.0), ParamKind::Trainable)?;
    store.insert(format!("{name}.running_mean"), v(0.0), ParamKind::Buffer)?;
    store.insert(format!("{name}.running_var"), v(1.0), ParamKind::Buffer)
}

fn check_channels(name: &str, x: Var<'_>, c: usize) -> Result<()> {
    if x.shape().c != c {
        return shape_err(format!("{name}: expected {c} input channels, got {}", x.shape().c));
    }
    Ok(())
}

fn stored_out_channels(pass: &Pass<'_, '_>, conv: &str) -> Result<usize> {
    Ok(pass.params().tensor(&format!("{conv}.weight"))?.shape().n)
}

/// Pointwise → depthwise → pointwise with BN and ELU after each pointwise
/// conv. Width is preserved through the sub-block.
pub fn register_block2(store: &mut ParamStore, init: &mut Initializer, prefix: &str, c: usize, k: usize) -> Result<()> {
    register_conv(store, init, &format!("{prefix}.pw_a"), c, c, 1, false)?;
    register_bn(store, &format!("{prefix}.bn_a"), c, 1.0)?;
    register_depthwise(store, init, &format!("{prefix}.dw"), c, k)?;
    register_conv(store, init, &format!("{prefix}.pw_b"), c, c, 1, false)?;
    register_bn(store, &format!("{prefix}.bn_b"), c, 1.0)
}

pub fn block2_forward<'t>(pass: &mut Pass<'t, '_>, prefix: &str, z: Var<'t>) -> Result<Var<'t>> {
    let pw_a = format!("{prefix}.pw_a");
    let c_in = pass.params().tensor(&format!("{pw_a}.weight"))?.shape().c;
    check_channels(&pw_a, z, c_in)?;
    let y = pass.conv(&pw_a, z, 1, 0)?;
    let y = pass.bn(&format!("{prefix}.bn_a"), y)?;
    let y = pass.elu(&format!("{prefix}.elu_a"), y)?;
    let y = pass.depthwise_same(&format!("{prefix}.dw"), y)?;
    let y = pass.conv(&format!("{prefix}.pw_b"), y, 1, 0)?;
    let y = pass.bn(&format!("{prefix}.bn_b"), y)?;
    pass.elu(&format!("{prefix}.elu_b"), y)
}

/// The transformation path of an enhanced residual unit. The last batch
/// norm starts with gamma = 0 so the path outputs zero at initialization.
pub fn register_eru(store: &mut ParamStore, init: &mut Initializer, prefix: &str, c: usize, k: usize) -> Result<()> {
    register_conv(store, init, &format!("{prefix}.conv1"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn1"), c, 1.0)?;
    register_conv(store, init, &format!("{prefix}.conv2"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn2"), c, 1.0)?;
    register_block2(store, init, &format!("{prefix}.block2"), c, k)?;
    register_conv(store, init, &format!("{prefix}.conv3"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn3"), c, 1.0)?;
    register_conv(store, init, &format!("{prefix}.conv4"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn4"), c, 0.0)
}

pub fn eru_transform<'t>(pass: &mut Pass<'t, '_>, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let c = stored_out_channels(pass, &format!("{prefix}.conv1"))?;
    check_channels(prefix, x, c)?;
    let mut y = x;
    for i in 1..=2 {
        y = pass.conv_same(&format!("{prefix}.conv{i}"), y)?;
        y = pass.bn(&format!("{prefix}.bn{i}"), y)?;
        y = pass.elu(&format!("{prefix}.elu{i}"), y)?;
    }
    y = block2_forward(pass, &format!("{prefix}.block2"), y)?;
    y = pass.conv_same(&format!("{prefix}.conv3"), y)?;
    y = pass.bn(&format!("{prefix}.bn3"), y)?;
    y = pass.elu(&format!("{prefix}.elu3"), y)?;
    y = pass.conv_same(&format!("{prefix}.conv4"), y)?;
    pass.bn(&format!("{prefix}.bn4"), y)
}

/// x + 𝒯(x).
pub fn eru_forward<'t>(pass: &mut Pass<'t, '_>, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let t = eru_transform(pass, prefix, x)?;
    let y = x.add(t)?;
    Ok(pass.record(&format!("{prefix}.add"), y))
}

/// The two-conv residual block used as a comparison point.
pub fn register_baseline_residual(store: &mut ParamStore, init: &mut Initializer, prefix: &str, c: usize, k: usize) -> Result<()> {
    register_conv(store, init, &format!("{prefix}.conv1"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn1"), c, 1.0)?;
    register_conv(store, init, &format!("{prefix}.conv2"), c, c, k, false)?;
    register_bn(store, &format!("{prefix}.bn2"), c, 0.0)
}

pub fn baseline_residual_forward<'t>(pass: &mut Pass<'t, '_>, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let c = stored_out_channels(pass, &format!("{prefix}.conv1"))?;
    check_channels(prefix, x, c)?;
    let y = pass.conv_same(&format!("{prefix}.conv1"), x)?;
    let y = pass.bn(&format!("{prefix}.bn1"), y)?;
    let y = pass.elu(&format!("{prefix}.elu1"), y)?;
    let y = pass.conv_same(&format!("{prefix}.conv2"), y)?;
    let y = pass.bn(&format!("{prefix}.bn2"), y)?;
    let out = x.add(y)?;
    Ok(pass.record(&format!("{prefix}.add"), out))
}

/// A skip weight: a fixed constant or a trainable (1,1,1,1) scalar.
#[derive(Clone, Copy, Debug)]
pub enum SkipWeight<'t> {
    Fixed(f64),
    Learned(Var<'t>),
}

impl<'t> SkipWeight<'t> {
    fn apply(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            SkipWeight::Fixed(a) => x.scale(a),
            SkipWeight::Learned(a) => x.scale_by(a),
        }
    }
}

/// α₁·x_prev + α₂·x_prev2 + branch. `prev2` is absent for the first unit
/// of a stage.
pub fn encoder_fuse<'t>(
    x_prev: Var<'t>,
    x_prev2: Option<(Var<'t>, SkipWeight<'t>)>,
    branch: Var<'t>,
    alpha1: SkipWeight<'t>,
) -> Result<Var<'t>> {
    let target = branch.shape();
    let check = |what: &str, s: Shape| {
        if s != target {
            return shape_err(format!("fusion: {what} has shape {s} but the branch output is {target}"));
        }
        Ok(())
    };
    check("x_prev", x_prev.shape())?;
    let mut out = alpha1.apply(x_prev)?.add(branch)?;
    if let Some((x2, a2)) = x_prev2 {
        check("x_prev2", x2.shape())?;
        out = out.add(a2.apply(x2)?)?;
    }
    Ok(out)
}

/// Max-pool (optional) → channel-aligning 1×1 conv (when widths differ) →
/// BN → ELU, plus a GAP → 1×1 conv shortcut broadcast over the result.
pub fn register_transition(
    store: &mut ParamStore,
    init: &mut Initializer,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) -> Result<()> {
    if c_in != c_out {
        register_conv(store, init, &format!("{prefix}.align"), c_in, c_out, 1, false)?;
    }
    register_bn(store, &format!("{prefix}.bn"), c_out, 1.0)?;
    register_conv(store, init, &format!("{prefix}.shortcut"), c_in, c_out, 1, false)
}

pub fn stage_transition<'t>(pass: &mut Pass<'t, '_>, prefix: &str, x: Var<'t>, downsample: bool) -> Result<Var<'t>> {
    let mut y = x;
    if downsample {
        let s = x.shape();
        if s.h < 2 || s.w < 2 {
            return shape_err(format!("{prefix}: input {s} too small to pool"));
        }
        y = y.max_pool(2, 2)?;
        y = pass.record(&format!("{prefix}.pool"), y);
    }
    let align = format!("{prefix}.align");
    if pass.params().contains(&format!("{align}.weight")) {
        y = pass.conv(&align, y, 1, 0)?;
    }
    y = pass.bn(&format!("{prefix}.bn"), y)?;
    y = pass.elu(&format!("{prefix}.elu"), y)?;
    let g = x.global_avg_pool()?;
    let g = pass.record(&format!("{prefix}.gap"), g);
    let s = pass.conv(&format!("{prefix}.shortcut"), g, 1, 0)?;
    let out = y.add(s)?;
    Ok(pass.record(&format!("{prefix}.add"), out))
}

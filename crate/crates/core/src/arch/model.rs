use crate::arch::blocks::{
    encoder_fuse, eru_transform, register_bn, register_conv, register_eru, register_transition, stage_transition,
    SkipWeight,
};
use crate::arch::config::ModelConfig;
use crate::arch::params::{BnSettings, BnUpdate, Initializer, ParamKind, ParamStore, Pass};
use crate::arch::plan::{plan_model, LayerDesc};
use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::Mode;
use crate::tensor::{Shape, Tensor};
use crate::train::schedule::dropout_rate_for_block;

/// A built network: configuration, parameter registry and static plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    widths: Vec<usize>,
    unit_rates: Vec<Vec<f64>>,
    plan: Vec<LayerDesc>,
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.stage_widths()?;
        let n_units = config.total_units();
        let mut unit_rates = Vec::with_capacity(config.stages.len());
        let mut index = 0;
        for stage in &config.stages {
            let mut rates = Vec::with_capacity(stage.num_units);
            for _ in 0..stage.num_units {
                rates.push(dropout_rate_for_block(index, n_units, config.dropout_start, config.dropout_end)?);
                index += 1;
            }
            unit_rates.push(rates);
        }

        if config.c_max.is_some() || config.k_max.is_some() {
            let results = crate::cost::constraint_results(
                &config,
                config.c_max.unwrap_or(u64::MAX),
                config.k_max.unwrap_or(u64::MAX),
            )?;
            let failed: Vec<String> = results.iter().filter(|r| !r.pass).map(|r| r.to_string()).collect();
            if !failed.is_empty() {
                return Err(Error::Config(format!(
                    "hardware constraints violated: {}",
                    failed.join("; ")
                )));
            }
        }

        let mut store = ParamStore::new();
        let mut init = Initializer::new(config.seed);
        register_conv(&mut store, &mut init, "stem.conv", config.input_channels(), config.stem_width, 3, false)?;
        register_bn(&mut store, "stem.bn", config.stem_width, 1.0)?;
        let mut c = config.stem_width;
        for (s, stage) in config.stages.iter().enumerate() {
            if s > 0 {
                register_transition(&mut store, &mut init, &format!("stage{s}.transition"), c, widths[s])?;
                c = widths[s];
            }
            for u in 0..stage.num_units {
                let prefix = format!("stage{s}.unit{u}");
                register_eru(&mut store, &mut init, &prefix, c, stage.kernel)?;
                if config.alpha_learnable {
                    let scalar = |a: f64| Tensor::full((1, 1, 1, 1), a);
                    store.insert(format!("{prefix}.alpha1"), scalar(config.alpha1), ParamKind::Trainable)?;
                    if u > 0 {
                        store.insert(format!("{prefix}.alpha2"), scalar(config.alpha2), ParamKind::Trainable)?;
                    }
                }
            }
        }
        register_conv(&mut store, &mut init, "head.fc", c, config.num_classes, 1, true)?;

        let plan = plan_model(&config, &unit_rates)?;
        Ok(Self {
            config,
            params: store,
            widths,
            unit_rates,
            plan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stage_widths(&self) -> &[usize] {
        &self.widths
    }

    /// Dropout rate of every unit, in depth order.
    pub fn dropout_rates(&self) -> Vec<f64> {
        self.unit_rates.iter().flatten().copied().collect()
    }

    pub fn plan(&self) -> &[LayerDesc] {
        &self.plan
    }

    pub fn bn_settings(&self) -> BnSettings {
        BnSettings {
            eps: self.config.bn_eps,
            momentum: self.config.bn_momentum,
        }
    }

    /// A pass over this model's parameters with its batch-norm settings.
    pub fn pass<'t, 'p>(&'p self, tape: &'t Tape, mode: Mode, dropout_seed: u64) -> Pass<'t, 'p> {
        Pass::new(tape, &self.params, mode)
            .with_bn(self.bn_settings())
            .with_dropout_seed(dropout_seed)
    }

    fn skip_weight<'t>(&self, pass: &mut Pass<'t, '_>, name: &str, fixed: f64) -> Result<SkipWeight<'t>> {
        if self.config.alpha_learnable {
            Ok(SkipWeight::Learned(pass.param(name)?))
        } else {
            Ok(SkipWeight::Fixed(fixed))
        }
    }

    /// Logits of shape (N, K, 1, 1).
    pub fn forward<'t>(&self, pass: &mut Pass<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let [c, h, w] = self.config.input_shape;
        let s = x.shape();
        if (s.c, s.h, s.w) != (c, h, w) {
            return shape_err(format!("stem: expected input Nx{c}x{h}x{w}, got {s}"));
        }
        let mut x = pass.conv_same("stem.conv", x)?;
        x = pass.bn("stem.bn", x)?;
        x = pass.elu("stem.elu", x)?;
        for (si, stage) in self.config.stages.iter().enumerate() {
            if si > 0 {
                x = stage_transition(pass, &format!("stage{si}.transition"), x, stage.downsample)?;
            }
            let mut prev2: Option<Var<'t>> = None;
            for u in 0..stage.num_units {
                let prefix = format!("stage{si}.unit{u}");
                let t = eru_transform(pass, &prefix, x)?;
                let t = pass.dropout(&format!("{prefix}.dropout"), t, self.unit_rates[si][u])?;
                let a1 = self.skip_weight(pass, &format!("{prefix}.alpha1"), self.config.alpha1)?;
                let second = match prev2 {
                    Some(p) => Some((p, self.skip_weight(pass, &format!("{prefix}.alpha2"), self.config.alpha2)?)),
                    None => None,
                };
                let y = encoder_fuse(x, second, t, a1)?;
                let y = pass.record(&format!("{prefix}.fuse"), y);
                prev2 = Some(x);
                x = y;
            }
            pass.push_stage_output(x);
        }
        let g = x.global_avg_pool()?;
        let g = pass.record("head.gap", g);
        pass.conv("head.fc", g, 1, 0)
    }

    /// Runs a forward pass on a fresh tape and returns the logits.
    pub fn logits(&self, batch: &Tensor, mode: Mode, dropout_seed: u64) -> Result<Tensor> {
        let tape = Tape::new();
        let mut pass = self.pass(&tape, mode, dropout_seed);
        let x = tape.leaf(batch.clone());
        let y = self.forward(&mut pass, x)?;
        let out = (*y.value()).clone();
        Ok(out)
    }

    /// Folds train-mode batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        let m = self.config.bn_momentum;
        for up in updates {
            for (suffix, batch) in [("running_mean", &up.mean), ("running_var", &up.var)] {
                let t = self.params.tensor_mut(&format!("{}.{suffix}", up.layer))?;
                for (r, b) in t.data_mut().iter_mut().zip(batch.iter()) {
                    *r = m * *r + (1.0 - m) * b;
                }
            }
        }
        Ok(())
    }

    /// Per-sample input shape.
    pub fn input_shape(&self, batch: usize) -> Shape {
        let [c, h, w] = self.config.input_shape;
        Shape::new(batch, c, h, w)
    }
}

//! The training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::model::Model;
use crate::autodiff::Tape;
use crate::data::{augment, batch, AugmentPolicy, LabeledImage};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::train::metrics::{argmax_rows, ClassMetrics, Evaluation};
use crate::train::schedule::{lr_at, DecayMode};
use crate::train::sgd::Sgd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_period_epochs: f64,
    #[serde(default)]
    pub decay_mode: DecayMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub augmentation_policy: String,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.175,
            decay_factor: 0.99,
            decay_period_epochs: 12.4,
            decay_mode: DecayMode::Continuous,
            epochs: 30,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            augmentation_policy: "none".into(),
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} must lie in (0, 1]", self.decay_factor));
        }
        if !(self.decay_period_epochs > 0.0) {
            return bad(format!("decay_period_epochs {} must be positive", self.decay_period_epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        AugmentPolicy::by_name(&self.augmentation_policy)?;
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        lr_at(epoch, self.lr0, self.decay_factor, self.decay_period_epochs, self.decay_mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,lr,macro_f1";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr, r.macro_f1
        ));
    }
    s
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_dataset(model: &Model, data: &[LabeledImage], what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    let want = model.input_shape(1);
    let k = model.config().num_classes;
    for (i, img) in data.iter().enumerate() {
        if img.pixels.shape() != want {
            return Err(Error::Data(format!(
                "{what} image {i} has shape {}, model expects {want}",
                img.pixels.shape()
            )));
        }
        if img.label >= k {
            return Err(Error::Data(format!("{what} image {i}: label {} outside [0, {k})", img.label)));
        }
    }
    Ok(())
}

/// Eval-mode accuracy and per-class metrics over `data`.
pub fn evaluate(model: &Model, data: &[LabeledImage], batch_size: usize) -> Result<Evaluation> {
    check_dataset(model, data, "evaluation")?;
    let k = model.config().num_classes;
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&LabeledImage> = chunk.iter().collect();
        let (x, y) = batch(&refs)?;
        let logits = model.logits(&x, Mode::Eval, 0)?;
        preds.extend(argmax_rows(logits.data(), k));
        labels.extend(y);
    }
    Ok(Evaluation::from_predictions(&preds, &labels, k))
}

fn largest_parameter(model: &Model) -> (String, f64) {
    let mut best = (String::new(), -1.0);
    for (name, p) in model.params().iter() {
        for v in p.value.data() {
            let m = if v.is_finite() { v.abs() } else { f64::INFINITY };
            if m > best.1 {
                best = (name.to_string(), m);
            }
        }
    }
    best
}

/// Runs `cfg.epochs` epochs of SGD, calling `on_epoch` after each.
pub fn train_with(
    model: &mut Model,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    check_dataset(model, train_set, "training")?;
    check_dataset(model, val_set, "validation")?;
    let policy = AugmentPolicy::by_name(&cfg.augmentation_policy)?;
    let k = model.config().num_classes;
    let mut opt = Sgd::new(cfg.momentum);
    opt.weight_decay = cfg.weight_decay;
    opt.clip_norm = cfg.clip_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let images = idx
                .iter()
                .map(|&i| augment(&train_set[i], &policy, mix(cfg.seed, mix(step, i as u64))))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&LabeledImage> = images.iter().collect();
            let (x, labels) = batch(&refs)?;
            let lr = cfg.lr_at((epoch * steps_per_epoch + b) as f64 / steps_per_epoch as f64);

            let tape = Tape::new();
            let mut pass = model.pass(&tape, Mode::Train, mix(cfg.seed ^ 0xd1b5_4a32_d192_ed03, step));
            let xv = tape.leaf(x);
            let logits = model.forward(&mut pass, xv)?;
            let loss = logits.softmax_cross_entropy(&labels)?;
            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                let (name, mag) = largest_parameter(model);
                return Err(Error::Numerical(format!(
                    "loss became {loss_value} at epoch {epoch} step {step}; largest-magnitude parameter {name} (|value| = {mag:e})"
                )));
            }
            let grads = tape.backward(loss)?;
            let named = pass.param_grads(&grads);
            let preds = argmax_rows(logits.value().data(), k);
            let updates = pass.into_bn_updates();

            opt.step(model.params_mut(), &named, lr)?;
            model.apply_bn_updates(&updates)?;
            loss_sum += loss_value * labels.len() as f64;
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            step += 1;
        }
        let val = evaluate(model, val_set, cfg.batch_size)?;
        let record = MetricsRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc: val.accuracy,
            lr: cfg.lr_at(epoch as f64),
            per_class: val.per_class,
            macro_f1: val.macro_f1,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

pub fn train(
    model: &mut Model,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

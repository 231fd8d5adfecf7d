//! Command-line interface.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or data error,
//! 3 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::config::ModelConfig;
use crate::arch::model::Model;
use crate::arch::presets::{preset, PRESETS};
use crate::autodiff::Tape;
use crate::cost::CostReport;
use crate::data::{load_cifar10_binary, load_cifar10_dir, synthetic_dataset, tile_image, LabeledImage};
use crate::error::{Error, Result};
use crate::gradcheck::GradCheck;
use crate::nn::Mode;
use crate::tensor::Tensor;
use crate::train::checkpoint::{load_checkpoint, save_checkpoint};
use crate::train::{evaluate, metrics_csv, train_with, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Seeds of the synthetic train, validation and test splits.
pub const SYNTHETIC_SEEDS: [u64; 3] = [0x5eed_0001, 0x5eed_0002, 0x5eed_0003];
pub const SYNTHETIC_TRAIN: usize = 400;
pub const SYNTHETIC_VAL: usize = 100;
pub const SYNTHETIC_TEST: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "adaptovision", version, about = "Build, analyse, check and train AdaptoVision networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
#[group(required = false, multiple = false)]
pub struct ModelSource {
    /// Model configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset (cifar-32, cifar-64, mini).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the per-layer cost table, totals, constraint sums and baselines.
    Describe {
        #[command(flatten)]
        source: ModelSource,
        /// Also write the per-layer table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference check of a miniature instance of a preset.
    Gradcheck {
        #[arg(long, default_value = "mini")]
        preset: String,
        #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Train and write metrics.csv, checkpoint.avck and config.json.
    Train {
        #[command(flatten)]
        source: ModelSource,
        /// CIFAR-10 binary directory, or "synthetic".
        #[arg(long, default_value = "synthetic")]
        data: String,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Initial learning rate (default 0.0175 for mini, else 0.175).
        #[arg(long)]
        lr0: Option<f64>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Use only the first N training images.
        #[arg(long)]
        limit: Option<usize>,
        /// Augmentation policy: none or cifar (default: cifar for CIFAR data).
        #[arg(long)]
        augment: Option<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CIFAR-10 binary directory or file, or "synthetic".
        #[arg(long, default_value = "synthetic")]
        data: String,
        #[command(flatten)]
        source: ModelSource,
    },
    /// Write a preset's configuration as JSON.
    ExportConfig {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List sliding-window tiles of an image or of an image geometry.
    Tile {
        /// CIFAR-10 binary file to take the image from.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Image height when no input is given.
        #[arg(long)]
        height: Option<usize>,
        /// Image width when no input is given.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        tile_h: usize,
        #[arg(long)]
        tile_w: usize,
        #[arg(long, default_value_t = 4)]
        step: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(source: &ModelSource) -> Result<ModelConfig> {
    let config = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ModelConfig::from_json(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("one of --config or --preset is required".into())),
    };
    config.validate()?;
    Ok(config)
}

pub fn execute(command: Command, out: &mut impl Write) -> Result<i32> {
    match command {
        Command::Describe { source, csv } => describe(&source, csv.as_deref(), out),
        Command::Gradcheck { preset, eps, threshold } => gradcheck(&preset, eps, threshold, out),
        Command::Train {
            source,
            data,
            epochs,
            seed,
            out: dir,
            lr0,
            batch_size,
            limit,
            augment,
        } => {
            let opts = TrainOptions { data, epochs, seed, lr0, batch_size, limit, augment };
            train_cmd(&source, &opts, &dir, out)
        }
        Command::Eval { checkpoint, data, source } => eval_cmd(&checkpoint, &data, &source, out),
        Command::ExportConfig { preset: name, out: path } => {
            let config = preset(&name)?;
            fs::write(&path, config.to_json()? + "\n")?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(EXIT_OK)
        }
        Command::Tile {
            input,
            index,
            height,
            width,
            tile_h,
            tile_w,
            step,
        } => tile_cmd(input.as_deref(), index, height, width, tile_h, tile_w, step, out),
    }
}

fn describe(source: &ModelSource, csv: Option<&Path>, out: &mut impl Write) -> Result<i32> {
    let model = Model::build(resolve_config(source)?)?;
    let report = CostReport::new(&model)?;
    write!(out, "{}", report.to_table())?;
    if let Some(path) = csv {
        fs::write(path, report.to_csv())?;
    }
    Ok(EXIT_OK)
}

/// Stem width 4, one unit per stage, 16×16 inputs, three classes at most.
pub fn miniature(config: &ModelConfig) -> ModelConfig {
    let mut c = config.clone();
    c.stem_width = 4;
    c.input_shape = [config.input_shape[0], 16, 16];
    c.num_classes = config.num_classes.min(3);
    for s in &mut c.stages {
        s.num_units = 1;
    }
    c.c_max = None;
    c.k_max = None;
    c
}

/// Gradient check of loss∘forward with respect to every trainable
/// parameter, sampling up to `coords` coordinates of each. Batch-norm
/// affine terms are randomised first so no branch is silenced.
pub fn model_grad_check(
    config: &ModelConfig,
    eps: f64,
    coords: usize,
    seed: u64,
) -> Result<(Vec<String>, crate::gradcheck::GradCheckReport)> {
    let mut model = Model::build(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in model.params_mut().iter_mut() {
        if name.ends_with(".gamma") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with(".beta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    let names = model.params().trainable_names();
    let params: Vec<Tensor> = names.iter().map(|n| model.params().tensor(n).unwrap().clone()).collect();
    let batch = 2;
    let x = Tensor::from_fn(model.input_shape(batch), |_, _, _, _| rng.random_range(-1.0..1.0));
    let k = config.num_classes;
    let labels: Vec<usize> = (0..batch).map(|i| i % k).collect();
    let report = GradCheck::new(eps)?.sampled(coords, seed).run(
        |tape: &Tape, vars| {
            let mut pass = model.pass(tape, Mode::Train, seed);
            for (n, v) in names.iter().zip(vars) {
                pass.bind(n, *v)?;
            }
            let xv = tape.leaf(x.clone());
            model.forward(&mut pass, xv)?.softmax_cross_entropy(&labels)
        },
        &params,
    )?;
    Ok((names, report))
}

fn gradcheck(name: &str, eps: f64, threshold: f64, out: &mut impl Write) -> Result<i32> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("--eps must be positive, got {eps}")));
    }
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!("--threshold must be non-negative, got {threshold}")));
    }
    let config = miniature(&preset(name)?);
    let (names, report) = model_grad_check(&config, eps, 4, 7)?;
    let mut layers: Vec<(String, f64)> = Vec::new();
    for (n, e) in names.iter().zip(&report.per_param) {
        let layer = n.rsplit_once('.').map_or(n.as_str(), |(l, _)| l).to_string();
        match layers.last_mut() {
            Some((l, m)) if *l == layer => *m = m.max(*e),
            _ => layers.push((layer, *e)),
        }
    }
    for (l, e) in &layers {
        writeln!(out, "{l:<32} {e:.3e}")?;
    }
    writeln!(
        out,
        "max relative error {:.3e} over {} coordinates (threshold {threshold:e})",
        report.max_relative_error, report.coordinates_checked
    )?;
    let offending: Vec<&str> = layers.iter().filter(|(_, e)| !(*e < threshold)).map(|(l, _)| l.as_str()).collect();
    if offending.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "FAILED layers: {}", offending.join(", "))?;
        Ok(EXIT_CHECK_FAILED)
    }
}

struct TrainOptions {
    data: String,
    epochs: usize,
    seed: u64,
    lr0: Option<f64>,
    batch_size: usize,
    limit: Option<usize>,
    augment: Option<String>,
}

fn synthetic_for(config: &ModelConfig, n: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let [c, h, w] = config.input_shape;
    if c != 3 || h != w {
        return Err(Error::Data(format!(
            "synthetic data is 3xSxS; the model expects {c}x{h}x{w}"
        )));
    }
    synthetic_dataset(n, config.num_classes, h, seed)
}

fn train_cmd(source: &ModelSource, opts: &TrainOptions, dir: &Path, out: &mut impl Write) -> Result<i32> {
    let config = resolve_config(source)?;
    let synthetic = opts.data == "synthetic";
    let (mut train_set, val_set) = if synthetic {
        (
            synthetic_for(&config, SYNTHETIC_TRAIN, SYNTHETIC_SEEDS[0])?,
            synthetic_for(&config, SYNTHETIC_VAL, SYNTHETIC_SEEDS[1])?,
        )
    } else {
        load_cifar10_dir(&opts.data)?
    };
    if let Some(n) = opts.limit {
        train_set.truncate(n);
    }
    let mini = source.preset.as_deref() == Some("mini");
    let cfg = TrainConfig {
        lr0: opts.lr0.unwrap_or(if mini { 0.0175 } else { 0.175 }),
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        seed: opts.seed,
        augmentation_policy: opts
            .augment
            .clone()
            .unwrap_or_else(|| if synthetic { "none".into() } else { "cifar".into() }),
        ..TrainConfig::default()
    };
    let mut model = Model::build(config.clone())?;
    fs::create_dir_all(dir)?;
    let records = train_with(&mut model, &train_set, &val_set, &cfg, |r| {
        eprintln!(
            "epoch {} loss {:.4} train_acc {:.4} val_acc {:.4} lr {:.6}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr
        );
    })?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&records))?;
    save_checkpoint(dir.join("checkpoint.avck"), model.params())?;
    fs::write(dir.join("config.json"), config.to_json()? + "\n")?;
    match records.last() {
        Some(r) => writeln!(
            out,
            "final epoch={} train_loss={} train_acc={} val_acc={} macro_f1={}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.macro_f1
        )?,
        None => writeln!(out, "no epochs run; checkpoint holds the initial parameters")?,
    }
    Ok(EXIT_OK)
}

fn eval_cmd(checkpoint: &Path, data: &str, source: &ModelSource, out: &mut impl Write) -> Result<i32> {
    let config = if source.config.is_some() || source.preset.is_some() {
        resolve_config(source)?
    } else {
        let path = checkpoint.with_file_name("config.json");
        resolve_config(&ModelSource {
            config: Some(path),
            preset: None,
        })?
    };
    let mut model = Model::build(config.clone())?;
    load_checkpoint(checkpoint, model.params_mut()).map_err(|e| match e {
        Error::Format(m) if m.contains("magic") => Error::Format(format!("{}: not a checkpoint", checkpoint.display())),
        other => other,
    })?;
    let test = if data == "synthetic" {
        synthetic_for(&config, SYNTHETIC_TEST, SYNTHETIC_SEEDS[2])?
    } else if Path::new(data).is_file() {
        load_cifar10_binary(data)?
    } else {
        load_cifar10_dir(data)?.1
    };
    let e = evaluate(&model, &test, 64)?;
    writeln!(out, "accuracy={} macro_f1={}", e.accuracy, e.macro_f1)?;
    for (c, m) in e.per_class.iter().enumerate() {
        writeln!(out, "class {c}: precision={} recall={} f1={}", m.precision, m.recall, m.f1)?;
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn tile_cmd(
    input: Option<&Path>,
    index: usize,
    height: Option<usize>,
    width: Option<usize>,
    tile_h: usize,
    tile_w: usize,
    step: usize,
    out: &mut impl Write,
) -> Result<i32> {
    let pixels = match (input, height, width) {
        (Some(path), _, _) => {
            let images = load_cifar10_binary(path)?;
            let img = images
                .get(index)
                .ok_or_else(|| Error::Argument(format!("index {index} out of range ({} images)", images.len())))?;
            img.pixels.clone()
        }
        (None, Some(h), Some(w)) => Tensor::zeros((1, 1, h, w)),
        _ => return Err(Error::Argument("give --input or both --height and --width".into())),
    };
    let rows = crate::data::tile_offsets(pixels.shape().h, tile_h, step)?;
    let cols = crate::data::tile_offsets(pixels.shape().w, tile_w, step)?;
    let tiles = tile_image(&pixels, tile_h, tile_w, step)?;
    writeln!(out, "tile,row,col,mean")?;
    let mut i = 0;
    for r in &rows {
        for c in &cols {
            let t = &tiles[i];
            writeln!(out, "{i},{r},{c},{}", t.sum() / t.numel() as f64)?;
            i += 1;
        }
    }
    Ok(EXIT_OK)
}

/// Names of the built-in presets, for messages.
pub fn preset_names() -> String {
    PRESETS.join(", ")
}

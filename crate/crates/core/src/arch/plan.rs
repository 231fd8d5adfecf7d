//! Static layer plan: every named layer of a model with its per-sample input
//! and output shapes, derived from the configuration alone.

use crate::arch::config::ModelConfig;
use crate::error::Result;
use crate::nn::conv::output_extent;
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Depthwise {
        c: usize,
        k: usize,
    },
    BatchNorm {
        c: usize,
    },
    Elu,
    MaxPool {
        k: usize,
    },
    GlobalAvgPool,
    Dropout {
        rate: f64,
    },
    /// Elementwise sum of `terms` tensors, `scaled` of which carry a
    /// multiplier, `learned` of those being trainable scalars.
    Add {
        terms: usize,
        scaled: usize,
        learned: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Default)]
struct Planner {
    layers: Vec<LayerDesc>,
}

impl Planner {
    fn push(&mut self, name: String, kind: LayerKind, input: Shape, output: Shape) -> Shape {
        self.layers.push(LayerDesc { name, kind, input, output });
        output
    }

    fn conv(&mut self, name: String, x: Shape, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool) -> Result<Shape> {
        let out = Shape::new(
            x.n,
            c_out,
            output_extent(x.h, k, stride, padding)?,
            output_extent(x.w, k, stride, padding)?,
        );
        let kind = LayerKind::Conv { c_in: x.c, c_out, k, stride, padding, bias };
        Ok(self.push(name, kind, x, out))
    }

    fn conv_same(&mut self, name: String, x: Shape, c_out: usize, k: usize) -> Result<Shape> {
        self.conv(name, x, c_out, k, 1, (k - 1) / 2, false)
    }

    fn bn(&mut self, name: String, x: Shape) -> Shape {
        self.push(name, LayerKind::BatchNorm { c: x.c }, x, x)
    }

    fn elu(&mut self, name: String, x: Shape) -> Shape {
        self.push(name, LayerKind::Elu, x, x)
    }

    fn add(&mut self, name: String, x: Shape, terms: usize, scaled: usize, learned: usize) -> Shape {
        self.push(name, LayerKind::Add { terms, scaled, learned }, x, x)
    }

    fn gap(&mut self, name: String, x: Shape) -> Shape {
        self.push(name, LayerKind::GlobalAvgPool, x, Shape::new(x.n, x.c, 1, 1))
    }

    fn block2(&mut self, p: &str, x: Shape, k: usize) -> Result<Shape> {
        let c = x.c;
        let y = self.conv(format!("{p}.pw_a"), x, c, 1, 1, 0, false)?;
        let y = self.bn(format!("{p}.bn_a"), y);
        let y = self.elu(format!("{p}.elu_a"), y);
        let y = self.push(format!("{p}.dw"), LayerKind::Depthwise { c, k }, y, y);
        let y = self.conv(format!("{p}.pw_b"), y, c, 1, 1, 0, false)?;
        let y = self.bn(format!("{p}.bn_b"), y);
        Ok(self.elu(format!("{p}.elu_b"), y))
    }

    fn eru_transform(&mut self, p: &str, x: Shape, k: usize) -> Result<Shape> {
        let c = x.c;
        let mut y = x;
        for i in 1..=2 {
            y = self.conv_same(format!("{p}.conv{i}"), y, c, k)?;
            y = self.bn(format!("{p}.bn{i}"), y);
            y = self.elu(format!("{p}.elu{i}"), y);
        }
        y = self.block2(&format!("{p}.block2"), y, k)?;
        y = self.conv_same(format!("{p}.conv3"), y, c, k)?;
        y = self.bn(format!("{p}.bn3"), y);
        y = self.elu(format!("{p}.elu3"), y);
        y = self.conv_same(format!("{p}.conv4"), y, c, k)?;
        Ok(self.bn(format!("{p}.bn4"), y))
    }

    fn transition(&mut self, p: &str, x: Shape, c_out: usize, downsample: bool) -> Result<Shape> {
        let mut y = x;
        if downsample {
            let out = Shape::new(x.n, x.c, x.h / 2, x.w / 2);
            y = self.push(format!("{p}.pool"), LayerKind::MaxPool { k: 2 }, x, out);
        }
        if x.c != c_out {
            y = self.conv(format!("{p}.align"), y, c_out, 1, 1, 0, false)?;
        }
        y = self.bn(format!("{p}.bn"), y);
        y = self.elu(format!("{p}.elu"), y);
        let g = self.gap(format!("{p}.gap"), x);
        self.conv(format!("{p}.shortcut"), g, c_out, 1, 1, 0, false)?;
        Ok(self.add(format!("{p}.add"), y, 2, 0, 0))
    }
}

/// Layer plan for one sample (N = 1), in execution order.
pub fn plan_model(config: &ModelConfig, unit_rates: &[Vec<f64>]) -> Result<Vec<LayerDesc>> {
    let [c, h, w] = config.input_shape;
    let widths = config.stage_widths()?;
    let mut p = Planner::default();
    let mut x = Shape::new(1, c, h, w);
    x = p.conv_same("stem.conv".into(), x, config.stem_width, 3)?;
    x = p.bn("stem.bn".into(), x);
    x = p.elu("stem.elu".into(), x);
    let learned = usize::from(config.alpha_learnable);
    for (s, stage) in config.stages.iter().enumerate() {
        if s > 0 {
            x = p.transition(&format!("stage{s}.transition"), x, widths[s], stage.downsample)?;
        }
        for u in 0..stage.num_units {
            let prefix = format!("stage{s}.unit{u}");
            let t = p.eru_transform(&prefix, x, stage.kernel)?;
            p.push(format!("{prefix}.dropout"), LayerKind::Dropout { rate: unit_rates[s][u] }, t, t);
            let scaled = if u == 0 { 1 } else { 2 };
            x = p.add(format!("{prefix}.fuse"), t, scaled + 1, scaled, learned * scaled);
        }
    }
    let g = p.gap("head.gap".into(), x);
    p.conv("head.fc".into(), g, config.num_classes, 1, 1, 0, true)?;
    Ok(p.layers)
}

/// Standalone plan of one baseline residual block at (c, h, w, k).
pub fn plan_baseline_residual(prefix: &str, c: usize, h: usize, w: usize, k: usize) -> Result<Vec<LayerDesc>> {
    let mut p = Planner::default();
    let x = Shape::new(1, c, h, w);
    let y = p.conv_same(format!("{prefix}.conv1"), x, c, k)?;
    let y = p.bn(format!("{prefix}.bn1"), y);
    let y = p.elu(format!("{prefix}.elu1"), y);
    let y = p.conv_same(format!("{prefix}.conv2"), y, c, k)?;
    let y = p.bn(format!("{prefix}.bn2"), y);
    p.add(format!("{prefix}.add"), y, 2, 0, 0);
    Ok(p.layers)
}

/// Standalone plan of one Block-2 at (c, h, w, k).
pub fn plan_block2(prefix: &str, c: usize, h: usize, w: usize, k: usize) -> Result<Vec<LayerDesc>> {
    let mut p = Planner::default();
    p.block2(prefix, Shape::new(1, c, h, w), k)?;
    Ok(p.layers)
}

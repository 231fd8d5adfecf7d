//! Analytic parameter and FLOP accounting.
//!
//! One multiply-accumulate counts as two FLOPs for every convolution,
//! depthwise included. Bias, batch norm, ELU, pooling and additions are
//! itemized as their own rows; dropout is free.

use std::fmt;
use std::fmt::Write as _;

use crate::arch::config::ModelConfig;
use crate::arch::model::Model;
use crate::arch::plan::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::Shape;

fn check_positive(args: [(&str, u64); 4]) -> Result<()> {
    for (name, v) in args {
        if v == 0 {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// 2·h·w·c²·k²: one c→c k×k convolution pair counted in MACs, or one such
/// convolution counted in FLOPs.
pub fn eru_flops(h: u64, w: u64, c: u64, k: u64) -> Result<u64> {
    check_positive([("h", h), ("w", w), ("c", c), ("k", k)])?;
    Ok(2 * h * w * c * c * k * k)
}

/// h·w·c·k²: the multiply-accumulates of one depthwise k×k convolution.
pub fn dwconv_flops(h: u64, w: u64, c: u64, k: u64) -> Result<u64> {
    check_positive([("h", h), ("w", w), ("c", c), ("k", k)])?;
    Ok(h * w * c * k * k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub params: u64,
    pub flops: u64,
    pub in_shape: Shape,
    pub out_shape: Shape,
}

impl LayerCost {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, "conv" | "depthwise")
    }
}

/// Cost rows for a plan; a biased convolution yields a second `.bias` row.
pub fn layer_costs(plan: &[LayerDesc]) -> Vec<LayerCost> {
    let mut rows = Vec::with_capacity(plan.len());
    for l in plan {
        let out = l.output.numel() as u64;
        let row = |kind, params, flops| LayerCost {
            name: l.name.clone(),
            kind,
            params,
            flops,
            in_shape: l.input,
            out_shape: l.output,
        };
        match l.kind {
            LayerKind::Conv { c_in, k, bias, .. } => {
                let per_out = (c_in * k * k) as u64;
                rows.push(row("conv", per_out * l.output.c as u64, 2 * per_out * out));
                if bias {
                    rows.push(LayerCost {
                        name: format!("{}.bias", l.name),
                        ..row("bias", l.output.c as u64, out)
                    });
                }
            }
            LayerKind::Depthwise { c, k } => {
                let kk = (k * k) as u64;
                rows.push(row("depthwise", c as u64 * kk, 2 * kk * out));
            }
            LayerKind::BatchNorm { c } => rows.push(row("batchnorm", 2 * c as u64, 2 * out)),
            LayerKind::Elu => rows.push(row("elu", 0, out)),
            LayerKind::MaxPool { k } => rows.push(row("maxpool", 0, (k * k) as u64 * out)),
            LayerKind::GlobalAvgPool => rows.push(row("gap", 0, l.input.numel() as u64)),
            LayerKind::Dropout { .. } => rows.push(row("dropout", 0, 0)),
            LayerKind::Add { terms, scaled, learned } => {
                rows.push(row("add", learned as u64, (terms - 1 + scaled) as u64 * out))
            }
        }
    }
    rows
}

/// One enhanced residual unit: the pair-form figure next to the exact sum
/// of the unit's rows.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSummary {
    pub name: String,
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub k: u64,
    pub pair_form: u64,
    pub exact: u64,
}

/// One Block-2 depthwise layer against an equal-shape standard convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseSummary {
    pub name: String,
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub k: u64,
    /// h·w·c·k².
    pub closed_form: u64,
    /// The analyzer's row (2 FLOPs per MAC).
    pub analyzer: u64,
    /// 2·h·w·c²·k².
    pub standard_conv: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintResult {
    pub id: String,
    pub bound: u64,
    pub observed: u64,
    pub pass: bool,
}

impl fmt::Display for ConstraintResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "pass" } else { "FAIL" };
        write!(f, "{}: observed {} bound {} {verdict}", self.id, self.observed, self.bound)
    }
}

/// Channel sum for each unit index across the stages that have that unit,
/// and kernel sum over the units of each stage.
pub fn constraint_sums(config: &ModelConfig) -> Result<(Vec<u64>, Vec<u64>)> {
    let widths = config.stage_widths()?;
    let max_units = config.stages.iter().map(|s| s.num_units).max().unwrap_or(0);
    let channels = (0..max_units)
        .map(|n| {
            config
                .stages
                .iter()
                .zip(&widths)
                .filter(|(s, _)| s.num_units > n)
                .map(|(_, w)| *w as u64)
                .sum()
        })
        .collect();
    let kernels = config.stages.iter().map(|s| (s.num_units * s.kernel) as u64).collect();
    Ok((channels, kernels))
}

pub fn constraint_results(config: &ModelConfig, c_max: u64, k_max: u64) -> Result<Vec<ConstraintResult>> {
    let (channels, kernels) = constraint_sums(config)?;
    let mut out = Vec::new();
    for (n, observed) in channels.into_iter().enumerate() {
        out.push(ConstraintResult {
            id: format!("channels[unit {n}]"),
            bound: c_max,
            observed,
            pass: observed <= c_max,
        });
    }
    for (m, observed) in kernels.into_iter().enumerate() {
        out.push(ConstraintResult {
            id: format!("kernels[stage {m}]"),
            bound: k_max,
            observed,
            pass: observed <= k_max,
        });
    }
    Ok(out)
}

pub fn check_constraints(model: &Model, c_max: u64, k_max: u64) -> Result<Vec<ConstraintResult>> {
    constraint_results(model.config(), c_max, k_max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub name: String,
    pub gflops: f64,
    pub mparams: f64,
    pub note: &'static str,
}

pub const AS_PRINTED: &str = "as printed in source";

/// Published reference rows followed by the computed row for `model`.
pub fn compare_baselines(model: &Model) -> Vec<BaselineRow> {
    vec![
        BaselineRow {
            name: "ResNet-18".into(),
            gflops: 768.0,
            mparams: 11.7,
            note: AS_PRINTED,
        },
        BaselineRow {
            name: "MobileNetV2".into(),
            gflops: 115.2,
            mparams: 3.4,
            note: AS_PRINTED,
        },
        BaselineRow {
            name: "this model".into(),
            gflops: total_flops(model) as f64 / 1e9,
            mparams: param_count(model) as f64 / 1e6,
            note: "computed",
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    pub total_params: u64,
    pub total_flops: u64,
    pub units: Vec<UnitSummary>,
    pub depthwise: Vec<DepthwiseSummary>,
    pub channel_sums: Vec<u64>,
    pub kernel_sums: Vec<u64>,
    /// Present when the configuration sets hardware limits.
    pub constraints: Vec<ConstraintResult>,
    pub baselines: Vec<BaselineRow>,
}

impl CostReport {
    pub fn new(model: &Model) -> Result<Self> {
        let per_layer = layer_costs(model.plan());
        let total_params = per_layer.iter().map(|r| r.params).sum();
        let total_flops = per_layer.iter().map(|r| r.flops).sum();
        let config = model.config();
        let mut units = Vec::new();
        for (s, stage) in config.stages.iter().enumerate() {
            for u in 0..stage.num_units {
                let name = format!("stage{s}.unit{u}");
                let prefix = format!("{name}.");
                let first = model
                    .plan()
                    .iter()
                    .find(|l| l.name.starts_with(&prefix))
                    .expect("every unit is planned");
                let (h, w, c) = (first.input.h as u64, first.input.w as u64, first.input.c as u64);
                let k = stage.kernel as u64;
                units.push(UnitSummary {
                    pair_form: eru_flops(h, w, c, k)?,
                    exact: per_layer.iter().filter(|r| r.name.starts_with(&prefix)).map(|r| r.flops).sum(),
                    name,
                    h,
                    w,
                    c,
                    k,
                });
            }
        }
        let mut depthwise = Vec::new();
        for (l, row) in model.plan().iter().zip(per_layer.iter().filter(|r| r.kind != "bias")) {
            if let LayerKind::Depthwise { c, k } = l.kind {
                let (h, w, c, k) = (l.output.h as u64, l.output.w as u64, c as u64, k as u64);
                depthwise.push(DepthwiseSummary {
                    name: l.name.clone(),
                    h,
                    w,
                    c,
                    k,
                    closed_form: dwconv_flops(h, w, c, k)?,
                    analyzer: row.flops,
                    standard_conv: eru_flops(h, w, c, k)?,
                });
            }
        }
        let (channel_sums, kernel_sums) = constraint_sums(config)?;
        let constraints = if config.c_max.is_some() || config.k_max.is_some() {
            constraint_results(config, config.c_max.unwrap_or(u64::MAX), config.k_max.unwrap_or(u64::MAX))?
        } else {
            Vec::new()
        };
        Ok(Self {
            per_layer,
            total_params,
            total_flops,
            units,
            depthwise,
            channel_sums,
            kernel_sums,
            constraints,
            baselines: compare_baselines(model),
        })
    }

    /// FLOPs of convolution rows only (bias rows excluded).
    pub fn conv_flops(&self) -> u64 {
        self.per_layer.iter().filter(|r| r.is_conv()).map(|r| r.flops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,params,flops,out_shape\n");
        for r in &self.per_layer {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.params, r.flops, per_sample(r.out_shape));
        }
        let _ = writeln!(s, "total,{},{},", self.total_params, self.total_flops);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.per_layer.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let _ = writeln!(s, "{:<width$}  {:<9}  {:>10}  {:>14}  out_shape", "layer", "kind", "params", "flops");
        for r in &self.per_layer {
            let _ = writeln!(
                s,
                "{:<width$}  {:<9}  {:>10}  {:>14}  {}",
                r.name,
                r.kind,
                r.params,
                r.flops,
                per_sample(r.out_shape)
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>10}  {:>14}",
            "TOTAL", "", self.total_params, self.total_flops
        );
        let _ = writeln!(
            s,
            "\nparams {:.3} M, FLOPs {:.3} G per image (convolution FLOPs {:.3} G)",
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9,
            self.conv_flops() as f64 / 1e9
        );

        let _ = writeln!(s, "\nresidual units: pair-form 2·h·w·c²·k² vs exact layer sum");
        for u in &self.units {
            let _ = writeln!(
                s,
                "  {:<16} h={} w={} c={} k={}  pair-form {}  exact {}",
                u.name, u.h, u.w, u.c, u.k, u.pair_form, u.exact
            );
        }
        let _ = writeln!(s, "\ndepthwise layers: h·w·c·k² vs standard conv 2·h·w·c²·k²");
        for d in &self.depthwise {
            let _ = writeln!(
                s,
                "  {:<24} h·w·c·k² {}  analyzer {}  standard {}  ratio 1/{}",
                d.name,
                d.closed_form,
                d.analyzer,
                d.standard_conv,
                d.standard_conv / d.closed_form
            );
        }
        let _ = writeln!(s, "\nhardware sums: channels per unit index {:?}, kernels per stage {:?}", self.channel_sums, self.kernel_sums);
        for c in &self.constraints {
            let _ = writeln!(s, "  {c}");
        }
        let _ = writeln!(s, "\n{:<14}  {:>10}  {:>10}  note", "model", "GFLOPs", "Mparams");
        for b in &self.baselines {
            let _ = writeln!(s, "{:<14}  {:>10.3}  {:>10.3}  {}", b.name, b.gflops, b.mparams, b.note);
        }
        s
    }
}

fn per_sample(s: Shape) -> String {
    format!("{}x{}x{}", s.c, s.h, s.w)
}

pub fn total_flops(model: &Model) -> u64 {
    layer_costs(model.plan()).iter().map(|r| r.flops).sum()
}

/// Trainable parameter elements; running statistics are excluded.
pub fn param_count(model: &Model) -> u64 {
    model.params().trainable_count() as u64
}

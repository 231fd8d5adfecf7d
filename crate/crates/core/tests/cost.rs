use adaptovision::arch::params::Initializer;
use adaptovision::arch::plan::{plan_baseline_residual, plan_block2, LayerDesc, LayerKind};
use adaptovision::arch::presets::mini;
use adaptovision::arch::{blocks, preset, Model, ModelConfig, ParamStore, Phase, StageConfig};
use adaptovision::cli::miniature;
use adaptovision::cost::{
    check_constraints, compare_baselines, dwconv_flops, eru_flops, layer_costs, param_count, total_flops, CostReport,
    AS_PRINTED,
};
use adaptovision::nn::Mode;
use adaptovision::{Error, Shape, Tape, Tensor};

fn counted_macs(model: &Model, batch: usize) -> u64 {
    let tape = Tape::counting();
    let mut pass = model.pass(&tape, Mode::Eval, 0);
    let x = tape.leaf(Tensor::full(model.input_shape(batch), 0.25));
    model.forward(&mut pass, x).unwrap();
    tape.macs()
}

fn explicit(kernels: &[usize], units: usize) -> ModelConfig {
    let stages = kernels
        .iter()
        .enumerate()
        .map(|(i, &k)| StageConfig {
            phase: match i {
                0 => None,
                i if i % 2 == 1 => Some(Phase::Expansion),
                _ => Some(Phase::Compression),
            },
            num_units: units,
            kernel: k,
            downsample: i > 0,
        })
        .collect();
    ModelConfig { stages, ..preset("cifar-32").unwrap() }
}

#[test]
fn analyzer_conv_flops_are_twice_counted_macs() {
    let configs = [mini(), miniature(&preset("cifar-32").unwrap()), miniature(&preset("cifar-64").unwrap())];
    for cfg in configs {
        let model = Model::build(cfg).unwrap();
        let report = CostReport::new(&model).unwrap();
        assert_eq!(report.conv_flops(), 2 * counted_macs(&model, 1));
        assert_eq!(2 * report.conv_flops(), 2 * counted_macs(&model, 2));
    }
}

#[test]
fn closed_forms() {
    assert_eq!(eru_flops(32, 32, 16, 3).unwrap(), 4_718_592);
    assert_eq!(dwconv_flops(32, 32, 16, 3).unwrap(), 147_456);
    assert_eq!(eru_flops(32, 32, 16, 3).unwrap(), 32 * dwconv_flops(32, 32, 16, 3).unwrap());
    assert_eq!(eru_flops(1, 1, 1, 1).unwrap(), 2);
    assert_eq!(eru_flops(5, 7, 6, 3).unwrap() * 4, eru_flops(5, 7, 12, 3).unwrap());
    assert_eq!(2 * dwconv_flops(9, 9, 1, 5).unwrap(), eru_flops(9, 9, 1, 5).unwrap());
    assert!(matches!(eru_flops(0, 1, 1, 1), Err(Error::Argument(_))));
    assert!(matches!(dwconv_flops(1, 1, 1, 0), Err(Error::Argument(_))));
}

#[test]
fn totals_are_row_sums() {
    for name in ["cifar-32", "cifar-64", "mini"] {
        let model = Model::build(preset(name).unwrap()).unwrap();
        let r = CostReport::new(&model).unwrap();
        assert_eq!(r.total_params, r.per_layer.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.total_flops, r.per_layer.iter().map(|l| l.flops).sum::<u64>());
        assert_eq!(r.total_flops, total_flops(&model));
        assert_eq!(r.total_params, param_count(&model));
    }
}

#[test]
fn analyzer_params_match_the_registry() {
    for name in ["cifar-32", "mini"] {
        let model = Model::build(preset(name).unwrap()).unwrap();
        let registry: usize = model.params().trainable().map(|(_, t)| t.numel()).sum();
        assert_eq!(CostReport::new(&model).unwrap().total_params, registry as u64);
    }
}

#[test]
fn doubling_extents_quadruples_spatial_rows() {
    let small = Model::build(mini()).unwrap();
    let mut cfg = mini();
    cfg.input_shape = [3, 32, 32];
    let big = Model::build(cfg).unwrap();
    let (a, b) = (layer_costs(small.plan()), layer_costs(big.plan()));
    assert_eq!(a.len(), b.len());
    let spatial = |r: &adaptovision::cost::LayerCost| r.in_shape.spatial() > 1;
    let sa: u64 = a.iter().filter(|r| spatial(r)).map(|r| r.flops).sum();
    let sb: u64 = b.iter().filter(|r| spatial(r)).map(|r| r.flops).sum();
    assert_eq!(sb, 4 * sa);
    for (x, y) in a.iter().zip(&b).filter(|(x, _)| spatial(x)) {
        assert_eq!(y.flops, 4 * x.flops, "{}", x.name);
    }
    // rows after global pooling do not scale
    for (x, y) in a.iter().zip(&b).filter(|(x, _)| !spatial(x)) {
        assert_eq!(y.flops, x.flops, "{}", x.name);
    }
}

#[test]
fn depthwise_rows_against_standard_conv() {
    let model = Model::build(preset("cifar-32").unwrap()).unwrap();
    let r = CostReport::new(&model).unwrap();
    assert_eq!(r.depthwise.len(), model.config().total_units());
    for d in &r.depthwise {
        assert_eq!(d.closed_form, d.h * d.w * d.c * d.k * d.k);
        assert_eq!(d.standard_conv, 2 * d.c * d.closed_form);
        assert_eq!(d.analyzer, 2 * d.closed_form);
    }
}

#[test]
fn block2_and_baseline_counts() {
    let rows = layer_costs(&plan_block2("b2", 16, 8, 8, 3).unwrap());
    assert_eq!(rows.iter().map(|r| r.params).sum::<u64>(), 720);
    let mut store = ParamStore::new();
    blocks::register_block2(&mut store, &mut Initializer::new(0), "b2", 16, 3).unwrap();
    assert_eq!(store.trainable_count(), 720);

    let rows = layer_costs(&plan_baseline_residual("r", 16, 32, 32, 3).unwrap());
    assert_eq!(rows.iter().map(|r| r.params).sum::<u64>(), 4672);
    let conv_macs: u64 = rows.iter().filter(|r| r.is_conv()).map(|r| r.flops / 2).sum();
    assert_eq!(conv_macs, eru_flops(32, 32, 16, 3).unwrap());
}

#[test]
fn single_conv_and_norm_rows() {
    let x = Shape::new(1, 16, 8, 8);
    let plan = vec![
        LayerDesc {
            name: "c".into(),
            kind: LayerKind::Conv { c_in: 16, c_out: 16, k: 3, stride: 1, padding: 1, bias: true },
            input: x,
            output: x,
        },
        LayerDesc { name: "bn".into(), kind: LayerKind::BatchNorm { c: 16 }, input: x, output: x },
    ];
    let rows = layer_costs(&plan);
    assert_eq!(rows[0].params + rows[1].params, 2320);
    assert_eq!(rows[2].params, 32);
}

#[test]
fn empty_stage_config_costs_stem_and_head() {
    let cfg = ModelConfig { stages: vec![], ..mini() };
    let model = Model::build(cfg).unwrap();
    let names: Vec<&str> = model.plan().iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["stem.conv", "stem.bn", "stem.elu", "head.gap", "head.fc"]);
    let stem = 2 * 3 * 9 * 8 * 256;
    let head = 2 * 8 * 2 + 2;
    let norm = 2 * 8 * 256 + 8 * 256 + 8 * 256;
    assert_eq!(total_flops(&model), (stem + head + norm) as u64);
}

#[test]
fn constraint_examples() {
    let cfg = explicit(&[3, 3, 5, 5], 2);
    let model = Model::build(cfg).unwrap();
    let r = CostReport::new(&model).unwrap();
    assert_eq!(r.kernel_sums, vec![6, 6, 10, 10]);
    let results = check_constraints(&model, 10_000, 10).unwrap();
    assert!(results.iter().all(|c| c.pass));

    let c_exact = *r.channel_sums.iter().max().unwrap();
    let k_exact = *r.kernel_sums.iter().max().unwrap();
    let edge = check_constraints(&model, c_exact, k_exact).unwrap();
    assert!(edge.iter().all(|c| c.pass));
    assert!(edge.iter().any(|c| c.observed == c.bound));

    let zero = check_constraints(&model, 0, 10).unwrap();
    assert!(zero.iter().filter(|c| c.id.starts_with("channels")).all(|c| !c.pass));
    assert!(check_constraints(&model, 10_000, 9).unwrap().iter().any(|c| !c.pass));
}

#[test]
fn cifar_presets_land_in_band() {
    let model = Model::build(preset("cifar-32").unwrap()).unwrap();
    let p = param_count(&model);
    let f = total_flops(&model);
    assert!((5_600_000..=7_600_000).contains(&p), "{p}");
    assert!((3_900_000_000..=5_900_000_000).contains(&f), "{f}");
}

#[test]
fn baseline_rows() {
    let model = Model::build(mini()).unwrap();
    let rows = compare_baselines(&model);
    assert_eq!((rows[0].name.as_str(), rows[0].gflops, rows[0].mparams), ("ResNet-18", 768.0, 11.7));
    assert_eq!((rows[1].name.as_str(), rows[1].gflops, rows[1].mparams), ("MobileNetV2", 115.2, 3.4));
    assert!(rows[..2].iter().all(|r| r.note == AS_PRINTED));
    assert_eq!(rows[2].mparams, param_count(&model) as f64 / 1e6);
    assert_eq!(rows[2].gflops, total_flops(&model) as f64 / 1e9);
}

#[test]
fn csv_has_the_interface_header() {
    let model = Model::build(mini()).unwrap();
    let csv = CostReport::new(&model).unwrap().to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("name,params,flops,out_shape"));
    assert!(csv.lines().any(|l| l.starts_with("stage1.unit1.block2.dw,")));
}

use adaptovision::arch::presets::mini;
use adaptovision::arch::{Model, ParamStore};
use adaptovision::data::synthetic_dataset;
use adaptovision::train::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint_into, MAGIC};
use adaptovision::train::metrics::ClassMetrics;
use adaptovision::train::trainer::METRICS_HEADER;
use adaptovision::train::{
    dropout_rate_for_block, evaluate, lr_at, metrics_csv, save_checkpoint, train, DecayMode, Evaluation, Sgd,
    TrainConfig,
};
use adaptovision::{Error, Tensor};
use indexmap::IndexMap;

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, lr0: 0.0175, ..TrainConfig::default() }
}

#[test]
fn lr_schedule_values() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0.0), 0.175);
    assert_eq!(cfg.lr_at(12.4), 0.17325);
    assert!((cfg.lr_at(24.8) - 0.1715175).abs() < 1e-15);
    let mut prev = cfg.lr_at(0.0);
    for i in 1..400 {
        let lr = cfg.lr_at(i as f64 * 0.1);
        assert!(lr < prev);
        prev = lr;
    }
    assert_eq!(lr_at(12.3, 0.175, 0.99, 12.4, DecayMode::Staircase), 0.175);
    assert_eq!(lr_at(12.4, 0.175, 0.99, 12.4, DecayMode::Staircase), 0.175 * 0.99);
}

#[test]
fn dropout_schedule_values() {
    assert_eq!(dropout_rate_for_block(0, 4, 0.3, 0.5).unwrap(), 0.3);
    assert_eq!(dropout_rate_for_block(3, 4, 0.3, 0.5).unwrap(), 0.5);
    assert!((dropout_rate_for_block(1, 3, 0.3, 0.5).unwrap() - 0.4).abs() < 1e-15);
    assert_eq!(dropout_rate_for_block(0, 1, 0.3, 0.5).unwrap(), 0.3);
    assert!(matches!(dropout_rate_for_block(4, 4, 0.3, 0.5), Err(Error::Argument(_))));
}

fn one_param(value: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("p", Tensor::full((1, 1, 1, 1), value), adaptovision::arch::ParamKind::Trainable).unwrap();
    s
}

fn grads(g: f64) -> IndexMap<String, Tensor> {
    IndexMap::from([("p".to_string(), Tensor::full((1, 1, 1, 1), g))])
}

#[test]
fn sgd_examples() {
    let mut s = one_param(1.0);
    Sgd::new(0.0).step(&mut s, &grads(0.5), 0.1).unwrap();
    assert_eq!(s.tensor("p").unwrap().data(), &[0.95]);

    let mut s = one_param(0.0);
    let mut opt = Sgd::new(0.9);
    opt.step(&mut s, &grads(1.0), 1.0).unwrap();
    assert_eq!(s.tensor("p").unwrap().data(), &[-1.0]);
    opt.step(&mut s, &grads(1.0), 1.0).unwrap();
    assert!((s.tensor("p").unwrap().data()[0] + 2.9).abs() < 1e-15);
    let before = s.tensor("p").unwrap().data()[0];
    opt.step(&mut s, &grads(0.0), 0.0).unwrap();
    assert_eq!(s.tensor("p").unwrap().data()[0], before);
    assert!((opt.velocity("p").unwrap()[0] - 0.9 * 1.9).abs() < 1e-15);

    let err = Sgd::new(0.9).step(&mut s, &IndexMap::new(), 0.1).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn metric_examples() {
    let e = Evaluation::from_predictions(&[0, 1, 1, 0], &[0, 1, 1, 0], 2);
    assert_eq!(e.accuracy, 1.0);
    assert!(e.per_class.iter().all(|m| m.f1 == 1.0));
    let e = Evaluation::from_predictions(&[0, 0, 0, 0], &[0, 1, 0, 1], 2);
    assert_eq!(e.accuracy, 0.5);
    assert_eq!((e.per_class[0].recall, e.per_class[1].recall), (1.0, 0.0));
    let m = ClassMetrics::from_counts(2, 1, 1);
    for v in [m.precision, m.recall, m.f1] {
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(ClassMetrics::from_counts(0, 0, 3).f1, 0.0);
}

#[test]
fn zero_epochs_change_nothing() {
    let data = synthetic_dataset(8, 2, 16, 1).unwrap();
    let mut model = Model::build(mini()).unwrap();
    let before = model.params().clone();
    let records = train(&mut model, &data, &data, &small_cfg(0)).unwrap();
    assert!(records.is_empty());
    assert_eq!(model.params(), &before);
    assert_eq!(metrics_csv(&records), format!("{METRICS_HEADER}\n"));
}

#[test]
fn same_seed_same_records() {
    let data = synthetic_dataset(48, 2, 16, 2).unwrap();
    let cfg = TrainConfig { batch_size: 16, ..small_cfg(2) };
    let run = || {
        let mut m = Model::build(mini()).unwrap();
        let r = train(&mut m, &data, &data, &cfg).unwrap();
        (r, encode_checkpoint(m.params()))
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(metrics_csv(&a), metrics_csv(&b));
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let other = TrainConfig { seed: 1, ..cfg };
    let mut m = Model::build(mini()).unwrap();
    assert_ne!(train(&mut m, &data, &data, &other).unwrap(), a);
}

#[test]
fn loss_falls_by_epoch_ten() {
    let data = synthetic_dataset(96, 2, 16, 3).unwrap();
    let mut model = Model::build(mini()).unwrap();
    let records = train(&mut model, &data, &data, &TrainConfig { batch_size: 16, ..small_cfg(11) }).unwrap();
    assert!(records[10].train_loss < records[0].train_loss);
    assert!(records.windows(2).all(|w| w[1].lr < w[0].lr));
    for r in &records {
        assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
    }
}

#[test]
fn nan_loss_aborts_with_diagnostic() {
    let data = synthetic_dataset(8, 2, 16, 4).unwrap();
    let mut model = Model::build(mini()).unwrap();
    model.params_mut().tensor_mut("head.fc.bias").unwrap().data_mut()[0] = f64::NAN;
    let err = train(&mut model, &data, &data, &small_cfg(1)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numerical(_)));
    assert!(msg.contains("step 0") && msg.contains("head.fc.bias"), "{msg}");
}

#[test]
fn evaluate_reports_per_class() {
    let data = synthetic_dataset(20, 2, 16, 5).unwrap();
    let model = Model::build(mini()).unwrap();
    let e = evaluate(&model, &data, 7).unwrap();
    assert_eq!(e.per_class.len(), 2);
    assert_eq!(e.confusion.iter().flatten().sum::<u64>(), 20);
    assert_eq!(e, evaluate(&model, &data, 20).unwrap());
}

#[test]
fn rejects_bad_inputs() {
    let mut model = Model::build(mini()).unwrap();
    let data = synthetic_dataset(4, 2, 8, 0).unwrap();
    assert!(matches!(train(&mut model, &data, &data, &small_cfg(1)), Err(Error::Data(_))));
    assert!(matches!(train(&mut model, &[], &data, &small_cfg(1)), Err(Error::Data(_))));
    let bad = TrainConfig { lr0: 0.0, ..small_cfg(1) };
    let ok = synthetic_dataset(4, 2, 16, 0).unwrap();
    assert!(matches!(train(&mut model, &ok, &ok, &bad), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.avck");
    let mut trained = Model::build(mini()).unwrap();
    for (i, (_, p)) in trained.params_mut().iter_mut().enumerate() {
        p.value.data_mut().iter_mut().for_each(|v| *v += i as f64 * 0.01);
    }
    save_checkpoint(&path, trained.params()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);

    let mut fresh = Model::build(mini()).unwrap();
    load_checkpoint_into(&bytes, fresh.params_mut()).unwrap();
    assert_eq!(fresh.params(), trained.params());
    assert_eq!(decode_checkpoint(&bytes).unwrap().len(), trained.params().len());

    let err = load_checkpoint_into(&bytes[..bytes.len() - 3], fresh.params_mut()).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    let mut junk = bytes.clone();
    junk[0] = b'X';
    assert!(load_checkpoint_into(&junk, fresh.params_mut()).unwrap_err().to_string().contains("not a checkpoint"));

    let mut wider = mini();
    wider.stem_width = 16;
    let mut other = Model::build(wider).unwrap();
    let err = load_checkpoint_into(&bytes, other.params_mut()).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
    assert!(err.to_string().contains("stem.conv.weight"), "{err}");
}

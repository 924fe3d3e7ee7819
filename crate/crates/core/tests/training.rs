mod common;

use common::*;
use proxy_debias::metrics::counter_p;
use proxy_debias::model::ModelConfig;
use proxy_debias::train::{proxy_importance, train, Mode, Trainer};
use proxy_debias::Error;

fn trainer(mode: Mode, seed: u64) -> (Trainer, proxy_debias::data::Dataset) {
    let ds = small_dataset(&[0.9], seed, 256);
    let t = Trainer::new(&small_model(ds.feature_dim(), 1), &small_train(mode, seed), &ds.bias_classes).unwrap();
    (t, ds)
}

#[test]
fn enhancement_leaves_backbone_bit_identical() {
    let (mut t, ds) = trainer(Mode::ActivePd, 1);
    let batch = ds.batch(&(0..64).collect::<Vec<_>>());
    t.target_step(&batch).unwrap();
    let backbone = t.params().backbone.clone();
    let head = t.params().head.clone();
    let bank = t.bank().clone();
    for _ in 0..5 {
        t.enhancement_step(&batch).unwrap();
    }
    assert_eq!(t.params().backbone, backbone);
    assert_ne!(t.params().head, head);
    assert_ne!(t.bank().tables()[0].proxies(), bank.tables()[0].proxies());
}

#[test]
fn anchors_survive_active_training() {
    let (t, ds) = trainer(Mode::ActivePd, 2);
    let anchors: Vec<Vec<f64>> = t.bank().tables().iter().map(|tb| tb.anchor().to_vec()).collect();
    let (model, _) = train(&ds, &small_train(Mode::ActivePd, 2), &small_model(ds.feature_dim(), 1)).unwrap();
    let after: Vec<Vec<f64>> = model.bank.tables().iter().map(|tb| tb.anchor().to_vec()).collect();
    assert_eq!(anchors, after);
    assert_ne!(model.bank, *t.bank());
}

#[test]
fn naive_bank_is_never_updated() {
    let (t, ds) = trainer(Mode::NaivePd, 3);
    let (model, history) = train(&ds, &small_train(Mode::NaivePd, 3), &small_model(ds.feature_dim(), 1)).unwrap();
    assert_eq!(model.bank, *t.bank());
    assert!(history.epochs.iter().all(|e| e.enhancement_loss.is_none()));
    let iv = &model.intervention.blocks[0];
    assert!(iv.iter().all(|&v| v == 0.5));
}

#[test]
fn enhancement_outside_active_mode_is_a_contract_error() {
    let (mut t, ds) = trainer(Mode::NaivePd, 0);
    let err = t.enhancement_step(&ds.batch(&[0, 1])).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn seeded_training_is_bit_exact() {
    let ds = small_dataset(&[0.8], 4, 200);
    for mode in [Mode::Vanilla, Mode::NaivePd, Mode::ActivePd] {
        let cfg = small_train(mode, 4);
        let mc = small_model(ds.feature_dim(), 1);
        let a = train(&ds, &cfg, &mc).unwrap();
        let b = train(&ds, &cfg, &mc).unwrap();
        assert_eq!(a, b, "{}", mode);
        let text_a = serde_json::to_string(&a.0).unwrap();
        let text_b = serde_json::to_string(&b.0).unwrap();
        assert_eq!(text_a, text_b);
    }
}

#[test]
fn vanilla_model_has_no_proxy_section() {
    let ds = small_dataset(&[0.8], 5, 100);
    let (model, _) = train(&ds, &small_train(Mode::Vanilla, 5), &small_model(ds.feature_dim(), 1)).unwrap();
    assert!(model.bank.is_empty());
    assert!(model.intervention.blocks.is_empty());
    assert_eq!(model.params.proxy_width(), 0);
    assert!(model.model_config.proxy_dims.is_empty());
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let ds = small_dataset(&[0.9], 6, 128);
    let mut cfg = small_train(Mode::ActivePd, 6);
    cfg.learning_rate = 0.0;
    cfg.enhancement_learning_rate = 0.0;
    let mut t = Trainer::new(&small_model(ds.feature_dim(), 1), &cfg, &ds.bias_classes).unwrap();
    let values = |t: &Trainer| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = t.params().all_tensors().iter().map(|x| x.values().to_vec()).collect();
        out.extend(t.bank().tables().iter().map(|tb| tb.proxies().values().to_vec()));
        out
    };
    let before = values(&t);
    let batch = ds.as_batch();
    for _ in 0..3 {
        t.target_step(&batch).unwrap();
        t.enhancement_step(&batch).unwrap();
    }
    assert_eq!(values(&t), before);
}

#[test]
fn full_batch_target_loss_does_not_increase() {
    let ds = small_dataset(&[0.9], 7, 128);
    let mut cfg = small_train(Mode::Vanilla, 7);
    cfg.weight_decay = 0.0;
    let mut t = Trainer::new(&small_model(ds.feature_dim(), 1), &cfg, &ds.bias_classes).unwrap();
    let batch = ds.as_batch();
    let losses: Vec<f64> = (0..50).map(|_| t.target_step(&batch).unwrap().0).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{:?}", losses);
    }
    assert!(losses[49] < losses[0]);
}

#[test]
fn enhancement_raises_counter_p() {
    let (mut t, ds) = trainer(Mode::ActivePd, 8);
    let batch = ds.as_batch();
    for _ in 0..20 {
        t.target_step(&batch).unwrap();
    }
    let before = counter_p(t.params(), t.bank(), &ds.features, 0).unwrap();
    for _ in 0..200 {
        t.enhancement_step(&batch).unwrap();
    }
    let after = counter_p(t.params(), t.bank(), &ds.features, 0).unwrap();
    assert!(after > before, "counter_p {} -> {}", before, after);
}

#[test]
fn importance_is_proxy_weights_times_offset() {
    let (t, ds) = trainer(Mode::ActivePd, 9);
    let x = ds.features.select_rows(&[0, 1, 2, 3]);
    let labels = vec![ds.bias[0][..4].to_vec()];
    let alpha = proxy_importance(t.params(), t.bank(), &x, &labels).unwrap();
    let p = t.params();
    let f = p.feature_dim();
    let table = &t.bank().tables()[0];
    for (i, &label) in labels[0].iter().enumerate() {
        let proxy = table.proxy(label);
        for c in 0..p.num_classes() {
            let expected: f64 = (0..table.dim())
                .map(|j| p.head.weight.get(f + j, c) * (proxy[j] - table.anchor()[j]))
                .sum();
            assert!((alpha.get(i, c) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let ds = small_dataset(&[0.9], 0, 50);
    let err = train(&ds, &small_train(Mode::ActivePd, 0), &ModelConfig::new(3, vec![4])).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
    let err = train(&ds, &small_train(Mode::ActivePd, 0), &small_model(ds.feature_dim(), 2)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

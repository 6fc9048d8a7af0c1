use qecbench::bench::evaluate;
use qecbench::dataset::{generate_eval_set, generate_training_set, Dataset, DatasetMode};
use qecbench::decoders::{write_checkpoint, Architecture, CodeContext, Model, ModelConfig};
use qecbench::lattice::build_code;
use qecbench::rng::CounterRng;
use qecbench::training::{train, TrainConfig};
use qecbench::QecError;

/// Ten single-qubit error patterns (X, Z or XZ) at d=3 drawn from a real
/// training set, plus the same samples as an eval set.
fn fixture() -> (Dataset, Dataset) {
    let code = build_code(3).unwrap();
    let pool = generate_training_set(&code, 0.05, 20_000, &CounterRng::new(17)).unwrap();
    let single: Vec<usize> = (0..pool.len())
        .filter(|&i| {
            let e = &pool.records[i].pattern;
            e.x.count_ones() + e.z.count_ones() > 0
                && (e.x.count_ones() == 0 || e.z.count_ones() == 0 || e.x == e.z)
                && e.x.count_ones() <= 1
                && e.z.count_ones() <= 1
        })
        .collect();
    let step = single.len() / 10;
    let train_set = pool.subset((0..10).map(|i| single[i * step]));
    let mut as_eval = train_set.clone();
    as_eval.header.mode = DatasetMode::Eval;
    (train_set, as_eval)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.01,
        batch_size: 4,
        patience: epochs,
        val_interval: 5,
        seed: 3,
    }
}

#[test]
fn gcn_memorizes_ten_samples() {
    let (train_set, as_eval) = fixture();
    // Full batch, and a single validation at the end so the final
    // parameters are the ones returned.
    let tc = TrainConfig {
        batch_size: 10,
        val_interval: 1000,
        ..config(1000)
    };
    let trained = train(
        &ModelConfig::new(Architecture::Gcn),
        &tc,
        &train_set,
        &as_eval,
    )
    .unwrap();
    assert_eq!(trained.best_epoch, 1000);
    let ctx = CodeContext::new(&build_code(3).unwrap());
    let metrics = evaluate(&trained.model, &ctx, &as_eval).unwrap();
    assert_eq!(metrics.overall_accuracy, 1.0);
}

#[test]
fn loss_decreases_for_every_architecture() {
    let (train_set, as_eval) = fixture();
    for arch in Architecture::NEURAL {
        let trained = train(&ModelConfig::new(arch), &config(30), &train_set, &as_eval).unwrap();
        let loss = &trained.history.loss;
        assert_eq!(loss.len(), 30);
        assert!(
            loss.last().unwrap() < loss.first().unwrap(),
            "{arch}: {:?}",
            loss
        );
    }
}

fn bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).unwrap();
    buf
}

#[test]
fn training_is_deterministic() {
    let code = build_code(3).unwrap();
    let train_set = generate_training_set(&code, 0.05, 2_000, &CounterRng::new(1)).unwrap();
    let val = generate_eval_set(&code, 0.05, 200, &CounterRng::new(2)).unwrap();
    for arch in [Architecture::Gcn, Architecture::GraphTransformer] {
        let run = || train(&ModelConfig::new(arch), &config(10), &train_set, &val).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(bytes(&a.model), bytes(&b.model));
        let other = train(
            &ModelConfig::new(arch),
            &config(10).with_seed(4),
            &train_set,
            &val,
        )
        .unwrap();
        assert_ne!(a.history.loss, other.history.loss);
    }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let (train_set, as_eval) = fixture();
    let model_config = ModelConfig::new(Architecture::Gcnii).with_seed(8);
    let tc = TrainConfig {
        lr: 0.0,
        ..config(15)
    };
    let trained = train(&model_config, &tc, &train_set, &as_eval).unwrap();
    assert_eq!(trained.model, Model::new(model_config).unwrap());
}

#[test]
fn selected_checkpoint_has_best_recorded_rate() {
    let code = build_code(3).unwrap();
    let train_set = generate_training_set(&code, 0.05, 5_000, &CounterRng::new(5)).unwrap();
    let val = generate_eval_set(&code, 0.05, 500, &CounterRng::new(6)).unwrap();
    let trained = train(
        &ModelConfig::new(Architecture::Appnp),
        &config(25),
        &train_set,
        &val,
    )
    .unwrap();
    let h = &trained.history;
    assert_eq!(h.val_epoch, vec![5, 10, 15, 20, 25]);
    assert_eq!(trained.best_val_ecr, h.best_val_ecr());
    let first_best = h
        .val_ecr
        .iter()
        .position(|&e| e == h.best_val_ecr())
        .unwrap();
    assert_eq!(trained.best_epoch, h.val_epoch[first_best]);
    let ctx = CodeContext::new(&code);
    let metrics = evaluate(&trained.model, &ctx, &val).unwrap();
    assert_eq!(metrics.error_correction_rate, trained.best_val_ecr);
}

#[test]
fn early_stopping_counts_checks() {
    let (train_set, as_eval) = fixture();
    let tc = TrainConfig {
        lr: 0.0,
        patience: 2,
        val_interval: 1,
        ..config(50)
    };
    let trained = train(
        &ModelConfig::new(Architecture::Gcn),
        &tc,
        &train_set,
        &as_eval,
    )
    .unwrap();
    // No parameter change means no improvement after the first check.
    assert_eq!(trained.history.val_epoch, vec![1, 2, 3]);
    assert_eq!(trained.best_epoch, 1);
}

#[test]
fn invalid_inputs_are_rejected() {
    let code3 = build_code(3).unwrap();
    let code5 = build_code(5).unwrap();
    let train3 = generate_training_set(&code3, 0.05, 500, &CounterRng::new(1)).unwrap();
    let val3 = generate_eval_set(&code3, 0.05, 50, &CounterRng::new(2)).unwrap();
    let val5 = generate_eval_set(&code5, 0.05, 50, &CounterRng::new(2)).unwrap();
    let gcn = ModelConfig::new(Architecture::Gcn);
    assert!(matches!(
        train(&gcn, &config(5), &train3, &val5),
        Err(QecError::InvalidParameter(_))
    ));
    assert!(train(&gcn, &config(5), &train3, &train3).is_err());
    assert!(train(&gcn, &config(5), &val3, &val3).is_err());
    let bad = TrainConfig {
        patience: 10,
        ..config(5)
    };
    assert!(train(&gcn, &bad, &train3, &val3).is_err());
}

#[test]
fn exploding_updates_report_divergence() {
    let (train_set, as_eval) = fixture();
    let tc = TrainConfig {
        lr: 1e300,
        ..config(20)
    };
    match train(
        &ModelConfig::new(Architecture::Gcn),
        &tc,
        &train_set,
        &as_eval,
    ) {
        Err(QecError::Divergence { epoch, loss }) => {
            assert!((1..=20).contains(&epoch));
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|t| t.history)),
    }
}

#[test]
fn baselines_train_instantly() {
    let code = build_code(3).unwrap();
    let train_set = generate_training_set(&code, 0.05, 5_000, &CounterRng::new(1)).unwrap();
    let val = generate_eval_set(&code, 0.05, 500, &CounterRng::new(2)).unwrap();
    let lookup = train(
        &ModelConfig::new(Architecture::Lookup),
        &config(5),
        &train_set,
        &val,
    )
    .unwrap();
    assert_eq!(lookup.model.lookup().unwrap().len(), train_set.len());
    assert!(lookup.history.epoch.is_empty());
    let trivial = train(
        &ModelConfig::new(Architecture::TrivialNoError),
        &config(5),
        &train_set,
        &val,
    )
    .unwrap();
    assert_eq!(trivial.best_val_ecr, Some(0.0));
}

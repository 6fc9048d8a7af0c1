use qecbench::bench::metrics::Metrics;
use qecbench::bench::stats::{mean, variance};
use qecbench::bench::sweep::{cell_data_seed, generate_cell_data, summarize};
use qecbench::bench::{
    confusion, evaluate, run_depth_sweep, run_grid, time_inference, welch_t_test, Confusion,
    DataScale, DepthSpec, GridSpec,
};
use qecbench::dataset::{generate_eval_set, generate_training_set, DatasetMode};
use qecbench::decoders::{build_lookup_decoder, Architecture, CodeContext, Model, ModelConfig};
use qecbench::lattice::build_code;
use qecbench::rng::CounterRng;
use qecbench::training::{train, TrainConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Welch p-value computed from textbook formulas with the statrs Student-t.
fn reference_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[test]
fn welch_matches_reference_on_random_pairs() {
    let mut rng = CounterRng::new(2718);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let na = 2 + (rng.next_raw() % 9) as usize;
        let nb = 2 + (rng.next_raw() % 9) as usize;
        let shift = 2.0 * rng.next_f64();
        let (sa, sb) = (0.05 + rng.next_f64(), 0.05 + 2.0 * rng.next_f64());
        let a: Vec<f64> = (0..na).map(|_| sa * (rng.next_f64() - 0.5)).collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| shift + sb * (rng.next_f64() - 0.5))
            .collect();
        let ours = welch_t_test(&a, &b).unwrap().p_value;
        worst = worst.max((ours - reference_p(&a, &b)).abs());
    }
    assert!(worst < 1e-6, "worst p-value difference {worst}");
}

#[test]
fn welch_examples() {
    let a = [1.0, 1.1, 0.9, 1.05, 0.95];
    let b = [2.0, 2.1, 1.9, 2.05, 1.95];
    let ab = welch_t_test(&a, &b).unwrap();
    let ba = welch_t_test(&b, &a).unwrap();
    assert!(ab.p_value < 0.001);
    assert_eq!(ab.t, -ba.t);
    assert_eq!(ab.p_value, ba.p_value);

    let same = welch_t_test(&a, &a).unwrap();
    assert_eq!((same.t, same.p_value), (0.0, 1.0));
    let flat = welch_t_test(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
    assert_eq!(flat.p_value, 1.0);
    assert!(welch_t_test(&[1.0], &b).is_err());
    assert!(welch_t_test(&a, &[f64::NAN, 1.0]).is_err());
}

#[test]
fn welch_agrees_with_reference_for_large_samples() {
    let mut rng = CounterRng::new(5);
    let a: Vec<f64> = (0..400).map(|_| rng.next_f64()).collect();
    let b: Vec<f64> = (0..300).map(|_| 0.03 + rng.next_f64()).collect();
    let ours = welch_t_test(&a, &b).unwrap();
    assert!((ours.p_value - reference_p(&a, &b)).abs() < 1e-9);
    assert!((mean(&a) - 0.5).abs() < 0.05);
    assert!((variance(&a) - 1.0 / 12.0).abs() < 0.01);
}

#[test]
fn trivial_baseline_scores_one_minus_error_fraction() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let ds = generate_eval_set(&code, 0.05, 20_000, &CounterRng::new(1)).unwrap();
    let model = Model::new(ModelConfig::new(Architecture::TrivialNoError)).unwrap();
    let m = evaluate(&model, &ctx, &ds).unwrap();
    assert!((m.overall_accuracy - (1.0 - ds.erroneous_fraction())).abs() < 1e-12);
    assert_eq!(m.error_correction_rate, Some(0.0));
    assert_eq!(m.n_data_qubits_total, 20_000 * 13);
}

#[test]
fn lookup_is_perfect_on_its_own_table() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let train_set = generate_training_set(&code, 0.05, 20_000, &CounterRng::new(2)).unwrap();
    let model = build_lookup_decoder(&train_set).unwrap();
    let mut as_eval = train_set.clone();
    as_eval.header.mode = DatasetMode::Eval;
    let m = evaluate(&model, &ctx, &as_eval).unwrap();
    assert_eq!(m.overall_accuracy, 1.0);
    assert_eq!(m.error_correction_rate, Some(1.0));
}

#[test]
fn metrics_follow_from_confusion_counts() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let ds = generate_eval_set(&code, 0.1, 3_000, &CounterRng::new(3)).unwrap();
    let model = Model::new(ModelConfig::new(Architecture::Gcn).with_seed(4)).unwrap();
    let m = evaluate(&model, &ctx, &ds).unwrap();
    let c = m.confusion;
    assert_eq!(c.total(), m.n_data_qubits_total);
    assert_eq!(c.erroneous(), m.n_erroneous_qubits);
    assert_eq!(m.overall_accuracy, c.correct() as f64 / c.total() as f64);
    assert_eq!(
        m.error_correction_rate,
        Some(c.erroneous_correct() as f64 / c.erroneous() as f64)
    );
    assert_eq!(Metrics::from_confusion(c), Metrics { mean_inference_ms: None, ..m });
}

#[test]
fn confusion_is_shard_invariant() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let ds = generate_eval_set(&code, 0.08, 5_000, &CounterRng::new(6)).unwrap();
    let model = Model::new(ModelConfig::new(Architecture::Appnp).with_seed(2)).unwrap();
    let whole = confusion(&model, &ctx, &ds).unwrap();
    for chunk in [1usize, 7, 333, 4_999] {
        let mut merged = Confusion::default();
        let mut start = 0;
        while start < ds.len() {
            let end = (start + chunk).min(ds.len());
            merged.merge(&confusion(&model, &ctx, &ds.subset(start..end)).unwrap());
            start = end;
        }
        assert_eq!(merged, whole, "chunk {chunk}");
    }
}

#[test]
fn evaluation_rejects_other_distances() {
    let ctx = CodeContext::new(&build_code(3).unwrap());
    let code5 = build_code(5).unwrap();
    let ds = generate_eval_set(&code5, 0.05, 10, &CounterRng::new(1)).unwrap();
    let model = Model::new(ModelConfig::new(Architecture::Gcn)).unwrap();
    assert!(evaluate(&model, &ctx, &ds).is_err());
}

#[test]
fn no_errors_leaves_rate_undefined() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let ds = generate_eval_set(&code, 0.0, 10, &CounterRng::new(1)).unwrap();
    let model = Model::new(ModelConfig::new(Architecture::TrivialNoError)).unwrap();
    let m = evaluate(&model, &ctx, &ds).unwrap();
    assert_eq!(m.overall_accuracy, 1.0);
    assert_eq!(m.error_correction_rate, None);
}

#[test]
fn timing_summary_is_consistent() {
    let code = build_code(3).unwrap();
    let ctx = CodeContext::new(&code);
    let samples: Vec<_> = generate_eval_set(&code, 0.05, 20, &CounterRng::new(1))
        .unwrap()
        .records
        .into_iter()
        .map(|s| s.syndrome)
        .collect();
    let model = Model::new(ModelConfig::new(Architecture::Gcn)).unwrap();
    let t = time_inference(&model, &ctx, &samples, 100).unwrap();
    assert_eq!(t.repetitions, 100);
    assert!(t.min_ms <= t.mean_ms && t.mean_ms <= t.max_ms);
    assert!(t.std_ms >= 0.0);
    assert!(time_inference(&model, &ctx, &samples, 99).is_err());
    assert!(time_inference(&model, &ctx, &[], 100).is_err());
}

fn tiny_scale() -> DataScale {
    DataScale {
        pool_size: 2_000,
        val_size: 200,
        test_size: 500,
        data_seed: 11,
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        lr: 0.01,
        batch_size: 32,
        patience: 3,
        val_interval: 1,
        seed: 0,
    }
}

fn grid(architectures: Vec<Architecture>, ps: Vec<f64>, seeds: Vec<u64>) -> GridSpec {
    GridSpec {
        architectures,
        distances: vec![3],
        ps,
        seeds,
        scale: tiny_scale(),
        train: tiny_train(),
        published_hyperparameters: false,
        timing_repetitions: 0,
        jobs: 2,
    }
}

#[test]
fn single_cell_grid_equals_direct_evaluation() {
    let spec = grid(vec![Architecture::Gcn], vec![0.05], vec![7]);
    let report = run_grid(&spec).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert!(row.error.is_none());

    let code = build_code(3).unwrap();
    let data = generate_cell_data(&code, 0.05, &tiny_scale()).unwrap();
    let trained = train(
        &ModelConfig::new(Architecture::Gcn).with_seed(7),
        &tiny_train().with_seed(7),
        &data.train,
        &data.val,
    )
    .unwrap();
    let m = evaluate(&trained.model, &CodeContext::new(&code), &data.test).unwrap();
    assert_eq!(row.overall_accuracy, Some(m.overall_accuracy));
    assert_eq!(row.ecr, m.error_correction_rate);
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.cells[0].ecr_std, Some(0.0));
}

#[test]
fn grid_report_shape() {
    let spec = grid(
        vec![Architecture::Cnn, Architecture::TrivialNoError],
        vec![0.02, 0.05],
        vec![0, 1, 2],
    );
    let report = run_grid(&spec).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 3);
    assert_eq!(report.cells.len(), 2 * 2);
    for cell in &report.cells {
        assert_eq!(cell.runs, 3);
        match cell.architecture {
            Architecture::Cnn => assert_eq!(cell.ecr_p_vs_cnn, None),
            _ => {
                assert!(cell.ecr_p_vs_cnn.is_some());
                assert_eq!(
                    cell.significant_vs_cnn,
                    cell.ecr_p_vs_cnn.map(|p| p < 0.05)
                );
            }
        }
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "architecture,distance,p,seed,overall_accuracy,ecr,mean_inference_ms,train_wall_s,error"
    );
    assert_eq!(lines.count(), 12);
    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let value: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(value["kind"], "grid");
    assert_eq!(value["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn grid_is_independent_of_worker_count() {
    let mut spec = grid(vec![Architecture::Gcn, Architecture::Cnn], vec![0.05], vec![0, 1]);
    let serial = run_grid(&GridSpec { jobs: 1, ..spec.clone() }).unwrap();
    spec.jobs = 4;
    let parallel = run_grid(&spec).unwrap();
    let key = |r: &qecbench::bench::ReportRow| (r.overall_accuracy, r.ecr);
    assert_eq!(
        serial.rows.iter().map(key).collect::<Vec<_>>(),
        parallel.rows.iter().map(key).collect::<Vec<_>>()
    );
}

#[test]
fn failing_cells_are_recorded() {
    let mut spec = grid(vec![Architecture::Gcn], vec![0.05], vec![0, 1]);
    spec.train.patience = 10;
    let report = run_grid(&spec).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.error.is_some()));
    assert_eq!(report.cells[0].failures, 2);
    assert_eq!(report.cells[0].ecr_mean, None);
}

#[test]
fn depth_sweep_shape() {
    let spec = DepthSpec {
        architectures: vec![Architecture::Gcn, Architecture::Gcnii],
        depths: vec![1, 2, 3],
        distance: 3,
        p: 0.05,
        seeds: vec![0],
        scale: tiny_scale(),
        train: tiny_train(),
        timing_repetitions: 0,
        jobs: 2,
    };
    let report = run_depth_sweep(&spec).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows.iter().all(|r| r.error.is_none()));
    let depths: Vec<_> = report.cells.iter().map(|c| c.depth).collect();
    assert_eq!(
        depths,
        vec![Some(1), Some(2), Some(3), Some(1), Some(2), Some(3)]
    );
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("architecture,distance,p,seed,depth,"));

    let bad = DepthSpec {
        architectures: vec![Architecture::Cnn],
        ..spec
    };
    assert!(run_depth_sweep(&bad).is_err());
}

#[test]
fn cell_seeds_are_distinct_per_split() {
    let seeds: Vec<u64> = (0..3).map(|k| cell_data_seed(0, 3, 0.01, k)).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    assert_ne!(cell_data_seed(0, 3, 0.01, 0), cell_data_seed(0, 3, 0.005, 0));
    assert_ne!(cell_data_seed(0, 3, 0.01, 0), cell_data_seed(1, 3, 0.01, 0));
    assert!(summarize(&[]).is_empty());
}

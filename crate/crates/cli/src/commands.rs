//! Subcommand bodies. Each writes its outputs and then the manifest.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qecbench::bench::sweep::{summarize, CellSummary, SIGNIFICANCE_LEVEL};
use qecbench::bench::timing::MIN_REPETITIONS;
use qecbench::bench::{
    evaluate, run_depth_sweep, run_grid, time_inference, DataScale, DepthSpec, GridSpec, Report,
};
use qecbench::dataset::{
    generate_eval_set, generate_training_set, read_dataset, write_dataset, write_jsonl, Dataset,
};
use qecbench::decoders::{
    read_checkpoint, write_checkpoint, Architecture, CodeContext, Model, ModelConfig,
};
use qecbench::gradcheck_suite::{run_suite, TOLERANCE};
use qecbench::lattice::build_code;
use qecbench::noise::Syndrome;
use qecbench::rng::CounterRng;
use qecbench::training::{self, History, TrainConfig};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{
    out_path, BenchArgs, CliError, EvalArgs, GenerateArgs, GradcheckArgs, InspectArgs, Mode,
    ScaleArgs, SweepDepthArgs, TrainArgs,
};

const DESK_POOL: u64 = 100_000;
const DESK_EVAL: u64 = 100_000;
const CHECKPOINT_FILE: &str = "model.ckpt";
const TIMING_SAMPLES: usize = 100;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(qecbench::QecError::from)?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    finish(w, path)
}

fn load_dataset(path: &Path, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let ds = read_dataset(&mut BufReader::new(file))?;
    manifest.input(path)?;
    Ok(ds)
}

fn check_timing(reps: usize) -> Result<(), CliError> {
    if reps != 0 && reps < MIN_REPETITIONS {
        return Err(CliError::Usage(format!(
            "--timing-reps must be 0 or at least {MIN_REPETITIONS}, got {reps}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct Resolved<'a, A, S> {
    #[serde(flatten)]
    args: &'a A,
    resolved: S,
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let code = build_code(a.distance)?;
    let pool = a.pool.unwrap_or(match (a.full_scale, a.mode) {
        (false, Mode::Train) => DESK_POOL,
        (false, Mode::Eval) => DESK_EVAL,
        (true, Mode::Train) if a.distance == 3 => 10_000_000,
        (true, _) => 1_000_000,
    });
    let rng = CounterRng::new(a.seed);
    let ds = match a.mode {
        Mode::Train => generate_training_set(&code, a.p, pool, &rng)?,
        Mode::Eval => generate_eval_set(&code, a.p, pool, &rng)?,
    };
    let out = out_path(&a.out);
    let mut w = create_file(&out)?;
    write_dataset(&ds, &mut w)?;
    finish(w, &out)?;

    #[derive(Serialize)]
    struct Extra {
        pool: u64,
    }
    let mut manifest = RunManifest::new(
        "generate",
        &Resolved {
            args: a,
            resolved: Extra { pool },
        },
        vec![a.seed],
    );
    manifest.output(&out)?;
    manifest.write_beside(&out)?;
    println!(
        "wrote {} {} records (d={}, p={}, pool {pool}) to {}",
        ds.len(),
        match a.mode {
            Mode::Train => "training",
            Mode::Eval => "evaluation",
        },
        a.distance,
        a.p,
        out.display()
    );
    Ok(())
}

/// Training summary written next to the checkpoint. Wall time is left out
/// so reruns produce identical files.
#[derive(Serialize)]
struct TrainSummary<'a> {
    architecture: Architecture,
    param_count: usize,
    best_epoch: usize,
    best_val_ecr: Option<f64>,
    history: &'a History,
}

fn usage(e: qecbench::QecError) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("train", a, vec![a.seed]);
    let train_set = load_dataset(&a.train, &mut manifest)?;
    let val_set = load_dataset(&a.val, &mut manifest)?;
    let (d, p) = (train_set.distance(), train_set.header.error_prob);
    let (mut config, mut tc) = if a.full_scale {
        (ModelConfig::published(a.model, d, p), TrainConfig::published(d, p))
    } else {
        (ModelConfig::new(a.model), TrainConfig::default())
    };
    config = config.with_seed(a.seed);
    if let Some(layers) = a.layers {
        config.layers = layers as usize;
    }
    tc.seed = a.seed;
    if let Some(e) = a.epochs {
        tc.epochs = e as usize;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(b) = a.batch {
        tc.batch_size = b as usize;
    }
    tc.patience = a.patience.map_or(tc.patience.min(tc.epochs), |p| p as usize);
    config.validate().map_err(usage)?;
    tc.validate().map_err(usage)?;

    let trained = training::train(&config, &tc, &train_set, &val_set)?;
    let dir = out_path(&a.out);
    create_dir(&dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let mut w = create_file(&ckpt)?;
    write_checkpoint(&trained.model, &mut w)?;
    finish(w, &ckpt)?;
    let history = dir.join("history.json");
    write_json(
        &history,
        &TrainSummary {
            architecture: a.model,
            param_count: trained.model.param_count(),
            best_epoch: trained.best_epoch,
            best_val_ecr: trained.best_val_ecr,
            history: &trained.history,
        },
    )?;

    #[derive(Serialize)]
    struct Extra<'a> {
        model_config: &'a ModelConfig,
        train_config: &'a TrainConfig,
    }
    manifest.flags = serde_json::to_value(Resolved {
        args: a,
        resolved: Extra {
            model_config: &config,
            train_config: &tc,
        },
    })
    .expect("settings serialize");
    manifest.output(&ckpt)?;
    manifest.output(&history)?;
    manifest.write_in(&dir)?;
    println!(
        "{}: {} parameters, best epoch {}, validation ECR {}, {:.1} s; wrote {}",
        a.model,
        trained.model.param_count(),
        trained.best_epoch,
        fmt_rate(trained.best_val_ecr),
        trained.wall_seconds,
        dir.display()
    );
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    check_timing(a.timing_reps)?;
    let mut manifest = RunManifest::new("eval", a, vec![]);
    let ckpt: PathBuf = if a.ckpt.is_dir() {
        a.ckpt.join(CHECKPOINT_FILE)
    } else {
        a.ckpt.clone()
    };
    let file = File::open(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    let model: Model = read_checkpoint(&mut BufReader::new(file))?;
    manifest.input(&ckpt)?;
    let test = load_dataset(&a.test, &mut manifest)?;
    let code = build_code(test.distance())?;
    let ctx = CodeContext::new(&code);
    let mut metrics = evaluate(&model, &ctx, &test)?;
    let timing = if a.timing_reps > 0 {
        let samples: Vec<Syndrome> = test
            .records
            .iter()
            .take(TIMING_SAMPLES)
            .map(|s| s.syndrome.clone())
            .collect();
        let t = time_inference(&model, &ctx, &samples, a.timing_reps)?;
        metrics.mean_inference_ms = Some(t.mean_ms);
        Some(t)
    } else {
        None
    };

    #[derive(Serialize)]
    struct EvalReport<'a> {
        architecture: Architecture,
        distance: usize,
        p: f64,
        test_samples: usize,
        metrics: &'a qecbench::bench::Metrics,
        timing: Option<qecbench::bench::Timing>,
    }
    let report = out_path(&a.report);
    write_json(
        &report,
        &EvalReport {
            architecture: model.architecture(),
            distance: test.distance(),
            p: test.header.error_prob,
            test_samples: test.len(),
            metrics: &metrics,
            timing,
        },
    )?;
    manifest.output(&report)?;
    manifest.write_beside(&report)?;
    println!(
        "{} on {} samples: accuracy {:.4}%, ECR {}",
        model.architecture(),
        test.len(),
        100.0 * metrics.overall_accuracy,
        fmt_rate(metrics.error_correction_rate)
    );
    Ok(())
}

/// One Welch comparison against the CNN baseline of the same cell.
#[derive(Serialize)]
struct Comparison {
    architecture: Architecture,
    baseline: Architecture,
    distance: usize,
    p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<usize>,
    metric: &'static str,
    p_value: f64,
    significant: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'a str,
    significance_level: f64,
    cells: &'a [CellSummary],
    comparisons: Vec<Comparison>,
}

fn comparisons(cells: &[CellSummary]) -> Vec<Comparison> {
    cells
        .iter()
        .filter_map(|c| {
            c.ecr_p_vs_cnn.map(|p_value| Comparison {
                architecture: c.architecture,
                baseline: Architecture::Cnn,
                distance: c.distance,
                p: c.p,
                depth: c.depth,
                metric: "ecr",
                p_value,
                significant: p_value < SIGNIFICANCE_LEVEL,
            })
        })
        .collect()
}

fn write_report(report: &Report, dir: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    create_dir(dir)?;
    let csv = dir.join("results.csv");
    let mut w = create_file(&csv)?;
    report.write_csv(&mut w)?;
    finish(w, &csv)?;
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &Summary {
            kind: &report.kind,
            significance_level: SIGNIFICANCE_LEVEL,
            cells: &report.cells,
            comparisons: comparisons(&report.cells),
        },
    )?;
    manifest.output(&csv)?;
    manifest.output(&summary)?;
    manifest.write_in(dir)?;
    for c in &report.cells {
        let depth = c.depth.map(|d| format!(" depth {d}")).unwrap_or_default();
        println!(
            "{:<12} d={} p={}{depth}: {}/{} runs, accuracy {}, ECR {}{}",
            c.architecture.name(),
            c.distance,
            c.p,
            c.runs,
            c.runs + c.failures,
            fmt_rate(c.accuracy_mean),
            fmt_rate(c.ecr_mean),
            c.ecr_p_vs_cnn
                .map(|p| format!(", p vs cnn {p:.3e}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn desk_scale(s: &ScaleArgs) -> DataScale {
    DataScale {
        pool_size: s.pool.unwrap_or(DESK_POOL),
        val_size: s.val_size.unwrap_or(DESK_EVAL),
        test_size: s.test_size.unwrap_or(DESK_EVAL),
        data_seed: s.data_seed,
    }
}

fn full_scale(s: &ScaleArgs, distance: usize) -> DataScale {
    let base = DataScale::full(distance);
    DataScale {
        pool_size: s.pool.unwrap_or(base.pool_size),
        val_size: s.val_size.unwrap_or(base.val_size),
        test_size: s.test_size.unwrap_or(base.test_size),
        data_seed: s.data_seed,
    }
}

fn train_config(s: &ScaleArgs) -> Result<TrainConfig, CliError> {
    let mut tc = TrainConfig::default();
    if let Some(e) = s.epochs {
        tc.epochs = e as usize;
    }
    tc.patience = s.patience.map_or(tc.patience.min(tc.epochs), |p| p as usize);
    tc.validate().map_err(usage)?;
    Ok(tc)
}

pub fn bench(a: &BenchArgs, jobs: usize) -> Result<(), CliError> {
    check_timing(a.scale.timing_reps)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let train = train_config(&a.scale)?;
    let spec = |distances: Vec<usize>, scale: DataScale| GridSpec {
        architectures: a.models.clone(),
        distances,
        ps: a.ps.clone(),
        seeds: seeds.clone(),
        scale,
        train: train.clone(),
        published_hyperparameters: a.full_scale,
        timing_repetitions: a.scale.timing_reps,
        jobs,
    };
    let specs: Vec<GridSpec> = if a.full_scale {
        a.distances
            .iter()
            .map(|&d| spec(vec![d], full_scale(&a.scale, d)))
            .collect()
    } else {
        vec![spec(a.distances.clone(), desk_scale(&a.scale))]
    };
    let mut rows = Vec::new();
    for s in &specs {
        rows.extend(run_grid(s)?.rows);
    }
    let report = Report {
        kind: "grid".into(),
        cells: summarize(&rows),
        rows,
    };
    let mut manifest = RunManifest::new(
        "bench",
        &Resolved {
            args: a,
            resolved: &specs,
        },
        seeds,
    );
    write_report(&report, &out_path(&a.out), &mut manifest)
}

pub fn sweep_depth(a: &SweepDepthArgs, jobs: usize) -> Result<(), CliError> {
    check_timing(a.scale.timing_reps)?;
    if let Some(m) = a
        .models
        .iter()
        .find(|m| !matches!(m, Architecture::Gcn | Architecture::Gcnii))
    {
        return Err(CliError::Usage(format!(
            "depth sweeps cover gcn and gcnii, not {m}"
        )));
    }
    if a.depths.contains(&0) {
        return Err(CliError::Usage("depths must be positive".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let spec = DepthSpec {
        architectures: a.models.clone(),
        depths: a.depths.clone(),
        distance: a.distance,
        p: a.p,
        seeds: seeds.clone(),
        scale: if a.full_scale {
            full_scale(&a.scale, a.distance)
        } else {
            desk_scale(&a.scale)
        },
        train: train_config(&a.scale)?,
        timing_repetitions: a.scale.timing_reps,
        jobs,
    };
    let report = run_depth_sweep(&spec)?;
    let mut manifest = RunManifest::new(
        "sweep-depth",
        &Resolved {
            args: a,
            resolved: &spec,
        },
        seeds,
    );
    write_report(&report, &out_path(&a.out), &mut manifest)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let outcomes = run_suite(a.seed)?;
    for o in &outcomes {
        println!(
            "{} {:<28} entries {:>5}  rel {:.2e}  abs {:.2e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.entries,
            o.max_rel_error,
            o.max_abs_error
        );
    }
    if let Some(dir) = &a.out {
        let dir = out_path(dir);
        create_dir(&dir)?;
        let path = dir.join("gradcheck.json");
        write_json(&path, &outcomes)?;
        let mut manifest = RunManifest::new("gradcheck", a, vec![a.seed]);
        manifest.output(&path)?;
        manifest.write_in(&dir)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} gradient checks exceeded relative error {TOLERANCE:e}",
            outcomes.len()
        )));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("inspect", a, vec![]);
    let ds = load_dataset(&a.input, &mut manifest)?;
    match &a.out {
        Some(out) => {
            let out = out_path(out);
            let mut w = create_file(&out)?;
            write_jsonl(&ds, &mut w)?;
            finish(w, &out)?;
            manifest.output(&out)?;
            manifest.write_beside(&out)?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            match write_jsonl(&ds, &mut w) {
                // A closed pipe (e.g. `| head`) is not a failure.
                Err(qecbench::QecError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

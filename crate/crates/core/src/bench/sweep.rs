//! Grid and depth sweeps: train every (cell, seed), evaluate on held-out
//! data, time inference, and aggregate per cell with Welch tests vs CNN.
//!
//! Datasets are fixed per (distance, p) from the data seed; replicate seeds
//! only vary model initialization, shuffling and dropout.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::stats::{mean, std_dev, welch_t_test};
use super::timing::time_inference;
use crate::dataset::{generate_eval_set, generate_training_set, Dataset};
use crate::decoders::{Architecture, CodeContext, ModelConfig};
use crate::error::{invalid, Result};
use crate::lattice::SurfaceCode;
use crate::noise::Syndrome;
use crate::rng::CounterRng;
use crate::training::{train, TrainConfig};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Distinct test syndromes cycled through when timing.
const TIMING_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataScale {
    pub pool_size: u64,
    pub val_size: u64,
    pub test_size: u64,
    pub data_seed: u64,
}

impl Default for DataScale {
    fn default() -> Self {
        Self {
            pool_size: 100_000,
            val_size: 100_000,
            test_size: 100_000,
            data_seed: 0,
        }
    }
}

impl DataScale {
    /// Pool 10⁷ at d=3 and 10⁶ otherwise, 10⁶ validation and test samples.
    pub fn full(distance: usize) -> Self {
        Self {
            pool_size: if distance == 3 { 10_000_000 } else { 1_000_000 },
            val_size: 1_000_000,
            test_size: 1_000_000,
            data_seed: 0,
        }
    }
}

/// Training, validation and test sets of one (distance, p) cell.
pub struct CellData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seed of dataset `kind` (0 train, 1 validation, 2 test) for a cell.
pub fn cell_data_seed(data_seed: u64, distance: usize, p: f64, kind: u64) -> u64 {
    CounterRng::new(data_seed)
        .split(distance as u64)
        .split(p.to_bits())
        .split(kind)
        .next_raw()
}

pub fn generate_cell_data(code: &SurfaceCode, p: f64, scale: &DataScale) -> Result<CellData> {
    let seed = |kind| CounterRng::new(cell_data_seed(scale.data_seed, code.distance(), p, kind));
    Ok(CellData {
        train: generate_training_set(code, p, scale.pool_size, &seed(0))?,
        val: generate_eval_set(code, p, scale.val_size, &seed(1))?,
        test: generate_eval_set(code, p, scale.test_size, &seed(2))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub architectures: Vec<Architecture>,
    pub distances: Vec<usize>,
    pub ps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scale: DataScale,
    pub train: TrainConfig,
    /// Use the published per-cell hyperparameters instead of desk defaults.
    pub published_hyperparameters: bool,
    pub timing_repetitions: usize,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSpec {
    pub architectures: Vec<Architecture>,
    pub depths: Vec<usize>,
    pub distance: usize,
    pub p: f64,
    pub seeds: Vec<u64>,
    pub scale: DataScale,
    pub train: TrainConfig,
    pub timing_repetitions: usize,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub architecture: Architecture,
    pub distance: usize,
    pub p: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    pub overall_accuracy: Option<f64>,
    pub ecr: Option<f64>,
    pub mean_inference_ms: Option<f64>,
    pub train_wall_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub architecture: Architecture,
    pub distance: usize,
    pub p: f64,
    pub depth: Option<usize>,
    /// Seeds that completed.
    pub runs: usize,
    pub failures: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub ecr_mean: Option<f64>,
    pub ecr_std: Option<f64>,
    pub inference_ms_mean: Option<f64>,
    /// Two-sided Welch p-values against CNN in the same cell.
    pub accuracy_p_vs_cnn: Option<f64>,
    pub ecr_p_vs_cnn: Option<f64>,
    pub significant_vs_cnn: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellSummary>,
}

struct Task {
    architecture: Architecture,
    distance: usize,
    p: f64,
    seed: u64,
    depth: Option<usize>,
    config: ModelConfig,
    train: TrainConfig,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

fn run_task(
    task: &Task,
    code: &SurfaceCode,
    data: &CellData,
    timing_repetitions: usize,
) -> ReportRow {
    let mut row = ReportRow {
        architecture: task.architecture,
        distance: task.distance,
        p: task.p,
        seed: task.seed,
        depth: task.depth,
        overall_accuracy: None,
        ecr: None,
        mean_inference_ms: None,
        train_wall_s: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let trained = train(&task.config, &task.train, &data.train, &data.val)?;
        row.train_wall_s = Some(trained.wall_seconds);
        let ctx = CodeContext::new(code);
        let metrics = evaluate(&trained.model, &ctx, &data.test)?;
        row.overall_accuracy = Some(metrics.overall_accuracy);
        row.ecr = metrics.error_correction_rate;
        if timing_repetitions > 0 {
            let samples: Vec<Syndrome> = data
                .test
                .records
                .iter()
                .take(TIMING_SAMPLES)
                .map(|s| s.syndrome.clone())
                .collect();
            let timing = time_inference(&trained.model, &ctx, &samples, timing_repetitions)?;
            row.mean_inference_ms = Some(timing.mean_ms);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

fn run_tasks(
    tasks: Vec<Task>,
    cells: &BTreeMap<(usize, u64), (SurfaceCode, CellData)>,
    timing_repetitions: usize,
    jobs: usize,
) -> Result<Vec<ReportRow>> {
    let workers = pool(jobs.max(1))?;
    Ok(workers.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let (code, data) = &cells[&(t.distance, t.p.to_bits())];
                run_task(t, code, data, timing_repetitions)
            })
            .collect()
    }))
}

pub fn run_grid(spec: &GridSpec) -> Result<Report> {
    if spec.architectures.is_empty()
        || spec.distances.is_empty()
        || spec.ps.is_empty()
        || spec.seeds.is_empty()
    {
        return Err(invalid("every sweep axis needs at least one value"));
    }
    let mut cells = BTreeMap::new();
    for &d in &spec.distances {
        let code = SurfaceCode::new(d)?;
        for &p in &spec.ps {
            let data = generate_cell_data(&code, p, &spec.scale)?;
            cells.insert((d, p.to_bits()), (code.clone(), data));
        }
    }
    let mut tasks = Vec::new();
    for &d in &spec.distances {
        for &p in &spec.ps {
            for &architecture in &spec.architectures {
                for &seed in &spec.seeds {
                    let (config, train) = if spec.published_hyperparameters {
                        (
                            ModelConfig::published(architecture, d, p),
                            TrainConfig::published(d, p),
                        )
                    } else {
                        (ModelConfig::new(architecture), spec.train.clone())
                    };
                    tasks.push(Task {
                        architecture,
                        distance: d,
                        p,
                        seed,
                        depth: None,
                        config: config.with_seed(seed),
                        train: train.with_seed(seed),
                    });
                }
            }
        }
    }
    let rows = run_tasks(tasks, &cells, spec.timing_repetitions, spec.jobs)?;
    Ok(Report {
        kind: "grid".into(),
        cells: summarize(&rows),
        rows,
    })
}

pub fn run_depth_sweep(spec: &DepthSpec) -> Result<Report> {
    if spec.architectures.is_empty() || spec.depths.is_empty() || spec.seeds.is_empty() {
        return Err(invalid("every sweep axis needs at least one value"));
    }
    if let Some(a) = spec
        .architectures
        .iter()
        .find(|a| !matches!(a, Architecture::Gcn | Architecture::Gcnii))
    {
        return Err(invalid(format!(
            "depth sweeps cover gcn and gcnii, not {a}"
        )));
    }
    let code = SurfaceCode::new(spec.distance)?;
    let data = generate_cell_data(&code, spec.p, &spec.scale)?;
    let mut cells = BTreeMap::new();
    cells.insert((spec.distance, spec.p.to_bits()), (code, data));
    let mut tasks = Vec::new();
    for &architecture in &spec.architectures {
        for &depth in &spec.depths {
            for &seed in &spec.seeds {
                tasks.push(Task {
                    architecture,
                    distance: spec.distance,
                    p: spec.p,
                    seed,
                    depth: Some(depth),
                    config: ModelConfig::new(architecture)
                        .with_layers(depth)
                        .with_seed(seed),
                    train: spec.train.clone().with_seed(seed),
                });
            }
        }
    }
    let rows = run_tasks(tasks, &cells, spec.timing_repetitions, spec.jobs)?;
    Ok(Report {
        kind: "depth".into(),
        cells: summarize(&rows),
        rows,
    })
}

type CellKey = (usize, u64, Option<usize>);

/// Per-cell aggregates in first-appearance order of the rows.
pub fn summarize(rows: &[ReportRow]) -> Vec<CellSummary> {
    let mut order: Vec<(Architecture, CellKey)> = Vec::new();
    let mut groups: BTreeMap<(String, CellKey), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.distance, r.p.to_bits(), r.depth);
        let entry = groups
            .entry((r.architecture.name().to_string(), key))
            .or_default();
        if entry.is_empty() {
            order.push((r.architecture, key));
        }
        entry.push(r);
    }
    let values =
        |arch: Architecture, key: &CellKey, pick: fn(&ReportRow) -> Option<f64>| -> Vec<f64> {
            groups
                .get(&(arch.name().to_string(), *key))
                .map(|rs| {
                    rs.iter()
                        .filter(|r| r.error.is_none())
                        .filter_map(|r| pick(r))
                        .collect()
                })
                .unwrap_or_default()
        };
    let p_vs_cnn =
        |arch: Architecture, key: &CellKey, pick: fn(&ReportRow) -> Option<f64>| -> Option<f64> {
            if arch == Architecture::Cnn {
                return None;
            }
            let a = values(arch, key, pick);
            let b = values(Architecture::Cnn, key, pick);
            welch_t_test(&a, &b).ok().map(|w| w.p_value)
        };
    let stat = |xs: &[f64]| -> (Option<f64>, Option<f64>) {
        if xs.is_empty() {
            (None, None)
        } else {
            (Some(mean(xs)), Some(std_dev(xs)))
        }
    };
    order
        .into_iter()
        .map(|(arch, key)| {
            let rs = &groups[&(arch.name().to_string(), key)];
            let failures = rs.iter().filter(|r| r.error.is_some()).count();
            let (accuracy_mean, accuracy_std) = stat(&values(arch, &key, |r| r.overall_accuracy));
            let (ecr_mean, ecr_std) = stat(&values(arch, &key, |r| r.ecr));
            let (inference_ms_mean, _) = stat(&values(arch, &key, |r| r.mean_inference_ms));
            let ecr_p = p_vs_cnn(arch, &key, |r| r.ecr);
            CellSummary {
                architecture: arch,
                distance: key.0,
                p: f64::from_bits(key.1),
                depth: key.2,
                runs: rs.len() - failures,
                failures,
                accuracy_mean,
                accuracy_std,
                ecr_mean,
                ecr_std,
                inference_ms_mean,
                accuracy_p_vs_cnn: p_vs_cnn(arch, &key, |r| r.overall_accuracy),
                ecr_p_vs_cnn: ecr_p,
                significant_vs_cnn: ecr_p.map(|p| p < SIGNIFICANCE_LEVEL),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    /// One row per (cell, seed). Depth sweeps add a `depth` column.
    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let with_depth = self.rows.iter().any(|r| r.depth.is_some());
        let mut header = vec!["architecture", "distance", "p", "seed"];
        if with_depth {
            header.push("depth");
        }
        header.extend([
            "overall_accuracy",
            "ecr",
            "mean_inference_ms",
            "train_wall_s",
            "error",
        ]);
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![
                r.architecture.name().to_string(),
                r.distance.to_string(),
                r.p.to_string(),
                r.seed.to_string(),
            ];
            if with_depth {
                rec.push(r.depth.map(|d| d.to_string()).unwrap_or_default());
            }
            rec.extend([
                opt(r.overall_accuracy),
                opt(r.ecr),
                opt(r.mean_inference_ms),
                opt(r.train_wall_s),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, sink: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(sink, self)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> crate::error::QecError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => invalid(format!("csv: {other:?}")),
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::dataset::Dataset;
use crate::decoders::{CodeContext, Model};
use crate::error::{invalid, Result};
use crate::noise::{ErrorClass, Syndrome};

/// 4×4 counts indexed `[true class][predicted class]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 4]; 4],
}

impl Confusion {
    pub fn add(&mut self, truth: ErrorClass, predicted: ErrorClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for t in 0..4 {
            for p in 0..4 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..4).map(|c| self.counts[c][c]).sum()
    }

    /// Positions whose true class is not `NoError`.
    pub fn erroneous(&self) -> u64 {
        self.counts[1..].iter().flatten().sum()
    }

    pub fn erroneous_correct(&self) -> u64 {
        (1..4).map(|c| self.counts[c][c]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    /// Accuracy over erroneous positions; `None` when there are none.
    pub error_correction_rate: Option<f64>,
    pub n_data_qubits_total: u64,
    pub n_erroneous_qubits: u64,
    pub mean_inference_ms: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let total = confusion.total();
        let erroneous = confusion.erroneous();
        Self {
            overall_accuracy: if total == 0 {
                0.0
            } else {
                confusion.correct() as f64 / total as f64
            },
            error_correction_rate: (erroneous > 0)
                .then(|| confusion.erroneous_correct() as f64 / erroneous as f64),
            n_data_qubits_total: total,
            n_erroneous_qubits: erroneous,
            mean_inference_ms: None,
            confusion,
        }
    }
}

/// Confusion counts of `model` over `ds`. Predictions are computed once per
/// distinct syndrome, which is exact because inference is deterministic.
pub fn confusion(model: &Model, ctx: &CodeContext, ds: &Dataset) -> Result<Confusion> {
    let code = ctx.code();
    if ds.distance() != code.distance() {
        return Err(invalid(format!(
            "dataset distance {} does not match code distance {}",
            ds.distance(),
            code.distance()
        )));
    }
    let mut groups: HashMap<&Bits, Vec<usize>> = HashMap::new();
    for (i, s) in ds.records.iter().enumerate() {
        groups.entry(&s.syndrome.fired).or_default().push(i);
    }
    let mut keys: Vec<&Bits> = groups.keys().copied().collect();
    keys.sort();
    let syndromes: Vec<Syndrome> = keys
        .iter()
        .map(|&b| Syndrome { fired: b.clone() })
        .collect();
    let refs: Vec<&Syndrome> = syndromes.iter().collect();
    let predictions = model.predict_batch(ctx, &refs)?;
    let mut out = Confusion::default();
    for (key, predicted) in keys.iter().zip(&predictions) {
        for &i in &groups[key] {
            let pattern = &ds.records[i].pattern;
            for (j, &p) in predicted.iter().enumerate() {
                out.add(pattern.class(j), p);
            }
        }
    }
    Ok(out)
}

pub fn evaluate(model: &Model, ctx: &CodeContext, eval_set: &Dataset) -> Result<Metrics> {
    Ok(Metrics::from_confusion(confusion(model, ctx, eval_set)?))
}

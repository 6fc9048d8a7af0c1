//! Neural decoders and classical baselines, all mapping syndrome features
//! to four-class logits per node.

mod checkpoint;
mod config;
mod context;
mod lookup;
pub mod nets;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Architecture, ModelConfig};
pub use context::{CodeContext, DEGREE_SLOTS, HOP_BUCKETS};
pub use lookup::LookupTable;
pub use nets::{param_count, param_specs, ParamSpec};

use qecbench_tensor::Tensor;

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::noise::{ErrorClass, FeatureMatrix, Syndrome};

/// Samples per forward pass during batched inference.
pub const INFERENCE_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor>,
    lookup: Option<LookupTable>,
}

impl Model {
    /// Freshly initialized network, or the trivial baseline.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.architecture == Architecture::Lookup {
            return Err(invalid("lookup decoders are built from a training set"));
        }
        let specs = param_specs(&config)?;
        let params = nets::init_params(&config)?;
        Ok(Self {
            config,
            specs,
            params,
            lookup: None,
        })
    }

    /// Network with externally supplied parameters; shapes must match.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        if config.architecture == Architecture::Lookup {
            return Err(invalid("lookup decoders carry a table, not parameters"));
        }
        let specs = param_specs(&config)?;
        if specs.len() != params.len() {
            return Err(invalid(format!(
                "{} parameters supplied, configuration needs {}",
                params.len(),
                specs.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&params) {
            if t.shape() != spec.shape.as_slice() {
                return Err(invalid(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self {
            config,
            specs,
            params,
            lookup: None,
        })
    }

    pub fn from_lookup(table: LookupTable) -> Self {
        Self {
            config: ModelConfig::new(Architecture::Lookup),
            specs: Vec::new(),
            params: Vec::new(),
            lookup: Some(table),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn lookup(&self) -> Option<&LookupTable> {
        self.lookup.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_code(&self, ctx: &CodeContext) -> Result<()> {
        if let Some(t) = &self.lookup {
            if t.distance != ctx.code().distance() {
                return Err(invalid(format!(
                    "lookup table built for distance {}, code has distance {}",
                    t.distance,
                    ctx.code().distance()
                )));
            }
        }
        Ok(())
    }

    /// Logits `[batch · n, 4]` for stacked features `[batch · n, 3]`.
    /// Baselines emit one-hot rows of their prediction.
    pub fn forward_batch(&self, ctx: &CodeContext, features: Tensor) -> Result<Tensor> {
        self.check_code(ctx)?;
        if !self.config.architecture.is_neural() {
            let n = ctx.node_count();
            let shape = features.shape();
            if shape.len() != 2 || shape[1] != FeatureMatrix::CHANNELS || !shape[0].is_multiple_of(n) {
                return Err(invalid(format!(
                    "features of shape {shape:?} do not stack {n}-node codes"
                )));
            }
            let mut out = vec![0.0; shape[0] * 4];
            for (b, rows) in features.data().chunks_exact(n * 3).enumerate() {
                let s = syndrome_from_features(ctx, rows)?;
                let classes = self.baseline_classes(ctx, &s);
                for r in 0..n {
                    out[(b * n + r) * 4] = 1.0;
                }
                for (&row, class) in ctx.data_rows().iter().zip(classes) {
                    let base = (b * n + row) * 4;
                    out[base] = 0.0;
                    out[base + class.index()] = 1.0;
                }
            }
            return Ok(Tensor::new(vec![shape[0], 4], out)?);
        }
        nets::infer(&self.config, &self.specs, ctx, &self.params, features)
    }

    /// Logits `[n, 4]` for one code.
    pub fn forward(&self, ctx: &CodeContext, features: &FeatureMatrix) -> Result<Tensor> {
        let t = Tensor::new(vec![features.node_count(), 3], features.data().to_vec())?;
        self.forward_batch(ctx, t)
    }

    fn baseline_classes(&self, ctx: &CodeContext, s: &Syndrome) -> Vec<ErrorClass> {
        let data = ctx.code().data_count();
        match self.lookup.as_ref().and_then(|t| t.get(s)) {
            Some(pattern) => (0..data).map(|i| pattern.class(i)).collect(),
            None => vec![ErrorClass::NoError; data],
        }
    }

    /// Class per data qubit (ascending id) for each syndrome.
    pub fn predict_batch(
        &self,
        ctx: &CodeContext,
        syndromes: &[&Syndrome],
    ) -> Result<Vec<Vec<ErrorClass>>> {
        self.check_code(ctx)?;
        if !self.config.architecture.is_neural() {
            for s in syndromes {
                if s.fired.len() != ctx.code().ancilla_count() {
                    return Err(invalid("syndrome sized for a different code"));
                }
            }
            return Ok(syndromes
                .iter()
                .map(|s| self.baseline_classes(ctx, s))
                .collect());
        }
        let n = ctx.node_count();
        let mut out = Vec::with_capacity(syndromes.len());
        for chunk in syndromes.chunks(INFERENCE_BATCH) {
            let logits = self.forward_batch(ctx, ctx.features(chunk.iter().copied())?)?;
            for rows in logits.data().chunks_exact(n * 4) {
                out.push(argmax_data_rows(ctx, rows));
            }
        }
        Ok(out)
    }

    pub fn predict(&self, ctx: &CodeContext, syndrome: &Syndrome) -> Result<Vec<ErrorClass>> {
        Ok(self.predict_batch(ctx, &[syndrome])?.pop().unwrap())
    }
}

/// Argmax over each data row of one code's `[n, 4]` logits; ties go to the
/// lower class index.
pub fn argmax_data_rows(ctx: &CodeContext, logits: &[f64]) -> Vec<ErrorClass> {
    ctx.data_rows()
        .iter()
        .map(|&row| {
            let r = &logits[row * 4..row * 4 + 4];
            let mut best = 0;
            for c in 1..4 {
                if r[c] > r[best] {
                    best = c;
                }
            }
            ErrorClass::ALL[best]
        })
        .collect()
}

fn syndrome_from_features(ctx: &CodeContext, rows: &[f64]) -> Result<Syndrome> {
    let code = ctx.code();
    let mut s = Syndrome::zeros(code);
    for (i, &k) in code.ancilla_nodes().iter().enumerate() {
        let r = &rows[(k - 1) * 3..k * 3];
        if r.iter().any(|&v| v != 0.0) {
            s.fired.set(i, true);
        }
    }
    Ok(s)
}

pub fn build_lookup_decoder(training_pool: &Dataset) -> Result<Model> {
    Ok(Model::from_lookup(LookupTable::from_training_set(
        training_pool,
    )?))
}

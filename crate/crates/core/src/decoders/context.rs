use std::rc::Rc;

use qecbench_tensor::{Propagator, Tensor};

use crate::lattice::{Role, SurfaceCode};
use crate::noise::{self, ErrorPattern, Syndrome};
use crate::Result;

/// Number of hop-distance buckets for attention biases; longer distances
/// share the last bucket.
pub const HOP_BUCKETS: usize = 16;
/// Degree embedding rows (grid degrees are 2..=4).
pub const DEGREE_SLOTS: usize = 5;

/// Per-code structures shared by every forward pass on that code.
pub struct CodeContext {
    code: SurfaceCode,
    normalized: Rc<Propagator>,
    adjacency: Rc<Propagator>,
    degrees: Vec<usize>,
    hop_buckets: Vec<usize>,
    data_mask: Vec<bool>,
    data_rows: Vec<usize>,
}

impl CodeContext {
    pub fn new(code: &SurfaceCode) -> Self {
        let n = code.node_count();
        let normalized = Propagator::from_dense(n, code.normalized_adjacency().data());
        let adjacency = Propagator::from_dense(n, code.adjacency_matrix().data());
        let hop_buckets = code
            .hop_distances()
            .into_iter()
            .map(|h| h.min(HOP_BUCKETS - 1))
            .collect();
        let data_mask: Vec<bool> = (1..=n)
            .map(|k| code.role(k).unwrap() == Role::Data)
            .collect();
        let data_rows = code.data_nodes().iter().map(|k| k - 1).collect();
        Self {
            code: code.clone(),
            normalized: Rc::new(normalized),
            adjacency: Rc::new(adjacency),
            degrees: code.degrees(),
            hop_buckets,
            data_mask,
            data_rows,
        }
    }

    pub fn code(&self) -> &SurfaceCode {
        &self.code
    }

    pub fn node_count(&self) -> usize {
        self.code.node_count()
    }

    pub fn side(&self) -> usize {
        self.code.side()
    }

    pub fn normalized(&self) -> &Rc<Propagator> {
        &self.normalized
    }

    pub fn adjacency(&self) -> &Rc<Propagator> {
        &self.adjacency
    }

    /// Degree per 0-based node index.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Clamped hop distance for every ordered node pair, row-major `n×n`.
    pub fn hop_buckets(&self) -> &[usize] {
        &self.hop_buckets
    }

    pub fn data_mask(&self) -> &[bool] {
        &self.data_mask
    }

    /// 0-based node indices of the data qubits, ascending.
    pub fn data_rows(&self) -> &[usize] {
        &self.data_rows
    }

    /// Stacked features `[batch · n, 3]` for a batch of syndromes.
    pub fn features<'a>(
        &self,
        syndromes: impl IntoIterator<Item = &'a Syndrome>,
    ) -> Result<Tensor> {
        let mut data = Vec::new();
        for s in syndromes {
            data.extend_from_slice(noise::encode_features(&self.code, s)?.data());
        }
        let rows = data.len() / 3;
        Ok(Tensor::new(vec![rows, 3], data)?)
    }

    /// Per-row class targets (ancilla rows get 0) and the matching loss mask.
    pub fn targets<'a>(
        &self,
        patterns: impl IntoIterator<Item = &'a ErrorPattern>,
    ) -> Result<(Vec<usize>, Vec<bool>)> {
        let n = self.node_count();
        let mut targets = Vec::new();
        let mut mask = Vec::new();
        for pattern in patterns {
            let labels = noise::encode_labels(&self.code, pattern)?;
            let base = targets.len();
            targets.resize(base + n, 0);
            for (&row, class) in self.data_rows.iter().zip(labels.classes()) {
                targets[base + row] = class.index();
            }
            mask.extend_from_slice(&self.data_mask);
        }
        Ok((targets, mask))
    }
}

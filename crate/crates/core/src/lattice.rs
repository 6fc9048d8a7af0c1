//! The `(2d-1) × (2d-1)` surface-code grid graph.
//!
//! Node ids `k` are 1-based and row-major. Odd `k` are data qubits, even `k`
//! are ancillas. An ancilla on an even row (0-based) is an X stabilizer and
//! reacts to Z errors; one on an odd row is a Z stabilizer and reacts to X
//! errors. Edges join 4-neighbours of the grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Data,
    Ancilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StabilizerType {
    /// Flags Z errors on neighbouring data qubits.
    XStabilizer,
    /// Flags X errors on neighbouring data qubits.
    ZStabilizer,
}

/// Dense square matrix indexed by 0-based node position (`k - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Entry for node ids `i`, `j` (1-based).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[(i - 1) * self.n + (j - 1)]
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        SquareMatrix { n, data }
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceCode {
    distance: usize,
    side: usize,
    roles: Vec<Role>,
    stabilizers: Vec<Option<StabilizerType>>,
    adjacency: Vec<Vec<usize>>,
    data_nodes: Vec<usize>,
    ancilla_nodes: Vec<usize>,
    ordinal: Vec<usize>,
    checks: Vec<Check>,
}

/// One ancilla's parity check over data ordinals.
#[derive(Clone, Debug)]
pub(crate) struct Check {
    pub kind: StabilizerType,
    pub data: Vec<usize>,
}

pub fn build_code(distance: usize) -> Result<SurfaceCode> {
    SurfaceCode::new(distance)
}

impl SurfaceCode {
    pub fn new(distance: usize) -> Result<Self> {
        if distance < 2 {
            return Err(invalid(format!(
                "distance must be at least 2, got {distance}"
            )));
        }
        let side = 2 * distance - 1;
        let n = side * side;
        let mut roles = Vec::with_capacity(n);
        let mut stabilizers = Vec::with_capacity(n);
        let mut adjacency = vec![Vec::new(); n];
        let mut data_nodes = Vec::new();
        let mut ancilla_nodes = Vec::new();
        let mut ordinal = vec![0; n];
        for idx in 0..n {
            let k = idx + 1;
            let (r, c) = (idx / side, idx % side);
            if k % 2 == 1 {
                roles.push(Role::Data);
                stabilizers.push(None);
                ordinal[idx] = data_nodes.len();
                data_nodes.push(k);
            } else {
                roles.push(Role::Ancilla);
                stabilizers.push(Some(if r % 2 == 0 {
                    StabilizerType::XStabilizer
                } else {
                    StabilizerType::ZStabilizer
                }));
                ordinal[idx] = ancilla_nodes.len();
                ancilla_nodes.push(k);
            }
            // ascending id order: up, left, right, down
            if r > 0 {
                adjacency[idx].push(k - side);
            }
            if c > 0 {
                adjacency[idx].push(k - 1);
            }
            if c + 1 < side {
                adjacency[idx].push(k + 1);
            }
            if r + 1 < side {
                adjacency[idx].push(k + side);
            }
        }
        let checks = ancilla_nodes
            .iter()
            .map(|&k| Check {
                kind: stabilizers[k - 1].unwrap(),
                data: adjacency[k - 1].iter().map(|&j| ordinal[j - 1]).collect(),
            })
            .collect();
        Ok(Self {
            distance,
            side,
            roles,
            stabilizers,
            adjacency,
            data_nodes,
            ancilla_nodes,
            ordinal,
            checks,
        })
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn node_count(&self) -> usize {
        self.side * self.side
    }

    pub fn data_count(&self) -> usize {
        self.data_nodes.len()
    }

    pub fn ancilla_count(&self) -> usize {
        self.ancilla_nodes.len()
    }

    /// Data node ids in ascending order.
    pub fn data_nodes(&self) -> &[usize] {
        &self.data_nodes
    }

    /// Ancilla node ids in ascending order.
    pub fn ancilla_nodes(&self) -> &[usize] {
        &self.ancilla_nodes
    }

    fn check_id(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.node_count() {
            return Err(invalid(format!(
                "node id {k} outside 1..={}",
                self.node_count()
            )));
        }
        Ok(k - 1)
    }

    pub fn role(&self, k: usize) -> Result<Role> {
        Ok(self.roles[self.check_id(k)?])
    }

    /// `None` for data nodes.
    pub fn stabilizer_type(&self, k: usize) -> Result<Option<StabilizerType>> {
        Ok(self.stabilizers[self.check_id(k)?])
    }

    /// Position of node `k` among nodes of the same role.
    pub fn ordinal(&self, k: usize) -> Result<usize> {
        Ok(self.ordinal[self.check_id(k)?])
    }

    /// 0-based `(row, column)` of node `k`.
    pub fn position(&self, k: usize) -> Result<(usize, usize)> {
        let idx = self.check_id(k)?;
        Ok((idx / self.side, idx % self.side))
    }

    pub fn neighbors(&self, k: usize) -> Result<Vec<usize>> {
        Ok(self.adjacency[self.check_id(k)?].clone())
    }

    pub fn degree(&self, k: usize) -> Result<usize> {
        Ok(self.adjacency[self.check_id(k)?].len())
    }

    /// Per-node degrees indexed by `k - 1`.
    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Undirected edges as `(smaller id, larger id)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (idx, nbrs) in self.adjacency.iter().enumerate() {
            let k = idx + 1;
            out.extend(nbrs.iter().filter(|&&j| j > k).map(|&j| (k, j)));
        }
        out
    }

    pub(crate) fn checks(&self) -> &[Check] {
        &self.checks
    }

    /// 180° rotation `(r, c) -> (side-1-r, side-1-c)`.
    pub fn rotate180(&self, k: usize) -> Result<usize> {
        self.check_id(k)?;
        Ok(self.node_count() + 1 - k)
    }

    /// Raw 0/1 adjacency.
    pub fn adjacency_matrix(&self) -> SquareMatrix {
        let n = self.node_count();
        let mut data = vec![0.0; n * n];
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for &j in nbrs {
                data[i * n + j - 1] = 1.0;
            }
        }
        SquareMatrix { n, data }
    }

    /// `D^(-1/2) (A + I) D^(-1/2)` with `D` the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> SquareMatrix {
        let n = self.node_count();
        let inv_sqrt: Vec<f64> = self
            .adjacency
            .iter()
            .map(|nbrs| 1.0 / ((nbrs.len() + 1) as f64).sqrt())
            .collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = inv_sqrt[i] * inv_sqrt[i];
            for &j in &self.adjacency[i] {
                data[i * n + j - 1] = inv_sqrt[i] * inv_sqrt[j - 1];
            }
        }
        SquareMatrix { n, data }
    }

    /// Shortest-path hop counts (Manhattan distance on the grid), indexed by
    /// 0-based positions.
    pub fn hop_distances(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut out = vec![0; n * n];
        for i in 0..n {
            let (ri, ci) = (i / self.side, i % self.side);
            for j in 0..n {
                let (rj, cj) = (j / self.side, j % self.side);
                out[i * n + j] = ri.abs_diff(rj) + ci.abs_diff(cj);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_small_codes() {
        let c3 = build_code(3).unwrap();
        assert_eq!(
            (c3.node_count(), c3.data_count(), c3.ancilla_count()),
            (25, 13, 12)
        );
        assert_eq!(c3.edges().len(), 40);
        let c2 = build_code(2).unwrap();
        assert_eq!(
            (c2.node_count(), c2.data_count(), c2.ancilla_count()),
            (9, 5, 4)
        );
        assert_eq!(c2.edges().len(), 12);
    }

    #[test]
    fn roles_and_stabilizers() {
        let c = build_code(3).unwrap();
        assert_eq!(c.role(1).unwrap(), Role::Data);
        assert_eq!(c.role(2).unwrap(), Role::Ancilla);
        assert_eq!(
            c.stabilizer_type(2).unwrap(),
            Some(StabilizerType::XStabilizer)
        );
        assert_eq!(
            c.stabilizer_type(6).unwrap(),
            Some(StabilizerType::ZStabilizer)
        );
        assert_eq!(c.stabilizer_type(1).unwrap(), None);
    }

    #[test]
    fn neighbor_examples() {
        let c = build_code(3).unwrap();
        assert_eq!(c.neighbors(7).unwrap(), vec![2, 6, 8, 12]);
        assert_eq!(c.neighbors(1).unwrap(), vec![2, 6]);
        assert_eq!(c.neighbors(4).unwrap(), vec![3, 5, 9]);
        assert!(c.neighbors(0).is_err());
        assert!(c.neighbors(26).is_err());
    }

    #[test]
    fn invalid_distance() {
        assert!(build_code(1).is_err());
        assert!(build_code(0).is_err());
    }

    #[test]
    fn normalized_adjacency_entries() {
        let c = build_code(3).unwrap();
        let a = c.normalized_adjacency();
        assert!((a.entry(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.entry(1, 2) - 1.0 / 12f64.sqrt()).abs() < 1e-15);
        assert!((a.entry(1, 2) - 0.288675).abs() < 1e-6);
        assert_eq!(a.entry(1, 3), 0.0);
    }
}

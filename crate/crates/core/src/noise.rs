//! Error sampling, stabilizer parity and the node feature/label encodings.

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{invalid, Result};
use crate::lattice::{StabilizerType, SurfaceCode};
use crate::rng::CounterRng;

/// Four-way label of a data qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    NoError = 0,
    X = 1,
    Z = 2,
    XZ = 3,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 4] = [Self::NoError, Self::X, Self::Z, Self::XZ];

    pub fn from_flags(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Self::NoError,
            (true, false) => Self::X,
            (false, true) => Self::Z,
            (true, true) => Self::XZ,
        }
    }

    /// Two-bit code: bit 0 = X flag, bit 1 = Z flag.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flags(self) -> (bool, bool) {
        let c = self.code();
        (c & 1 == 1, c & 2 == 2)
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoError => "I",
            Self::X => "X",
            Self::Z => "Z",
            Self::XZ => "XZ",
        }
    }
}

/// X/Z flags per data qubit, indexed by ascending data node id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ErrorPattern {
    pub x: Bits,
    pub z: Bits,
}

impl ErrorPattern {
    pub fn zeros(code: &SurfaceCode) -> Self {
        Self {
            x: Bits::zeros(code.data_count()),
            z: Bits::zeros(code.data_count()),
        }
    }

    pub fn data_count(&self) -> usize {
        self.x.len()
    }

    /// Number of elementary flips; an XZ qubit counts twice.
    pub fn weight(&self) -> usize {
        self.x.count_ones() + self.z.count_ones()
    }

    pub fn class(&self, ordinal: usize) -> ErrorClass {
        ErrorClass::from_flags(self.x.get(ordinal), self.z.get(ordinal))
    }

    pub fn set_class(&mut self, ordinal: usize, class: ErrorClass) {
        let (x, z) = class.flags();
        self.x.set(ordinal, x);
        self.z.set(ordinal, z);
    }

    pub fn xor(&self, other: &ErrorPattern) -> ErrorPattern {
        ErrorPattern {
            x: self.x.xor(&other.x),
            z: self.z.xor(&other.z),
        }
    }

    /// Tie-break order for equal weights: lexicographic on `x ‖ z`.
    pub fn lex_cmp(&self, other: &ErrorPattern) -> std::cmp::Ordering {
        self.x.cmp(&other.x).then_with(|| self.z.cmp(&other.z))
    }

    /// Strict preference used when resolving degenerate syndromes.
    pub fn preferred_over(&self, other: &ErrorPattern) -> bool {
        self.weight()
            .cmp(&other.weight())
            .then_with(|| self.lex_cmp(other))
            .is_lt()
    }
}

/// Fired flag per ancilla, indexed by ascending ancilla node id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Syndrome {
    pub fired: Bits,
}

impl Syndrome {
    pub fn zeros(code: &SurfaceCode) -> Self {
        Self {
            fired: Bits::zeros(code.ancilla_count()),
        }
    }

    /// Node ids of the fired ancillas.
    pub fn fired_nodes(&self, code: &SurfaceCode) -> Vec<usize> {
        self.fired.ones().map(|i| code.ancilla_nodes()[i]).collect()
    }
}

/// Three feature channels per node, row-major `[node_count, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub const CHANNELS: usize = 3;

    pub fn node_count(&self) -> usize {
        self.data.len() / Self::CHANNELS
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row for node id `k` (1-based).
    pub fn row(&self, k: usize) -> [f64; 3] {
        let i = (k - 1) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies a node relabelling: row `k` moves to `map(k)`.
    pub fn permuted(&self, map: impl Fn(usize) -> usize) -> FeatureMatrix {
        let mut data = vec![0.0; self.data.len()];
        for k in 1..=self.node_count() {
            let dst = (map(k) - 1) * 3;
            data[dst..dst + 3].copy_from_slice(&self.data[(k - 1) * 3..k * 3]);
        }
        FeatureMatrix { data }
    }

    pub fn from_raw(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(Self::CHANNELS) {
            return Err(invalid("feature data must be a non-empty multiple of 3"));
        }
        Ok(Self { data })
    }
}

/// One class per data qubit, ascending data node id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    classes: Vec<ErrorClass>,
}

impl LabelMatrix {
    pub fn classes(&self) -> &[ErrorClass] {
        &self.classes
    }

    pub fn one_hot(&self) -> Vec<[f64; 4]> {
        self.classes.iter().map(|c| c.one_hot()).collect()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("error probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Independent X and Z flips with probability `p` on each data qubit. Draws
/// are consumed in ascending data id, X before Z.
pub fn sample_error_pattern(
    code: &SurfaceCode,
    p: f64,
    rng: &mut CounterRng,
) -> Result<ErrorPattern> {
    check_probability(p)?;
    let mut pattern = ErrorPattern::zeros(code);
    fill_error_pattern(&mut pattern, p, rng);
    Ok(pattern)
}

/// Overwrites `pattern` in place; `p` must already be validated.
pub(crate) fn fill_error_pattern(pattern: &mut ErrorPattern, p: f64, rng: &mut CounterRng) {
    for i in 0..pattern.data_count() {
        let x = rng.bernoulli(p);
        let z = rng.bernoulli(p);
        pattern.x.set(i, x);
        pattern.z.set(i, z);
    }
}

pub fn extract_syndrome(code: &SurfaceCode, pattern: &ErrorPattern) -> Result<Syndrome> {
    if pattern.x.len() != code.data_count() || pattern.z.len() != code.data_count() {
        return Err(invalid(format!(
            "error pattern sized for {} data qubits, code has {}",
            pattern.x.len(),
            code.data_count()
        )));
    }
    let mut s = Syndrome::zeros(code);
    syndrome_into(code, pattern, &mut s.fired);
    Ok(s)
}

pub(crate) fn syndrome_into(code: &SurfaceCode, pattern: &ErrorPattern, out: &mut Bits) {
    for (a, check) in code.checks().iter().enumerate() {
        let flags = match check.kind {
            StabilizerType::XStabilizer => &pattern.z,
            StabilizerType::ZStabilizer => &pattern.x,
        };
        let parity = check.data.iter().fold(false, |acc, &d| acc ^ flags.get(d));
        out.set(a, parity);
    }
}

pub fn encode_features(code: &SurfaceCode, syndrome: &Syndrome) -> Result<FeatureMatrix> {
    if syndrome.fired.len() != code.ancilla_count() {
        return Err(invalid(format!(
            "syndrome has {} bits, code has {} ancillas",
            syndrome.fired.len(),
            code.ancilla_count()
        )));
    }
    let mut data = vec![0.0; code.node_count() * 3];
    for a in syndrome.fired.ones() {
        let k = code.ancilla_nodes()[a];
        let row = (k - 1) / code.side();
        let channel = if row.is_multiple_of(2) { 1 } else { 2 };
        data[(k - 1) * 3 + channel] = 1.0;
    }
    Ok(FeatureMatrix { data })
}

pub fn encode_labels(code: &SurfaceCode, pattern: &ErrorPattern) -> Result<LabelMatrix> {
    if pattern.x.len() != code.data_count() || pattern.z.len() != code.data_count() {
        return Err(invalid(format!(
            "error pattern sized for {} data qubits, code has {}",
            pattern.x.len(),
            code.data_count()
        )));
    }
    Ok(LabelMatrix {
        classes: (0..code.data_count()).map(|i| pattern.class(i)).collect(),
    })
}

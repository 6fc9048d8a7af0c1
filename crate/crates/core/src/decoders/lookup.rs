use std::collections::HashMap;

use crate::bits::Bits;
use crate::dataset::{Dataset, DatasetMode};
use crate::error::{invalid, Result};
use crate::noise::{ErrorPattern, Syndrome};

/// Syndrome → minimal-weight correction, as stored in a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    pub(crate) distance: usize,
    pub(crate) entries: HashMap<Bits, ErrorPattern>,
}

impl LookupTable {
    pub fn from_training_set(ds: &Dataset) -> Result<Self> {
        if ds.mode() != DatasetMode::Train {
            return Err(invalid("lookup tables are built from train-mode datasets"));
        }
        let entries = ds
            .records
            .iter()
            .map(|s| (s.syndrome.fired.clone(), s.pattern.clone()))
            .collect();
        Ok(Self {
            distance: ds.distance(),
            entries,
        })
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, syndrome: &Syndrome) -> Option<&ErrorPattern> {
        self.entries.get(&syndrome.fired)
    }

    /// Entries sorted by syndrome.
    pub fn sorted(&self) -> Vec<(&Bits, &ErrorPattern)> {
        let mut out: Vec<_> = self.entries.iter().collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }
}

//! Training/evaluation set generation and persistence.
//!
//! Record `i` of any generated set is drawn from `rng.split(i)`, so a pool
//! can be re-scanned independently and sharded generation matches serial
//! generation exactly.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{invalid, QecError, Result};
use crate::lattice::{Role, SurfaceCode};
use crate::noise::{self, ErrorClass, ErrorPattern, Syndrome};
use crate::rng::CounterRng;

pub const MAGIC: &[u8; 4] = b"QECD";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 33;

const SHARD: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Eval,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub distance: usize,
    pub error_prob: f64,
    pub mode: DatasetMode,
    pub seed: u64,
    pub record_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub syndrome: Syndrome,
    pub pattern: ErrorPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn distance(&self) -> usize {
        self.header.distance
    }

    pub fn mode(&self) -> DatasetMode {
        self.header.mode
    }

    /// Fraction of data-qubit positions carrying any error.
    pub fn erroneous_fraction(&self) -> f64 {
        let data = self.records.first().map_or(0, |s| s.pattern.data_count());
        if data == 0 {
            return 0.0;
        }
        let bad: usize = self
            .records
            .iter()
            .map(|s| {
                (0..data)
                    .filter(|&i| s.pattern.class(i) != ErrorClass::NoError)
                    .count()
            })
            .sum();
        bad as f64 / (data * self.records.len()) as f64
    }

    /// A new set holding the records at `indices` (header count updated).
    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> Dataset {
        let records: Vec<Sample> = indices
            .into_iter()
            .map(|i| self.records[i].clone())
            .collect();
        Dataset {
            header: DatasetHeader {
                record_count: records.len() as u64,
                ..self.header.clone()
            },
            records,
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("error probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Samples `pool_size` patterns and keeps, per distinct syndrome, the
/// minimum-weight pattern (ties: lexicographically smallest `x ‖ z`).
/// Output is sorted by syndrome.
pub fn generate_training_set(
    code: &SurfaceCode,
    p: f64,
    pool_size: u64,
    rng: &CounterRng,
) -> Result<Dataset> {
    check_probability(p)?;
    if pool_size == 0 {
        return Err(invalid("pool size must be positive"));
    }
    let shards = pool_size.div_ceil(SHARD);
    let best = (0..shards)
        .into_par_iter()
        .map(|s| {
            let start = s * SHARD;
            let end = (start + SHARD).min(pool_size);
            let mut table: HashMap<Bits, ErrorPattern> = HashMap::new();
            let mut pattern = ErrorPattern::zeros(code);
            let mut fired = Bits::zeros(code.ancilla_count());
            for i in start..end {
                noise::fill_error_pattern(&mut pattern, p, &mut rng.split(i));
                noise::syndrome_into(code, &pattern, &mut fired);
                match table.get_mut(&fired) {
                    Some(kept) => {
                        if pattern.preferred_over(kept) {
                            kept.clone_from(&pattern);
                        }
                    }
                    None => {
                        table.insert(fired.clone(), pattern.clone());
                    }
                }
            }
            table
        })
        .reduce(HashMap::new, merge_tables);
    let mut records: Vec<Sample> = best
        .into_iter()
        .map(|(fired, pattern)| Sample {
            syndrome: Syndrome { fired },
            pattern,
        })
        .collect();
    records.sort_by(|a, b| a.syndrome.cmp(&b.syndrome));
    Ok(Dataset {
        header: DatasetHeader {
            distance: code.distance(),
            error_prob: p,
            mode: DatasetMode::Train,
            seed: rng.seed(),
            record_count: records.len() as u64,
        },
        records,
    })
}

fn merge_tables(
    mut a: HashMap<Bits, ErrorPattern>,
    b: HashMap<Bits, ErrorPattern>,
) -> HashMap<Bits, ErrorPattern> {
    for (key, pattern) in b {
        match a.get_mut(&key) {
            Some(kept) => {
                if pattern.preferred_over(kept) {
                    *kept = pattern;
                }
            }
            None => {
                a.insert(key, pattern);
            }
        }
    }
    a
}

/// `n` unfiltered samples in generation order.
pub fn generate_eval_set(code: &SurfaceCode, p: f64, n: u64, rng: &CounterRng) -> Result<Dataset> {
    check_probability(p)?;
    if n == 0 {
        return Err(invalid("eval set size must be positive"));
    }
    let records: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut pattern = ErrorPattern::zeros(code);
            noise::fill_error_pattern(&mut pattern, p, &mut rng.split(i));
            let mut fired = Bits::zeros(code.ancilla_count());
            noise::syndrome_into(code, &pattern, &mut fired);
            Sample {
                syndrome: Syndrome { fired },
                pattern,
            }
        })
        .collect();
    Ok(Dataset {
        header: DatasetHeader {
            distance: code.distance(),
            error_prob: p,
            mode: DatasetMode::Eval,
            seed: rng.seed(),
            record_count: n,
        },
        records,
    })
}

/// Bytes per record: packed syndrome then packed 2-bit labels.
pub fn record_bytes(code: &SurfaceCode) -> (usize, usize) {
    (
        code.ancilla_count().div_ceil(8),
        (2 * code.data_count()).div_ceil(8),
    )
}

pub(crate) fn pack_labels(pattern: &ErrorPattern) -> Vec<u8> {
    let n = pattern.data_count();
    let mut out = vec![0u8; (2 * n).div_ceil(8)];
    for i in 0..n {
        let code = pattern.class(i).code();
        let bit = 2 * i;
        out[bit / 8] |= code << (bit % 8);
    }
    out
}

pub(crate) fn unpack_labels(code: &SurfaceCode, bytes: &[u8]) -> ErrorPattern {
    let mut pattern = ErrorPattern::zeros(code);
    for i in 0..code.data_count() {
        let bit = 2 * i;
        let c = (bytes[bit / 8] >> (bit % 8)) & 0b11;
        pattern.set_class(i, ErrorClass::from_code(c).unwrap());
    }
    pattern
}

pub fn write_dataset(ds: &Dataset, sink: &mut impl Write) -> Result<()> {
    let code = SurfaceCode::new(ds.header.distance)?;
    if ds.header.record_count != ds.records.len() as u64 {
        return Err(invalid("record_count does not match record list"));
    }
    let distance =
        u16::try_from(ds.header.distance).map_err(|_| invalid("distance exceeds u16"))?;
    let mut buf = Vec::with_capacity(HEADER_BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&distance.to_le_bytes());
    buf.extend_from_slice(&ds.header.error_prob.to_bits().to_le_bytes());
    buf.push(match ds.header.mode {
        DatasetMode::Eval => 0,
        DatasetMode::Train => 1,
    });
    buf.extend_from_slice(&ds.header.seed.to_le_bytes());
    buf.extend_from_slice(&ds.header.record_count.to_le_bytes());
    sink.write_all(&buf)?;
    let (sb, lb) = record_bytes(&code);
    let mut rec = Vec::with_capacity(sb + lb);
    for s in &ds.records {
        if s.syndrome.fired.len() != code.ancilla_count()
            || s.pattern.data_count() != code.data_count()
        {
            return Err(invalid("record sized for a different distance"));
        }
        rec.clear();
        rec.extend_from_slice(&s.syndrome.fired.to_bytes());
        rec.extend_from_slice(&pack_labels(&s.pattern));
        sink.write_all(&rec)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_error(self.pos, format!("truncated {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn format_error(offset: usize, message: impl Into<String>) -> QecError {
    QecError::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn read_dataset(source: &mut impl Read) -> Result<Dataset> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(format_error(0, "bad magic"));
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(format_error(4, format!("unsupported version {version}")));
    }
    let distance = cur.u16("distance")? as usize;
    let code = SurfaceCode::new(distance)
        .map_err(|_| format_error(6, format!("bad distance {distance}")))?;
    let error_prob = f64::from_bits(cur.u64("error probability")?);
    if !(0.0..=1.0).contains(&error_prob) {
        return Err(format_error(
            8,
            format!("error probability {error_prob} outside [0, 1]"),
        ));
    }
    let mode = match cur.take(1, "mode")?[0] {
        0 => DatasetMode::Eval,
        1 => DatasetMode::Train,
        m => return Err(format_error(16, format!("bad mode {m}"))),
    };
    let seed = cur.u64("seed")?;
    let record_count = cur.u64("record count")?;

    let (sb, lb) = record_bytes(&code);
    let n_anc = code.ancilla_count();
    let mut records = Vec::with_capacity(record_count.min(1 << 24) as usize);
    for _ in 0..record_count {
        let at = cur.pos;
        let raw = cur.take(sb + lb, "record")?;
        let (sbytes, lbytes) = raw.split_at(sb);
        let fired = Bits::from_bytes(n_anc, sbytes);
        if fired.to_bytes() != sbytes {
            return Err(format_error(at, "nonzero syndrome padding bits"));
        }
        let pattern = unpack_labels(&code, lbytes);
        if pack_labels(&pattern) != lbytes {
            return Err(format_error(at + sb, "nonzero label padding bits"));
        }
        let sample = Sample {
            syndrome: Syndrome { fired },
            pattern,
        };
        if cfg!(debug_assertions)
            && noise::extract_syndrome(&code, &sample.pattern)? != sample.syndrome
        {
            return Err(format_error(
                at,
                "stored syndrome disagrees with stored labels",
            ));
        }
        records.push(sample);
    }
    if cur.pos != buf.len() {
        return Err(format_error(cur.pos, "trailing bytes after last record"));
    }
    Ok(Dataset {
        header: DatasetHeader {
            distance,
            error_prob,
            mode,
            seed,
            record_count,
        },
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    fired: Vec<usize>,
    errors: BTreeMap<usize, String>,
}

/// Debug export: a header object on the first line, then one object per
/// record with `fired` ancilla ids and `errors` keyed by data node id.
pub fn write_jsonl(ds: &Dataset, sink: &mut impl Write) -> Result<()> {
    let code = SurfaceCode::new(ds.header.distance)?;
    serde_json::to_writer(&mut *sink, &ds.header)?;
    sink.write_all(b"\n")?;
    for s in &ds.records {
        let errors = (0..code.data_count())
            .filter_map(|i| {
                let c = s.pattern.class(i);
                (c != ErrorClass::NoError).then(|| (code.data_nodes()[i], c.name().to_string()))
            })
            .collect();
        let rec = JsonRecord {
            fired: s.syndrome.fired_nodes(&code),
            errors,
        };
        serde_json::to_writer(&mut *sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(source: impl BufRead) -> Result<Dataset> {
    let mut lines = source.lines();
    let first = lines
        .next()
        .ok_or_else(|| invalid("empty JSON-lines stream"))??;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    let code = SurfaceCode::new(header.distance)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)?;
        let mut syndrome = Syndrome::zeros(&code);
        for k in rec.fired {
            if code.role(k)? != Role::Ancilla {
                return Err(invalid(format!("fired node {k} is not an ancilla")));
            }
            syndrome.fired.set(code.ordinal(k)?, true);
        }
        let mut pattern = ErrorPattern::zeros(&code);
        for (k, name) in rec.errors {
            if code.role(k)? != Role::Data {
                return Err(invalid(format!("error on non-data node {k}")));
            }
            let class = match name.as_str() {
                "X" => ErrorClass::X,
                "Z" => ErrorClass::Z,
                "XZ" => ErrorClass::XZ,
                other => return Err(invalid(format!("unknown error label `{other}`"))),
            };
            pattern.set_class(code.ordinal(k)?, class);
        }
        records.push(Sample { syndrome, pattern });
    }
    if records.len() as u64 != header.record_count {
        return Err(invalid("record_count does not match JSON-lines body"));
    }
    Ok(Dataset { header, records })
}

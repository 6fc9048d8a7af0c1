//! Model container: magic `QECM`, u32 LE header length, JSON header, then
//! every parameter as little-endian f64 in header order.

use std::io::{Read, Write};

use qecbench_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig};
use super::lookup::LookupTable;
use super::Model;
use crate::bits::Bits;
use crate::dataset::{pack_labels, unpack_labels};
use crate::error::{QecError, Result};
use crate::lattice::SurfaceCode;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QECM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    params: Vec<ParamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lookup: Option<LookupEntries>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LookupEntries {
    distance: usize,
    /// (packed syndrome bytes, packed label bytes) sorted by syndrome.
    entries: Vec<(Vec<u8>, Vec<u8>)>,
}

fn format_error(offset: usize, message: impl Into<String>) -> QecError {
    QecError::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn write_checkpoint(model: &Model, sink: &mut impl Write) -> Result<()> {
    let lookup = model.lookup().map(|t| LookupEntries {
        distance: t.distance(),
        entries: t
            .sorted()
            .into_iter()
            .map(|(s, p)| (s.to_bytes(), pack_labels(p)))
            .collect(),
    });
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        seed: model.config().seed,
        params: model
            .specs()
            .iter()
            .map(|s| ParamEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
        lookup,
    };
    let json = serde_json::to_vec(&header)?;
    sink.write_all(CHECKPOINT_MAGIC)?;
    sink.write_all(&(json.len() as u32).to_le_bytes())?;
    sink.write_all(&json)?;
    let mut body = Vec::with_capacity(model.param_count() * 8);
    for t in model.params() {
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&body)?;
    Ok(())
}

pub fn read_checkpoint(source: &mut impl Read) -> Result<Model> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    if buf.len() < 8 {
        return Err(format_error(
            buf.len().min(4),
            "truncated checkpoint preamble",
        ));
    }
    if &buf[..4] != CHECKPOINT_MAGIC {
        return Err(format_error(0, "bad magic"));
    }
    let len = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let body_start = 8 + len;
    if buf.len() < body_start {
        return Err(format_error(buf.len(), "truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&buf[8..body_start])
        .map_err(|e| format_error(8, format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(format_error(
            8,
            format!("unsupported version {}", header.format_version),
        ));
    }
    if header.config.architecture == Architecture::Lookup {
        let entries = header
            .lookup
            .ok_or_else(|| format_error(8, "lookup checkpoint without a table"))?;
        let code = SurfaceCode::new(entries.distance)?;
        let table = entries
            .entries
            .into_iter()
            .map(|(s, l)| {
                let fired = Bits::from_bytes(code.ancilla_count(), &s);
                (fired, unpack_labels(&code, &l))
            })
            .collect();
        return Ok(Model::from_lookup(LookupTable {
            distance: entries.distance,
            entries: table,
        }));
    }
    let mut offset = body_start;
    let mut params = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        let count: usize = entry.shape.iter().product();
        let end = offset + 8 * count;
        if buf.len() < end {
            return Err(format_error(
                buf.len(),
                format!("truncated parameter `{}`", entry.name),
            ));
        }
        let data = buf[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(
            Tensor::new(entry.shape.clone(), data)
                .map_err(|e| format_error(offset, e.to_string()))?,
        );
        offset = end;
    }
    if offset != buf.len() {
        return Err(format_error(offset, "trailing bytes after parameters"));
    }
    Model::from_params(header.config, params)
}

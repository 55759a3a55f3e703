//! Binary trace container.
//!
//! Layout:
//!
//! ```text
//! 0..8        b"HEROTRC\0"
//! 8..12       header length H, u32 little-endian
//! 12..12+H    UTF-8 JSON header
//! ...         zero padding up to the next multiple of 64 (payload start)
//! payload     one little-endian f32 blob per tensor, each starting on a
//!             64-byte boundary
//! ```
//!
//! Tensor `offset`s in the header are relative to the payload start. Since the
//! payload start itself is 64-aligned, every tensor is 64-aligned in the file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trace::{ImageTrace, RegionTrace};

pub const MAGIC: [u8; 8] = *b"HEROTRC\0";
pub const ALIGNMENT: usize = 64;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub image_id: String,
    pub grid: [usize; 2],
    #[serde(rename = "N")]
    pub n: usize,
    pub num_layers: usize,
    pub tensors: Vec<TensorEntry>,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGNMENT) * ALIGNMENT
}

fn named_tensors(trace: &ImageTrace) -> Vec<(String, &Tensor)> {
    let mut out = Vec::with_capacity(3 * trace.num_tiles() + 3);
    for (i, tile) in trace.tiles().iter().enumerate() {
        out.push((format!("tile/{i}/cls_attn"), &tile.cls_attn));
        out.push((format!("tile/{i}/cls_embed"), &tile.cls_embed));
        if let Some(clip) = &tile.clip_embed {
            out.push((format!("tile/{i}/clip_embed"), clip));
        }
    }
    out.push(("global/cls_attn".into(), &trace.thumbnail().cls_attn));
    out.push(("global/cls_embed".into(), &trace.thumbnail().cls_embed));
    if let Some(text) = trace.text_embed() {
        out.push(("text/clip_embed".into(), text));
    }
    out
}

/// Serialize a trace. Output is a pure function of the trace.
pub fn write_trace(trace: &ImageTrace) -> Result<Vec<u8>> {
    let tensors = named_tensors(trace);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut cursor = 0usize;
    for (name, t) in &tensors {
        if let Some(index) = t.first_non_finite() {
            return Err(Error::InvariantViolation {
                tensor: name.clone(),
                detail: format!("non-finite value at element {index}"),
            });
        }
        let nbytes = t.len() * 4;
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.dims().to_vec(),
            offset: cursor,
            nbytes,
        });
        cursor = align_up(cursor + nbytes);
    }
    let header = Header {
        version: FORMAT_VERSION,
        image_id: trace.image_id().to_string(),
        grid: [trace.grid_rows(), trace.grid_cols()],
        n: trace.num_patches(),
        num_layers: trace.num_layers(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| Error::CorruptHeader("header exceeds 4 GiB".into()))?;

    let payload_start = align_up(12 + json.len());
    let mut out = Vec::with_capacity(payload_start + cursor);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(payload_start, 0);
    for ((_, t), entry) in tensors.iter().zip(&header.tensors) {
        out.resize(payload_start + entry.offset, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.resize(payload_start + cursor, 0);
    Ok(out)
}

/// Parse and fully validate a trace container.
pub fn read_trace(bytes: &[u8]) -> Result<ImageTrace> {
    if bytes.len() < MAGIC.len() || bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::CorruptHeader("truncated before header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::CorruptHeader(format!("header length {header_len} exceeds input")))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported version {}", header.version)));
    }
    let payload_start = align_up(header_end);

    let mut decoded: BTreeMap<String, Tensor> = BTreeMap::new();
    for entry in &header.tensors {
        let tensor = decode_entry(bytes, payload_start, entry)?;
        if decoded.insert(entry.name.clone(), tensor).is_some() {
            return Err(Error::CorruptHeader(format!("duplicate tensor `{}`", entry.name)));
        }
    }

    let [rows, cols] = header.grid;
    if rows == 0 || cols == 0 {
        return Err(Error::CorruptHeader(format!("empty grid {rows}x{cols}")));
    }
    let mut take = |name: &str| decoded.remove(name);
    let mut require = |name: &str| -> Result<Tensor> {
        take(name).ok_or_else(|| Error::CorruptHeader(format!("missing tensor `{name}`")))
    };
    let mut tiles = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let cls_attn = require(&format!("tile/{i}/cls_attn"))?;
        let cls_embed = require(&format!("tile/{i}/cls_embed"))?;
        tiles.push(RegionTrace::new(cls_attn, cls_embed, None));
    }
    let thumbnail = RegionTrace::new(require("global/cls_attn")?, require("global/cls_embed")?, None);
    for (i, tile) in tiles.iter_mut().enumerate() {
        tile.clip_embed = decoded.remove(&format!("tile/{i}/clip_embed"));
    }
    let text = decoded.remove("text/clip_embed");
    if let Some(name) = decoded.keys().next() {
        return Err(Error::CorruptHeader(format!("unexpected tensor `{name}`")));
    }

    let attn_dims = thumbnail.cls_attn.dims();
    if attn_dims != [header.num_layers, header.n] {
        return Err(Error::ShapeMismatch {
            tensor: "global/cls_attn".into(),
            detail: format!(
                "header declares [{}, {}], payload is {attn_dims:?}",
                header.num_layers, header.n
            ),
        });
    }
    ImageTrace::new(header.image_id, rows, cols, tiles, thumbnail, text)
}

fn decode_entry(bytes: &[u8], payload_start: usize, entry: &TensorEntry) -> Result<Tensor> {
    let name = &entry.name;
    if entry.dtype != "f32" {
        return Err(Error::CorruptHeader(format!("`{name}` has dtype {}", entry.dtype)));
    }
    if !entry.offset.is_multiple_of(ALIGNMENT) {
        return Err(Error::CorruptHeader(format!("`{name}` offset {} is not 64-aligned", entry.offset)));
    }
    let count = entry
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptHeader(format!("`{name}` shape overflows")))?;
    if entry.shape.is_empty() || entry.shape.contains(&0) || count.checked_mul(4) != Some(entry.nbytes) {
        return Err(Error::ShapeMismatch {
            tensor: name.clone(),
            detail: format!("shape {:?} disagrees with nbytes {}", entry.shape, entry.nbytes),
        });
    }
    let start = payload_start
        .checked_add(entry.offset)
        .filter(|s| s.checked_add(entry.nbytes).is_some_and(|end| end <= bytes.len()))
        .ok_or_else(|| Error::CorruptHeader(format!("`{name}` payload out of bounds")))?;
    let data: Vec<f32> = bytes[start..start + entry.nbytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            tensor: name.clone(),
            index,
        });
    }
    Tensor::new(entry.shape.clone(), data).map_err(|e| match e {
        Error::ShapeMismatch { detail, .. } => Error::ShapeMismatch {
            tensor: name.clone(),
            detail,
        },
        other => other,
    })
}

/// Parse only the JSON header.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 12 || bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let end = 12 + header_len;
    if end > bytes.len() {
        return Err(Error::CorruptHeader("truncated header".into()));
    }
    serde_json::from_slice(&bytes[12..end]).map_err(|e| Error::CorruptHeader(e.to_string()))
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<ImageTrace> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_trace(&bytes)
}

pub fn write_trace_file(path: impl AsRef<Path>, trace: &ImageTrace) -> Result<()> {
    let bytes = write_trace(trace)?;
    std::fs::write(path.as_ref(), bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))
}

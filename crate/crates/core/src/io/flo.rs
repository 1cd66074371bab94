//! Middlebury `.flo` optical flow files.
//!
//! Layout: the float `202021.25` as a 4-byte tag, width and height as `i32`,
//! then row-major interleaved `(u, v)` pairs. Everything is little-endian and
//! values are stored as `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::scalar::Scalar;

pub const FLO_MAGIC: f32 = 202021.25;
pub const HEADER_LEN: usize = 12;
/// Sanity bound on either dimension; larger headers are treated as corrupt.
pub const MAX_DIM: usize = 1 << 16;

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_flo<T: Scalar>(flow: &FlowField<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flow.data().len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&(v[0].as_f64() as f32).to_le_bytes());
        out.extend_from_slice(&(v[1].as_f64() as f32).to_le_bytes());
    }
    out
}

fn read_word(bytes: &[u8], offset: usize, what: &str) -> Result<[u8; 4]> {
    bytes
        .get(offset..offset + 4)
        .map(|b| [b[0], b[1], b[2], b[3]])
        .ok_or_else(|| format_error(bytes.len(), format!("truncated while reading {what}")))
}

pub fn decode_flo<T: Scalar>(bytes: &[u8]) -> Result<FlowField<T>> {
    let magic = f32::from_le_bytes(read_word(bytes, 0, "tag")?);
    if magic != FLO_MAGIC {
        return Err(format_error(0, format!("bad tag {magic}, expected {FLO_MAGIC}")));
    }
    let mut dims = [0usize; 2];
    for (i, name) in ["width", "height"].into_iter().enumerate() {
        let offset = 4 + 4 * i;
        let v = i32::from_le_bytes(read_word(bytes, offset, name)?);
        if v <= 0 || v as usize > MAX_DIM {
            return Err(format_error(offset, format!("{name} {v} out of range")));
        }
        dims[i] = v as usize;
    }
    let [w, h] = dims;
    let expected = HEADER_LEN + 8 * w * h;
    if bytes.len() < expected {
        return Err(format_error(bytes.len(), format!("truncated: {w}x{h} field needs {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(format_error(expected, "trailing bytes after flow data"));
    }
    let mut data = Vec::with_capacity(w * h);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let v = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
        if !u.is_finite() || !v.is_finite() {
            return Err(format_error(HEADER_LEN + 8 * i, "non-finite flow value"));
        }
        data.push([T::lit(u as f64), T::lit(v as f64)]);
    }
    FlowField::new(w, h, data)
}

pub fn read_flo<T: Scalar>(path: &Path) -> Result<FlowField<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

pub fn write_flo<T: Scalar>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    super::write_atomic(path, &encode_flo(flow))
}

/// File name for the flow from frame `t` to `t + 1`.
pub fn flo_name(t: usize) -> String {
    format!("{t:04}.flo")
}

/// Reads `0000.flo`, `0001.flo`, ... until the first missing index.
pub fn read_flow_dir<T: Scalar>(dir: &Path) -> Result<Vec<FlowField<T>>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "flow directory not found"),
        ));
    }
    let mut flows = Vec::new();
    loop {
        let p = dir.join(flo_name(flows.len()));
        if !p.exists() {
            break;
        }
        flows.push(read_flo(&p)?);
    }
    Ok(flows)
}

pub fn write_flow_dir<T: Scalar>(dir: &Path, flows: &[FlowField<T>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in flows.iter().enumerate() {
        write_flo(&dir.join(flo_name(t)), f)?;
    }
    Ok(())
}

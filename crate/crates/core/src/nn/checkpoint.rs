//! Checkpoint envelope shared by both stages.
//!
//! ```text
//! b"REMCKPT\0"            8-byte magic
//! u32 LE                  envelope version
//! u32 LE                  header length in bytes
//! header                  UTF-8 JSON object
//! f32 LE × n              flattened parameters
//! ```
//!
//! The header always carries `param_count` and `payload_sha256`; everything
//! else is owned by the stage that wrote the file.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geodata::io::{sha256_hex, write_bytes};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"REMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn payload_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Serialises `header` plus the parameter payload into one buffer.
pub fn encode_checkpoint<H: Serialize>(header: &H, params: &[f32]) -> Result<Vec<u8>> {
    let payload = payload_bytes(params);
    let mut value = serde_json::to_value(header)
        .map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::invalid("checkpoint header must be a JSON object"))?;
    obj.insert("param_count".into(), Value::from(params.len()));
    obj.insert("payload_sha256".into(), Value::from(sha256_hex(&payload)));
    let text = serde_json::to_vec(&value).expect("JSON value serialises");
    let mut out = Vec::with_capacity(16 + text.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and verifies a checkpoint buffer; `origin` is used in errors.
pub fn decode_checkpoint<H: DeserializeOwned>(bytes: &[u8], origin: &Path) -> Result<(H, Vec<f32>)> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(malformed("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("header runs past end of file".into()))?;
    let value: Value = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| malformed(format!("header is not JSON: {e}")))?;
    let payload = &bytes[header_end..];
    let count = value
        .get("param_count")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed("header lacks param_count".into()))? as usize;
    if payload.len() != count * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{}: header promises {count} parameters but payload holds {} bytes",
            origin.display(),
            payload.len()
        )));
    }
    let expected = value
        .get("payload_sha256")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("header lacks payload_sha256".into()))?
        .to_string();
    let found = sha256_hex(payload);
    if found != expected {
        return Err(Error::ChecksumMismatch {
            path: origin.to_path_buf(),
            expected,
            found,
        });
    }
    let header: H =
        serde_json::from_value(value).map_err(|e| malformed(format!("header fields: {e}")))?;
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

pub fn write_checkpoint<H: Serialize>(path: &Path, header: &H, params: &[f32]) -> Result<()> {
    write_bytes(path, &encode_checkpoint(header, params)?)
}

pub fn read_checkpoint<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

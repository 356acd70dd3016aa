//! MNIST-style IDX container: big-endian header, uint8 payload. Supports the
//! plain format and the gzip-compressed variant (detected by its 1f 8b magic).

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_PREFIX: [u8; 2] = [0x1f, 0x8b];

/// Decoded IDX payload. Pixels stay uint8; normalization happens when a
/// `Dataset` is built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxFile {
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<u8> },
    Labels(Vec<u8>),
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(parse_error(bytes.len(), "truncated while reading u32"));
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parse an IDX byte stream, transparently inflating the gzip variant.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.starts_with(&GZIP_PREFIX) {
        let mut decoder = GzDecoder::new(bytes);
        let mut inflated = Vec::new();
        decoder
            .read_to_end(&mut inflated)
            .map_err(|e| parse_error(0, format!("gzip inflate failed: {e}")))?;
        return parse_plain(&inflated);
    }
    parse_plain(bytes)
}

fn parse_plain(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        IMAGE_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            let payload_len = count
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| parse_error(4, "image dimensions overflow"))?;
            let payload = &bytes[16.min(bytes.len())..];
            if payload.len() != payload_len {
                return Err(parse_error(
                    16 + payload.len().min(payload_len),
                    format!("payload holds {} bytes, header declares {}", payload.len(), payload_len),
                ));
            }
            Ok(IdxFile::Images { count, rows, cols, pixels: payload.to_vec() })
        }
        LABEL_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let payload = &bytes[8.min(bytes.len())..];
            if payload.len() != count {
                return Err(parse_error(
                    8 + payload.len().min(count),
                    format!("payload holds {} bytes, header declares {}", payload.len(), count),
                ));
            }
            Ok(IdxFile::Labels(payload.to_vec()))
        }
        other => Err(parse_error(0, format!("unknown magic 0x{other:08x}"))),
    }
}

/// Serialize back to the plain (uncompressed) container.
pub fn serialize_idx(file: &IdxFile) -> Vec<u8> {
    match file {
        IdxFile::Images { count, rows, cols, pixels } => {
            let mut out = Vec::with_capacity(16 + pixels.len());
            out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
            out.extend_from_slice(&(*count as u32).to_be_bytes());
            out.extend_from_slice(&(*rows as u32).to_be_bytes());
            out.extend_from_slice(&(*cols as u32).to_be_bytes());
            out.extend_from_slice(pixels);
            out
        }
        IdxFile::Labels(labels) => {
            let mut out = Vec::with_capacity(8 + labels.len());
            out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
            out
        }
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxFile> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

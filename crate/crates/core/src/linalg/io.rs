//! Matrix persistence.
//!
//! Binary snapshot layout (all little-endian):
//!
//! | offset | size        | content                      |
//! |--------|-------------|------------------------------|
//! | 0      | 4           | magic `LRMA`                 |
//! | 4      | 1           | version `0x01`               |
//! | 5      | 4           | rows, `u32`                  |
//! | 9      | 4           | cols, `u32`                  |
//! | 13     | 8·rows·cols | entries, `f64`, row-major    |
//!
//! CSV is headerless, one matrix row per line, `.` decimal separator and
//! shortest round-trip formatting.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"LRMA";
pub const SNAPSHOT_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 13;

pub fn encode_snapshot(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.data().len());
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.push(SNAPSHOT_VERSION);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Matrix> {
    let fmt = |offset: usize, detail: String| LormaError::Format { offset, detail };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if let Some(i) = (0..4).find(|&i| bytes[i] != SNAPSHOT_MAGIC[i]) {
        return Err(fmt(i, format!("bad magic bytes {:02x?}", &bytes[..4])));
    }
    if bytes[4] != SNAPSHOT_VERSION {
        return Err(fmt(4, format!("unsupported version {:#04x}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(fmt(5, format!("zero dimension {rows}x{cols}")));
    }
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| fmt(5, "dimension overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != need {
        return Err(fmt(
            HEADER_LEN + body.len().min(need),
            format!("expected {need} payload bytes, found {}", body.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fmt(HEADER_LEN + 8 * k, "non-finite entry".into()));
        }
        data.push(v);
    }
    Matrix::new(rows, cols, data)
}

pub fn write_snapshot(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_snapshot(m))?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

pub fn to_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn from_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        let trimmed = line.trim_end_matches('\r');
        if !trimmed.trim().is_empty() {
            let mut row = Vec::new();
            let mut field_off = offset;
            for field in trimmed.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| LormaError::Format {
                    offset: field_off,
                    detail: format!("not a number: {field:?}"),
                })?;
                row.push(v);
                field_off += field.len() + 1;
            }
            rows.push(row);
        }
        offset += line.len() + 1;
    }
    if rows.is_empty() {
        return Err(LormaError::Format {
            offset: 0,
            detail: "empty csv".into(),
        });
    }
    Matrix::from_rows(&rows)
}

//! KSUP1 matrix container.
//!
//! ```text
//! offset  size  field
//! 0       6     magic, ASCII "KSUP1\n"
//! 6       4     rows, u32 little-endian
//! 10      4     cols, u32 little-endian
//! 14      8·r·c payload, f64 IEEE-754 little-endian, row-major
//! ```
//!
//! Metadata lives in a JSON sidecar at `<path>.json` ([`DumpManifest`]).
//! Both files are written through a temporary file and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 6] = b"KSUP1\n";
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpKind {
    Keys,
    Covariance,
    Pmatrix,
    Values,
    /// Weight matrices `W` of an associative memory.
    Weights,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DumpManifest {
    pub model_id: String,
    pub layer: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<DumpKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_ids: Option<Vec<String>>,
    pub created: String,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    /// Set by [`read_dump`] when no sidecar was found.
    #[serde(skip)]
    pub sidecar_missing: bool,
}

impl DumpManifest {
    pub fn new(model_id: impl Into<String>, layer: i64, kind: DumpKind) -> Self {
        Self {
            model_id: model_id.into(),
            layer,
            kind: Some(kind),
            subject_ids: None,
            created: timestamp(),
            extra: Default::default(),
            sidecar_missing: false,
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.extra.insert(key.to_owned(), value.into());
        self
    }

    fn validate(&self, cols: usize) -> Result<()> {
        let kind = self.kind.ok_or_else(|| Error::Format("manifest has no kind".into()))?;
        if let (DumpKind::Keys, Some(ids)) = (kind, &self.subject_ids) {
            if ids.len() != cols {
                return Err(Error::Format(format!(
                    "manifest lists {} subject ids for {cols} key columns",
                    ids.len()
                )));
            }
        }
        Ok(())
    }
}

/// ISO-8601 UTC timestamp; honours `SOURCE_DATE_EPOCH` for reproducible
/// output.
pub fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Header plus row-major little-endian payload.
pub fn encode(matrix: &Matrix) -> Result<Vec<u8>> {
    crate::linalg::ensure_finite(matrix, "dump matrix")?;
    let too_big = |n: usize| Error::InvalidInput(format!("dimension {n} does not fit in u32"));
    let rows = u32::try_from(matrix.nrows()).map_err(|_| too_big(matrix.nrows()))?;
    let cols = u32::try_from(matrix.ncols()).map_err(|_| too_big(matrix.ncols()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * matrix.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            buf.extend_from_slice(&matrix[(r, c)].to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..MAGIC.len()])
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(6), word(10));
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("header declares a {rows}x{cols} matrix")));
    }
    // whole-file sizes, matching the size formula
    let expected = HEADER_LEN as u64 + 8 * rows as u64 * cols as u64;
    let actual = bytes.len() as u64;
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }
    let payload = &bytes[HEADER_LEN..];
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::Data(format!("non-finite value at ({}, {})", i / cols, i % cols)));
        }
        data.push(x);
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_dump(path: &Path, matrix: &Matrix, manifest: &DumpManifest) -> Result<()> {
    manifest.validate(matrix.ncols())?;
    let bytes = encode(matrix)?;
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), &json)
}

/// Reads a dump and its sidecar. A missing sidecar yields an empty manifest
/// with `sidecar_missing` set.
pub fn read_dump(path: &Path) -> Result<(Matrix, DumpManifest)> {
    let bytes = fs::read(path)?;
    let matrix = decode(&bytes)?;
    let side = sidecar_path(path);
    let manifest = match fs::read(&side) {
        Ok(raw) => {
            let m: DumpManifest =
                serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
            m.validate(matrix.ncols())?;
            m
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("{}: no manifest sidecar", path.display());
            DumpManifest {
                sidecar_missing: true,
                ..Default::default()
            }
        }
        Err(e) => return Err(e.into()),
    };
    Ok((matrix, manifest))
}

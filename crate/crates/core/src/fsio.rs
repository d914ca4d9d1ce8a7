//! Small filesystem helpers with consistent error context.
//!
//! All artifact writes in this crate go through [`atomic_write`]: bytes land
//! in a temporary sibling file which is then renamed over the target, so a
//! crash mid-write never leaves a truncated manifest, checkpoint, or report
//! behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Create a directory (and parents) with path context on failure.
pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write `bytes` to `path` via a temporary file + rename in the same
/// directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    ensure_dir(parent)?;
    let tmp = tmp_sibling(path);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Name of the temporary sibling used by [`atomic_write`].
fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Read a file into memory with path context on failure.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Serialize `rows` as line-delimited records and write them atomically.
pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| Error::json(path, e))?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Read a line-delimited record file written by [`write_jsonl`].
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_string(path)?
        .lines()
        .map(|line| serde_json::from_str(line).map_err(|e| Error::json(path, e)))
        .collect()
}

/// Read a file into a string with path context on failure.
pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

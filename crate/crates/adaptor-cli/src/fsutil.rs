//! Filesystem helpers: atomic writes and the append-only output-directory
//! policy.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Writes `bytes` to a temp file in the target directory and renames it into
/// place, so a crash mid-write never leaves a half-written artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::invalid(format!("{} has no file name", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Ensures `dir` exists and that none of `artifacts` already exist inside
/// it. Output directories are append-only: overwriting previous results
/// requires `--force`, which removes exactly the named artifacts first.
pub fn claim_output_dir(dir: &Path, artifacts: &[&str], force: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let existing: Vec<&str> =
        artifacts.iter().copied().filter(|name| dir.join(name).exists()).collect();
    if existing.is_empty() {
        return Ok(());
    }
    if !force {
        return Err(CliError::invalid(format!(
            "output directory {} already contains {}; outputs are append-only, rerun with --force to overwrite",
            dir.display(),
            existing.join(", ")
        )));
    }
    for name in existing {
        let path = dir.join(name);
        std::fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

//! Artifact writing. Every file is written under a temporary name and renamed
//! into place, so readers never see a partial file.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Runs `write` against a temporary path, then renames it to `path`.
pub fn atomically<E>(path: &Path, write: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), CliError>
where
    E: std::fmt::Display,
{
    let tmp = partial(path);
    write(&tmp).map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    atomically(path, |tmp| -> Result<(), String> {
        let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        std::fs::write(tmp, text + "\n").map_err(|e| format!("{}: {e}", tmp.display()))
    })
}

/// `# `-comment lines carried at the top of every CSV.
pub fn preamble<T: Serialize>(config: &T, seed: Option<u64>) -> Vec<String> {
    let mut lines = vec![format!("config: {}", serde_json::to_string(config).expect("config serializes"))];
    if let Some(s) = seed {
        lines.push(format!("seed: {s}"));
    }
    lines.push(format!("rng: {}", rbp_core::linalg::RNG_ALGORITHM));
    lines
}

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Errors that map to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fails with a usage error unless `path` names an existing file.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} not found", path.display())))
    }
}

pub fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| usage("--out is required for this command"))
}

/// Creates `dir`, refusing a nonempty existing directory unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(usage(format!("{} is a file, expected a directory", dir.display())));
    }
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(usage(format!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Refuses an existing output file unless `force`; creates its parent.
pub fn prepare_file(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(usage(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes to stdout, ignoring a closed pipe (e.g. `| head`).
pub fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

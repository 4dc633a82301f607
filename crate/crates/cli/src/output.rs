use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::Format;

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Print the report as JSON or as the given CSV rendering.
pub fn print<T: Serialize>(format: Format, report: &T, csv: impl FnOnce() -> String) -> anyhow::Result<()> {
    match format {
        Format::Json => print!("{}", to_json(report)?),
        Format::Csv => print!("{}", csv()),
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Empty for missing values.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

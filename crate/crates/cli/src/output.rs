//! Report files: JSON documents plus CSV tables, each carrying a
//! header block with the artifact version and the resolved run
//! configuration so a run can be reproduced from its outputs alone.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Canonical JSON for the resolved configuration. Worker counts and
/// output paths are deliberately excluded: they must not change
/// results, and report files are compared byte-for-byte across runs.
pub fn config_json<T: Serialize>(config: &T) -> Result<String> {
    Ok(serde_json::to_string(config)?)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, document: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(document)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// CSV with `# cimeta <version>` and `# config: <json>` header lines.
pub fn write_csv(
    dir: &Path,
    name: &str,
    config: &str,
    header: &str,
    rows: &[String],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let mut file =
        std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    writeln!(file, "# cimeta {VERSION}")?;
    writeln!(file, "# config: {config}")?;
    writeln!(file, "{header}")?;
    for row in rows {
        writeln!(file, "{row}")?;
    }
    Ok(path)
}

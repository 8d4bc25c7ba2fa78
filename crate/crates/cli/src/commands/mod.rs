pub mod encode;
pub mod eval;
pub mod extract;
pub mod stats;
pub mod train_classifier;
pub mod train_conv;

use std::path::{Path, PathBuf};

/// Default output directory next to a primary output file.
pub fn dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn ensure_parent(path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Stale-cache detection: warn (without failing) when a consumer's recorded
/// input hash does not match the file it is being used with.
pub fn warn_if_stale(what: &str, recorded: &[u8; 32], actual: &[u8; 32]) {
    if recorded != actual {
        eprintln!(
            "warning: {what}: input hash mismatch (stale cache?) recorded {} vs actual {}",
            hex_prefix(recorded),
            hex_prefix(actual)
        );
    }
}

pub fn hex_prefix(hash: &[u8; 32]) -> String {
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

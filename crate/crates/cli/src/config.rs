//! Flat key=value config files plus resolved-config echoing.
//!
//! Every run writes the fully resolved settings beside its outputs so a run
//! can be reproduced from its artifacts alone. Precedence: explicit CLI flag,
//! then config-file entry, then built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Key=value file: `#` starts a comment, blank lines ignored.
pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected key=value", path.display(), lineno + 1));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Layered lookup over the config file for flags the user left unset.
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config_path: Option<&Path>) -> Result<Self, String> {
        let file = match config_path {
            Some(p) => load_config_file(p)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { file, resolved: BTreeMap::new() })
    }

    /// Resolve one setting; records the outcome for the config echo.
    pub fn get<T: std::str::FromStr + ToString>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse::<T>()
                    .map_err(|e| format!("config key {key}={raw}: {e}"))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Record a value that is not overridable (paths, computed fields).
    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Write the resolved settings as sorted key=value lines.
    pub fn write_resolved(&self, dir: &Path, run_id: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k}={v}\n"));
        }
        let path = dir.join(format!("{run_id}_config.txt"));
        std::fs::write(&path, out)?;
        Ok(path)
    }
}

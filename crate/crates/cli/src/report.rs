use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// JSON document written by every command: the resolved configuration next
/// to what the command produced.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Report<'a, C, R> {
    pub fn new(command: &'a str, config: &'a C, result: &'a R) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            result,
        }
    }

    /// Writes `dir/name`, creating `dir` if needed, and returns the path.
    pub fn write(&self, dir: &Path, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

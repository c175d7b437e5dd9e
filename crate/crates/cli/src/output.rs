use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// `qfield-cli/<version>`; goes into every sidecar.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));

/// Writes output files into one directory, each with a `<name>.sidecar.json`
/// carrying the config hash and build id.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    master_seed: u64,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(
        dir: PathBuf,
        command: &'static str,
        config_hash: String,
        master_seed: u64,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            command,
            config_hash,
            master_seed,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `bytes` to `name`; `extra` fields are merged into the sidecar.
    pub fn write(&mut self, name: &str, bytes: &[u8], extra: Value) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        let mut meta = json!({
            "file": name,
            "command": self.command,
            "config_hash": self.config_hash,
            "build_id": BUILD_ID,
            "master_seed": self.master_seed,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
            m.extend(e);
        }
        let side = self.dir.join(format!("{name}.sidecar.json"));
        fs::write(&side, to_json(&meta)?)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", side.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(
        &mut self,
        name: &str,
        value: &T,
        extra: Value,
    ) -> Result<PathBuf, CliError> {
        let bytes = to_json(value)?;
        self.write(name, &bytes, extra)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Io(format!("serialization: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Joins `{:.16e}` renderings of `values` with commas.
pub fn csv_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

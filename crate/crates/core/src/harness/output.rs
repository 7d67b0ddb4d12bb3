//! File output: atomic writes, content hashes and the JSON-lines manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::HarnessError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// JSON-lines run manifest. The first line echoes the resolved config;
/// every written output is listed with its sha256.
pub struct Manifest {
    root: PathBuf,
    lines: Vec<Value>,
}

impl Manifest {
    pub fn new<C: Serialize>(root: &Path, command: &str, config: &C) -> Self {
        let header = json!({
            "type": "config",
            "command": command,
            "tool_version": TOOL_VERSION,
            "config": config,
        });
        Self {
            root: root.to_path_buf(),
            lines: vec![header],
        }
    }

    pub fn push(&mut self, kind: &str, mut body: Value) {
        if let Value::Object(map) = &mut body {
            map.insert("type".into(), Value::String(kind.into()));
        }
        self.lines.push(body);
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        let rel = self.relative(path);
        self.push("input", json!({ "role": role, "path": rel, "sha256": sha256_hex(bytes) }));
    }

    /// Write `bytes` atomically and record the file.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
        write_atomic(path, bytes)?;
        let rel = self.relative(path);
        self.push("output", json!({ "path": rel, "sha256": sha256_hex(bytes) }));
        Ok(())
    }

    pub fn lines(&self) -> &[Value] {
        &self.lines
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("manifest line serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Render rows with a header through the csv writer.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

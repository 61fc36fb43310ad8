//! Output directory bookkeeping: every file written is listed in
//! `manifest.json` together with the configuration hash.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub struct Output {
    dir: PathBuf,
    command: String,
    hash: String,
    deterministic: bool,
    files: Vec<String>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path, command: &str, hash: String, deterministic: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            hash,
            deterministic,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn deterministic(&self) -> bool {
        self.deterministic
    }

    /// Path of a new output file, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    /// Write a JSON document with the configuration hash added at top
    /// level. Timing fields are dropped in deterministic runs.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value)?;
        if self.deterministic {
            strip_timing(&mut v);
        }
        let doc = match v {
            Value::Object(mut m) => {
                m.insert("config_hash".into(), Value::String(self.hash.clone()));
                Value::Object(m)
            }
            other => json!({ "config_hash": self.hash, "data": other }),
        };
        let path = self.file(name);
        std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }

    /// Write `manifest.json` and, unless deterministic, `timing.json`.
    pub fn finish(mut self, status: &str) -> Result<(), CliError> {
        if !self.deterministic {
            let t = json!({ "wall_s": self.started.elapsed().as_secs_f64() });
            let path = self.file("timing.json");
            std::fs::write(path, serde_json::to_string_pretty(&t)? + "\n")?;
        }
        let manifest = json!({
            "tool": "tecoord",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.hash,
            "status": status,
            "files": self.files,
        });
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

/// Remove wall-clock fields, which differ between otherwise identical runs.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !(k == "wall_s" || k == "solve_s"));
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_carries_hash_and_manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Output::create(dir.path(), "simulate", "abc".into(), true).unwrap();
        o.json("a.json", &json!({ "x": 1, "stats": { "wall_s": 2.0, "nodes": 3 } })).unwrap();
        o.json("b.json", &vec![1, 2]).unwrap();
        o.finish("ok").unwrap();
        let a: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
        assert_eq!(a["config_hash"], "abc");
        assert!(a["stats"].get("wall_s").is_none());
        assert_eq!(a["stats"]["nodes"], 3);
        let m: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["files"], json!(["a.json", "b.json"]));
        assert!(!dir.path().join("timing.json").exists());
    }
}

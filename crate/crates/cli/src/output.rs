//! Artifact writing: atomic files stamped with version and config hash.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub version: String,
    pub config_sha256: String,
    pub command: String,
}

impl Meta {
    /// Hash of the config text plus any command-line overrides that change results.
    pub fn new(config_text: &str, command: &str, resolution_override: u32) -> Self {
        let mut h = Sha256::new();
        h.update(config_text.as_bytes());
        h.update(format!("\ncommand={command}\nresolution_override={resolution_override}\n").as_bytes());
        Self { version: VERSION.to_string(), config_sha256: format!("{:x}", h.finalize()), command: command.to_string() }
    }
}

pub struct Writer {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Write through a temporary file in the same directory, then rename.
    fn atomic(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let mut f = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &target).with_context(|| format!("cannot move {} into place", target.display()))?;
        self.written.push(target);
        Ok(())
    }

    /// JSON object `{"meta": …, "report": …}`.
    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            meta: &'a Meta,
            report: &'a T,
        }
        let mut s = serde_json::to_string_pretty(&Doc { meta: &self.meta, report })?;
        s.push('\n');
        self.atomic(name, s.as_bytes())
    }

    /// Whitespace-free CSV preceded by `#` metadata lines, which gnuplot skips.
    pub fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut s = format!(
            "# mmcf {} command={} config_sha256={}\n{}\n",
            self.meta.version,
            self.meta.command,
            self.meta.config_sha256,
            columns.join(",")
        );
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            let mut first = true;
            for x in row {
                if !first {
                    s.push(',');
                }
                first = false;
                write!(s, "{x}").expect("string write");
            }
            s.push('\n');
        }
        self.atomic(name, s.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_text_and_overrides() {
        let a = Meta::new("n = 1\n", "simulate", 0);
        assert_eq!(a.config_sha256.len(), 64);
        assert_eq!(a.config_sha256, Meta::new("n = 1\n", "simulate", 0).config_sha256);
        assert_ne!(a.config_sha256, Meta::new("n = 1\n", "simulate", 1).config_sha256);
        assert_ne!(a.config_sha256, Meta::new("n = 2\n", "simulate", 0).config_sha256);
    }

    #[test]
    fn files_land_without_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Writer::new(dir.path(), Meta::new("", "simulate", 0)).unwrap();
        w.csv("a.csv", &["t", "v"], &[vec![0.0, 1.5], vec![0.25, -2.0]]).unwrap();
        w.json("a.json", &vec![1, 2]).unwrap();
        let csv = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert!(csv.starts_with("# mmcf "));
        assert!(csv.ends_with("t,v\n0,1.5\n0.25,-2\n"));
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
        assert_eq!(json["report"][1], 2);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }
}

//! Output directory bookkeeping and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::params::Experiment;

pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    inputs: Vec<PathBuf>,
    started: Instant,
}

pub type Csv = BufWriter<File>;

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            inputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Opens `name` (relative, may contain subdirectories) and records it.
    pub fn file(&mut self, name: &str) -> Result<Csv> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        if !self.files.iter().any(|n| n == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    /// Opens a CSV and writes the `# key=value` preamble and the header row.
    pub fn csv(&mut self, name: &str, meta: &[(&str, String)], header: &str) -> Result<Csv> {
        let mut w = self.file(name)?;
        for (k, v) in meta {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{header}")?;
        Ok(w)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes `manifest.json` with checksums of everything recorded.
    pub fn finish(self, experiment: &Experiment) -> Result<PathBuf> {
        let mut names = self.files.clone();
        names.sort();
        let mut files = Vec::new();
        for name in &names {
            let bytes = std::fs::read(self.path(name))?;
            files.push(json!({
                "name": name,
                "bytes": bytes.len(),
                "sha256": format!("{:x}", Sha256::digest(&bytes)),
            }));
        }
        let mut inputs = Vec::new();
        for p in &self.inputs {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            inputs.push(json!({
                "path": p.display().to_string(),
                "sha256": format!("{:x}", Sha256::digest(&bytes)),
            }));
        }
        let manifest = json!({
            "tool": "voidlab",
            "version": env!("CARGO_PKG_VERSION"),
            "config": {
                "version": crate::FORMAT_VERSION,
                "command": experiment.name(),
                "params": experiment.params(),
            },
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "files": files,
            "inputs": inputs,
        });
        let path = self.path("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}

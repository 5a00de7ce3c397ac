use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Record of one command invocation, written as `manifest.json` next to its
/// outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: Vec<String>,
    pub config: String,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
    #[serde(skip)]
    stage_start: Option<(String, Instant)>,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config: impl Into<String>) -> Self {
        RunManifest {
            run_id: run_id.into(),
            command: std::env::args().collect(),
            config: config.into(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: Vec::new(),
            stage_start: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.artifacts.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Closes the running stage, if any, and starts `name`.
    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage_start.take() {
            self.timings.push((name, t.elapsed().as_secs_f64()));
        }
    }

    /// Checks that every artifact still exists and writes the manifest to
    /// `out`.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        self.end_stage();
        for path in self.artifacts.keys() {
            if !Path::new(path).exists() {
                bail!("artifact {path} vanished before the manifest was written");
            }
        }
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(out, text + "\n").with_context(|| format!("writing {}", out.display()))?;
        Ok(out.to_path_buf())
    }
}

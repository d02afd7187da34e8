use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance of one invocation. Contains no timestamps, so reruns compare equal.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: impl Serialize,
        seed: Option<u64>,
        outputs: &[&str],
    ) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Writes to `explicit` if given, else next to every file output as
    /// `<output>.manifest.json`, else logs it.
    pub fn emit(&self, explicit: Option<&Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let files: Vec<PathBuf> = match explicit {
            Some(p) => vec![p.to_path_buf()],
            None => self
                .outputs
                .iter()
                .filter(|o| o.as_str() != "-")
                .map(|o| PathBuf::from(format!("{o}.manifest.json")))
                .collect(),
        };
        if files.is_empty() {
            log::info!("manifest: {json}");
        }
        for path in files {
            std::fs::write(&path, format!("{json}\n"))
                .with_context(|| format!("writing manifest {}", path.display()))?;
        }
        Ok(())
    }
}

/// Buffered writer for a path, `-` meaning stdout.
pub fn open_output(path: &str) -> Result<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path).with_context(|| format!("creating {path}"))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

pub fn open_input(path: &str) -> Result<Box<dyn io::Read>> {
    if path == "-" {
        Ok(Box::new(io::stdin().lock()))
    } else {
        let f = File::open(path).with_context(|| format!("opening {path}"))?;
        Ok(Box::new(io::BufReader::new(f)))
    }
}

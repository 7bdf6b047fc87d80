use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{EXIT_ACCEPTANCE, EXIT_INPUT, EXIT_NUMERIC};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl From<excursets::Error> for CliError {
    fn from(e: excursets::Error) -> Self {
        if e.is_numerical() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: digest_bytes(&bytes) })
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Output directory that records a digest for every file written.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<FileDigest>,
    started: Instant,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.written.push(FileDigest { path: name.to_string(), sha256: digest_bytes(bytes) });
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn manifest(&self, command: &str, config: serde_json::Value, inputs: Vec<FileDigest>, seed: u64, timing: bool) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            inputs,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.written.clone(),
            wall_time_s: timing.then(|| self.started.elapsed().as_secs_f64()),
        }
    }
}

pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: &'a str,
}

/// Maps a command outcome to an exit code, reporting failures.
pub fn finish(result: CliResult<bool>, out: &Path) -> u8 {
    match result {
        Ok(true) => 0,
        Ok(false) => EXIT_ACCEPTANCE,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            EXIT_INPUT
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            if fs::create_dir_all(out).is_ok() {
                let report = ErrorReport { kind: "numerical", message: &m };
                let _ = fs::write(out.join("error.json"), serde_json::to_string_pretty(&report).expect("serializable"));
            }
            EXIT_NUMERIC
        }
    }
}

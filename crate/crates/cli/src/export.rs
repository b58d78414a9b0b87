//! Output files. Every file gets a `<file>.meta.json` sidecar with the full
//! parameter set, so a figure can always be regenerated.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use repeller::ConstructionParams;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the main table (or report) to this file instead of stdout.
    #[arg(short = 'o', long = "out", value_name = "FILE", conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,

    /// Write every table of the command into this directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    command: &'a str,
    params: Option<&'a ConstructionParams>,
    seed: u64,
    version: &'static str,
    /// Always null so that repeated runs are byte-identical.
    timestamp: Option<String>,
    settings: &'a Value,
}

/// Where a command's files go, and what their sidecars say.
pub struct Sink<'a> {
    pub output: &'a OutputArgs,
    pub command: &'a str,
    pub params: Option<&'a ConstructionParams>,
    pub seed: u64,
    pub settings: Value,
}

impl Sink<'_> {
    /// Writes the command's main output: to `-o`, to `<out-dir>/<name>`, or
    /// to stdout.
    pub fn primary<T: Serialize>(&self, name: &str, payload: Payload<'_, T>) -> Result<(), CliError> {
        match (&self.output.out, &self.output.out_dir) {
            (Some(path), _) => self.write_file(path, payload),
            (None, Some(dir)) => self.write_file(&dir.join(name), payload),
            (None, None) => {
                let bytes = payload.bytes()?;
                io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| CliError::Io(e.to_string()))
            }
        }
    }

    /// Writes a secondary output, only when `--out-dir` is given.
    pub fn extra<T: Serialize>(&self, name: &str, payload: Payload<'_, T>) -> Result<(), CliError> {
        match &self.output.out_dir {
            Some(dir) => self.write_file(&dir.join(name), payload),
            None => Ok(()),
        }
    }

    pub fn writes_files(&self) -> bool {
        self.output.out.is_some() || self.output.out_dir.is_some()
    }

    fn write_file<T: Serialize>(&self, path: &Path, payload: Payload<'_, T>) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        let io_err = |e: io::Error| CliError::Io(format!("{}: {e}", path.display()));
        fs::write(path, payload.bytes()?).map_err(io_err)?;
        let meta = Meta {
            command: self.command,
            params: self.params,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: None,
            settings: &self.settings,
        };
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".meta.json");
        fs::write(PathBuf::from(sidecar), pretty(&meta)?).map_err(io_err)
    }
}

pub enum Payload<'a, T: Serialize> {
    Csv(&'a [T]),
    Json(&'a T),
}

impl<T: Serialize> Payload<'_, T> {
    fn bytes(&self) -> Result<Vec<u8>, CliError> {
        match self {
            Payload::Csv(rows) => csv_bytes(rows),
            Payload::Json(value) => pretty(value),
        }
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn pretty<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

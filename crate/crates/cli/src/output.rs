use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use thiserror::Error;

use condwalk::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 for failures of the computation itself, 2 for bad inputs.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e.root() {
                CoreError::Schema { .. }
                | CoreError::InvalidInput(_)
                | CoreError::InvalidModel(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::NotPositiveDefinite(_)
                | CoreError::UModelRequired
                | CoreError::Unsupported(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The output sink of a command: a file when `--out` is given, stdout otherwise.
pub fn open_output(out: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn io_err(path: Option<&Path>) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source,
    }
}

/// A sibling file of `out` with the given suffix appended.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

/// Records what was run, with which seed and inputs, and how long it took.
pub struct Manifest {
    command: &'static str,
    seed: u64,
    started: Instant,
    started_unix: u64,
    inputs: Value,
    outputs: Vec<String>,
    results: serde_json::Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, inputs: Value) -> Self {
        Self {
            command,
            seed,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs,
            outputs: Vec::new(),
            results: serde_json::Map::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn result(&mut self, key: &str, value: Value) {
        self.results.insert(key.to_string(), value);
    }

    /// Writes `<out>.manifest.json`, or the manifest to stderr when there is no output file.
    pub fn finish(self, out: Option<&Path>) -> CliResult<()> {
        let doc = json!({
            "command": self.command,
            "args": std::env::args().collect::<Vec<_>>(),
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": self.started_unix,
            "elapsed_seconds": self.started.elapsed().as_secs_f64(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "results": self.results,
        });
        match out {
            Some(p) => {
                let path = sibling(p, ".manifest.json");
                let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
                fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
            }
            None => {
                eprintln!("manifest: {doc}");
                Ok(())
            }
        }
    }
}

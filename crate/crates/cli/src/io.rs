//! File plumbing and the error type shared by all subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use xabsa_core::evalkit::EvalError;
use xabsa_core::ingest::IngestError;
use xabsa_core::llm::LlmError;
use xabsa_core::{ConstraintError, LabelCatalog};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Record { path: PathBuf, line: usize, detail: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("bridge server: {0}")]
    Serve(std::io::Error),
    #[error(transparent)]
    Decode(#[from] xabsa_core::decode::DecodeError),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Record { .. } => "record",
            CliError::Ingest(_) => "ingest",
            CliError::Eval(_) => "eval",
            CliError::Llm(_) => "llm",
            CliError::Constraint(_) => "constraint",
            CliError::Serve(_) => "serve",
            CliError::Decode(_) => "decode",
        }
    }
}

pub fn report_error(e: &CliError) {
    let body = serde_json::json!({"error": e.kind(), "message": e.to_string()});
    eprintln!("{body}");
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write to `path` through a temporary file in the same directory, or to
/// stdout when there is no path.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |path: &Path, source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    match path {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).map_err(|e| io_err(Path::new("<stdout>"), e))?;
            stdout.flush().map_err(|e| io_err(Path::new("<stdout>"), e))
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
            tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
            tmp.persist(path).map_err(|e| io_err(path, e.error))?;
            Ok(())
        }
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Record {
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn load_catalog(path: Option<&Path>) -> Result<LabelCatalog, CliError> {
    let Some(path) = path else {
        return Ok(LabelCatalog::restaurant());
    };
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut categories = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let category: xabsa_core::Category = line
            .parse()
            .ok()
            .filter(|c: &xabsa_core::Category| !c.is_raw())
            .ok_or_else(|| CliError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("`{line}` is not ENTITY#ATTRIBUTE"),
            })?;
        categories.insert(category);
    }
    Ok(LabelCatalog::new(categories))
}

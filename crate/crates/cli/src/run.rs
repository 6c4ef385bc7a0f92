//! Per-invocation state: input digests, staged outputs and the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A problem with flags, configuration or inputs (exit status 2).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_COMPUTATION: u8 = 3;

/// Exit status for a failed run: 2 for bad flags, configuration or inputs,
/// 3 when the computation itself failed.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<io::Error>() || cause.is::<toml::de::Error>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<areal::Error>() {
            use areal::Error::*;
            return match e {
                EigenFailure(_) | Factorization { .. } | Divergence { .. } => EXIT_COMPUTATION,
                SubsetFit { source, .. } => match **source {
                    EigenFailure(_) | Factorization { .. } | Divergence { .. } => EXIT_COMPUTATION,
                    _ => EXIT_VALIDATION,
                },
                _ => EXIT_VALIDATION,
            };
        }
    }
    EXIT_COMPUTATION
}

/// Hashes everything read through it.
struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: &'a serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    seed: Option<u64>,
    seed_generated: bool,
    started_at: String,
    duration_seconds: f64,
    outputs: Vec<String>,
    exit_code: u8,
    error: Option<String>,
}

pub struct Run {
    command: &'static str,
    argv: Vec<String>,
    out_dir: PathBuf,
    started: Instant,
    started_at: chrono::DateTime<chrono::Utc>,
    inputs: BTreeMap<String, String>,
    staged: Vec<(String, NamedTempFile)>,
    config: serde_json::Value,
    seed: Option<u64>,
    seed_generated: bool,
}

impl Run {
    pub fn new(command: &'static str, out_dir: &Path) -> Run {
        Run {
            command,
            argv: std::env::args().collect(),
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            started_at: chrono::Utc::now(),
            inputs: BTreeMap::new(),
            staged: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
            seed_generated: false,
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> anyhow::Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    /// The seed to use: the given one, or a fresh one that the manifest records.
    pub fn seed(&mut self, given: Option<u64>) -> u64 {
        let seed = given.unwrap_or_else(|| {
            self.seed_generated = true;
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0);
            areal::rng::label_seed(nanos as u64, &std::process::id().to_string())
        });
        self.seed = Some(seed);
        seed
    }

    /// Opens an input, hands it to `f`, and records the digest of its bytes.
    pub fn read_input<T>(
        &mut self,
        path: &Path,
        f: impl FnOnce(&mut dyn Read) -> anyhow::Result<T>,
    ) -> anyhow::Result<T> {
        let file = File::open(path).map_err(|e| invalid(format!("cannot open input {}: {e}", path.display())))?;
        let mut reader = HashingReader {
            inner: BufReader::new(file),
            hasher: Sha256::new(),
        };
        let value = f(&mut reader).with_context(|| format!("reading {}", path.display()))?;
        io::copy(&mut reader, &mut io::sink())?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(reader.hasher.finalize()));
        Ok(value)
    }

    /// Writes an output to a temporary file in the output directory. Staged
    /// files are renamed into place only when the whole run succeeds.
    pub fn stage(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let tmp = NamedTempFile::new_in(&self.out_dir)
            .with_context(|| format!("creating a temporary file in {}", self.out_dir.display()))?;
        let mut w = BufWriter::new(tmp);
        f(&mut w)?;
        let tmp = w.into_inner().map_err(|e| e.into_error())?;
        self.staged.push((name.to_string(), tmp));
        Ok(())
    }

    /// Commits staged outputs (on success) and writes the manifest. Returns
    /// the exit status.
    pub fn finish(self, result: anyhow::Result<()>) -> u8 {
        let (code, error, staged) = match result {
            Ok(()) => (0, None, self.staged),
            Err(e) => {
                // drop the staged files
                (exit_code(&e), Some(format!("{e:#}")), Vec::new())
            }
        };
        let mut outputs = Vec::new();
        let mut commit_error = None;
        for (name, tmp) in staged {
            match tmp.persist(self.out_dir.join(&name)) {
                Ok(_) => outputs.push(name),
                Err(e) => {
                    commit_error = Some(format!("writing {name}: {}", e.error));
                    break;
                }
            }
        }
        let (code, error) = match commit_error {
            Some(e) => (EXIT_COMPUTATION, Some(e)),
            None => (code, error),
        };
        if let Some(e) = &error {
            eprintln!("error: {e}");
        }
        outputs.push(MANIFEST_FILE.to_string());
        let manifest = Manifest {
            tool: "areal",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: &self.argv,
            config: &self.config,
            inputs: &self.inputs,
            seed: self.seed,
            seed_generated: self.seed_generated,
            started_at: self.started_at.to_rfc3339(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
            outputs,
            exit_code: code,
            error,
        };
        if let Err(e) = write_manifest(&self.out_dir, &manifest) {
            eprintln!("error: could not write manifest: {e:#}");
            return code.max(EXIT_COMPUTATION);
        }
        code
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest<'_>) -> anyhow::Result<()> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, manifest)?;
    writeln!(tmp)?;
    tmp.persist(dir.join(MANIFEST_FILE))?;
    Ok(())
}

//! The machine-readable run report and output-file bookkeeping.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use cupid_core::io::write_atomic;
use cupid_core::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Keys dropped in canonical (`--no-timings`) mode.
const TIMING_KEYS: [&str; 3] = ["wall_time", "wall_time_secs", "median_secs"];

#[derive(Debug)]
pub enum Failure {
    /// Bad input or usage; exit 1.
    Validation(String),
    /// A solver or estimator stopped short of its tolerance; exit 2.
    NoConvergence(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::NoConvergence(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) | Failure::NoConvergence(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } | Error::Bootstrap { .. } => Failure::NoConvergence(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Document<'a> {
    schema_version: u32,
    command: &'a str,
    status: &'a str,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    outputs: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_secs: Option<f64>,
    details: &'a Value,
}

pub struct Report {
    command: &'static str,
    dir: PathBuf,
    no_timings: bool,
    start: Instant,
    outputs: Vec<String>,
    details: Value,
}

/// Remove timing keys at every depth.
pub fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in TIMING_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

impl Report {
    pub fn new(command: &'static str, dir: &Path, no_timings: bool) -> Self {
        Self {
            command,
            dir: dir.to_path_buf(),
            no_timings,
            start: Instant::now(),
            outputs: Vec::new(),
            details: Value::Object(Default::default()),
        }
    }

    pub fn no_timings(&self) -> bool {
        self.no_timings
    }

    pub fn prepare(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| Failure::Validation(format!("cannot create output directory {}: {e}", self.dir.display())))
    }

    /// Write `name` in the output directory atomically.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    /// Pretty JSON of `value` with timing keys stripped in canonical mode.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut v = serde_json::to_value(value).map_err(Error::from)?;
        if self.no_timings {
            strip_timings(&mut v);
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn detail<T: Serialize>(&mut self, key: &str, value: T) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(Error::from)?;
        if let Value::Object(map) = &mut self.details {
            map.insert(key.to_string(), v);
        }
        Ok(())
    }

    pub fn finish(mut self, failure: Option<Failure>) -> cupid_core::Result<()> {
        let (status, exit_code, error) = match &failure {
            None => ("ok", 0, None),
            Some(f @ Failure::Validation(m)) => ("validation_error", f.exit_code(), Some(m.clone())),
            Some(f @ Failure::NoConvergence(m)) => ("no_convergence", f.exit_code(), Some(m.clone())),
        };
        if self.no_timings {
            strip_timings(&mut self.details);
        }
        let mut outputs = self.outputs.clone();
        outputs.push("report.json".into());
        let doc = Document {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            status,
            exit_code,
            error,
            outputs: &outputs,
            wall_time_secs: (!self.no_timings).then(|| self.start.elapsed().as_secs_f64()),
            details: &self.details,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        if std::fs::create_dir_all(&self.dir).is_err() {
            return Ok(());
        }
        write_atomic(&self.dir.join("report.json"), text.as_bytes())
    }
}

//! Library surface of the qsmforge CLI.
//!
//! The binary in `main.rs` is a thin clap wrapper over these modules; the
//! integration tests drive the same command implementations in-process.

pub mod cmd;
pub mod dataset;
pub mod manifest;

use std::fmt;

/// How a failed command maps onto the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags or flag combinations (exit 2; clap parse errors also exit 2).
    Usage,
    /// Unreadable/inconsistent files or failed checks (exit 3).
    Data,
    /// Non-finite values or numerically degenerate problems (exit 4).
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Usage, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, msg: msg.into() }
    }

    /// Annotates a file-level error with the path it came from.
    pub fn in_file(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::data(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<qsmforge_core::Error> for CliError {
    fn from(e: qsmforge_core::Error) -> Self {
        let kind = if e.is_numerical() { ExitKind::Numerical } else { ExitKind::Data };
        CliError { kind, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Global options plus the raw argv, threaded through to manifests.
pub struct Ctx {
    pub seed: Option<u64>,
    pub threads: usize,
    pub argv: Vec<String>,
}

/// Parses "x,y,z" into a (normalized) field direction.
pub fn parse_b0(s: &str) -> CliResult<qsmforge_core::volume::Orientation> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!("--b0 needs three comma-separated numbers, got '{s}'")));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--b0 component '{p}' is not a number")))?;
    }
    qsmforge_core::volume::Orientation::normalized(v)
        .map_err(|e| CliError::usage(format!("--b0 '{s}': {e}")))
}

/// Parses "IN:OUT" (e.g. "24:16") into a patch geometry.
pub fn parse_geometry(s: &str) -> CliResult<qsmforge_core::patching::PatchGeometry> {
    let (i, o) = s
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("--geometry must look like IN:OUT, got '{s}'")))?;
    let input: usize = i
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("--geometry input size '{i}' is not an integer")))?;
    let output: usize = o
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("--geometry output size '{o}' is not an integer")))?;
    qsmforge_core::patching::PatchGeometry::new(input, output)
        .map_err(|e| CliError::usage(e.to_string()))
}

//! Batch driver: reads a run configuration, computes the torus and its
//! normal bundle, and writes logs, coefficient dumps and plot data.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod plots;
pub mod run;

use serde::Serialize;
use std::path::Path;
use thiserror::Error;
use tori_core::TorusError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Solver {
        stage: &'static str,
        #[source]
        source: TorusError,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("missing run artifact: {0}")]
    MissingArtifact(String),
}

impl CliError {
    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn record(&self) -> FailureRecord {
        let (kind, stage) = match self {
            CliError::Config(_) => ("config", None),
            CliError::Solver { stage, .. } => ("solver", Some(stage.to_string())),
            CliError::Io { .. } => ("io", None),
            CliError::MissingArtifact(_) => ("missing_artifact", None),
        };
        FailureRecord {
            kind,
            stage,
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

/// Machine-readable description of a failed run.
#[derive(Debug, Serialize)]
pub struct FailureRecord {
    pub kind: &'static str,
    pub stage: Option<String>,
    pub message: String,
    pub exit_code: u8,
}

impl FailureRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("failure record serializes")
    }
}

pub(crate) fn io_context(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

pub(crate) fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(io_context(format!("cannot create {}", path.display())))
}

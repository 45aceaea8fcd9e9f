//! Failure categories, exit codes, and the stderr error line.
//!
//! Every failure path maps to one category with a fixed nonzero exit
//! code, and prints a single machine-readable JSON object on stderr:
//!
//! ```json
//! {"error":{"kind":"scenario","code":4,"message":"..."}}
//! ```

use std::path::PathBuf;

use fluxbench::dataset::DatasetError;
use fluxbench::metrics::MetricError;
use fluxbench::models::ModelError;
use fluxbench::scenarios::ScenarioError;
use fluxbench::shiftdiag::ShiftError;
use fluxbench::synthgen::SynthError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration. Exit 2, matching clap's own usage
    /// errors, so "invalid invocation" is one code regardless of which
    /// layer caught it.
    Config(String),
    Dataset(DatasetError),
    Scenario(ScenarioError),
    Model(ModelError),
    Shift(ShiftError),
    Metric(MetricError),
    Synth(SynthError),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dataset(_) => "dataset",
            CliError::Scenario(_) => "scenario",
            CliError::Model(_) => "model",
            CliError::Shift(_) => "shift",
            CliError::Metric(_) => "metric",
            CliError::Synth(_) => "synth",
            CliError::Io { .. } => "io",
        }
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Scenario(_) => 4,
            CliError::Model(_) => 5,
            CliError::Shift(_) => 6,
            CliError::Metric(_) => 7,
            CliError::Synth(_) => 8,
            CliError::Io { .. } => 9,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Dataset(e) => e.to_string(),
            CliError::Scenario(e) => e.to_string(),
            CliError::Model(e) => e.to_string(),
            CliError::Shift(e) => e.to_string(),
            CliError::Metric(e) => e.to_string(),
            CliError::Synth(e) => e.to_string(),
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
        }
    }

    /// Print the stderr error line and terminate with this category's code.
    pub fn exit(&self) -> ! {
        let line = serde_json::json!({
            "error": {
                "kind": self.kind(),
                "code": self.code(),
                "message": self.message(),
            }
        });
        eprintln!("{line}");
        std::process::exit(self.code());
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Dataset(e)
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}

impl From<ShiftError> for CliError {
    fn from(e: ShiftError) -> Self {
        CliError::Shift(e)
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Metric(e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Synth(e)
    }
}

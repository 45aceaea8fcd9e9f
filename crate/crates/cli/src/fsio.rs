//! Atomic file writes and the fixed output-directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fluxbench::aggregate::Scale;
use fluxbench::dataset::Target;
use fluxbench::metrics::Statistic;
use fluxbench::scenarios::ScenarioKind;

use crate::errors::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a half-written artifact. Parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(path))?;
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Config(format!("invalid output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Where every artifact lives under the output root:
///
/// ```text
/// splits/<scenario>.json
/// models/<scenario>/<target>/<model>.json       (+ gbt_trials.json)
/// predictions/<scenario>/<target>/<model>.csv
/// diagnostics/<scenario>_<target>.json
/// diagnostics/curves/<scenario>_<target>_<covariate>_<variant>.{json,csv}
/// report/<target>/report.json
/// report/<target>/table_<statistic>.csv
/// report/<target>/cdf/<scenario>_<scale>_<model>.csv
/// ```
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }

    pub fn split(&self, kind: ScenarioKind) -> PathBuf {
        self.root.join("splits").join(format!("{kind}.json"))
    }

    fn model_dir(&self, kind: ScenarioKind, target: Target) -> PathBuf {
        self.root
            .join("models")
            .join(kind.as_str())
            .join(target.as_str())
    }

    pub fn model(&self, kind: ScenarioKind, target: Target, name: &str) -> PathBuf {
        self.model_dir(kind, target).join(format!("{name}.json"))
    }

    pub fn tuner_trials(&self, kind: ScenarioKind, target: Target) -> PathBuf {
        self.model_dir(kind, target).join("gbt_trials.json")
    }

    pub fn predictions_dir(&self, kind: ScenarioKind, target: Target) -> PathBuf {
        self.root
            .join("predictions")
            .join(kind.as_str())
            .join(target.as_str())
    }

    /// The file stem is the model name; prediction import relies on that.
    pub fn prediction(&self, kind: ScenarioKind, target: Target, name: &str) -> PathBuf {
        self.predictions_dir(kind, target).join(format!("{name}.csv"))
    }

    pub fn diagnostics(&self, kind: ScenarioKind, target: Target) -> PathBuf {
        self.root
            .join("diagnostics")
            .join(format!("{kind}_{}.json", target.as_str()))
    }

    pub fn curve(
        &self,
        kind: ScenarioKind,
        target: Target,
        covariate: &str,
        variant: &str,
        ext: &str,
    ) -> PathBuf {
        self.root.join("diagnostics").join("curves").join(format!(
            "{kind}_{}_{covariate}_{variant}.{ext}",
            target.as_str()
        ))
    }

    pub fn report_dir(&self, target: Target) -> PathBuf {
        self.root.join("report").join(target.as_str())
    }

    pub fn report_json(&self, target: Target) -> PathBuf {
        self.report_dir(target).join("report.json")
    }

    pub fn table(&self, target: Target, statistic: Statistic) -> PathBuf {
        self.report_dir(target)
            .join(format!("table_{}.csv", statistic.as_str()))
    }

    pub fn cdf(&self, target: Target, kind: ScenarioKind, scale: Scale, model: &str) -> PathBuf {
        self.report_dir(target)
            .join("cdf")
            .join(format!("{kind}_{scale}_{model}.csv"))
    }
}

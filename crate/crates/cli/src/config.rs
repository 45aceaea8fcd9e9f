//! The TOML run configuration shared by every pipeline subcommand.
//!
//! Only `[run]` is mandatory; each other section defaults to the values
//! documented on its fields, so a minimal config is:
//!
//! ```toml
//! [run]
//! data = "data/hourly.csv"
//! target = "et"
//! output = "out"
//! ```
//!
//! Every random choice downstream is seeded from this file, so two runs
//! of the same config over the same data produce identical bytes.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fluxbench::dataset::Target;
use fluxbench::scenarios::ScenarioKind;
use fluxbench::shiftdiag::WeightSpec;

use crate::errors::CliError;

/// Environment variable overriding `[run] output`.
pub const OUTPUT_ROOT_ENV: &str = "FLUXBENCH_OUTPUT_ROOT";

pub const KNOWN_MODELS: [&str; 3] = ["constant", "ols", "gbt"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub scenarios: ScenariosSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Canonical hourly CSV table.
    pub data: PathBuf,
    /// "et", "gpp", or "nee".
    pub target: String,
    /// Output root directory; `FLUXBENCH_OUTPUT_ROOT` overrides it.
    pub output: PathBuf,
    /// Multiplier applied to rendered CSV tables only (e.g. 100 for ET);
    /// stored metrics stay in native units. Default 1.
    #[serde(default = "default_display_scale")]
    pub display_scale: f64,
}

fn default_display_scale() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenariosSection {
    /// Which splits to build; default all three.
    pub kinds: Vec<ScenarioKind>,
    pub seed: u64,
    /// Test-site count for spatial/temperature splits.
    pub n_test_sites: usize,
    /// Validation-site count for spatial/temperature splits.
    pub n_val_sites: usize,
}

impl Default for ScenariosSection {
    fn default() -> Self {
        ScenariosSection {
            kinds: vec![
                ScenarioKind::Temporal,
                ScenarioKind::Spatial,
                ScenarioKind::Temperature,
            ],
            seed: 42,
            n_test_sites: 40,
            n_val_sites: 20,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    /// Models to fit and score: any of "constant", "ols", "gbt".
    pub names: Vec<String>,
    /// Denominator of every skill score; must appear in `names`.
    pub reference: String,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            names: KNOWN_MODELS.iter().map(|s| s.to_string()).collect(),
            reference: "ols".to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerSection {
    /// Random-search draws for the GBT fit.
    pub n_configs: usize,
    pub seed: u64,
}

impl Default for TunerSection {
    fn default() -> Self {
        TunerSection {
            n_configs: 10,
            seed: 43,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    /// Score trim threshold for importance weights.
    pub epsilon: f64,
    /// Quantile at which nonzero weights are clipped.
    pub clip_quantile: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let spec = WeightSpec::default();
        WeightsSection {
            epsilon: spec.epsilon,
            clip_quantile: spec.clip_quantile,
        }
    }
}

impl WeightsSection {
    pub fn spec(&self) -> WeightSpec {
        WeightSpec {
            epsilon: self.epsilon,
            clip_quantile: self.clip_quantile,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub seed: u64,
    /// Repeats behind every shift score's mean ± sd.
    pub n_repeats: usize,
    /// Covariates to render relationship curves for (e.g. ["TA"]).
    pub curves: Vec<String>,
    pub curve_bins: usize,
    /// Percentile interval defining common support, e.g. [5.0, 95.0].
    pub support_pct: (f64, f64),
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            seed: 44,
            n_repeats: 10,
            curves: Vec::new(),
            curve_bins: 10,
            support_pct: (5.0, 95.0),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn target(&self) -> Result<Target, CliError> {
        self.run.target.parse().map_err(CliError::Config)
    }

    /// `[run] output`, unless `FLUXBENCH_OUTPUT_ROOT` overrides it.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.run.output.clone())
    }

    fn validate(&self, path: &Path) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(format!("{}: {msg}", path.display())));
        self.target()?;
        if !self.run.display_scale.is_finite() || self.run.display_scale <= 0.0 {
            return fail(format!(
                "display_scale must be a positive number, got {}",
                self.run.display_scale
            ));
        }
        if self.scenarios.kinds.is_empty() {
            return fail("[scenarios] kinds must not be empty".into());
        }
        for (i, kind) in self.scenarios.kinds.iter().enumerate() {
            if self.scenarios.kinds[..i].contains(kind) {
                return fail(format!("[scenarios] kinds lists {kind} twice"));
            }
        }
        if self.scenarios.n_test_sites == 0 || self.scenarios.n_val_sites == 0 {
            return fail("[scenarios] n_test_sites and n_val_sites must be at least 1".into());
        }
        if self.models.names.is_empty() {
            return fail("[models] names must not be empty".into());
        }
        for (i, name) in self.models.names.iter().enumerate() {
            if !KNOWN_MODELS.contains(&name.as_str()) {
                return fail(format!(
                    "[models] unknown model {name:?} (expected one of {KNOWN_MODELS:?})"
                ));
            }
            if self.models.names[..i].contains(name) {
                return fail(format!("[models] names lists {name:?} twice"));
            }
        }
        if !self.models.names.contains(&self.models.reference) {
            return fail(format!(
                "[models] reference {:?} is not in names",
                self.models.reference
            ));
        }
        if self.tuner.n_configs == 0 {
            return fail("[tuner] n_configs must be at least 1".into());
        }
        if let Err(e) = self.weights.spec().validate() {
            return fail(format!("[weights] {e}"));
        }
        if self.diagnostics.n_repeats == 0 {
            return fail("[diagnostics] n_repeats must be at least 1".into());
        }
        if self.diagnostics.curve_bins == 0 {
            return fail("[diagnostics] curve_bins must be at least 1".into());
        }
        let (lo, hi) = self.diagnostics.support_pct;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return fail(format!(
                "[diagnostics] support_pct must be an increasing pair within [0, 100], got [{lo}, {hi}]"
            ));
        }
        Ok(())
    }
}

//! Reference predictors and prediction-set plumbing.
//!
//! Three baselines ship with the engine: the training-mean constant,
//! unregularized least squares, and gradient-boosted trees with a
//! random-search tuner. External model outputs enter through
//! [`import_predictions`], so anything that can write a three-column
//! CSV can be evaluated on equal footing.

pub mod design;
mod gbt;
mod ols;
mod tuner;

pub use design::DesignMatrix;
pub use gbt::{sigmoid, FitTrace, GbtConfig, GbtModel, Loss, SplitMode};
pub use ols::OlsModel;
pub use tuner::{
    random_search, sample_gbt_config, select_best, TunerSpec, TunerTrial, LEARNING_RATE_RANGE,
    MAX_DEPTH_RANGE, N_TREES_RANGE, SUBSAMPLE_RANGE,
};

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureVector, HourTimestamp, HourlyRecord, SiteId, Target};
use design::{expand_features, target_column};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty training set")]
    EmptyTraining,
    #[error("empty validation set")]
    EmptyValidation,
    #[error("degenerate labels: logistic loss needs both classes")]
    DegenerateLabels,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate prediction key: {site} @ {time}")]
    DuplicateKey { site: SiteId, time: HourTimestamp },
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A fitted model: deterministic, finite predictions for any finite
/// feature vector.
pub trait Predictor: Send + Sync {
    fn model_name(&self) -> &str;
    fn predict(&self, features: &FeatureVector) -> f64;
}

/// Training-target mean, the weakest reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub value: f64,
}

impl Predictor for ConstantPredictor {
    fn model_name(&self) -> &str {
        "constant"
    }

    fn predict(&self, _features: &FeatureVector) -> f64 {
        self.value
    }
}

/// Least squares over the expanded design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OlsPredictor {
    pub model: OlsModel,
}

impl Predictor for OlsPredictor {
    fn model_name(&self) -> &str {
        "ols"
    }

    fn predict(&self, features: &FeatureVector) -> f64 {
        self.model.predict_row(&expand_features(features))
    }
}

/// Boosted trees over the expanded design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GbtPredictor {
    pub model: GbtModel,
}

impl Predictor for GbtPredictor {
    fn model_name(&self) -> &str {
        "gbt"
    }

    fn predict(&self, features: &FeatureVector) -> f64 {
        self.model.predict_row(&expand_features(features))
    }
}

/// Fit the constant baseline: the mean of the selected training target.
pub fn fit_constant(
    records: &[&HourlyRecord],
    target: Target,
) -> Result<ConstantPredictor, ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptyTraining);
    }
    let y = target_column(records, target);
    Ok(ConstantPredictor {
        value: y.iter().sum::<f64>() / y.len() as f64,
    })
}

/// Fit unregularized least squares on the one-hot expanded features.
pub fn fit_ols(records: &[&HourlyRecord], target: Target) -> Result<OlsPredictor, ModelError> {
    let x = DesignMatrix::from_records(records);
    let y = target_column(records, target);
    Ok(OlsPredictor {
        model: OlsModel::fit(&x, &y)?,
    })
}

/// Fit boosted trees, optionally early-stopping on validation records.
pub fn fit_gbt(
    records: &[&HourlyRecord],
    target: Target,
    config: &GbtConfig,
    val_records: Option<&[&HourlyRecord]>,
) -> Result<GbtPredictor, ModelError> {
    let x = DesignMatrix::from_records(records);
    let y = target_column(records, target);
    let val = val_records.map(|v| (DesignMatrix::from_records(v), target_column(v, target)));
    let model = GbtModel::fit(&x, &y, val.as_ref().map(|(vx, vy)| (vx, vy.as_slice())), config)?;
    Ok(GbtPredictor { model })
}

/// Random-search tuning at the record level.
pub fn tune_gbt(
    records: &[&HourlyRecord],
    val_records: &[&HourlyRecord],
    target: Target,
    spec: &TunerSpec,
) -> Result<(GbtPredictor, Vec<TunerTrial>), ModelError> {
    let x = DesignMatrix::from_records(records);
    let y = target_column(records, target);
    let vx = DesignMatrix::from_records(val_records);
    let vy = target_column(val_records, target);
    let (model, trials) = random_search(&x, &y, &vx, &vy, spec)?;
    Ok((GbtPredictor { model }, trials))
}

/// Predictions addressed by (site, time), the unit every evaluation
/// stage consumes. External baselines are imported into the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub model_name: String,
    pub entries: BTreeMap<(SiteId, HourTimestamp), f64>,
}

impl PredictionSet {
    pub fn get(&self, site: &SiteId, time: HourTimestamp) -> Option<f64> {
        self.entries.get(&(site.clone(), time)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Run a predictor over records to build a [`PredictionSet`].
pub fn predict_records(predictor: &dyn Predictor, records: &[&HourlyRecord]) -> PredictionSet {
    let entries = records
        .iter()
        .map(|r| {
            (
                (r.site.clone(), r.time),
                predictor.predict(&r.features),
            )
        })
        .collect();
    PredictionSet {
        model_name: predictor.model_name().to_string(),
        entries,
    }
}

/// Read a prediction file: CSV columns site, time, value. The model
/// name is taken from the file stem.
pub fn import_predictions(path: &Path) -> Result<PredictionSet, ModelError> {
    let model_name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("imported")
        .to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_error)?;
    let header = reader.headers().map_err(csv_error)?.clone();
    let col = |name: &str| -> Result<usize, ModelError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ModelError::MissingColumn(name.to_string()))
    };
    let (site_col, time_col, value_col) = (col("site")?, col("time")?, col("value")?);

    let mut entries = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_error)?;
        let parse = |msg: String| ModelError::Parse {
            row: row_no,
            message: msg,
        };
        let site = SiteId::new(row.get(site_col).unwrap_or(""))
            .map_err(|e| parse(e.to_string()))?;
        let time = HourTimestamp::parse(row.get(time_col).unwrap_or(""))
            .map_err(|e| parse(e.to_string()))?;
        let raw = row.get(value_col).unwrap_or("");
        let value: f64 = raw
            .trim()
            .parse()
            .map_err(|e| parse(format!("invalid value {raw:?}: {e}")))?;
        if !value.is_finite() {
            return Err(parse(format!("non-finite value {raw:?}")));
        }
        match entries.entry((site, time)) {
            Entry::Vacant(slot) => {
                slot.insert(value);
            }
            Entry::Occupied(slot) => {
                let (site, time) = slot.key().clone();
                return Err(ModelError::DuplicateKey { site, time });
            }
        }
    }
    Ok(PredictionSet {
        model_name,
        entries,
    })
}

/// Write a prediction set in the import format.
pub fn export_predictions<W: Write>(ps: &PredictionSet, out: W) -> Result<(), ModelError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["site", "time", "value"]).map_err(csv_error)?;
    for ((site, time), value) in &ps.entries {
        writer
            .write_record([site.to_string(), time.to_string(), value.to_string()])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(err: csv::Error) -> ModelError {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => ModelError::Io(io),
        other => ModelError::Parse {
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// On-disk model artifact: versioned JSON tree/coefficient dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    Constant(ConstantPredictor),
    Ols(OlsPredictor),
    Gbt(GbtPredictor),
}

impl Predictor for ModelArtifact {
    fn model_name(&self) -> &str {
        match self {
            ModelArtifact::Constant(m) => m.model_name(),
            ModelArtifact::Ols(m) => m.model_name(),
            ModelArtifact::Gbt(m) => m.model_name(),
        }
    }

    fn predict(&self, features: &FeatureVector) -> f64 {
        match self {
            ModelArtifact::Constant(m) => m.predict(features),
            ModelArtifact::Ols(m) => m.predict(features),
            ModelArtifact::Gbt(m) => m.predict(features),
        }
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// Artifact envelope with format version and training target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub target: Target,
    pub model: ModelArtifact,
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<(), ModelError> {
    let json = serde_json::to_string_pretty(file)
        .map_err(|e| ModelError::Numeric(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
        row: 0,
        message: e.to_string(),
    })?;
    if file.version != MODEL_FILE_VERSION {
        return Err(ModelError::Version(file.version));
    }
    Ok(file)
}

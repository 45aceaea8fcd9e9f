//! Random-search hyperparameter tuning for the boosted-tree model.

use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::gbt::{GbtConfig, GbtModel, Loss};
use super::ModelError;
use crate::rng::{derive_seed, rng_from_seed, uniform_below, uniform_f64, EngineRng};

/// Draw ranges, fixed once: learning rate is log-uniform on
/// [1e-3, 0.3]; everything else uniform on the stated interval.
pub const N_TREES_RANGE: (usize, usize) = (100, 1000);
pub const MAX_DEPTH_RANGE: (usize, usize) = (3, 10);
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-3, 0.3);
pub const SUBSAMPLE_RANGE: (f64, f64) = (0.6, 1.0);

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TunerSpec {
    pub n_configs: usize,
    pub seed: u64,
}

impl TunerSpec {
    pub fn new(seed: u64) -> Self {
        TunerSpec {
            n_configs: 10,
            seed,
        }
    }
}

/// One evaluated candidate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunerTrial {
    pub config: GbtConfig,
    pub val_rmse: f64,
}

/// Draw one config from the search ranges. `fit_seed` seeds the fit's
/// subsampling, independent of the draw stream.
pub fn sample_gbt_config(rng: &mut EngineRng, fit_seed: u64) -> GbtConfig {
    let uniform = |rng: &mut EngineRng, (lo, hi): (f64, f64)| lo + (hi - lo) * uniform_f64(rng);
    let n_trees =
        N_TREES_RANGE.0 + uniform_below(rng, (N_TREES_RANGE.1 - N_TREES_RANGE.0 + 1) as u64) as usize;
    let max_depth = MAX_DEPTH_RANGE.0
        + uniform_below(rng, (MAX_DEPTH_RANGE.1 - MAX_DEPTH_RANGE.0 + 1) as u64) as usize;
    let learning_rate = (LEARNING_RATE_RANGE.0.ln()
        + uniform_f64(rng) * (LEARNING_RATE_RANGE.1.ln() - LEARNING_RATE_RANGE.0.ln()))
    .exp();
    let subsample_rows = uniform(rng, SUBSAMPLE_RANGE);
    let subsample_cols = uniform(rng, SUBSAMPLE_RANGE);
    GbtConfig {
        n_trees,
        max_depth,
        learning_rate,
        subsample_rows,
        subsample_cols,
        loss: Loss::Squared,
        early_stopping_rounds: Some(50),
        seed: fit_seed,
        split_mode: Default::default(),
    }
}

/// Fit every candidate and keep the one with the lowest validation RMSE;
/// ties go to the earliest candidate (strict improvement required).
pub fn select_best(
    x: &DesignMatrix,
    y: &[f64],
    vx: &DesignMatrix,
    vy: &[f64],
    configs: &[GbtConfig],
) -> Result<(GbtModel, Vec<TunerTrial>), ModelError> {
    if vx.n_rows() == 0 || vy.is_empty() {
        return Err(ModelError::EmptyValidation);
    }
    let mut best: Option<(GbtModel, f64)> = None;
    let mut trials = Vec::with_capacity(configs.len());
    for config in configs {
        let model = GbtModel::fit(x, y, Some((vx, vy)), config)?;
        let pred = model.predict_design(vx);
        let mse = pred
            .iter()
            .zip(vy)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / vy.len() as f64;
        let val_rmse = mse.sqrt();
        trials.push(TunerTrial {
            config: config.clone(),
            val_rmse,
        });
        if best.as_ref().is_none_or(|(_, b)| val_rmse < *b) {
            best = Some((model, val_rmse));
        }
    }
    let (model, _) = best.ok_or(ModelError::EmptyTraining)?;
    Ok((model, trials))
}

/// Random search per the spec ranges: draw `spec.n_configs` candidates
/// with `spec.seed`, fit each with early stopping on the validation
/// data, return the winner and the full trial log.
pub fn random_search(
    x: &DesignMatrix,
    y: &[f64],
    vx: &DesignMatrix,
    vy: &[f64],
    spec: &TunerSpec,
) -> Result<(GbtModel, Vec<TunerTrial>), ModelError> {
    if spec.n_configs < 1 {
        return Err(ModelError::InvalidConfig("n_configs must be >= 1".into()));
    }
    let mut rng = rng_from_seed(spec.seed);
    let configs: Vec<GbtConfig> = (0..spec.n_configs)
        .map(|i| sample_gbt_config(&mut rng, derive_seed(spec.seed, i as u64)))
        .collect();
    select_best(x, y, vx, vy, &configs)
}

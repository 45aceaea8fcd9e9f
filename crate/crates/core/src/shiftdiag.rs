//! Distribution-shift diagnostics.
//!
//! Covariate shift is scored by the balanced accuracy of a train/test
//! origin classifier; conditional shift by the percent increase from
//! held-out training RMSE to importance-weighted test RMSE, in both the
//! train-marginal and shared-support reference distributions. Binned
//! relationship curves compare covariate–target relationships after
//! reweighting the test pool.
//!
//! Every diagnostic uses one fixed GBT configuration with early stopping
//! on an internal 10% holdout, and derives per-repeat seeds from the
//! master seed, so repeats are comparable and parallelism never changes
//! reported numbers.

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FeatureVector, Target, CONTINUOUS_NAMES};
use crate::models::{DesignMatrix, GbtConfig, GbtModel, Loss, ModelError};
use crate::rng::{derive_seed, rng_from_seed, shuffle, EngineRng};
use crate::scenarios::{DomainKey, ScenarioKind, ScenarioSplit};
use crate::stats::{empirical_quantile, interp_quantile, mean, sample_sd, sorted_copy};

/// Minimum rows per pool for the covariate-shift score.
pub const MIN_COVARIATE_POOL: usize = 20;
/// Minimum rows per split part in the conditional diagnostics.
pub const MIN_PART_ROWS: usize = 100;
/// Default repeat count for all repeated diagnostics.
pub const DEFAULT_REPEATS: usize = 10;
/// Default bin count for relationship curves.
pub const DEFAULT_BINS: usize = 10;
/// Default common-support percentile range for curves.
pub const DEFAULT_SUPPORT_PCT: (f64, f64) = (5.0, 95.0);

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("pool too small: need >= {needed} rows, got {got}")]
    PoolTooSmall { needed: usize, got: usize },
    #[error("all rows trimmed out of the weighted evaluation")]
    AllTrimmed,
    #[error("covariate support of train and test pools does not overlap")]
    EmptySupport,
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("invalid weight spec: {0}")]
    InvalidWeightSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Feature+target rows pooled over one side's domains.
#[derive(Clone, Debug, Default)]
pub struct PooledSample {
    pub rows: Vec<FeatureVector>,
    pub targets: Vec<f64>,
}

impl PooledSample {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Pool the QC-valid rows of a domain set.
pub fn pool(ds: &Dataset, domains: &std::collections::BTreeSet<DomainKey>, target: Target) -> PooledSample {
    let mut out = PooledSample::default();
    for key in domains {
        for rec in key.records(ds) {
            out.rows.push(rec.features);
            out.targets.push(rec.targets.get(target));
        }
    }
    out
}

/// Trimming and clipping applied to importance weights.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightSpec {
    /// Scores within `epsilon` of 0 or 1 are outside common support.
    pub epsilon: f64,
    /// Nonzero weights are clipped at this empirical quantile.
    pub clip_quantile: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            epsilon: 0.1,
            clip_quantile: 0.99,
        }
    }
}

impl WeightSpec {
    pub fn validate(&self) -> Result<(), ShiftError> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(ShiftError::InvalidWeightSpec(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if !(self.clip_quantile > 0.0 && self.clip_quantile <= 1.0) {
            return Err(ShiftError::InvalidWeightSpec(format!(
                "clip_quantile must lie in (0, 1], got {}",
                self.clip_quantile
            )));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation over repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(values: &[f64]) -> MeanSd {
    MeanSd {
        mean: mean(values),
        sd: sample_sd(values),
    }
}

/// Clip the nonzero entries at their `clip_quantile` empirical quantile.
fn clip_nonzero(weights: &mut [f64], clip_quantile: f64) {
    let nonzero: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if nonzero.is_empty() {
        return;
    }
    let cap = empirical_quantile(&sorted_copy(&nonzero), clip_quantile);
    for w in weights.iter_mut() {
        if *w > cap {
            *w = cap;
        }
    }
}

/// Test-row importance weights from classifier scores `s = P(test | x)`:
/// zero when `s >= 1 - epsilon` (outside common support), otherwise
/// `(1 - s)/s`, with nonzero weights clipped at the spec quantile.
pub fn importance_weights(scores: &[f64], spec: &WeightSpec) -> Vec<f64> {
    let mut weights: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s >= 1.0 - spec.epsilon {
                0.0
            } else {
                (1.0 - s) / s
            }
        })
        .collect();
    clip_nonzero(&mut weights, spec.clip_quantile);
    weights
}

/// Train-row retention for the train-marginal diagnostic: a held-out
/// train row is kept iff its score exceeds `epsilon`.
pub fn train_retention(scores: &[f64], spec: &WeightSpec) -> Vec<bool> {
    scores.iter().map(|&s| s > spec.epsilon).collect()
}

/// Shared-support weights (Appendix-style reference distribution):
/// train rows get `s/alpha` (zero when `s <= epsilon`), test rows get
/// `(1-s)/(1-alpha)` (zero when `s >= 1-epsilon`); nonzero weights are
/// clipped per side.
pub fn shared_support_weights(
    scores: &[f64],
    origin_is_test: bool,
    alpha: f64,
    spec: &WeightSpec,
) -> Vec<f64> {
    let mut weights: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if origin_is_test {
                if s >= 1.0 - spec.epsilon {
                    0.0
                } else {
                    (1.0 - s) / (1.0 - alpha)
                }
            } else if s <= spec.epsilon {
                0.0
            } else {
                s / alpha
            }
        })
        .collect();
    clip_nonzero(&mut weights, spec.clip_quantile);
    weights
}

fn rows_at<'a>(pool: &'a PooledSample, ids: &[usize]) -> Vec<&'a FeatureVector> {
    ids.iter().map(|&i| &pool.rows[i]).collect()
}

fn targets_at(pool: &PooledSample, ids: &[usize]) -> Vec<f64> {
    ids.iter().map(|&i| pool.targets[i]).collect()
}

/// `(Σ w v) / (Σ w)`; `None` when the weight mass is zero.
pub fn weighted_mean_of(values: &[f64], weights: &[f64]) -> Option<f64> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return None;
    }
    let num: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    Some(num / wsum)
}

/// Fit the fixed diagnostic GBT with an internal 10% early-stopping
/// holdout carved from a shuffle of the rows.
fn fit_fixed_gbt(
    rows: &[&FeatureVector],
    y: &[f64],
    loss: Loss,
    skip_continuous: Option<usize>,
    rng: &mut EngineRng,
) -> Result<GbtModel, ShiftError> {
    let n = rows.len();
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    let n_val = (n / 10).max(1);
    let (fit_idx, val_idx) = idx.split_at(n - n_val);
    let gather = |ids: &[usize]| -> (Vec<&FeatureVector>, Vec<f64>) {
        (
            ids.iter().map(|&i| rows[i]).collect(),
            ids.iter().map(|&i| y[i]).collect(),
        )
    };
    let (fit_rows, fit_y) = gather(fit_idx);
    let (val_rows, val_y) = gather(val_idx);
    let xf = DesignMatrix::from_features(&fit_rows, skip_continuous);
    let xv = DesignMatrix::from_features(&val_rows, skip_continuous);
    let config = GbtConfig::fixed(loss, rng.next_u64());
    Ok(GbtModel::fit(&xf, &fit_y, Some((&xv, &val_y)), &config)?)
}

/// Origin-classifier scores `s(x) = P(test | x)` for the given rows.
fn classifier_scores(
    model: &GbtModel,
    rows: &[&FeatureVector],
    skip_continuous: Option<usize>,
) -> Vec<f64> {
    let x = DesignMatrix::from_features(rows, skip_continuous);
    model.predict_design(&x)
}

fn fit_origin_classifier(
    train_rows: &[&FeatureVector],
    test_rows: &[&FeatureVector],
    skip_continuous: Option<usize>,
    rng: &mut EngineRng,
) -> Result<GbtModel, ShiftError> {
    let mut rows: Vec<&FeatureVector> = Vec::with_capacity(train_rows.len() + test_rows.len());
    rows.extend_from_slice(train_rows);
    rows.extend_from_slice(test_rows);
    let mut labels = vec![0.0; train_rows.len()];
    labels.extend(std::iter::repeat_n(1.0, test_rows.len()));
    fit_fixed_gbt(&rows, &labels, Loss::Logistic, skip_continuous, rng)
}

/// Balanced accuracy of the domain classifier over `n_repeats` random
/// half splits: the covariate-shift score.
pub fn covariate_shift_score(
    train: &PooledSample,
    test: &PooledSample,
    seed: u64,
    n_repeats: usize,
) -> Result<MeanSd, ShiftError> {
    for pool in [train, test] {
        if pool.len() < MIN_COVARIATE_POOL {
            return Err(ShiftError::PoolTooSmall {
                needed: MIN_COVARIATE_POOL,
                got: pool.len(),
            });
        }
    }
    let accuracies: Vec<Result<f64, ShiftError>> = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, r as u64));
            let halves = |pool: &PooledSample, rng: &mut EngineRng| {
                let mut idx: Vec<usize> = (0..pool.len()).collect();
                shuffle(&mut idx, rng);
                let split = pool.len() / 2;
                (idx[..split].to_vec(), idx[split..].to_vec())
            };
            let (tr_fit, tr_eval) = halves(train, &mut rng);
            let (te_fit, te_eval) = halves(test, &mut rng);
            let clf = fit_origin_classifier(
                &rows_at(train, &tr_fit),
                &rows_at(test, &te_fit),
                None,
                &mut rng,
            )?;
            // Balanced accuracy at threshold 0.5: predicted test iff s >= 0.5.
            let s_test = classifier_scores(&clf, &rows_at(test, &te_eval), None);
            let s_train = classifier_scores(&clf, &rows_at(train, &tr_eval), None);
            let tpr = s_test.iter().filter(|&&s| s >= 0.5).count() as f64 / s_test.len() as f64;
            let tnr = s_train.iter().filter(|&&s| s < 0.5).count() as f64 / s_train.len() as f64;
            Ok(0.5 * (tpr + tnr))
        })
        .collect();
    let accuracies = accuracies.into_iter().collect::<Result<Vec<f64>, _>>()?;
    Ok(mean_sd(&accuracies))
}

/// Per-repeat record of one conditional-shift evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RepeatDetail {
    pub percent_increase: f64,
    pub retained_train_fraction: f64,
    pub retained_test_fraction: f64,
}

/// A repeated conditional-shift diagnostic: percent RMSE increase.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalResult {
    pub mean: f64,
    pub sd: f64,
    pub per_repeat: Vec<RepeatDetail>,
}

impl ConditionalResult {
    pub fn summary(&self) -> MeanSd {
        MeanSd {
            mean: self.mean,
            sd: self.sd,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum ConditionalVariant {
    TrainMarginal,
    SharedSupport,
}

fn conditional_shift(
    train: &PooledSample,
    test: &PooledSample,
    seed: u64,
    n_repeats: usize,
    spec: &WeightSpec,
    variant: ConditionalVariant,
) -> Result<ConditionalResult, ShiftError> {
    spec.validate()?;
    if train.len() < 3 * MIN_PART_ROWS {
        return Err(ShiftError::PoolTooSmall {
            needed: 3 * MIN_PART_ROWS,
            got: train.len(),
        });
    }
    if test.len() < 2 * MIN_PART_ROWS {
        return Err(ShiftError::PoolTooSmall {
            needed: 2 * MIN_PART_ROWS,
            got: test.len(),
        });
    }

    let repeats: Vec<Result<RepeatDetail, ShiftError>> = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, r as u64));

            // Train thirds {weight-fit, model-fit, held-out}; test halves
            // {weight-fit, eval}.
            let mut tr_idx: Vec<usize> = (0..train.len()).collect();
            shuffle(&mut tr_idx, &mut rng);
            let third = train.len() / 3;
            let (w_idx, rest) = tr_idx.split_at(third);
            let (m_idx, h_idx) = rest.split_at(third);

            let mut te_idx: Vec<usize> = (0..test.len()).collect();
            shuffle(&mut te_idx, &mut rng);
            let half = test.len() / 2;
            let (w2_idx, e_idx) = te_idx.split_at(half);

            let clf = fit_origin_classifier(
                &rows_at(train, w_idx),
                &rows_at(test, w2_idx),
                None,
                &mut rng,
            )?;
            let alpha = w2_idx.len() as f64 / (w_idx.len() + w2_idx.len()) as f64;

            let regressor = {
                let rows = rows_at(train, m_idx);
                let y = targets_at(train, m_idx);
                fit_fixed_gbt(&rows, &y, Loss::Squared, None, &mut rng)?
            };

            let h_rows = rows_at(train, h_idx);
            let h_y = targets_at(train, h_idx);
            let h_scores = classifier_scores(&clf, &h_rows, None);
            let h_pred = regressor.predict_design(&DesignMatrix::from_features(&h_rows, None));
            let h_sq: Vec<f64> = h_pred
                .iter()
                .zip(&h_y)
                .map(|(p, y)| (p - y) * (p - y))
                .collect();

            let e_rows = rows_at(test, e_idx);
            let e_y = targets_at(test, e_idx);
            let e_scores = classifier_scores(&clf, &e_rows, None);
            let e_pred = regressor.predict_design(&DesignMatrix::from_features(&e_rows, None));
            let e_sq: Vec<f64> = e_pred
                .iter()
                .zip(&e_y)
                .map(|(p, y)| (p - y) * (p - y))
                .collect();

            let (rmse_train, retained_train, rmse_test, retained_test) = match variant {
                ConditionalVariant::TrainMarginal => {
                    // Held-out train RMSE over rows inside common support.
                    let keep = train_retention(&h_scores, spec);
                    let kept: Vec<f64> = h_sq
                        .iter()
                        .zip(&keep)
                        .filter(|(_, &k)| k)
                        .map(|(&sq, _)| sq)
                        .collect();
                    if kept.is_empty() {
                        return Err(ShiftError::AllTrimmed);
                    }
                    let rmse_train = mean(&kept).sqrt();
                    let retained_train = kept.len() as f64 / h_sq.len() as f64;

                    let w = importance_weights(&e_scores, spec);
                    let mse = weighted_mean_of(&e_sq, &w).ok_or(ShiftError::AllTrimmed)?;
                    let retained_test =
                        w.iter().filter(|&&x| x > 0.0).count() as f64 / w.len() as f64;
                    (rmse_train, retained_train, mse.sqrt(), retained_test)
                }
                ConditionalVariant::SharedSupport => {
                    let w_h = shared_support_weights(&h_scores, false, alpha, spec);
                    let mse_h = weighted_mean_of(&h_sq, &w_h).ok_or(ShiftError::AllTrimmed)?;
                    let retained_train =
                        w_h.iter().filter(|&&x| x > 0.0).count() as f64 / w_h.len() as f64;

                    let w_e = shared_support_weights(&e_scores, true, alpha, spec);
                    let mse_e = weighted_mean_of(&e_sq, &w_e).ok_or(ShiftError::AllTrimmed)?;
                    let retained_test =
                        w_e.iter().filter(|&&x| x > 0.0).count() as f64 / w_e.len() as f64;
                    (mse_h.sqrt(), retained_train, mse_e.sqrt(), retained_test)
                }
            };

            Ok(RepeatDetail {
                percent_increase: 100.0 * (rmse_test / rmse_train - 1.0),
                retained_train_fraction: retained_train,
                retained_test_fraction: retained_test,
            })
        })
        .collect();
    let per_repeat = repeats.into_iter().collect::<Result<Vec<_>, _>>()?;
    let values: Vec<f64> = per_repeat.iter().map(|d| d.percent_increase).collect();
    let MeanSd { mean, sd } = mean_sd(&values);
    Ok(ConditionalResult {
        mean,
        sd,
        per_repeat,
    })
}

/// Percent increase from held-out training RMSE to importance-weighted
/// test RMSE, reweighting the test pool to the train covariate marginal.
pub fn conditional_shift_train_marginal(
    train: &PooledSample,
    test: &PooledSample,
    seed: u64,
    n_repeats: usize,
    spec: &WeightSpec,
) -> Result<ConditionalResult, ShiftError> {
    conditional_shift(train, test, seed, n_repeats, spec, ConditionalVariant::TrainMarginal)
}

/// Percent increase with both sides reweighted to the shared-support
/// reference distribution (train: s/α, test: (1−s)/(1−α)).
pub fn conditional_shift_shared(
    train: &PooledSample,
    test: &PooledSample,
    seed: u64,
    n_repeats: usize,
    spec: &WeightSpec,
) -> Result<ConditionalResult, ShiftError> {
    conditional_shift(train, test, seed, n_repeats, spec, ConditionalVariant::SharedSupport)
}

/// Binned covariate–target relationship over the common-support range.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelationshipCurve {
    pub covariate_name: String,
    pub target_name: String,
    /// `n_bins + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    /// Per-bin unweighted train means; `None` when the bin lacks a
    /// retained observation on either side.
    pub train_means: Vec<Option<f64>>,
    /// Per-bin weight-normalized test means, same definedness rule.
    pub test_weighted_means: Vec<Option<f64>>,
    /// (train rows, weight-retained test rows) per bin.
    pub bin_counts: Vec<(usize, usize)>,
}

/// (bin center, value) points of one side of a relationship curve.
pub type PlotSeries = Vec<(f64, f64)>;

impl RelationshipCurve {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// Two-column plot series (bin center, value), skipping undefined
    /// bins: (train series, test series).
    pub fn plot_data(&self) -> (PlotSeries, PlotSeries) {
        let centers = self.bin_centers();
        let series = |means: &[Option<f64>]| -> PlotSeries {
            centers
                .iter()
                .zip(means)
                .filter_map(|(&c, m)| m.map(|v| (c, v)))
                .collect()
        };
        (series(&self.train_means), series(&self.test_weighted_means))
    }
}

fn covariate_index(name: &str) -> Result<usize, ShiftError> {
    CONTINUOUS_NAMES
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| ShiftError::UnknownCovariate(name.to_string()))
}

/// Common-support range: intersection of each pool's [lo, hi] percentile
/// interval of the covariate.
fn common_support(
    train_vals: &[f64],
    test_vals: &[f64],
    pct: (f64, f64),
) -> Result<(f64, f64), ShiftError> {
    let interval = |vals: &[f64]| -> (f64, f64) {
        let sorted = sorted_copy(vals);
        (
            interp_quantile(&sorted, pct.0 / 100.0),
            interp_quantile(&sorted, pct.1 / 100.0),
        )
    };
    let (tr_lo, tr_hi) = interval(train_vals);
    let (te_lo, te_hi) = interval(test_vals);
    let lo = tr_lo.max(te_lo);
    let hi = tr_hi.min(te_hi);
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(ShiftError::EmptySupport)
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, n_bins: usize) -> Option<usize> {
    if v < lo || v > hi {
        return None;
    }
    let k = ((v - lo) / (hi - lo) * n_bins as f64).floor() as usize;
    Some(k.min(n_bins - 1))
}

/// Shared tail of both curve builders: bin per-row values over the
/// range, with unweighted means on the train side and weight-normalized
/// means on the test side; bins lacking a retained row on either side
/// are undefined.
#[allow(clippy::too_many_arguments)]
fn assemble_curve(
    covariate_name: &str,
    target_name: &str,
    lo: f64,
    hi: f64,
    n_bins: usize,
    train_cov_val: &[(f64, f64)],
    test_cov_val_w: &[(f64, f64, f64)],
) -> RelationshipCurve {
    let bin_edges: Vec<f64> = (0..=n_bins)
        .map(|k| lo + (hi - lo) * k as f64 / n_bins as f64)
        .collect();
    let mut train_acc = vec![(0usize, 0.0f64); n_bins];
    for &(cov, val) in train_cov_val {
        if let Some(k) = bin_of(cov, lo, hi, n_bins) {
            train_acc[k].0 += 1;
            train_acc[k].1 += val;
        }
    }
    let mut test_acc = vec![(0usize, 0.0f64, 0.0f64); n_bins]; // (count, Σw, Σwv)
    for &(cov, val, w) in test_cov_val_w {
        if w <= 0.0 {
            continue;
        }
        if let Some(k) = bin_of(cov, lo, hi, n_bins) {
            test_acc[k].0 += 1;
            test_acc[k].1 += w;
            test_acc[k].2 += w * val;
        }
    }
    let mut train_means = Vec::with_capacity(n_bins);
    let mut test_weighted_means = Vec::with_capacity(n_bins);
    let mut bin_counts = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let (tn, tsum) = train_acc[k];
        let (en, wsum, wvsum) = test_acc[k];
        let defined = tn >= 1 && en >= 1 && wsum > 0.0;
        train_means.push(defined.then(|| tsum / tn as f64));
        test_weighted_means.push(defined.then(|| wvsum / wsum));
        bin_counts.push((tn, en));
    }
    RelationshipCurve {
        covariate_name: covariate_name.to_string(),
        target_name: target_name.to_string(),
        bin_edges,
        train_means,
        test_weighted_means,
        bin_counts,
    }
}

/// Observed-target relationship curve: per-bin train means vs weighted
/// test means, with weights from a classifier on the remaining
/// covariates.
#[allow(clippy::too_many_arguments)]
pub fn binned_curve(
    train: &PooledSample,
    test: &PooledSample,
    covariate_name: &str,
    target_name: &str,
    n_bins: usize,
    pct: (f64, f64),
    spec: &WeightSpec,
    seed: u64,
) -> Result<RelationshipCurve, ShiftError> {
    spec.validate()?;
    let cov = covariate_index(covariate_name)?;
    if train.is_empty() || test.is_empty() {
        return Err(ShiftError::PoolTooSmall { needed: 1, got: 0 });
    }
    let train_cov: Vec<f64> = train.rows.iter().map(|r| r.continuous[cov]).collect();
    let test_cov: Vec<f64> = test.rows.iter().map(|r| r.continuous[cov]).collect();
    let (lo, hi) = common_support(&train_cov, &test_cov, pct)?;

    // Classifier on the remaining covariates, fit on both full pools.
    let mut rng = rng_from_seed(seed);
    let train_rows: Vec<&FeatureVector> = train.rows.iter().collect();
    let test_rows: Vec<&FeatureVector> = test.rows.iter().collect();
    let clf = fit_origin_classifier(&train_rows, &test_rows, Some(cov), &mut rng)?;
    let scores = classifier_scores(&clf, &test_rows, Some(cov));
    let weights = importance_weights(&scores, spec);

    let train_cov_val: Vec<(f64, f64)> = train_cov
        .iter()
        .zip(&train.targets)
        .map(|(&c, &v)| (c, v))
        .collect();
    let test_cov_val_w: Vec<(f64, f64, f64)> = test_cov
        .iter()
        .zip(&test.targets)
        .zip(&weights)
        .map(|((&c, &v), &w)| (c, v, w))
        .collect();
    Ok(assemble_curve(
        covariate_name,
        target_name,
        lo,
        hi,
        n_bins,
        &train_cov_val,
        &test_cov_val_w,
    ))
}

/// Model-based response curve: each pool fits its own regressor on a
/// first third; curves bin the regressor outputs on the second thirds;
/// the classifier (remaining covariates) comes from the final thirds.
#[allow(clippy::too_many_arguments)]
pub fn model_based_curve(
    train: &PooledSample,
    test: &PooledSample,
    covariate_name: &str,
    target_name: &str,
    n_bins: usize,
    pct: (f64, f64),
    spec: &WeightSpec,
    seed: u64,
) -> Result<RelationshipCurve, ShiftError> {
    spec.validate()?;
    let cov = covariate_index(covariate_name)?;
    for pool in [train, test] {
        if pool.len() < 3 * MIN_PART_ROWS {
            return Err(ShiftError::PoolTooSmall {
                needed: 3 * MIN_PART_ROWS,
                got: pool.len(),
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    let thirds = |pool: &PooledSample, rng: &mut EngineRng| {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        shuffle(&mut idx, rng);
        let third = pool.len() / 3;
        (
            idx[..third].to_vec(),
            idx[third..2 * third].to_vec(),
            idx[2 * third..].to_vec(),
        )
    };
    let (tr_fit, tr_eval, tr_clf) = thirds(train, &mut rng);
    let (te_fit, te_eval, te_clf) = thirds(test, &mut rng);

    let f_train = fit_fixed_gbt(
        &rows_at(train, &tr_fit),
        &targets_at(train, &tr_fit),
        Loss::Squared,
        None,
        &mut rng,
    )?;
    let f_test = fit_fixed_gbt(
        &rows_at(test, &te_fit),
        &targets_at(test, &te_fit),
        Loss::Squared,
        None,
        &mut rng,
    )?;
    let clf = fit_origin_classifier(
        &rows_at(train, &tr_clf),
        &rows_at(test, &te_clf),
        Some(cov),
        &mut rng,
    )?;

    let tr_eval_rows = rows_at(train, &tr_eval);
    let te_eval_rows = rows_at(test, &te_eval);
    let tr_cov: Vec<f64> = tr_eval_rows.iter().map(|r| r.continuous[cov]).collect();
    let te_cov: Vec<f64> = te_eval_rows.iter().map(|r| r.continuous[cov]).collect();
    let (lo, hi) = common_support(&tr_cov, &te_cov, pct)?;

    let tr_pred = f_train.predict_design(&DesignMatrix::from_features(&tr_eval_rows, None));
    let te_pred = f_test.predict_design(&DesignMatrix::from_features(&te_eval_rows, None));
    let scores = classifier_scores(&clf, &te_eval_rows, Some(cov));
    let weights = importance_weights(&scores, spec);

    let train_cov_val: Vec<(f64, f64)> =
        tr_cov.iter().zip(&tr_pred).map(|(&c, &v)| (c, v)).collect();
    let test_cov_val_w: Vec<(f64, f64, f64)> = te_cov
        .iter()
        .zip(&te_pred)
        .zip(&weights)
        .map(|((&c, &v), &w)| (c, v, w))
        .collect();
    Ok(assemble_curve(
        covariate_name,
        target_name,
        lo,
        hi,
        n_bins,
        &train_cov_val,
        &test_cov_val_w,
    ))
}

/// Per-repeat retention bookkeeping for the two conditional variants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetainedFractions {
    pub train_marginal: Vec<RepeatDetail>,
    pub shared_support: Vec<RepeatDetail>,
}

/// Bundle of all scalar shift diagnostics for one (scenario, target).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShiftReport {
    pub scenario: ScenarioKind,
    pub target: Target,
    pub n_repeats: usize,
    pub balanced_accuracy: MeanSd,
    pub conditional_increase_train_marginal: MeanSd,
    pub conditional_increase_shared: MeanSd,
    pub retained_fractions: RetainedFractions,
}

/// Run the full scalar diagnostic suite on one split.
pub fn diagnose(
    ds: &Dataset,
    split: &ScenarioSplit,
    target: Target,
    seed: u64,
    n_repeats: usize,
    spec: &WeightSpec,
) -> Result<ShiftReport, ShiftError> {
    let train = pool(ds, &split.train, target);
    let test = pool(ds, &split.test, target);
    let balanced = covariate_shift_score(&train, &test, derive_seed(seed, 0), n_repeats)?;
    let tm = conditional_shift_train_marginal(&train, &test, derive_seed(seed, 1), n_repeats, spec)?;
    let sh = conditional_shift_shared(&train, &test, derive_seed(seed, 2), n_repeats, spec)?;
    Ok(ShiftReport {
        scenario: split.kind,
        target,
        n_repeats,
        balanced_accuracy: balanced,
        conditional_increase_train_marginal: tm.summary(),
        conditional_increase_shared: sh.summary(),
        retained_fractions: RetainedFractions {
            train_marginal: tm.per_repeat,
            shared_support: sh.per_repeat,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Pft, N_CONTINUOUS};
    use crate::rng::standard_normal;

    fn fv(continuous: [f64; N_CONTINUOUS]) -> FeatureVector {
        FeatureVector {
            continuous,
            pft: Pft::ENF,
        }
    }

    /// Gaussian pool with a per-feature mean offset and targets
    /// y = sign * (x0 + x1) + small noise.
    fn gaussian_pool(n: usize, offset: [f64; N_CONTINUOUS], sign: f64, seed: u64) -> PooledSample {
        let mut rng = rng_from_seed(seed);
        let mut out = PooledSample::default();
        for _ in 0..n {
            let mut x = [0.0; N_CONTINUOUS];
            for (j, slot) in x.iter_mut().enumerate() {
                *slot = offset[j] + standard_normal(&mut rng);
            }
            let y = sign * (x[0] + x[1]) + 0.05 * standard_normal(&mut rng);
            out.rows.push(fv(x));
            out.targets.push(y);
        }
        out
    }

    #[test]
    fn weight_formula_spot_checks() {
        let spec = WeightSpec::default();
        // s = 0.5 -> w = 1.
        assert_eq!(importance_weights(&[0.5], &spec), vec![1.0]);
        // s >= 1 - epsilon -> trimmed to 0.
        assert_eq!(importance_weights(&[0.95], &spec), vec![0.0]);
        assert_eq!(importance_weights(&[0.9], &spec), vec![0.0]);
        // Just inside support: kept.
        let w = importance_weights(&[0.8999999], &spec);
        assert!(w[0] > 0.0);

        // Hand oracle: weights {1,1,1,100} clipped at the 0.75 quantile.
        let spec75 = WeightSpec {
            epsilon: 0.1,
            clip_quantile: 0.75,
        };
        // Scores chosen so raw weights are {1,1,1,100}: s = 1/(1+w).
        let scores = [0.5, 0.5, 0.5, 1.0 / 101.0];
        assert_eq!(importance_weights(&scores, &spec75), vec![1.0; 4]);

        // Trimmed zeros are excluded from the clip population.
        let scores = [0.95, 0.5, 0.5];
        let w = importance_weights(&scores, &WeightSpec { epsilon: 0.1, clip_quantile: 1.0 });
        assert_eq!(w, vec![0.0, 1.0, 1.0]);

        // Train retention: s > epsilon.
        assert_eq!(
            train_retention(&[0.05, 0.1, 0.2], &spec),
            vec![false, false, true]
        );
    }

    #[test]
    fn shared_support_weights_algebra() {
        let spec = WeightSpec::default();
        // Equal pool sizes: alpha = 0.5, formulas reduce to 2s and 2(1-s).
        let s = [0.3, 0.6];
        let train_w = shared_support_weights(&s, false, 0.5, &spec);
        assert_eq!(train_w, vec![0.6, 1.2]);
        let test_w = shared_support_weights(&s, true, 0.5, &spec);
        assert_eq!(test_w, vec![1.4, 0.8]);

        // Trimming mirrors the main diagnostic on each side.
        let train_w = shared_support_weights(&[0.05, 0.5], false, 0.5, &spec);
        assert_eq!(train_w[0], 0.0);
        let test_w = shared_support_weights(&[0.95, 0.5], true, 0.5, &spec);
        assert_eq!(test_w[0], 0.0);
    }

    #[test]
    fn weighted_mean_constant_weights_is_unweighted() {
        let v = [1.0, 2.0, 6.0];
        let w = [0.7, 0.7, 0.7];
        let m = weighted_mean_of(&v, &w).unwrap();
        assert!((m - 3.0).abs() < 1e-12);
        assert_eq!(weighted_mean_of(&v, &[0.0; 3]), None);
    }

    #[test]
    fn covariate_score_requires_pool_size() {
        let small = gaussian_pool(5, [0.0; N_CONTINUOUS], 1.0, 1);
        let big = gaussian_pool(25, [0.0; N_CONTINUOUS], 1.0, 2);
        assert!(matches!(
            covariate_shift_score(&small, &big, 3, 2),
            Err(ShiftError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn separable_pools_score_high_balanced_accuracy() {
        let train = gaussian_pool(60, [0.0; N_CONTINUOUS], 1.0, 10);
        let mut offset = [0.0; N_CONTINUOUS];
        offset[0] = 10.0;
        let test = gaussian_pool(60, offset, 1.0, 11);
        let MeanSd { mean, sd } = covariate_shift_score(&train, &test, 4, 3).unwrap();
        assert!(mean >= 0.9, "mean {mean} sd {sd}");
        assert!(sd >= 0.0);
    }

    #[test]
    fn conditional_flip_detected_and_null_small() {
        let train = gaussian_pool(600, [0.0; N_CONTINUOUS], 1.0, 20);
        // Same covariate law, flipped conditional.
        let flipped = gaussian_pool(400, [0.0; N_CONTINUOUS], -1.0, 21);
        let spec = WeightSpec::default();
        let r = conditional_shift_train_marginal(&train, &flipped, 5, 2, &spec).unwrap();
        assert!(r.mean >= 50.0, "flip increase {}", r.mean);
        assert_eq!(r.per_repeat.len(), 2);

        let shared = conditional_shift_shared(&train, &flipped, 5, 2, &spec).unwrap();
        assert!(shared.mean >= 50.0, "shared flip increase {}", shared.mean);

        // Identical law re-draw: increase is small.
        let redraw = gaussian_pool(400, [0.0; N_CONTINUOUS], 1.0, 22);
        let null = conditional_shift_train_marginal(&train, &redraw, 6, 2, &spec).unwrap();
        assert!(null.mean.abs() < 25.0, "null increase {}", null.mean);

        // Pool size preconditions.
        let tiny = gaussian_pool(50, [0.0; N_CONTINUOUS], 1.0, 23);
        assert!(matches!(
            conditional_shift_train_marginal(&tiny, &redraw, 7, 2, &spec),
            Err(ShiftError::PoolTooSmall { .. })
        ));
        assert!(matches!(
            conditional_shift_shared(&train, &tiny, 7, 2, &spec),
            Err(ShiftError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn binned_curve_basics() {
        // Disjoint covariate ranges: EmptySupport before any model fit.
        let mut lo = PooledSample::default();
        let mut hi = PooledSample::default();
        for i in 0..40 {
            let mut a = [0.0; N_CONTINUOUS];
            a[0] = i as f64 / 40.0;
            let mut b = [0.0; N_CONTINUOUS];
            b[0] = 2.0 + i as f64 / 40.0;
            lo.rows.push(fv(a));
            lo.targets.push(1.0);
            hi.rows.push(fv(b));
            hi.targets.push(2.0);
        }
        let spec = WeightSpec::default();
        assert!(matches!(
            binned_curve(&lo, &hi, "TA", "et", 10, (5.0, 95.0), &spec, 1),
            Err(ShiftError::EmptySupport)
        ));

        assert!(matches!(
            binned_curve(&lo, &hi, "NOPE", "et", 10, (5.0, 95.0), &spec, 1),
            Err(ShiftError::UnknownCovariate(_))
        ));

        // Identical pools: curve defined, train means track targets.
        let train = gaussian_pool(300, [0.0; N_CONTINUOUS], 1.0, 30);
        let test = gaussian_pool(300, [0.0; N_CONTINUOUS], 1.0, 31);
        let curve = binned_curve(&train, &test, "TA", "et", 10, (5.0, 95.0), &spec, 2).unwrap();
        assert_eq!(curve.bin_edges.len(), 11);
        assert!(curve.bin_edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(curve.train_means.len(), 10);
        let defined = curve
            .train_means
            .iter()
            .zip(&curve.test_weighted_means)
            .filter(|(a, b)| a.is_some() && b.is_some())
            .count();
        assert!(defined >= 8, "only {defined} defined bins");
        // Means only defined when both sides retained rows.
        for ((t, e), (tn, en)) in curve
            .train_means
            .iter()
            .zip(&curve.test_weighted_means)
            .zip(&curve.bin_counts)
        {
            assert_eq!(t.is_some(), e.is_some());
            if t.is_some() {
                assert!(*tn >= 1 && *en >= 1);
            }
        }
        // Plot data skips undefined bins and uses bin centers.
        let (tr_series, te_series) = curve.plot_data();
        assert_eq!(tr_series.len(), defined);
        assert_eq!(te_series.len(), defined);
        let centers = curve.bin_centers();
        assert!(tr_series.iter().all(|(c, _)| centers.contains(c)));
    }

    #[test]
    fn model_curve_constant_regressors_give_constant_curves() {
        // Constant targets on both sides: f_train == f_test == c.
        let mut train = gaussian_pool(330, [0.0; N_CONTINUOUS], 1.0, 40);
        let mut test = gaussian_pool(330, [0.0; N_CONTINUOUS], 1.0, 41);
        for t in train.targets.iter_mut().chain(test.targets.iter_mut()) {
            *t = 7.5;
        }
        let spec = WeightSpec::default();
        let curve =
            model_based_curve(&train, &test, "TA", "et", 10, (5.0, 95.0), &spec, 42).unwrap();
        for (t, e) in curve.train_means.iter().zip(&curve.test_weighted_means) {
            if let (Some(t), Some(e)) = (t, e) {
                assert!((t - 7.5).abs() < 1e-9);
                assert!((e - 7.5).abs() < 1e-9);
            }
        }
        assert!(curve.train_means.iter().any(Option::is_some));

        let tiny = gaussian_pool(100, [0.0; N_CONTINUOUS], 1.0, 43);
        assert!(matches!(
            model_based_curve(&tiny, &test, "TA", "et", 10, (5.0, 95.0), &spec, 44),
            Err(ShiftError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn weight_spec_validation() {
        assert!(WeightSpec { epsilon: 0.0, clip_quantile: 0.99 }.validate().is_err());
        assert!(WeightSpec { epsilon: 0.5, clip_quantile: 0.99 }.validate().is_err());
        assert!(WeightSpec { epsilon: 0.1, clip_quantile: 0.0 }.validate().is_err());
        assert!(WeightSpec { epsilon: 0.1, clip_quantile: 1.0 }.validate().is_ok());
    }

    #[test]
    fn shared_support_mass_balances_for_calibrated_scores() {
        // Synthetic calibrated scores: feature x ~ N(m_pool, 1) with
        // m_train = 0, m_test = 1 and equal pool sizes gives
        // s(x) = sigmoid(x - 0.5) as the exact posterior.
        let mut rng = rng_from_seed(77);
        let n = 20_000;
        let spec = WeightSpec {
            epsilon: 1e-9, // no trimming: pure mass-balance check
            clip_quantile: 1.0,
        };
        let mut s_train = Vec::with_capacity(n);
        let mut s_test = Vec::with_capacity(n);
        for _ in 0..n {
            let x = standard_normal(&mut rng);
            s_train.push(crate::models::sigmoid(x - 0.5));
            let x = 1.0 + standard_normal(&mut rng);
            s_test.push(crate::models::sigmoid(x - 0.5));
        }
        let alpha = 0.5;
        let w_train = shared_support_weights(&s_train, false, alpha, &spec);
        let w_test = shared_support_weights(&s_test, true, alpha, &spec);
        let m_train = mean(&w_train);
        let m_test = mean(&w_test);
        // Both means estimate the same shared-support overlap mass
        // (2 ∫ p·q/(p+q) under equal pool sizes): they agree within
        // Monte-Carlo error and are strictly positive.
        assert!(
            (m_train - m_test).abs() < 0.05,
            "train {m_train} vs test {m_test}"
        );
        assert!(m_train > 0.3);
    }

    #[test]
    fn pool_collects_only_valid_rows() {
        use crate::dataset::testutil::{meta, record, ts};
        use crate::dataset::{Dataset, SiteId};
        let site = SiteId::new("AA-Aaa").unwrap();
        let records = vec![
            record(&site, ts(2019, 1, 1, 0), true, 1.0),
            record(&site, ts(2019, 1, 1, 1), false, 2.0),
            record(&site, ts(2020, 1, 1, 0), true, 3.0),
        ];
        let ds = Dataset::from_records(records, vec![meta(&site)]).unwrap();
        let domains: std::collections::BTreeSet<DomainKey> =
            [DomainKey::SiteYear(site.clone(), 2019)].into();
        let p = pool(&ds, &domains, Target::Et);
        assert_eq!(p.len(), 1);
        assert_eq!(p.targets, vec![1.0]);

        let all: std::collections::BTreeSet<DomainKey> = [DomainKey::Site(site)].into();
        let p = pool(&ds, &all, Target::Gpp);
        assert_eq!(p.targets, vec![2.0, 6.0]);
    }
}

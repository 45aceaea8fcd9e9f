//! Second-order gradient boosting with regression trees.
//!
//! One engine drives both the squared-loss regressors and the logistic
//! domain classifiers: each round fits a tree to per-row gradient/hessian
//! pairs and takes Newton leaf steps −G/(H+λ). Split search runs per
//! feature over histogram bins (256 quantile bins by default) or exact
//! sorted values; candidates are scanned in a fixed order and reduced
//! sequentially, so results do not depend on the rayon worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::ModelError;
use crate::rng::{fisher_yates_select, rng_from_seed};

/// Leaf regularizer; small enough that squared-loss leaves are sample
/// mean residuals for all practical counts.
const LAMBDA: f64 = 1e-6;
/// Minimum gain for a split to be kept; exact zero-gain splits are noise.
const MIN_GAIN: f64 = 1e-12;
/// Node-size cutoff below which split search runs single-threaded.
const PAR_WORK_THRESHOLD: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Logistic,
}

/// Split-candidate enumeration strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitMode {
    /// Quantile-binned histogram splits; `bins` total bins per feature.
    Histogram { bins: usize },
    /// Every distinct value is a candidate; for oracle tests and tiny data.
    Exact,
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Histogram { bins: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn (without replacement) per tree.
    pub subsample_rows: f64,
    /// Fraction of feature columns drawn per tree.
    pub subsample_cols: f64,
    pub loss: Loss,
    /// Stop when validation loss has not improved for this many rounds;
    /// `None` disables early stopping even when validation data is given.
    pub early_stopping_rounds: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub split_mode: SplitMode,
}

impl GbtConfig {
    /// Fixed mid-size configuration used wherever a single untuned GBT is
    /// called for (diagnostics, classifier probes).
    pub fn fixed(loss: Loss, seed: u64) -> Self {
        GbtConfig {
            n_trees: 400,
            max_depth: 6,
            learning_rate: 0.05,
            subsample_rows: 0.8,
            subsample_cols: 1.0,
            loss,
            early_stopping_rounds: Some(50),
            seed,
            split_mode: SplitMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.n_trees < 1 {
            return fail("n_trees must be >= 1");
        }
        if self.max_depth < 1 {
            return fail("max_depth must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        for (name, v) in [
            ("subsample_rows", self.subsample_rows),
            ("subsample_cols", self.subsample_cols),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        if let SplitMode::Histogram { bins } = self.split_mode {
            if !(2..=u16::MAX as usize).contains(&bins) {
                return fail("histogram bins must lie in [2, 65535]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Left branch iff x[feature] <= threshold.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, x: &impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

/// Per-round losses recorded during fitting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Round with the lowest validation loss, when validation was given.
    pub best_round: Option<usize>,
}

/// A fitted boosted ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub base_score: f64,
    trees: Vec<Tree>,
    pub trace: FitTrace,
}

impl GbtModel {
    /// Fit with optional validation data for early stopping.
    pub fn fit(
        x: &DesignMatrix,
        y: &[f64],
        val: Option<(&DesignMatrix, &[f64])>,
        config: &GbtConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let n = x.n_rows();
        if n < 2 || y.len() != n {
            return Err(ModelError::EmptyTraining);
        }
        if config.loss == Loss::Logistic {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(ModelError::InvalidConfig(
                    "logistic loss requires 0/1 labels".into(),
                ));
            }
            let pos = y.iter().filter(|&&v| v == 1.0).count();
            if pos == 0 || pos == n {
                return Err(ModelError::DegenerateLabels);
            }
        }

        let base_score = match config.loss {
            Loss::Squared => y.iter().sum::<f64>() / n as f64,
            Loss::Logistic => {
                let p = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
        };

        let binned = match config.split_mode {
            SplitMode::Histogram { bins } => Some(Binned::build(x, bins)),
            SplitMode::Exact => None,
        };

        let p = x.n_cols();
        let mut scores = vec![base_score; n];
        let mut val_scores: Option<Vec<f64>> = val.map(|(vx, _)| vec![base_score; vx.n_rows()]);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut rng = rng_from_seed(config.seed);
        let mut trees: Vec<Tree> = Vec::new();
        let mut trace = FitTrace::default();
        let mut best: Option<(usize, f64)> = None;

        for round in 0..config.n_trees {
            grad_hess(config.loss, &scores, y, &mut g, &mut h);

            let rows: Vec<u32> = if config.subsample_rows < 1.0 {
                sample_indices(n, config.subsample_rows, &mut rng)
            } else {
                (0..n as u32).collect()
            };
            let cols: Vec<usize> = if config.subsample_cols < 1.0 {
                sample_indices(p, config.subsample_cols, &mut rng)
                    .into_iter()
                    .map(|c| c as usize)
                    .collect()
            } else {
                (0..p).collect()
            };

            let tree = grow_tree(x, binned.as_ref(), &g, &h, rows, &cols, config.max_depth);

            let lr = config.learning_rate;
            scores.par_iter_mut().enumerate().for_each(|(i, s)| {
                *s += lr * tree.eval(&|feat| x.value(i, feat));
            });
            if let (Some(vs), Some((vx, _))) = (val_scores.as_mut(), val) {
                vs.par_iter_mut().enumerate().for_each(|(i, s)| {
                    *s += lr * tree.eval(&|feat| vx.value(i, feat));
                });
            }
            trees.push(tree);
            trace.train_loss.push(loss_of(config.loss, &scores, y));

            if let (Some(vs), Some((_, vy))) = (val_scores.as_ref(), val) {
                let vl = loss_of(config.loss, vs, vy);
                trace.val_loss.push(vl);
                if best.is_none_or(|(_, b)| vl < b) {
                    best = Some((round, vl));
                }
                if let Some(patience) = config.early_stopping_rounds {
                    if round - best.unwrap().0 >= patience {
                        break;
                    }
                }
            }
        }

        if let Some((best_round, _)) = best {
            trace.best_round = Some(best_round);
            if config.early_stopping_rounds.is_some() {
                trees.truncate(best_round + 1);
            }
        }

        Ok(GbtModel {
            config: config.clone(),
            base_score,
            trees,
            trace,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_splits(&self) -> usize {
        self.trees.iter().map(Tree::n_splits).sum()
    }

    /// Raw additive score (log-odds under logistic loss).
    pub fn predict_raw_row(&self, row: &[f64]) -> f64 {
        let accessor = |feat: usize| row[feat];
        self.base_score
            + self.config.learning_rate
                * self
                    .trees
                    .iter()
                    .map(|t| t.eval(&accessor))
                    .sum::<f64>()
    }

    /// Response-scale prediction: identity for squared loss, probability
    /// for logistic loss. Always finite; logistic output lies in (0,1).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let raw = self.predict_raw_row(row);
        match self.config.loss {
            Loss::Squared => raw,
            Loss::Logistic => sigmoid(raw),
        }
    }

    pub fn predict_design(&self, x: &DesignMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                let raw = self.base_score
                    + self.config.learning_rate
                        * self
                            .trees
                            .iter()
                            .map(|t| t.eval(&|feat| x.value(i, feat)))
                            .sum::<f64>();
                match self.config.loss {
                    Loss::Squared => raw,
                    Loss::Logistic => sigmoid(raw),
                }
            })
            .collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn grad_hess(loss: Loss, scores: &[f64], y: &[f64], g: &mut [f64], h: &mut [f64]) {
    match loss {
        Loss::Squared => {
            for i in 0..y.len() {
                g[i] = scores[i] - y[i];
                h[i] = 1.0;
            }
        }
        Loss::Logistic => {
            for i in 0..y.len() {
                let p = sigmoid(scores[i]);
                g[i] = p - y[i];
                h[i] = (p * (1.0 - p)).max(1e-16);
            }
        }
    }
}

fn loss_of(loss: Loss, scores: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match loss {
        Loss::Squared => {
            scores
                .iter()
                .zip(y)
                .map(|(s, t)| (s - t) * (s - t))
                .sum::<f64>()
                / n
        }
        Loss::Logistic => {
            scores
                .iter()
                .zip(y)
                .map(|(s, t)| {
                    let p = sigmoid(*s).clamp(1e-12, 1.0 - 1e-12);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Draw k = round(n·ratio) clamped to [1, n] indices, returned sorted so
/// downstream accumulation order is stable.
fn sample_indices(n: usize, ratio: f64, rng: &mut crate::rng::EngineRng) -> Vec<u32> {
    let k = ((n as f64 * ratio).round() as usize).clamp(1, n);
    let mut idx: Vec<u32> = (0..n as u32).collect();
    fisher_yates_select(&mut idx, k, rng);
    let mut sel = idx[..k].to_vec();
    sel.sort_unstable();
    sel
}

/// Precomputed quantile bins: per-feature cut values and per-row codes.
/// Row r of feature f falls left of cut b iff codes[f][r] <= b.
struct Binned {
    cuts: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
}

impl Binned {
    fn build(x: &DesignMatrix, bins: usize) -> Self {
        let per_feature: Vec<(Vec<f64>, Vec<u16>)> = (0..x.n_cols())
            .into_par_iter()
            .map(|j| {
                let col = x.column(j);
                let cuts = quantile_cuts(col, bins);
                let codes = col
                    .iter()
                    .map(|v| cuts.partition_point(|c| c < v) as u16)
                    .collect();
                (cuts, codes)
            })
            .collect();
        let mut cuts = Vec::with_capacity(per_feature.len());
        let mut codes = Vec::with_capacity(per_feature.len());
        for (c, k) in per_feature {
            cuts.push(c);
            codes.push(k);
        }
        Binned { cuts, codes }
    }
}

/// Cut values at the upper edges of `bins` equal-count chunks, deduped,
/// max value dropped (a cut at the max would leave the right side empty).
/// Columns with <= `bins` distinct values get every value but the max,
/// which makes histogram splits exact on small data.
fn quantile_cuts(col: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = Vec::new();
    for k in 1..bins {
        let idx = k * n / bins;
        if idx == 0 {
            continue;
        }
        let c = sorted[idx - 1];
        if cuts.last() != Some(&c) {
            cuts.push(c);
        }
    }
    while cuts.last().is_some() && cuts.last() == sorted.last() {
        cuts.pop();
    }
    cuts
}

struct NodeTask {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
}

fn grow_tree(
    x: &DesignMatrix,
    binned: Option<&Binned>,
    g: &[f64],
    h: &[f64],
    root_rows: Vec<u32>,
    cols: &[usize],
    max_depth: usize,
) -> Tree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stack = vec![NodeTask {
        node: 0,
        rows: root_rows,
        depth: 0,
    }];

    while let Some(task) = stack.pop() {
        let rows = &task.rows;
        let mut gsum = 0.0;
        let mut hsum = 0.0;
        for &r in rows {
            gsum += g[r as usize];
            hsum += h[r as usize];
        }

        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes[task.node] = Node::Leaf {
                value: -gsum / (hsum + LAMBDA),
            };
        };

        if task.depth >= max_depth || rows.len() < 2 {
            make_leaf(&mut nodes);
            continue;
        }

        let best = best_split(x, binned, g, h, rows, cols, gsum, hsum);
        let Some((_, feature, threshold)) = best else {
            make_leaf(&mut nodes);
            continue;
        };

        // Stable partition keeps per-node accumulation order deterministic.
        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        for &r in rows {
            if x.value(r as usize, feature) <= threshold {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());

        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let right = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[task.node] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        stack.push(NodeTask {
            node: left,
            rows: left_rows,
            depth: task.depth + 1,
        });
        stack.push(NodeTask {
            node: right,
            rows: right_rows,
            depth: task.depth + 1,
        });
    }

    Tree { nodes }
}

/// Best (gain, feature, threshold) over the candidate columns, or None
/// when no split clears MIN_GAIN. Ties keep the earliest feature in
/// `cols` order and the smallest threshold within a feature, so the
/// result is independent of parallel scheduling.
#[allow(clippy::too_many_arguments)]
fn best_split(
    x: &DesignMatrix,
    binned: Option<&Binned>,
    g: &[f64],
    h: &[f64],
    rows: &[u32],
    cols: &[usize],
    gsum: f64,
    hsum: f64,
) -> Option<(f64, usize, f64)> {
    let parent = gsum * gsum / (hsum + LAMBDA);
    let per_col = |&col: &usize| -> Option<(f64, f64)> {
        match binned {
            Some(b) => best_split_hist(&b.codes[col], &b.cuts[col], g, h, rows, gsum, hsum, parent),
            None => best_split_exact(x.column(col), g, h, rows, gsum, hsum, parent),
        }
    };

    let candidates: Vec<Option<(f64, f64)>> =
        if rows.len().saturating_mul(cols.len()) >= PAR_WORK_THRESHOLD {
            cols.par_iter().map(per_col).collect()
        } else {
            cols.iter().map(per_col).collect()
        };

    let mut best: Option<(f64, usize, f64)> = None;
    for (slot, candidate) in candidates.into_iter().enumerate() {
        if let Some((gain, threshold)) = candidate {
            if best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, cols[slot], threshold));
            }
        }
    }
    best.filter(|(gain, _, _)| *gain > MIN_GAIN)
}

#[allow(clippy::too_many_arguments)]
fn best_split_hist(
    codes: &[u16],
    cuts: &[f64],
    g: &[f64],
    h: &[f64],
    rows: &[u32],
    gsum: f64,
    hsum: f64,
    parent: f64,
) -> Option<(f64, f64)> {
    if cuts.is_empty() {
        return None;
    }
    let nb = cuts.len() + 1;
    let mut hist_g = vec![0.0; nb];
    let mut hist_h = vec![0.0; nb];
    let mut hist_n = vec![0u32; nb];
    for &r in rows {
        let c = codes[r as usize] as usize;
        hist_g[c] += g[r as usize];
        hist_h[c] += h[r as usize];
        hist_n[c] += 1;
    }

    let total = rows.len() as u32;
    let mut gl = 0.0;
    let mut hl = 0.0;
    let mut nl = 0u32;
    let mut best: Option<(f64, f64)> = None;
    for (b, &cut) in cuts.iter().enumerate() {
        gl += hist_g[b];
        hl += hist_h[b];
        nl += hist_n[b];
        if nl == 0 {
            continue;
        }
        if nl == total {
            break;
        }
        let gr = gsum - gl;
        let hr = hsum - hl;
        let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent;
        if best.is_none_or(|(bg, _)| gain > bg) {
            best = Some((gain, cut));
        }
    }
    best
}

fn best_split_exact(
    col: &[f64],
    g: &[f64],
    h: &[f64],
    rows: &[u32],
    gsum: f64,
    hsum: f64,
    parent: f64,
) -> Option<(f64, f64)> {
    let mut vals: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|&r| (col[r as usize], g[r as usize], h[r as usize]))
        .collect();
    vals.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let n = vals.len();
    let mut gl = 0.0;
    let mut hl = 0.0;
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < n {
        let v = vals[i].0;
        while i < n && vals[i].0 == v {
            gl += vals[i].1;
            hl += vals[i].2;
            i += 1;
        }
        if i == n {
            break;
        }
        let gr = gsum - gl;
        let hr = hsum - hl;
        let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent;
        if best.is_none_or(|(bg, _)| gain > bg) {
            best = Some((gain, v));
        }
    }
    best
}

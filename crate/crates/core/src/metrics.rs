//! Domain-level RMSE, quantile summaries, skill scores, CDF exports, and
//! the benchmark report grid.
//!
//! Every evaluation reduces to one RMSE per test domain; cells summarize
//! those with linear-interpolation quantiles (median / q90), and skill is
//! `1 − E^m / E^0` against a reference model, averaged without weights
//! over the cells present for both models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate_for_scenario, AggregatedPairs, Scale};
use crate::dataset::{Dataset, Target};
use crate::models::PredictionSet;
use crate::scenarios::{DomainKey, ScenarioKind, ScenarioSplit};
use crate::stats::interp_quantile;

/// Cells supported by fewer domains than this carry a low-support flag.
pub const LOW_SUPPORT_MIN_DOMAINS: usize = 3;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("domain has no retained pairs")]
    EmptyDomain,
    #[error("no domain errors to summarize")]
    EmptySet,
    #[error("reference error is zero in cell ({scenario}, {scale})")]
    ZeroReference { scenario: ScenarioKind, scale: Scale },
    #[error("cell mismatch: {0}")]
    CellMismatch(String),
    #[error("model {0:?} covers no test domain at any scale")]
    NoCoverage(String),
    #[error("reference model {0:?} not among the prediction sets")]
    ReferenceMissing(String),
}

/// Summary statistic over domain-level errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Median,
    Q90,
}

impl Statistic {
    pub const ALL: [Statistic; 2] = [Statistic::Median, Statistic::Q90];

    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::Median => "median",
            Statistic::Q90 => "q90",
        }
    }

    fn q(&self) -> f64 {
        match self {
            Statistic::Median => 0.5,
            Statistic::Q90 => 0.9,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// RMSE of one model over one test domain at one scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainError {
    pub domain: DomainKey,
    pub scenario: ScenarioKind,
    pub scale: Scale,
    pub model_name: String,
    pub rmse: f64,
    pub n_pairs: usize,
}

/// One grid cell: a statistic over the domain errors of one
/// (scenario, scale, model).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricCell {
    pub scenario: ScenarioKind,
    pub scale: Scale,
    pub model_name: String,
    pub statistic: Statistic,
    pub value: f64,
    pub n_domains: usize,
}

/// Skill of one model against the reference, per cell and overall.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkillRow {
    pub model_name: String,
    pub statistic: Statistic,
    /// Keyed by (scenario, scale), over cells present for both models.
    #[serde(with = "per_cell_serde")]
    pub per_cell: BTreeMap<(ScenarioKind, Scale), f64>,
    pub overall: f64,
}

/// JSON maps need string keys; store per-cell skills as entry triples.
mod per_cell_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(ScenarioKind, Scale), f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<(ScenarioKind, Scale, f64)> =
            map.iter().map(|(&(b, c), &v)| (b, c, v)).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(ScenarioKind, Scale), f64>, D::Error> {
        let entries = Vec::<(ScenarioKind, Scale, f64)>::deserialize(d)?;
        Ok(entries.into_iter().map(|(b, c, v)| ((b, c), v)).collect())
    }
}

/// Eq. (1): root of the mean squared (prediction − truth) over a domain.
pub fn domain_rmse(
    pairs: &AggregatedPairs,
    scenario: ScenarioKind,
    model_name: &str,
) -> Result<DomainError, MetricError> {
    if pairs.pairs.is_empty() {
        return Err(MetricError::EmptyDomain);
    }
    let n = pairs.pairs.len();
    let mse = pairs
        .pairs
        .iter()
        .map(|(_, t, p)| (p - t) * (p - t))
        .sum::<f64>()
        / n as f64;
    Ok(DomainError {
        domain: pairs.domain.clone(),
        scenario,
        scale: pairs.scale,
        model_name: model_name.to_string(),
        rmse: mse.sqrt(),
        n_pairs: n,
    })
}

/// Linear-interpolation quantile of the domain RMSE values. All errors
/// must describe the same (scenario, scale, model).
pub fn summarize(errors: &[DomainError], statistic: Statistic) -> Result<MetricCell, MetricError> {
    let first = errors.first().ok_or(MetricError::EmptySet)?;
    debug_assert!(errors.iter().all(|e| e.scenario == first.scenario
        && e.scale == first.scale
        && e.model_name == first.model_name));
    let raw: Vec<f64> = errors.iter().map(|e| e.rmse).collect();
    let values = crate::stats::sorted_copy(&raw);
    Ok(MetricCell {
        scenario: first.scenario,
        scale: first.scale,
        model_name: first.model_name.clone(),
        statistic,
        value: interp_quantile(&values, statistic.q()),
        n_domains: errors.len(),
    })
}

/// Per-cell skill `1 − E^m/E^0` over the cells present for both models,
/// plus their unweighted mean. Both inputs must carry one statistic.
pub fn skill(model_cells: &[MetricCell], reference_cells: &[MetricCell]) -> Result<SkillRow, MetricError> {
    fn index(cells: &[MetricCell]) -> Result<BTreeMap<(ScenarioKind, Scale), f64>, MetricError> {
        let mut map = BTreeMap::new();
        for c in cells {
            if map.insert((c.scenario, c.scale), c.value).is_some() {
                return Err(MetricError::CellMismatch(format!(
                    "duplicate cell ({}, {})",
                    c.scenario, c.scale
                )));
            }
        }
        Ok(map)
    }
    let first = model_cells.first().ok_or(MetricError::EmptySet)?;
    let statistic = first.statistic;
    if model_cells
        .iter()
        .chain(reference_cells)
        .any(|c| c.statistic != statistic)
    {
        return Err(MetricError::CellMismatch(
            "mixed statistics in one skill row".into(),
        ));
    }
    let model = index(model_cells)?;
    let reference = index(reference_cells)?;

    let mut per_cell = BTreeMap::new();
    for (key, e_m) in &model {
        if let Some(e_0) = reference.get(key) {
            if *e_0 == 0.0 {
                return Err(MetricError::ZeroReference {
                    scenario: key.0,
                    scale: key.1,
                });
            }
            per_cell.insert(*key, 1.0 - e_m / e_0);
        }
    }
    if per_cell.is_empty() {
        return Err(MetricError::CellMismatch(
            "no (scenario, scale) cell shared with the reference".into(),
        ));
    }
    let overall = per_cell.values().sum::<f64>() / per_cell.len() as f64;
    Ok(SkillRow {
        model_name: first.model_name.clone(),
        statistic,
        per_cell,
        overall,
    })
}

/// Empirical CDF support points: sorted values with CDF(xᵢ) = i/n and
/// duplicates collapsed to their largest step (right-continuity).
pub fn cdf_export(errors: &[DomainError]) -> Result<Vec<(f64, f64)>, MetricError> {
    if errors.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let mut values: Vec<f64> = errors.iter().map(|e| e.rmse).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in values.into_iter().enumerate() {
        let cdf = (i + 1) as f64 / n as f64;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = cdf,
            _ => out.push((v, cdf)),
        }
    }
    Ok(out)
}

/// A cell that exists for the reference model but not for this model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsentCell {
    pub scenario: ScenarioKind,
    pub scale: Scale,
    pub model_name: String,
}

/// Low-support flag: a cell built from fewer than 3 domains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellFlag {
    pub scenario: ScenarioKind,
    pub scale: Scale,
    pub model_name: String,
    pub n_domains: usize,
}

/// The full benchmark bundle for one target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub target: Target,
    pub reference_model: String,
    pub statistics: Vec<Statistic>,
    pub cells: Vec<MetricCell>,
    pub skills: Vec<SkillRow>,
    /// Cells with fewer than 3 contributing domains.
    pub low_support: Vec<CellFlag>,
    /// (scenario, scale) cells missing for a model but present for the
    /// reference; reported, never imputed.
    pub absent: Vec<AbsentCell>,
    /// Domain errors behind every cell, for CDF exports and audits.
    pub domain_errors: Vec<DomainError>,
}

impl BenchmarkReport {
    pub fn cell(
        &self,
        scenario: ScenarioKind,
        scale: Scale,
        model_name: &str,
        statistic: Statistic,
    ) -> Option<&MetricCell> {
        self.cells.iter().find(|c| {
            c.scenario == scenario
                && c.scale == scale
                && c.model_name == model_name
                && c.statistic == statistic
        })
    }

    pub fn skill_row(&self, model_name: &str, statistic: Statistic) -> Option<&SkillRow> {
        self.skills
            .iter()
            .find(|s| s.model_name == model_name && s.statistic == statistic)
    }

    pub fn errors_for(
        &self,
        scenario: ScenarioKind,
        scale: Scale,
        model_name: &str,
    ) -> Vec<&DomainError> {
        self.domain_errors
            .iter()
            .filter(|e| e.scenario == scenario && e.scale == scale && e.model_name == model_name)
            .collect()
    }

    /// One CSV per statistic: rows = models, columns = (scenario, scale)
    /// in grid order. `display_scale` multiplies values for readability
    /// (stored values stay raw).
    pub fn emit_table_csv<W: Write>(
        &self,
        statistic: Statistic,
        display_scale: f64,
        mut out: W,
    ) -> std::io::Result<()> {
        let mut columns: Vec<(ScenarioKind, Scale)> = Vec::new();
        let mut models: Vec<&str> = Vec::new();
        for c in &self.cells {
            if c.statistic != statistic {
                continue;
            }
            if !columns.contains(&(c.scenario, c.scale)) {
                columns.push((c.scenario, c.scale));
            }
            if !models.contains(&c.model_name.as_str()) {
                models.push(&c.model_name);
            }
        }
        columns.sort();
        write!(out, "model")?;
        for (scenario, scale) in &columns {
            write!(out, ",{scenario}:{scale}")?;
        }
        writeln!(out, ",overall_skill")?;
        for model in models {
            write!(out, "{model}")?;
            for (scenario, scale) in &columns {
                match self.cell(*scenario, *scale, model, statistic) {
                    Some(c) => write!(out, ",{}", c.value * display_scale)?,
                    None => write!(out, ",")?,
                }
            }
            match self.skill_row(model, statistic) {
                Some(s) => writeln!(out, ",{}", s.overall)?,
                None => writeln!(out, ",")?,
            }
        }
        Ok(())
    }
}

/// Two-column CDF CSV for one (scenario, scale, model).
pub fn emit_cdf_csv<W: Write>(points: &[(f64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "rmse,cdf")?;
    for (x, c) in points {
        writeln!(out, "{x},{c}")?;
    }
    Ok(())
}

/// Per-scenario prediction sets, as consumed by [`build_report`].
pub type PredSets = Vec<(ScenarioKind, PredictionSet)>;

/// Build the full (scenario × scale × model × statistic) grid plus skill
/// rows against `reference_model`.
///
/// Models are trained per scenario, so prediction sets arrive as
/// (scenario kind, predictions) pairs; sets sharing a model name form
/// one row of the grid and one skill row spanning their scenarios.
pub fn build_report(
    ds: &Dataset,
    splits: &[ScenarioSplit],
    sets: &[(ScenarioKind, PredictionSet)],
    target: Target,
    statistics: &[Statistic],
    reference_model: &str,
) -> Result<BenchmarkReport, MetricError> {
    if !sets.iter().any(|(_, p)| p.model_name == reference_model) {
        return Err(MetricError::ReferenceMissing(reference_model.to_string()));
    }
    let mut model_names: Vec<&str> = Vec::new();
    for (_, p) in sets {
        if !model_names.contains(&p.model_name.as_str()) {
            model_names.push(&p.model_name);
        }
    }

    // Deterministic task list; heavy aggregation fans out over it.
    let mut tasks: Vec<(&ScenarioSplit, &PredictionSet, Scale)> = Vec::new();
    for split in splits {
        for (kind, p) in sets {
            if *kind != split.kind {
                continue;
            }
            for scale in Scale::ALL {
                tasks.push((split, p, scale));
            }
        }
    }
    let results: Vec<Vec<DomainError>> = tasks
        .par_iter()
        .map(|(split, p, scale)| {
            aggregate_for_scenario(ds, p, target, split.kind, &split.test, *scale)
                .iter()
                .map(|group| {
                    domain_rmse(group, split.kind, &p.model_name).expect("non-empty group")
                })
                .collect()
        })
        .collect();

    let mut domain_errors: Vec<DomainError> = Vec::new();
    let mut cells: Vec<MetricCell> = Vec::new();
    let mut covered: BTreeMap<(ScenarioKind, &str), bool> = tasks
        .iter()
        .map(|(split, p, _)| ((split.kind, p.model_name.as_str()), false))
        .collect();
    let mut present: BTreeSet<(ScenarioKind, Scale, &str)> = BTreeSet::new();
    for ((split, p, scale), errors) in tasks.iter().zip(results) {
        if errors.is_empty() {
            continue;
        }
        *covered.get_mut(&(split.kind, p.model_name.as_str())).unwrap() = true;
        present.insert((split.kind, *scale, p.model_name.as_str()));
        for statistic in statistics {
            cells.push(summarize(&errors, *statistic).expect("non-empty"));
        }
        domain_errors.extend(errors);
    }
    for ((kind, model), ok) in covered {
        if !ok {
            return Err(MetricError::NoCoverage(format!("{model} ({kind})")));
        }
    }

    // Reference-present cells missing for another model.
    let mut absent = Vec::new();
    for &(scenario, scale, model) in &present {
        if model == reference_model {
            for name in &model_names {
                if !present.contains(&(scenario, scale, name)) {
                    absent.push(AbsentCell {
                        scenario,
                        scale,
                        model_name: name.to_string(),
                    });
                }
            }
        }
    }
    absent.sort_by(|a, b| {
        (a.scenario, a.scale, &a.model_name).cmp(&(b.scenario, b.scale, &b.model_name))
    });

    let low_support = cells
        .iter()
        .filter(|c| c.statistic == statistics[0] && c.n_domains < LOW_SUPPORT_MIN_DOMAINS)
        .map(|c| CellFlag {
            scenario: c.scenario,
            scale: c.scale,
            model_name: c.model_name.clone(),
            n_domains: c.n_domains,
        })
        .collect();

    let mut skills = Vec::new();
    for statistic in statistics {
        let reference_cells: Vec<MetricCell> = cells
            .iter()
            .filter(|c| c.statistic == *statistic && c.model_name == reference_model)
            .cloned()
            .collect();
        for name in &model_names {
            let model_cells: Vec<MetricCell> = cells
                .iter()
                .filter(|c| c.statistic == *statistic && c.model_name == *name)
                .cloned()
                .collect();
            skills.push(skill(&model_cells, &reference_cells)?);
        }
    }

    cells.sort_by(|a, b| {
        (a.scenario, a.scale, &a.model_name, a.statistic)
            .cmp(&(b.scenario, b.scale, &b.model_name, b.statistic))
    });
    Ok(BenchmarkReport {
        target,
        reference_model: reference_model.to_string(),
        statistics: statistics.to_vec(),
        cells,
        skills,
        low_support,
        absent,
        domain_errors,
    })
}

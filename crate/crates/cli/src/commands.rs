//! The eight subcommands. Each prints one JSON document on stdout and
//! writes its artifacts under the output root via atomic renames.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use fluxbench::dataset::{
    emit, ingest, ColumnSchema, Dataset, HourlyRecord, SiteId, Target,
};
use fluxbench::metrics::{
    build_report, cdf_export, emit_cdf_csv, BenchmarkReport, DomainError, PredSets, Statistic,
};
use fluxbench::models::{
    export_predictions, fit_constant, fit_ols, import_predictions, load_model, predict_records,
    tune_gbt, ModelArtifact, ModelFile, Predictor, TunerSpec, MODEL_FILE_VERSION,
};
use fluxbench::rng::derive_seed;
use fluxbench::scenarios::{build, ScenarioKind, ScenarioSpec, ScenarioSplit};
use fluxbench::shiftdiag::{
    binned_curve, diagnose as diagnose_split, model_based_curve, pool, RelationshipCurve,
    ShiftError,
};
use fluxbench::synthgen::{generate, SynthSpec};

use crate::config::RunConfig;
use crate::errors::CliError;
use crate::fsio::{write_atomic, write_json, Layout};

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn io_at(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ingest the configured dataset; row-level rejects are counted on
/// stderr but never fatal (fatal problems surface as dataset errors).
fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ingested = ingest(&cfg.run.data, &ColumnSchema::default())?;
    if !ingested.rejects.is_empty() {
        eprintln!(
            "{}",
            json!({"warning": {
                "kind": "rejected_rows",
                "count": ingested.rejects.len(),
                "path": cfg.run.data,
            }})
        );
    }
    Ok(ingested.dataset)
}

fn build_split(ds: &Dataset, cfg: &RunConfig, kind: ScenarioKind) -> Result<ScenarioSplit, CliError> {
    let spec = ScenarioSpec {
        kind,
        seed: cfg.scenarios.seed,
        n_test: cfg.scenarios.n_test_sites,
        n_val_sites: cfg.scenarios.n_val_sites,
    };
    Ok(build(ds, &spec)?)
}

fn load_split(layout: &Layout, kind: ScenarioKind) -> Result<ScenarioSplit, CliError> {
    let path = layout.split(kind);
    let text = std::fs::read_to_string(&path).map_err(|source| {
        io_at(
            &path,
            std::io::Error::new(
                source.kind(),
                format!("{source} (run `fluxbench split` first)"),
            ),
        )
    })?;
    let split: ScenarioSplit = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if split.kind != kind {
        return Err(CliError::Config(format!(
            "{}: contains a {} split, expected {kind}",
            path.display(),
            split.kind
        )));
    }
    Ok(split)
}

// ---------------------------------------------------------------- synth

#[derive(Args)]
pub struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar path (default: `<out stem>.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    pub n_sites: usize,
    #[arg(long, default_value_t = 2015)]
    pub start_year: i32,
    #[arg(long, default_value_t = 2020)]
    pub end_year: i32,
    #[arg(long, default_value_t = 24)]
    pub hours_per_day: u32,
    /// Probability that an hour fails quality control.
    #[arg(long, default_value_t = 0.1)]
    pub qc_dropout: f64,
    /// Standard deviation of per-site covariate means.
    #[arg(long, default_value_t = 0.5)]
    pub site_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub seasonal_amplitude: f64,
    /// Noise added to every target.
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    /// Comma-separated sites (e.g. SY-003) whose covariates shift.
    #[arg(long, value_delimiter = ',')]
    pub shift_sites: Vec<String>,
    /// Continuous feature index the covariate shift displaces.
    #[arg(long, default_value_t = 0)]
    pub shift_feature: usize,
    /// Magnitude of the covariate shift, in feature standard deviations.
    #[arg(long, default_value_t = 0.0)]
    pub shift_sd: f64,
    /// Comma-separated sites whose covariate-target relationship flips.
    #[arg(long, value_delimiter = ',')]
    pub flip_sites: Vec<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn parse_sites(names: &[String]) -> Result<BTreeSet<SiteId>, CliError> {
    names
        .iter()
        .map(|n| SiteId::new(n).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = SynthSpec::new(args.n_sites, args.seed);
    spec.years = (args.start_year, args.end_year);
    spec.hours_per_day = args.hours_per_day;
    spec.qc_dropout = args.qc_dropout;
    spec.covariate.site_spread = args.site_spread;
    spec.covariate.seasonal_amplitude = args.seasonal_amplitude;
    spec.covariate.shift_feature = args.shift_feature;
    spec.covariate.shift_sd = args.shift_sd;
    spec.covariate.shift_sites = parse_sites(&args.shift_sites)?;
    spec.conditional.noise_sd = args.noise_sd;
    spec.conditional.flip_sites = parse_sites(&args.flip_sites)?;

    let (ds, truth) = generate(&spec)?;
    let mut csv = Vec::new();
    emit(&ds, &ColumnSchema::default(), &mut csv)?;
    write_atomic(&args.out, &csv)?;
    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| args.out.with_extension("truth.json"));
    write_json(&truth_path, &truth)?;

    let qc_valid = ds.iter_records().filter(|r| r.is_valid()).count();
    print_json(&json!({
        "csv": args.out,
        "truth": truth_path,
        "sites": ds.n_sites(),
        "records": ds.n_records(),
        "qc_valid": qc_valid,
    }));
    Ok(())
}

// --------------------------------------------------------- ingest-check

#[derive(Args)]
pub struct IngestCheckArgs {
    /// Dataset CSV to validate.
    #[arg(long)]
    pub data: PathBuf,
    /// How many rejected rows to list (all are counted).
    #[arg(long, default_value_t = 20)]
    pub max_rejects: usize,
}

pub fn ingest_check(args: IngestCheckArgs) -> Result<(), CliError> {
    let ingested = ingest(&args.data, &ColumnSchema::default())?;
    let ds = &ingested.dataset;
    let qc_valid = ds.iter_records().filter(|r| r.is_valid()).count();
    let sample: Vec<_> = ingested
        .rejects
        .iter()
        .take(args.max_rejects)
        .map(|r| json!({"row": r.row, "column": r.column, "message": r.message}))
        .collect();
    print_json(&json!({
        "path": args.data,
        "sites": ds.n_sites(),
        "records": ds.n_records(),
        "qc_valid": qc_valid,
        "years": ds.year_range().map(|(a, b)| json!([a, b])),
        "rejected_rows": ingested.rejects.len(),
        "rejects": sample,
    }));
    Ok(())
}

// ---------------------------------------------------------------- split

#[derive(Args)]
pub struct SplitArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

pub fn split(args: SplitArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let mut rows = Vec::new();
    for kind in &cfg.scenarios.kinds {
        let split = build_split(&ds, &cfg, *kind)?;
        let path = layout.split(*kind);
        write_json(&path, &split)?;
        rows.push(json!({
            "scenario": kind,
            "path": path,
            "train": split.train.len(),
            "validation": split.validation.len(),
            "test": split.test.len(),
            "seed": split.seed,
            "prng": split.prng,
        }));
    }
    print_json(&json!({ "splits": rows }));
    Ok(())
}

// ------------------------------------------------------------- diagnose

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// temporal | spatial | temperature
    #[arg(long)]
    pub scenario: ScenarioKind,
    /// Covariate to curve; repeatable. Defaults to `[diagnostics] curves`.
    #[arg(long = "curve")]
    pub curves: Vec<String>,
    /// Override `[diagnostics] n_repeats`.
    #[arg(long)]
    pub repeats: Option<usize>,
}

/// A curve request either yields a curve or records why the data could
/// not support one; only malformed requests are fatal.
#[derive(serde::Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum CurveOutcome {
    Ok { curve: RelationshipCurve },
    Skipped { reason: String },
}

fn curve_csv(curve: &RelationshipCurve) -> String {
    let mut out =
        String::from("bin_lo,bin_hi,bin_center,train_mean,test_weighted_mean,train_n,test_n\n");
    let centers = curve.bin_centers();
    let cell = |m: &Option<f64>| m.map(|v| v.to_string()).unwrap_or_default();
    for (i, center) in centers.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{center},{},{},{},{}\n",
            curve.bin_edges[i],
            curve.bin_edges[i + 1],
            cell(&curve.train_means[i]),
            cell(&curve.test_weighted_means[i]),
            curve.bin_counts[i].0,
            curve.bin_counts[i].1,
        ));
    }
    out
}

pub fn diagnose(args: DiagnoseArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let target = cfg.target()?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let split = load_split(&layout, args.scenario)?;
    let weight_spec = cfg.weights.spec();
    let repeats = args.repeats.unwrap_or(cfg.diagnostics.n_repeats);
    if repeats == 0 {
        return Err(CliError::Config("--repeats must be at least 1".into()));
    }

    let report = diagnose_split(&ds, &split, target, cfg.diagnostics.seed, repeats, &weight_spec)?;
    let report_path = layout.diagnostics(args.scenario, target);
    write_json(&report_path, &report)?;

    let covariates = if args.curves.is_empty() {
        cfg.diagnostics.curves.clone()
    } else {
        args.curves.clone()
    };
    let mut curve_rows = Vec::new();
    if !covariates.is_empty() {
        let train = pool(&ds, &split.train, target);
        let test = pool(&ds, &split.test, target);
        type CurveFn = fn(
            &fluxbench::shiftdiag::PooledSample,
            &fluxbench::shiftdiag::PooledSample,
            &str,
            &str,
            usize,
            (f64, f64),
            &fluxbench::shiftdiag::WeightSpec,
            u64,
        ) -> Result<RelationshipCurve, ShiftError>;
        let variants: [(&str, CurveFn); 2] =
            [("binned", binned_curve), ("model", model_based_curve)];
        for (i, covariate) in covariates.iter().enumerate() {
            for (v, (variant, build_curve)) in variants.iter().enumerate() {
                let seed = derive_seed(cfg.diagnostics.seed, (1000 + 2 * i + v) as u64);
                let result = build_curve(
                    &train,
                    &test,
                    covariate,
                    target.as_str(),
                    cfg.diagnostics.curve_bins,
                    cfg.diagnostics.support_pct,
                    &weight_spec,
                    seed,
                );
                let outcome = match result {
                    Ok(curve) => {
                        let csv_path = layout.curve(args.scenario, target, covariate, variant, "csv");
                        write_atomic(&csv_path, curve_csv(&curve).as_bytes())?;
                        CurveOutcome::Ok { curve }
                    }
                    Err(
                        e @ (ShiftError::EmptySupport
                        | ShiftError::AllTrimmed
                        | ShiftError::PoolTooSmall { .. }),
                    ) => CurveOutcome::Skipped {
                        reason: e.to_string(),
                    },
                    Err(e) => return Err(e.into()),
                };
                let json_path = layout.curve(args.scenario, target, covariate, variant, "json");
                write_json(&json_path, &outcome)?;
                curve_rows.push(json!({
                    "covariate": covariate,
                    "variant": variant,
                    "path": json_path,
                    "status": match &outcome {
                        CurveOutcome::Ok { .. } => "ok".to_string(),
                        CurveOutcome::Skipped { reason } => format!("skipped: {reason}"),
                    },
                }));
            }
        }
    }

    print_json(&json!({
        "path": report_path,
        "report": serde_json::to_value(&report).expect("serializable"),
        "curves": curve_rows,
    }));
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// temporal | spatial | temperature
    #[arg(long)]
    pub scenario: ScenarioKind,
    /// Subset of `[models] names` to fit; repeatable. Default: all.
    #[arg(long = "model")]
    pub models: Vec<String>,
}

fn select_models(cfg: &RunConfig, requested: &[String]) -> Result<Vec<String>, CliError> {
    if requested.is_empty() {
        return Ok(cfg.models.names.clone());
    }
    for name in requested {
        if !cfg.models.names.contains(name) {
            return Err(CliError::Config(format!(
                "model {name:?} is not listed in [models] names"
            )));
        }
    }
    Ok(requested.to_vec())
}

fn train_models(
    ds: &Dataset,
    cfg: &RunConfig,
    layout: &Layout,
    split: &ScenarioSplit,
    target: Target,
    names: &[String],
) -> Result<Vec<serde_json::Value>, CliError> {
    let train_records = split.train_records(ds);
    let val_records = split.validation_records(ds);
    let mut rows = Vec::new();
    for name in names {
        let artifact = match name.as_str() {
            "constant" => ModelArtifact::Constant(fit_constant(&train_records, target)?),
            "ols" => ModelArtifact::Ols(fit_ols(&train_records, target)?),
            "gbt" => {
                let spec = TunerSpec {
                    n_configs: cfg.tuner.n_configs,
                    seed: derive_seed(cfg.tuner.seed, split.kind as u64),
                };
                let (model, trials) = tune_gbt(&train_records, &val_records, target, &spec)?;
                write_json(&layout.tuner_trials(split.kind, target), &trials)?;
                ModelArtifact::Gbt(model)
            }
            other => {
                return Err(CliError::Config(format!("unknown model {other:?}")));
            }
        };
        let path = layout.model(split.kind, target, name);
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            target,
            model: artifact,
        };
        write_json(&path, &file)?;
        rows.push(json!({
            "scenario": split.kind,
            "model": name,
            "path": path,
            "n_train": train_records.len(),
            "n_validation": val_records.len(),
        }));
    }
    Ok(rows)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let target = cfg.target()?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let split = load_split(&layout, args.scenario)?;
    let names = select_models(&cfg, &args.models)?;
    let rows = train_models(&ds, &cfg, &layout, &split, target, &names)?;
    print_json(&json!({ "trained": rows }));
    Ok(())
}

// -------------------------------------------------------------- predict

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// temporal | spatial | temperature
    #[arg(long)]
    pub scenario: ScenarioKind,
    /// Subset of `[models] names` to run; repeatable. Default: all.
    #[arg(long = "model")]
    pub models: Vec<String>,
}

fn predict_models(
    ds: &Dataset,
    layout: &Layout,
    split: &ScenarioSplit,
    target: Target,
    names: &[String],
) -> Result<Vec<serde_json::Value>, CliError> {
    // Every QC-valid hour of every test domain; evaluation treats a
    // valid hour without a prediction as a missing prediction.
    let test_records: Vec<&HourlyRecord> = split.test_records(ds);
    let mut rows = Vec::new();
    for name in names {
        let path = layout.model(split.kind, target, name);
        if !path.is_file() {
            return Err(io_at(
                &path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "model file not found (run `fluxbench train` first)",
                ),
            ));
        }
        let file = load_model(&path)?;
        if file.target != target {
            return Err(CliError::Config(format!(
                "{}: fit for target {}, config target is {}",
                path.display(),
                file.target.as_str(),
                target.as_str()
            )));
        }
        if file.model.model_name() != name {
            return Err(CliError::Config(format!(
                "{}: contains a {} model, expected {name}",
                path.display(),
                file.model.model_name()
            )));
        }
        let ps = predict_records(&file.model, &test_records);
        let mut csv = Vec::new();
        export_predictions(&ps, &mut csv)?;
        let out = layout.prediction(split.kind, target, name);
        write_atomic(&out, &csv)?;
        rows.push(json!({
            "scenario": split.kind,
            "model": name,
            "rows": ps.len(),
            "path": out,
        }));
    }
    Ok(rows)
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let target = cfg.target()?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let split = load_split(&layout, args.scenario)?;
    let names = select_models(&cfg, &args.models)?;
    let rows = predict_models(&ds, &layout, &split, target, &names)?;
    print_json(&json!({ "predicted": rows }));
    Ok(())
}

// ------------------------------------------------------------- evaluate

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Prediction CSV as `scenario=path`; repeatable. Default: every
    /// file under `<output>/predictions/<scenario>/<target>/`.
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
}

fn discover_predictions(
    layout: &Layout,
    cfg: &RunConfig,
    target: Target,
) -> Result<PredSets, CliError> {
    let mut sets = Vec::new();
    for kind in &cfg.scenarios.kinds {
        let dir = layout.predictions_dir(*kind, target);
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_at(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for file in files {
            sets.push((*kind, import_predictions(&file)?));
        }
    }
    Ok(sets)
}

fn parse_prediction_args(items: &[String]) -> Result<PredSets, CliError> {
    items
        .iter()
        .map(|item| {
            let (kind, path) = item.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "--predictions expects scenario=path, got {item:?}"
                ))
            })?;
            let kind: ScenarioKind = kind.parse().map_err(CliError::Config)?;
            Ok((kind, import_predictions(Path::new(path))?))
        })
        .collect()
}

/// report.json + per-statistic tables + per-cell CDF exports.
fn write_report_bundle(
    layout: &Layout,
    cfg: &RunConfig,
    target: Target,
    report: &BenchmarkReport,
) -> Result<serde_json::Value, CliError> {
    let report_path = layout.report_json(target);
    write_json(&report_path, report)?;

    let mut tables = Vec::new();
    for statistic in &report.statistics {
        let path = layout.table(target, *statistic);
        let mut buf = Vec::new();
        report
            .emit_table_csv(*statistic, cfg.run.display_scale, &mut buf)
            .map_err(|e| io_at(&path, e))?;
        write_atomic(&path, &buf)?;
        tables.push(path);
    }

    let stat0 = report.statistics[0];
    let mut n_cdf = 0usize;
    for cell in report.cells.iter().filter(|c| c.statistic == stat0) {
        let errors: Vec<DomainError> = report
            .errors_for(cell.scenario, cell.scale, &cell.model_name)
            .into_iter()
            .cloned()
            .collect();
        let points = cdf_export(&errors)?;
        let path = layout.cdf(target, cell.scenario, cell.scale, &cell.model_name);
        let mut buf = Vec::new();
        emit_cdf_csv(&points, &mut buf).map_err(|e| io_at(&path, e))?;
        write_atomic(&path, &buf)?;
        n_cdf += 1;
    }

    let skills: Vec<_> = report
        .skills
        .iter()
        .map(|s| {
            json!({
                "model": s.model_name,
                "statistic": s.statistic.as_str(),
                "overall": s.overall,
            })
        })
        .collect();
    Ok(json!({
        "report": report_path,
        "tables": tables,
        "cdf_files": n_cdf,
        "cells": report.cells.len(),
        "low_support": report.low_support.len(),
        "absent": report.absent.len(),
        "skills": skills,
    }))
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let target = cfg.target()?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let sets = if args.predictions.is_empty() {
        discover_predictions(&layout, &cfg, target)?
    } else {
        parse_prediction_args(&args.predictions)?
    };
    if sets.is_empty() {
        return Err(CliError::Config(
            "no prediction files found; run `fluxbench predict` or pass --predictions".into(),
        ));
    }
    let kinds: BTreeSet<ScenarioKind> = sets.iter().map(|(k, _)| *k).collect();
    let splits: Vec<ScenarioSplit> = kinds
        .iter()
        .map(|k| load_split(&layout, *k))
        .collect::<Result<_, _>>()?;
    let report = build_report(&ds, &splits, &sets, target, &Statistic::ALL, &cfg.models.reference)?;
    let summary = write_report_bundle(&layout, &cfg, target, &report)?;
    print_json(&summary);
    Ok(())
}

// --------------------------------------------------------------- report

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Split, train, predict, and evaluate in one deterministic pass.
pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let target = cfg.target()?;
    let ds = load_dataset(&cfg)?;
    let layout = Layout::new(cfg.output_root());
    let names = cfg.models.names.clone();

    let mut splits = Vec::new();
    let mut sets: PredSets = Vec::new();
    for kind in &cfg.scenarios.kinds {
        let split = build_split(&ds, &cfg, *kind)?;
        write_json(&layout.split(*kind), &split)?;
        train_models(&ds, &cfg, &layout, &split, target, &names)?;
        predict_models(&ds, &layout, &split, target, &names)?;
        // Re-import the CSVs just written so `report` scores exactly the
        // bytes a later standalone `evaluate` would.
        for name in &names {
            let path = layout.prediction(*kind, target, name);
            sets.push((*kind, import_predictions(&path)?));
        }
        splits.push(split);
    }
    let report = build_report(&ds, &splits, &sets, target, &Statistic::ALL, &cfg.models.reference)?;
    let summary = write_report_bundle(&layout, &cfg, target, &report)?;
    print_json(&json!({
        "scenarios": cfg.scenarios.kinds,
        "models": names,
        "evaluation": summary,
    }));
    Ok(())
}

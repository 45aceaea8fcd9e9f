//! Benchmarking engine for multi-site hourly flux prediction under
//! distribution shift.
//!
//! The crate ingests a canonical table of hourly eddy-covariance records,
//! constructs extrapolation train/validation/test splits, quantifies
//! covariate and conditional distribution shift between the resulting
//! pools, trains reference predictors, aggregates aligned truth/prediction
//! series across temporal scales, and summarizes domain-level errors into
//! quantile metrics and skill scores.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`dataset`]: data model, CSV ingestion, QC filtering
//! - [`scenarios`]: temporal / spatial / temperature split construction
//! - [`models`]: constant, least-squares, and gradient-boosted baselines
//! - [`shiftdiag`]: domain-classifier shift scores and weighted curves
//! - [`aggregate`]: multi-scale temporal aggregation with retention rules
//! - [`metrics`]: domain RMSE, quantile summaries, skill scores, reports
//! - [`synthgen`]: seeded synthetic datasets with known shift structure

pub mod aggregate;
pub mod dataset;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod scenarios;
pub mod shiftdiag;
pub mod stats;
pub mod synthgen;

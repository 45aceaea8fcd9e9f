//! Canonical data model for multi-site hourly records.
//!
//! A [`Dataset`] holds every ingested row, including rows that failed
//! quality control; [`qc_filter`] produces the validated view. Keeping
//! failed rows around lets the aggregation layer distinguish "hour
//! present but invalid" from "hour absent", which its retention
//! thresholds count.

mod io;

pub use io::{emit, ingest, ColumnSchema, Ingested, RowReject};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of continuous covariates per record.
pub const N_CONTINUOUS: usize = 12;

/// Continuous covariate names in canonical column order.
pub const CONTINUOUS_NAMES: [&str; N_CONTINUOUS] = [
    "TA",
    "VPD",
    "SW_IN",
    "SW_IN_POT",
    "SW_IN_POT_daily",
    "dSW_IN_POT",
    "dSW_IN_POT_daily",
    "LST_Day",
    "LST_Night",
    "EVI",
    "NIRv",
    "NDWI_SWIR2",
];

/// Errors raised by dataset construction and queries.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("duplicate (site, time) key: {site} @ {time}")]
    DuplicateKey { site: SiteId, time: HourTimestamp },
    #[error("unknown site: {0}")]
    UnknownSite(SiteId),
    #[error("invalid timestamp {0:?}: {1}")]
    InvalidTimestamp(String, String),
    #[error("invalid site id: {0:?}")]
    InvalidSiteId(String),
    #[error("unknown plant functional type: {0:?}")]
    UnknownPft(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable string identifier of a measurement site.
///
/// Backed by a shared `Arc<str>` so the millions of per-record copies in
/// a full dataset cost one refcount each.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId(Arc<str>);

impl SiteId {
    pub fn new(id: &str) -> Result<Self, DatasetError> {
        if id.is_empty() {
            return Err(DatasetError::InvalidSiteId(id.to_string()));
        }
        Ok(SiteId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SiteId({})", self.0)
    }
}

impl Serialize for SiteId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for SiteId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        SiteId::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Calendar datetime at exact hourly resolution.
///
/// Timestamps are treated as opaque local-consistent hours; day, week,
/// and year boundaries follow the stamp as written.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HourTimestamp(NaiveDateTime);

impl HourTimestamp {
    /// Wrap a datetime, rejecting sub-hourly components.
    pub fn new(dt: NaiveDateTime) -> Result<Self, DatasetError> {
        if dt.minute() != 0 || dt.second() != 0 || dt.nanosecond() != 0 {
            return Err(DatasetError::InvalidTimestamp(
                dt.to_string(),
                "sub-hourly timestamps are not supported".into(),
            ));
        }
        Ok(HourTimestamp(dt))
    }

    /// Parse an ISO-8601 datetime (`T` or space separator).
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let dt = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
            .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S"))
            .map_err(|e| DatasetError::InvalidTimestamp(text.to_string(), e.to_string()))?;
        Self::new(dt)
    }

    pub fn year(&self) -> i32 {
        self.0.year()
    }

    /// Day of year, 1-366. Each calendar date keeps its own ordinal.
    pub fn day_of_year(&self) -> u32 {
        self.0.ordinal()
    }

    pub fn hour(&self) -> u32 {
        self.0.hour()
    }

    pub fn date(&self) -> chrono::NaiveDate {
        self.0.date()
    }

    pub fn inner(&self) -> NaiveDateTime {
        self.0
    }
}

impl fmt::Display for HourTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%S"))
    }
}

impl fmt::Debug for HourTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HourTimestamp({self})")
    }
}

/// Plant functional type of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Pft {
    CRO,
    CSH,
    CVM,
    DBF,
    DNF,
    EBF,
    ENF,
    GRA,
    MF,
    OSH,
    SAV,
    WAT,
    WET,
    WSA,
}

impl Pft {
    pub const ALL: [Pft; 14] = [
        Pft::CRO,
        Pft::CSH,
        Pft::CVM,
        Pft::DBF,
        Pft::DNF,
        Pft::EBF,
        Pft::ENF,
        Pft::GRA,
        Pft::MF,
        Pft::OSH,
        Pft::SAV,
        Pft::WAT,
        Pft::WET,
        Pft::WSA,
    ];

    /// Index into [`Pft::ALL`], used for one-hot expansion.
    pub fn index(&self) -> usize {
        Pft::ALL.iter().position(|p| p == self).unwrap()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Pft::CRO => "CRO",
            Pft::CSH => "CSH",
            Pft::CVM => "CVM",
            Pft::DBF => "DBF",
            Pft::DNF => "DNF",
            Pft::EBF => "EBF",
            Pft::ENF => "ENF",
            Pft::GRA => "GRA",
            Pft::MF => "MF",
            Pft::OSH => "OSH",
            Pft::SAV => "SAV",
            Pft::WAT => "WAT",
            Pft::WET => "WET",
            Pft::WSA => "WSA",
        }
    }
}

impl FromStr for Pft {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pft::ALL
            .iter()
            .find(|p| p.as_str() == s)
            .copied()
            .ok_or_else(|| DatasetError::UnknownPft(s.to_string()))
    }
}

impl fmt::Display for Pft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Covariate vector of one hourly record: 12 continuous values in
/// [`CONTINUOUS_NAMES`] order plus the categorical plant functional type.
/// One-hot expansion happens at model boundaries, not here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub continuous: [f64; N_CONTINUOUS],
    pub pft: Pft,
}

impl FeatureVector {
    pub fn all_finite(&self) -> bool {
        self.continuous.iter().all(|v| v.is_finite())
    }

    /// Value of a continuous covariate by name.
    pub fn continuous_by_name(&self, name: &str) -> Option<f64> {
        CONTINUOUS_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.continuous[i])
    }
}

/// The three target fluxes of one hourly record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTriple {
    /// Evapotranspiration, mm/hr.
    pub et: f64,
    /// Gross primary productivity, umol CO2 m^-2 s^-1.
    pub gpp: f64,
    /// Net ecosystem exchange, umol CO2 m^-2 s^-1.
    pub nee: f64,
}

impl TargetTriple {
    pub fn all_finite(&self) -> bool {
        self.et.is_finite() && self.gpp.is_finite() && self.nee.is_finite()
    }

    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::Et => self.et,
            Target::Gpp => self.gpp,
            Target::Nee => self.nee,
        }
    }
}

/// Which flux is being predicted; selected once per evaluation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Et,
    Gpp,
    Nee,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Et, Target::Gpp, Target::Nee];

    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Et => "et",
            Target::Gpp => "gpp",
            Target::Nee => "nee",
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "et" => Ok(Target::Et),
            "gpp" => Ok(Target::Gpp),
            "nee" => Ok(Target::Nee),
            other => Err(format!("unknown target {other:?} (expected et, gpp, or nee)")),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (site, hour) observation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub site: SiteId,
    pub time: HourTimestamp,
    pub features: FeatureVector,
    pub targets: TargetTriple,
    /// Binary quality flag; true means the row passed all upstream checks.
    pub qc: bool,
}

impl HourlyRecord {
    /// QC-valid means the flag passes and every feature/target is finite.
    pub fn is_valid(&self) -> bool {
        self.qc && self.features.all_finite() && self.targets.all_finite()
    }
}

/// Static per-site metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteMeta {
    pub site: SiteId,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub pft: Pft,
}

impl SiteMeta {
    fn validate(&self) -> Result<(), DatasetError> {
        if let Some(lat) = self.lat {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(DatasetError::Parse {
                    row: 0,
                    column: "tower_lat".into(),
                    message: format!("latitude {lat} out of [-90, 90]"),
                });
            }
        }
        if let Some(lon) = self.lon {
            if !(-180.0..=180.0).contains(&lon) {
                return Err(DatasetError::Parse {
                    row: 0,
                    column: "tower_lon".into(),
                    message: format!("longitude {lon} out of [-180, 180]"),
                });
            }
        }
        Ok(())
    }
}

/// Immutable collection of hourly records grouped by site and sorted by
/// time, with per-site metadata.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    sites: BTreeMap<SiteId, SiteData>,
}

#[derive(Clone, Debug)]
struct SiteData {
    meta: SiteMeta,
    /// Sorted by time, strictly increasing.
    records: Vec<HourlyRecord>,
}

impl Dataset {
    /// Assemble a dataset from loose records and per-site metadata.
    ///
    /// Records are grouped by site and sorted by time; duplicate
    /// (site, time) keys and records without metadata are rejected.
    pub fn from_records(
        records: Vec<HourlyRecord>,
        meta: Vec<SiteMeta>,
    ) -> Result<Self, DatasetError> {
        let mut by_site: BTreeMap<SiteId, SiteData> = BTreeMap::new();
        for m in meta {
            m.validate()?;
            by_site.insert(
                m.site.clone(),
                SiteData {
                    meta: m,
                    records: Vec::new(),
                },
            );
        }
        for rec in records {
            let site = rec.site.clone();
            let data = by_site
                .get_mut(&site)
                .ok_or(DatasetError::UnknownSite(site))?;
            data.records.push(rec);
        }
        for data in by_site.values_mut() {
            data.records.sort_by_key(|r| r.time);
            for pair in data.records.windows(2) {
                if pair[0].time == pair[1].time {
                    return Err(DatasetError::DuplicateKey {
                        site: pair[0].site.clone(),
                        time: pair[0].time,
                    });
                }
            }
        }
        Ok(Dataset { sites: by_site })
    }

    pub fn site_ids(&self) -> impl Iterator<Item = &SiteId> {
        self.sites.keys()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_records(&self) -> usize {
        self.sites.values().map(|d| d.records.len()).sum()
    }

    pub fn meta(&self, site: &SiteId) -> Option<&SiteMeta> {
        self.sites.get(site).map(|d| &d.meta)
    }

    /// Records of one site, sorted by time.
    pub fn site_records(&self, site: &SiteId) -> Option<&[HourlyRecord]> {
        self.sites.get(site).map(|d| d.records.as_slice())
    }

    /// All records in (site, time) order.
    pub fn iter_records(&self) -> impl Iterator<Item = &HourlyRecord> {
        self.sites.values().flat_map(|d| d.records.iter())
    }

    pub fn metas(&self) -> impl Iterator<Item = &SiteMeta> {
        self.sites.values().map(|d| &d.meta)
    }

    /// Inclusive (min, max) year over all records, if any exist.
    pub fn year_range(&self) -> Option<(i32, i32)> {
        let mut range: Option<(i32, i32)> = None;
        for rec in self.iter_records() {
            let y = rec.time.year();
            range = Some(match range {
                None => (y, y),
                Some((lo, hi)) => (lo.min(y), hi.max(y)),
            });
        }
        range
    }
}

/// Retain exactly the QC-valid records: flag set and every feature and
/// target finite. Sites left without records keep their metadata entry.
pub fn qc_filter(ds: &Dataset) -> Dataset {
    let sites = ds
        .sites
        .iter()
        .map(|(id, data)| {
            let records = data
                .records
                .iter()
                .filter(|r| r.is_valid())
                .cloned()
                .collect();
            (
                id.clone(),
                SiteData {
                    meta: data.meta.clone(),
                    records,
                },
            )
        })
        .collect();
    Dataset { sites }
}

/// Per-site (valid, present) record counts, the report behind `qc_filter`.
pub fn qc_counts(ds: &Dataset) -> BTreeMap<SiteId, (usize, usize)> {
    ds.sites
        .iter()
        .map(|(id, data)| {
            let valid = data.records.iter().filter(|r| r.is_valid()).count();
            (id.clone(), (valid, data.records.len()))
        })
        .collect()
}

/// Calendar years in which `site` has at least one QC-valid record.
pub fn site_years(ds: &Dataset, site: &SiteId) -> Result<BTreeSet<i32>, DatasetError> {
    let records = ds
        .site_records(site)
        .ok_or_else(|| DatasetError::UnknownSite(site.clone()))?;
    Ok(records
        .iter()
        .filter(|r| r.is_valid())
        .map(|r| r.time.year())
        .collect())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use chrono::NaiveDate;

    pub fn ts(y: i32, m: u32, d: u32, h: u32) -> HourTimestamp {
        HourTimestamp::new(
            NaiveDate::from_ymd_opt(y, m, d)
                .unwrap()
                .and_hms_opt(h, 0, 0)
                .unwrap(),
        )
        .unwrap()
    }

    pub fn record(site: &SiteId, time: HourTimestamp, qc: bool, fill: f64) -> HourlyRecord {
        HourlyRecord {
            site: site.clone(),
            time,
            features: FeatureVector {
                continuous: [fill; N_CONTINUOUS],
                pft: Pft::ENF,
            },
            targets: TargetTriple {
                et: fill,
                gpp: fill * 2.0,
                nee: -fill,
            },
            qc,
        }
    }

    pub fn meta(site: &SiteId) -> SiteMeta {
        SiteMeta {
            site: site.clone(),
            lat: Some(45.0),
            lon: Some(8.0),
            pft: Pft::ENF,
        }
    }
}

//! Extrapolation scenario construction.
//!
//! Three scenarios probe increasingly hostile train/test gaps:
//! `temporal` holds out future years of long-running sites, `spatial`
//! holds out randomly drawn sites, and `temperature` holds out the
//! hottest sites by mean annual air temperature. Domains are site-years
//! for the temporal scenario and whole sites otherwise.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{site_years, Dataset, DatasetError, HourlyRecord, SiteId};
use crate::rng::{fisher_yates_select, rng_from_seed, PRNG_NAME};
use crate::stats::mean;

/// First year of the temporal test block; 2018 is validation, earlier
/// years train.
pub const TEMPORAL_TEST_FROM: i32 = 2019;
/// Validation year of the temporal scenario.
pub const TEMPORAL_VAL_YEAR: i32 = 2018;
/// Minimum distinct QC-passing years for temporal eligibility.
pub const TEMPORAL_MIN_YEARS: usize = 5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no sites satisfy the temporal eligibility rule")]
    NoEligibleSites,
    #[error("too few sites: need more than {needed}, have {available}")]
    TooFewSites { available: usize, needed: usize },
    #[error("site {0} has no QC-passing TA values")]
    NoValidTa(SiteId),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid domain key {0:?}")]
    InvalidDomainKey(String),
}

/// A unit of the train/validation/test partition: a whole site or one
/// site-year. Serialized as `"SITE"` or `"SITE:YEAR"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainKey {
    Site(SiteId),
    SiteYear(SiteId, i32),
}

impl DomainKey {
    pub fn site(&self) -> &SiteId {
        match self {
            DomainKey::Site(s) => s,
            DomainKey::SiteYear(s, _) => s,
        }
    }

    pub fn year(&self) -> Option<i32> {
        match self {
            DomainKey::Site(_) => None,
            DomainKey::SiteYear(_, y) => Some(*y),
        }
    }

    /// QC-valid records belonging to this domain, in time order.
    pub fn records<'a>(&self, ds: &'a Dataset) -> Vec<&'a HourlyRecord> {
        let site_records = ds.site_records(self.site()).unwrap_or(&[]);
        site_records
            .iter()
            .filter(|r| r.is_valid())
            .filter(|r| match self {
                DomainKey::Site(_) => true,
                DomainKey::SiteYear(_, y) => r.time.year() == *y,
            })
            .collect()
    }
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKey::Site(s) => write!(f, "{s}"),
            DomainKey::SiteYear(s, y) => write!(f, "{s}:{y}"),
        }
    }
}

impl FromStr for DomainKey {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let invalid = || ScenarioError::InvalidDomainKey(text.to_string());
        match text.rsplit_once(':') {
            Some((site, year)) => {
                let year: i32 = year.parse().map_err(|_| invalid())?;
                let site = SiteId::new(site).map_err(|_| invalid())?;
                Ok(DomainKey::SiteYear(site, year))
            }
            None => {
                let site = SiteId::new(text).map_err(|_| invalid())?;
                Ok(DomainKey::Site(site))
            }
        }
    }
}

impl Serialize for DomainKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DomainKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Temporal,
    Spatial,
    Temperature,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Temporal => "temporal",
            ScenarioKind::Spatial => "spatial",
            ScenarioKind::Temperature => "temperature",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "temporal" => Ok(ScenarioKind::Temporal),
            "spatial" => Ok(ScenarioKind::Spatial),
            "temperature" => Ok(ScenarioKind::Temperature),
            other => Err(format!(
                "unknown scenario {other:?} (expected temporal, spatial, or temperature)"
            )),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of a scenario build.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Test-site count for spatial/temperature; unused by temporal.
    pub n_test: usize,
    /// Validation-site count for spatial/temperature; unused by temporal.
    pub n_val_sites: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            seed,
            n_test: 40,
            n_val_sites: 20,
        }
    }
}

/// A finished train/validation/test partition, serializable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub kind: ScenarioKind,
    /// PRNG algorithm behind any sampling in this split.
    pub prng: String,
    pub seed: u64,
    pub train: BTreeSet<DomainKey>,
    pub validation: BTreeSet<DomainKey>,
    pub test: BTreeSet<DomainKey>,
}

impl ScenarioSplit {
    /// QC-valid records of every train domain, in domain order.
    pub fn train_records<'a>(&self, ds: &'a Dataset) -> Vec<&'a HourlyRecord> {
        collect_records(ds, &self.train)
    }

    pub fn validation_records<'a>(&self, ds: &'a Dataset) -> Vec<&'a HourlyRecord> {
        collect_records(ds, &self.validation)
    }

    pub fn test_records<'a>(&self, ds: &'a Dataset) -> Vec<&'a HourlyRecord> {
        collect_records(ds, &self.test)
    }
}

fn collect_records<'a>(ds: &'a Dataset, keys: &BTreeSet<DomainKey>) -> Vec<&'a HourlyRecord> {
    keys.iter().flat_map(|k| k.records(ds)).collect()
}

/// Dispatch on the spec's scenario kind.
pub fn build(ds: &Dataset, spec: &ScenarioSpec) -> Result<ScenarioSplit, ScenarioError> {
    match spec.kind {
        ScenarioKind::Temporal => build_temporal(ds, spec.seed),
        ScenarioKind::Spatial => build_spatial(ds, spec.seed, spec.n_test, spec.n_val_sites),
        ScenarioKind::Temperature => {
            build_temperature(ds, spec.seed, spec.n_test, spec.n_val_sites)
        }
    }
}

/// Temporal extrapolation: eligible sites have ≥5 distinct QC-passing
/// years and data in the validation year 2018. Site-years ≤2017 train,
/// 2018 validates, ≥2019 tests.
///
/// Nothing is sampled; `seed` is only recorded in the split file.
pub fn build_temporal(ds: &Dataset, seed: u64) -> Result<ScenarioSplit, ScenarioError> {
    let mut train = BTreeSet::new();
    let mut validation = BTreeSet::new();
    let mut test = BTreeSet::new();

    for site in ds.site_ids() {
        let years = site_years(ds, site)?;
        if years.len() < TEMPORAL_MIN_YEARS || !years.contains(&TEMPORAL_VAL_YEAR) {
            continue;
        }
        for &year in &years {
            let key = DomainKey::SiteYear(site.clone(), year);
            if year < TEMPORAL_VAL_YEAR {
                train.insert(key);
            } else if year == TEMPORAL_VAL_YEAR {
                validation.insert(key);
            } else {
                test.insert(key);
            }
        }
    }

    if validation.is_empty() {
        return Err(ScenarioError::NoEligibleSites);
    }
    Ok(ScenarioSplit {
        kind: ScenarioKind::Temporal,
        prng: PRNG_NAME.into(),
        seed,
        train,
        validation,
        test,
    })
}

/// Sites with at least one QC-valid record, sorted.
fn qc_sites(ds: &Dataset) -> Vec<SiteId> {
    ds.site_ids()
        .filter(|s| {
            ds.site_records(s)
                .is_some_and(|recs| recs.iter().any(|r| r.is_valid()))
        })
        .cloned()
        .collect()
}

/// Spatial extrapolation: `n_test` sites drawn uniformly without
/// replacement, then `n_val` validation sites from the remainder, both
/// from one seeded stream. Everything else trains.
pub fn build_spatial(
    ds: &Dataset,
    seed: u64,
    n_test: usize,
    n_val: usize,
) -> Result<ScenarioSplit, ScenarioError> {
    let mut sites = qc_sites(ds);
    if sites.len() <= n_test + n_val {
        return Err(ScenarioError::TooFewSites {
            available: sites.len(),
            needed: n_test + n_val,
        });
    }

    let mut rng = rng_from_seed(seed);
    fisher_yates_select(&mut sites, n_test, &mut rng);
    let test: BTreeSet<_> = sites[..n_test].iter().cloned().map(DomainKey::Site).collect();

    // Keep the remainder in deterministic order before the second draw.
    let mut rest: Vec<SiteId> = sites[n_test..].to_vec();
    rest.sort();
    fisher_yates_select(&mut rest, n_val, &mut rng);
    let validation: BTreeSet<_> = rest[..n_val].iter().cloned().map(DomainKey::Site).collect();
    let train: BTreeSet<_> = rest[n_val..].iter().cloned().map(DomainKey::Site).collect();

    Ok(ScenarioSplit {
        kind: ScenarioKind::Spatial,
        prng: PRNG_NAME.into(),
        seed,
        train,
        validation,
        test,
    })
}

/// Temperature extrapolation: the `n_test` sites with the highest mean
/// annual TA form the test set (ties to the lexicographically smaller
/// SiteId); `n_val` seeded random sites from the remainder validate.
pub fn build_temperature(
    ds: &Dataset,
    seed: u64,
    n_test: usize,
    n_val: usize,
) -> Result<ScenarioSplit, ScenarioError> {
    let sites = qc_sites(ds);
    if sites.len() <= n_test + n_val {
        return Err(ScenarioError::TooFewSites {
            available: sites.len(),
            needed: n_test + n_val,
        });
    }

    let mut ranked: Vec<(SiteId, f64)> = sites
        .into_iter()
        .map(|s| {
            let ta = site_mean_annual_ta(ds, &s)?;
            Ok((s, ta))
        })
        .collect::<Result<_, ScenarioError>>()?;
    // Descending TA; on ties the lexicographically smaller id ranks first.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let test: BTreeSet<_> = ranked[..n_test]
        .iter()
        .map(|(s, _)| DomainKey::Site(s.clone()))
        .collect();

    let mut rest: Vec<SiteId> = ranked[n_test..].iter().map(|(s, _)| s.clone()).collect();
    rest.sort();
    let mut rng = rng_from_seed(seed);
    fisher_yates_select(&mut rest, n_val, &mut rng);
    let validation: BTreeSet<_> = rest[..n_val].iter().cloned().map(DomainKey::Site).collect();
    let train: BTreeSet<_> = rest[n_val..].iter().cloned().map(DomainKey::Site).collect();

    Ok(ScenarioSplit {
        kind: ScenarioKind::Temperature,
        prng: PRNG_NAME.into(),
        seed,
        train,
        validation,
        test,
    })
}

/// Mean annual air temperature: per-year means of QC-valid hourly TA,
/// averaged over years with equal weight regardless of coverage.
pub fn site_mean_annual_ta(ds: &Dataset, site: &SiteId) -> Result<f64, ScenarioError> {
    let records = ds
        .site_records(site)
        .ok_or_else(|| ScenarioError::Dataset(DatasetError::UnknownSite(site.clone())))?;
    let mut by_year: std::collections::BTreeMap<i32, Vec<f64>> = Default::default();
    for rec in records.iter().filter(|r| r.is_valid()) {
        let ta = rec.features.continuous[0];
        by_year.entry(rec.time.year()).or_default().push(ta);
    }
    if by_year.is_empty() {
        return Err(ScenarioError::NoValidTa(site.clone()));
    }
    let yearly: Vec<f64> = by_year.values().map(|v| mean(v)).collect();
    Ok(mean(&yearly))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::{meta, record, ts};
    use crate::dataset::{Dataset, HourlyRecord, SiteMeta};

    fn site(id: &str) -> SiteId {
        SiteId::new(id).unwrap()
    }

    /// One QC-valid record per listed year, TA = `ta`.
    fn site_with_years(id: &str, years: &[i32], ta: f64) -> (Vec<HourlyRecord>, SiteMeta) {
        let s = site(id);
        let records = years
            .iter()
            .map(|&y| {
                let mut r = record(&s, ts(y, 6, 1, 12), true, 1.0);
                r.features.continuous[0] = ta;
                r
            })
            .collect();
        (records, meta(&s))
    }

    fn dataset_of(parts: Vec<(Vec<HourlyRecord>, SiteMeta)>) -> Dataset {
        let mut records = Vec::new();
        let mut metas = Vec::new();
        for (r, m) in parts {
            records.extend(r);
            metas.push(m);
        }
        Dataset::from_records(records, metas).unwrap()
    }

    #[test]
    fn temporal_assigns_site_years_around_2018() {
        let ds = dataset_of(vec![site_with_years(
            "AA-Aaa",
            &[2015, 2016, 2017, 2018, 2019],
            10.0,
        )]);
        let split = build_temporal(&ds, 7).unwrap();
        let years = |set: &BTreeSet<DomainKey>| -> Vec<i32> {
            set.iter().filter_map(|k| k.year()).collect()
        };
        assert_eq!(years(&split.train), vec![2015, 2016, 2017]);
        assert_eq!(years(&split.validation), vec![2018]);
        assert_eq!(years(&split.test), vec![2019]);
    }

    #[test]
    fn temporal_excludes_sites_without_2018() {
        // AA-Aaa has 5 years but none in 2018 → excluded entirely.
        let no2018 = dataset_of(vec![site_with_years(
            "AA-Aaa",
            &[2019, 2020, 2021, 2022, 2015],
            10.0,
        )]);
        assert!(matches!(
            build_temporal(&no2018, 0),
            Err(ScenarioError::NoEligibleSites)
        ));
        let ds = dataset_of(vec![
            site_with_years("AA-Aaa", &[2019, 2020, 2021, 2022, 2015], 10.0),
            site_with_years("BB-Bbb", &[2015, 2016, 2017, 2018, 2019], 10.0),
        ]);
        let split = build_temporal(&ds, 0).unwrap();
        for key in split.train.iter().chain(&split.validation).chain(&split.test) {
            assert_eq!(key.site().as_str(), "BB-Bbb");
        }
    }

    #[test]
    fn temporal_accepts_sparse_five_year_site() {
        let ds = dataset_of(vec![site_with_years(
            "AA-Aaa",
            &[2016, 2018, 2020, 2021, 2022],
            10.0,
        )]);
        let split = build_temporal(&ds, 0).unwrap();
        assert_eq!(split.train.len(), 1); // 2016
        assert_eq!(split.validation.len(), 1); // 2018
        assert_eq!(split.test.len(), 3); // 2020-2022
    }

    #[test]
    fn temporal_year_boundaries_hold() {
        let ds = dataset_of(vec![site_with_years(
            "AA-Aaa",
            &[2015, 2016, 2017, 2018, 2019, 2020],
            10.0,
        )]);
        let split = build_temporal(&ds, 0).unwrap();
        assert!(split.train.iter().all(|k| k.year().unwrap() <= 2017));
        assert!(split.test.iter().all(|k| k.year().unwrap() >= 2019));
    }

    fn many_sites(n: usize) -> Dataset {
        let parts = (0..n)
            .map(|i| {
                let id = format!("S{i:03}");
                site_with_years(&id, &[2018], 5.0 + i as f64)
            })
            .collect();
        dataset_of(parts)
    }

    #[test]
    fn spatial_split_sizes_and_disjointness() {
        let ds = many_sites(207);
        let split = build_spatial(&ds, 42, 40, 20).unwrap();
        assert_eq!(split.train.len(), 147);
        assert_eq!(split.validation.len(), 20);
        assert_eq!(split.test.len(), 40);
        assert!(split.train.is_disjoint(&split.validation));
        assert!(split.train.is_disjoint(&split.test));
        assert!(split.validation.is_disjoint(&split.test));
        // Coverage: the three sets partition all QC-passing sites.
        let total: BTreeSet<_> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .cloned()
            .collect();
        assert_eq!(total.len(), 207);
    }

    #[test]
    fn spatial_same_seed_same_split() {
        let ds = many_sites(80);
        let a = build_spatial(&ds, 9, 40, 20).unwrap();
        let b = build_spatial(&ds, 9, 40, 20).unwrap();
        assert_eq!(a, b);
        let c = build_spatial(&ds, 10, 40, 20).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn spatial_too_few_sites() {
        let ds = many_sites(50);
        assert!(matches!(
            build_spatial(&ds, 0, 40, 20),
            Err(ScenarioError::TooFewSites { available: 50, needed: 60 })
        ));
        // Boundary: exactly n_test + n_val sites is still too few.
        let ds = many_sites(60);
        assert!(build_spatial(&ds, 0, 40, 20).is_err());
        let ds = many_sites(61);
        let split = build_spatial(&ds, 0, 40, 20).unwrap();
        assert_eq!(split.train.len(), 1);
    }

    #[test]
    fn temperature_takes_argmax_site() {
        let ds = dataset_of(vec![
            site_with_years("AA-Hot", &[2018], 25.0),
            site_with_years("BB-Mid", &[2018], 10.0),
            site_with_years("CC-Cold", &[2018], 5.0),
        ]);
        let split = build_temperature(&ds, 3, 1, 1).unwrap();
        assert_eq!(
            split.test.iter().next().unwrap().site().as_str(),
            "AA-Hot"
        );
    }

    #[test]
    fn temperature_tie_breaks_lexicographically() {
        let ds = dataset_of(vec![
            site_with_years("BB-Tie", &[2018], 20.0),
            site_with_years("AA-Tie", &[2018], 20.0),
            site_with_years("CC-Cold", &[2018], 1.0),
            site_with_years("DD-Cold", &[2018], 1.0),
        ]);
        let split = build_temperature(&ds, 0, 1, 1).unwrap();
        assert_eq!(split.test.iter().next().unwrap().site().as_str(), "AA-Tie");
    }

    #[test]
    fn temperature_test_is_hotter_than_rest() {
        let ds = many_sites(70);
        let split = build_temperature(&ds, 5, 10, 10).unwrap();
        let ta = |k: &DomainKey| site_mean_annual_ta(&ds, k.site()).unwrap();
        let min_test = split.test.iter().map(&ta).fold(f64::INFINITY, f64::min);
        let max_rest = split
            .train
            .iter()
            .chain(&split.validation)
            .map(ta)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_test >= max_rest);
    }

    #[test]
    fn temperature_rejects_when_n_test_is_site_count() {
        let ds = many_sites(40);
        assert!(matches!(
            build_temperature(&ds, 0, 40, 0),
            Err(ScenarioError::TooFewSites { .. })
        ));
    }

    #[test]
    fn mean_annual_ta_weights_years_equally() {
        let s = site("AA-Aaa");
        let mut records = Vec::new();
        // Year A: many observations, mean 10. Year B: few, mean 20.
        for h in 0..8u32 {
            let mut r = record(&s, ts(2015, 1, 1, h), true, 1.0);
            r.features.continuous[0] = 10.0;
            records.push(r);
        }
        for h in 0..2u32 {
            let mut r = record(&s, ts(2016, 1, 1, h), true, 1.0);
            r.features.continuous[0] = 20.0;
            records.push(r);
        }
        let ds = Dataset::from_records(records, vec![meta(&s)]).unwrap();
        let ta = site_mean_annual_ta(&ds, &s).unwrap();
        assert!((ta - 15.0).abs() < 1e-12);
    }

    #[test]
    fn mean_annual_ta_requires_valid_rows() {
        let s = site("AA-Aaa");
        let ds = Dataset::from_records(
            vec![record(&s, ts(2015, 1, 1, 0), false, 1.0)],
            vec![meta(&s)],
        )
        .unwrap();
        assert!(matches!(
            site_mean_annual_ta(&ds, &s),
            Err(ScenarioError::NoValidTa(_))
        ));
    }

    #[test]
    fn constant_ta_single_year_is_identity() {
        let ds = dataset_of(vec![site_with_years("AA-Aaa", &[2018], 10.0)]);
        let ta = site_mean_annual_ta(&ds, &site("AA-Aaa")).unwrap();
        assert_eq!(ta, 10.0);
    }

    #[test]
    fn domain_key_string_round_trip() {
        let keys = [
            DomainKey::Site(site("AU-Cum")),
            DomainKey::SiteYear(site("AU-Cum"), 2018),
        ];
        for key in &keys {
            let text = key.to_string();
            let back: DomainKey = text.parse().unwrap();
            assert_eq!(*key, back);
        }
        assert_eq!(keys[0].to_string(), "AU-Cum");
        assert_eq!(keys[1].to_string(), "AU-Cum:2018");
    }

    #[test]
    fn split_json_round_trip_records_prng() {
        let ds = many_sites(65);
        let split = build_spatial(&ds, 11, 40, 20).unwrap();
        let json = serde_json::to_string_pretty(&split).unwrap();
        assert!(json.contains("\"prng\": \"chacha20\""));
        let back: ScenarioSplit = serde_json::from_str(&json).unwrap();
        assert_eq!(split, back);
    }

    #[test]
    fn domain_records_filter_by_year_and_qc() {
        let s = site("AA-Aaa");
        let records = vec![
            record(&s, ts(2015, 1, 1, 0), true, 1.0),
            record(&s, ts(2015, 1, 1, 1), false, 1.0),
            record(&s, ts(2016, 1, 1, 0), true, 1.0),
        ];
        let ds = Dataset::from_records(records, vec![meta(&s)]).unwrap();
        assert_eq!(DomainKey::Site(s.clone()).records(&ds).len(), 2);
        assert_eq!(DomainKey::SiteYear(s.clone(), 2015).records(&ds).len(), 1);
        assert_eq!(DomainKey::SiteYear(s, 2014).records(&ds).len(), 0);
    }
}

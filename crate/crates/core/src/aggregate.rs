//! Multi-scale temporal aggregation of aligned (truth, prediction) series.
//!
//! Every scale applies a minimum-contribution threshold before a value
//! is retained: days need 12 valid hours, ISO weeks 4 valid days, mean
//! seasonal cycle entries 2 contributing years, and yearly means 183
//! valid days. Truth and prediction pass through the same retention
//! mask, so the two channels always stay aligned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, HourTimestamp, SiteId, Target};
use crate::models::PredictionSet;
use crate::scenarios::{DomainKey, ScenarioKind};

/// Minimum valid hours for a daily mean.
pub const MIN_HOURS_PER_DAY: usize = 12;
/// Minimum valid days for an ISO-week mean.
pub const MIN_DAYS_PER_WEEK: usize = 4;
/// Minimum contributing years for a mean-seasonal-cycle day.
pub const MIN_YEARS_PER_DOY: usize = 2;
/// Minimum valid days for a yearly mean (IAV / site-mean scales).
pub const MIN_DAYS_PER_YEAR: usize = 183;

#[derive(Debug, Error)]
pub enum AggError {
    #[error("wrong input scale: expected {expected}, got {got}")]
    WrongScale { expected: Scale, got: Scale },
    #[error("no year passes the {MIN_DAYS_PER_YEAR}-day retention rule")]
    NoRetainedYears,
}

/// Temporal scale of an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Hourly,
    Daily,
    Weekly,
    Seasonal,
    Anomaly,
    Iav,
    SiteMean,
}

impl Scale {
    pub const ALL: [Scale; 7] = [
        Scale::Hourly,
        Scale::Daily,
        Scale::Weekly,
        Scale::Seasonal,
        Scale::Anomaly,
        Scale::Iav,
        Scale::SiteMean,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Hourly => "hourly",
            Scale::Daily => "daily",
            Scale::Weekly => "weekly",
            Scale::Seasonal => "seasonal",
            Scale::Anomaly => "anomaly",
            Scale::Iav => "iav",
            Scale::SiteMean => "site_mean",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scale::ALL
            .iter()
            .find(|sc| sc.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown scale {s:?}"))
    }
}

/// One time point of an aligned series. `valid` means the truth passed
/// QC and a prediction was available.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignedPoint {
    pub time: HourTimestamp,
    pub truth: f64,
    pub prediction: f64,
    pub valid: bool,
}

/// Time-ordered truth/prediction pairs of one domain.
#[derive(Clone, Debug)]
pub struct AlignedSeries {
    pub domain: DomainKey,
    pub points: Vec<AlignedPoint>,
    /// QC-valid hours that had to be dropped for lack of a prediction.
    pub missing_predictions: usize,
}

/// Align a domain's records with a prediction set. QC-valid hours
/// without a prediction are excluded and counted; QC-invalid hours stay
/// in the series as invalid points.
pub fn align(
    ds: &Dataset,
    domain: &DomainKey,
    preds: &PredictionSet,
    target: Target,
) -> AlignedSeries {
    let records = ds.site_records(domain.site()).unwrap_or(&[]);
    let mut points = Vec::new();
    let mut missing = 0;
    for rec in records {
        if let Some(year) = domain.year() {
            if rec.time.year() != year {
                continue;
            }
        }
        let pred = preds.get(&rec.site, rec.time);
        if rec.is_valid() {
            match pred {
                Some(p) => points.push(AlignedPoint {
                    time: rec.time,
                    truth: rec.targets.get(target),
                    prediction: p,
                    valid: true,
                }),
                None => missing += 1,
            }
        } else {
            points.push(AlignedPoint {
                time: rec.time,
                truth: rec.targets.get(target),
                prediction: pred.unwrap_or(f64::NAN),
                valid: false,
            });
        }
    }
    AlignedSeries {
        domain: domain.clone(),
        points,
        missing_predictions: missing,
    }
}

/// Align the union of several years of one site (or the whole site when
/// `years` is None), as one series under a Site domain key.
fn align_site_years(
    ds: &Dataset,
    site: &SiteId,
    years: Option<&BTreeSet<i32>>,
    preds: &PredictionSet,
    target: Target,
) -> AlignedSeries {
    let mut series = align(ds, &DomainKey::Site(site.clone()), preds, target);
    if let Some(years) = years {
        series.points.retain(|p| years.contains(&p.time.year()));
    }
    series
}

/// Aggregation key: what one retained pair is indexed by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggKey {
    Hour(HourTimestamp),
    Day(NaiveDate),
    /// ISO-8601 week of a week-based year.
    Week { year: i32, week: u32 },
    DayOfYear(u32),
    SiteYear(i32),
    Site,
}

impl fmt::Display for AggKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggKey::Hour(t) => write!(f, "{t}"),
            AggKey::Day(d) => write!(f, "{d}"),
            AggKey::Week { year, week } => write!(f, "{year}-W{week:02}"),
            AggKey::DayOfYear(d) => write!(f, "doy-{d:03}"),
            AggKey::SiteYear(y) => write!(f, "{y}"),
            AggKey::Site => f.write_str("site"),
        }
    }
}

/// Retained (key, truth, prediction) triples of one domain at one scale,
/// sorted by key.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedPairs {
    pub domain: DomainKey,
    pub scale: Scale,
    pub pairs: Vec<(AggKey, f64, f64)>,
}

impl AggregatedPairs {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// CSV debug export: key, truth, prediction.
    pub fn emit_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "key,truth,prediction")?;
        for (key, truth, pred) in &self.pairs {
            writeln!(out, "{key},{truth},{pred}")?;
        }
        Ok(())
    }
}

/// Identity scale: every valid hour is a pair.
pub fn to_hourly(series: &AlignedSeries) -> AggregatedPairs {
    let pairs = series
        .points
        .iter()
        .filter(|p| p.valid)
        .map(|p| (AggKey::Hour(p.time), p.truth, p.prediction))
        .collect();
    AggregatedPairs {
        domain: series.domain.clone(),
        scale: Scale::Hourly,
        pairs,
    }
}

/// Daily means over valid hours; days with < 12 valid hours are dropped.
pub fn to_daily(series: &AlignedSeries) -> AggregatedPairs {
    let mut acc: BTreeMap<NaiveDate, (usize, f64, f64)> = BTreeMap::new();
    for p in series.points.iter().filter(|p| p.valid) {
        let slot = acc.entry(p.time.date()).or_insert((0, 0.0, 0.0));
        slot.0 += 1;
        slot.1 += p.truth;
        slot.2 += p.prediction;
    }
    let pairs = acc
        .into_iter()
        .filter(|(_, (n, _, _))| *n >= MIN_HOURS_PER_DAY)
        .map(|(date, (n, t, p))| (AggKey::Day(date), t / n as f64, p / n as f64))
        .collect();
    AggregatedPairs {
        domain: series.domain.clone(),
        scale: Scale::Daily,
        pairs,
    }
}

fn expect_daily(input: &AggregatedPairs) -> Result<(), AggError> {
    if input.scale != Scale::Daily {
        return Err(AggError::WrongScale {
            expected: Scale::Daily,
            got: input.scale,
        });
    }
    Ok(())
}

fn daily_dates(input: &AggregatedPairs) -> impl Iterator<Item = (NaiveDate, f64, f64)> + '_ {
    input.pairs.iter().map(|(key, t, p)| match key {
        AggKey::Day(d) => (*d, *t, *p),
        other => unreachable!("daily pairs keyed by {other:?}"),
    })
}

/// ISO-week means over retained days; weeks with < 4 days are dropped.
pub fn to_weekly(daily: &AggregatedPairs) -> Result<AggregatedPairs, AggError> {
    expect_daily(daily)?;
    let mut acc: BTreeMap<(i32, u32), (usize, f64, f64)> = BTreeMap::new();
    for (date, t, p) in daily_dates(daily) {
        let week = date.iso_week();
        let slot = acc.entry((week.year(), week.week())).or_insert((0, 0.0, 0.0));
        slot.0 += 1;
        slot.1 += t;
        slot.2 += p;
    }
    let pairs = acc
        .into_iter()
        .filter(|(_, (n, _, _))| *n >= MIN_DAYS_PER_WEEK)
        .map(|((year, week), (n, t, p))| {
            (
                AggKey::Week { year, week },
                t / n as f64,
                p / n as f64,
            )
        })
        .collect();
    Ok(AggregatedPairs {
        domain: daily.domain.clone(),
        scale: Scale::Weekly,
        pairs,
    })
}

/// Mean seasonal cycle: per day-of-year mean across years, retained with
/// >= 2 contributing years. Day 366 is its own key, never merged into 365.
pub fn msc(daily: &AggregatedPairs) -> Result<AggregatedPairs, AggError> {
    expect_daily(daily)?;
    let mut acc: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    for (date, t, p) in daily_dates(daily) {
        let slot = acc.entry(date.ordinal()).or_insert((0, 0.0, 0.0));
        slot.0 += 1; // one date per (year, DOY): count = contributing years
        slot.1 += t;
        slot.2 += p;
    }
    let pairs = acc
        .into_iter()
        .filter(|(_, (n, _, _))| *n >= MIN_YEARS_PER_DOY)
        .map(|(doy, (n, t, p))| (AggKey::DayOfYear(doy), t / n as f64, p / n as f64))
        .collect();
    Ok(AggregatedPairs {
        domain: daily.domain.clone(),
        scale: Scale::Seasonal,
        pairs,
    })
}

/// Daily anomalies: retained daily value minus the MSC entry of its
/// day-of-year; each channel subtracts its own MSC. Days whose DOY has
/// no retained MSC are excluded.
pub fn anomalies(
    daily: &AggregatedPairs,
    seasonal: &AggregatedPairs,
) -> Result<AggregatedPairs, AggError> {
    expect_daily(daily)?;
    if seasonal.scale != Scale::Seasonal {
        return Err(AggError::WrongScale {
            expected: Scale::Seasonal,
            got: seasonal.scale,
        });
    }
    let cycle: BTreeMap<u32, (f64, f64)> = seasonal
        .pairs
        .iter()
        .map(|(key, t, p)| match key {
            AggKey::DayOfYear(d) => (*d, (*t, *p)),
            other => unreachable!("seasonal pairs keyed by {other:?}"),
        })
        .collect();
    let pairs = daily_dates(daily)
        .filter_map(|(date, t, p)| {
            cycle
                .get(&date.ordinal())
                .map(|(mt, mp)| (AggKey::Day(date), t - mt, p - mp))
        })
        .collect();
    Ok(AggregatedPairs {
        domain: daily.domain.clone(),
        scale: Scale::Anomaly,
        pairs,
    })
}

/// Yearly means over retained days, kept with >= 183 valid days;
/// restricted to `basis` years. Returns (year, truth mean, pred mean).
fn retained_yearly_means(
    daily: &AggregatedPairs,
    basis: &BTreeSet<i32>,
) -> Vec<(i32, f64, f64)> {
    let mut acc: BTreeMap<i32, (usize, f64, f64)> = BTreeMap::new();
    for (date, t, p) in daily_dates(daily) {
        let slot = acc.entry(date.year()).or_insert((0, 0.0, 0.0));
        slot.0 += 1;
        slot.1 += t;
        slot.2 += p;
    }
    acc.into_iter()
        .filter(|(year, (n, _, _))| *n >= MIN_DAYS_PER_YEAR && basis.contains(year))
        .map(|(year, (n, t, p))| (year, t / n as f64, p / n as f64))
        .collect()
}

/// Interannual variability: deviation of each retained basis-year mean
/// from the site's mean over retained basis years.
pub fn iav(daily: &AggregatedPairs, basis: &BTreeSet<i32>) -> Result<AggregatedPairs, AggError> {
    expect_daily(daily)?;
    let yearly = retained_yearly_means(daily, basis);
    if yearly.is_empty() {
        return Err(AggError::NoRetainedYears);
    }
    let n = yearly.len() as f64;
    let t_bar = yearly.iter().map(|(_, t, _)| t).sum::<f64>() / n;
    let p_bar = yearly.iter().map(|(_, _, p)| p).sum::<f64>() / n;
    let pairs = yearly
        .into_iter()
        .map(|(year, t, p)| (AggKey::SiteYear(year), t - t_bar, p - p_bar))
        .collect();
    Ok(AggregatedPairs {
        domain: daily.domain.clone(),
        scale: Scale::Iav,
        pairs,
    })
}

/// Site mean: one pair per site, the mean of retained basis-year means.
pub fn site_mean(
    daily: &AggregatedPairs,
    basis: &BTreeSet<i32>,
) -> Result<AggregatedPairs, AggError> {
    expect_daily(daily)?;
    let yearly = retained_yearly_means(daily, basis);
    if yearly.is_empty() {
        return Err(AggError::NoRetainedYears);
    }
    let n = yearly.len() as f64;
    let t_bar = yearly.iter().map(|(_, t, _)| t).sum::<f64>() / n;
    let p_bar = yearly.iter().map(|(_, _, p)| p).sum::<f64>() / n;
    Ok(AggregatedPairs {
        domain: daily.domain.clone(),
        scale: Scale::SiteMean,
        pairs: vec![(AggKey::Site, t_bar, p_bar)],
    })
}

/// Scenario-aware aggregation of the full test set at one scale.
///
/// Temporal extrapolation evaluates hourly/daily/weekly/anomaly pairs
/// per site-year; spatial and temperature evaluate them per site.
/// Seasonal, IAV, and site-mean pairs are always per site, with the IAV
/// and site-mean basis restricted to test years for the temporal
/// scenario and spanning all available years otherwise. Domains whose
/// pairs all fail retention are omitted.
pub fn aggregate_for_scenario(
    ds: &Dataset,
    preds: &PredictionSet,
    target: Target,
    kind: ScenarioKind,
    test_domains: &BTreeSet<DomainKey>,
    scale: Scale,
) -> Vec<AggregatedPairs> {
    // Group test domains by site; `None` years means the whole site.
    let mut by_site: BTreeMap<SiteId, Option<BTreeSet<i32>>> = BTreeMap::new();
    for key in test_domains {
        match key {
            DomainKey::Site(site) => {
                by_site.insert(site.clone(), None);
            }
            DomainKey::SiteYear(site, year) => {
                by_site
                    .entry(site.clone())
                    .or_insert_with(|| Some(BTreeSet::new()))
                    .get_or_insert_with(BTreeSet::new)
                    .insert(*year);
            }
        }
    }

    let mut out = Vec::new();
    let mut push = |pairs: AggregatedPairs| {
        if !pairs.is_empty() {
            out.push(pairs);
        }
    };

    for (site, years) in &by_site {
        let merged = align_site_years(ds, site, years.as_ref(), preds, target);
        let per_site_year = kind == ScenarioKind::Temporal && years.is_some();

        match scale {
            Scale::Hourly | Scale::Daily | Scale::Weekly => {
                if per_site_year {
                    for &year in years.as_ref().unwrap() {
                        let series =
                            align(ds, &DomainKey::SiteYear(site.clone(), year), preds, target);
                        push(scale_of(&series, scale));
                    }
                } else {
                    push(scale_of(&merged, scale));
                }
            }
            Scale::Anomaly => {
                let daily = to_daily(&merged);
                let seasonal = msc(&daily).expect("daily input");
                let anom = anomalies(&daily, &seasonal).expect("scales checked");
                if per_site_year {
                    for &year in years.as_ref().unwrap() {
                        let pairs: Vec<_> = anom
                            .pairs
                            .iter()
                            .filter(|(key, _, _)| matches!(key, AggKey::Day(d) if d.year() == year))
                            .cloned()
                            .collect();
                        push(AggregatedPairs {
                            domain: DomainKey::SiteYear(site.clone(), year),
                            scale: Scale::Anomaly,
                            pairs,
                        });
                    }
                } else {
                    push(anom);
                }
            }
            Scale::Seasonal => {
                let daily = to_daily(&merged);
                push(msc(&daily).expect("daily input"));
            }
            Scale::Iav | Scale::SiteMean => {
                let daily = to_daily(&merged);
                let basis: BTreeSet<i32> = match years {
                    Some(test_years) => test_years.clone(),
                    None => merged
                        .points
                        .iter()
                        .filter(|p| p.valid)
                        .map(|p| p.time.year())
                        .collect(),
                };
                let result = if scale == Scale::Iav {
                    iav(&daily, &basis)
                } else {
                    site_mean(&daily, &basis)
                };
                match result {
                    Ok(pairs) => push(pairs),
                    Err(AggError::NoRetainedYears) => {}
                    Err(e) => unreachable!("{e}"),
                }
            }
        }
    }
    out
}

fn scale_of(series: &AlignedSeries, scale: Scale) -> AggregatedPairs {
    match scale {
        Scale::Hourly => to_hourly(series),
        Scale::Daily => to_daily(series),
        Scale::Weekly => to_weekly(&to_daily(series)).expect("daily input"),
        other => unreachable!("scale_of only handles simple scales, got {other}"),
    }
}

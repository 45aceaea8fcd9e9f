//! Acceptance suite: every release-gating criterion as one test that
//! prints a single `[PASS]`/`[FAIL]` line (visible under `--nocapture`)
//! and asserts with pinned tolerances.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate};

use fluxbench::aggregate::{
    anomalies, iav, msc, site_mean, to_daily, to_hourly, to_weekly, AggError, AggKey,
    AggregatedPairs, AlignedPoint, AlignedSeries, Scale,
};
use fluxbench::dataset::{
    FeatureVector, HourTimestamp, HourlyRecord, Pft, SiteId, Target, TargetTriple, N_CONTINUOUS,
};
use fluxbench::metrics::{domain_rmse, skill, summarize, DomainError, MetricCell, Statistic};
use fluxbench::models::{
    fit_gbt, fit_ols, tune_gbt, GbtConfig, Loss, Predictor, TunerSpec,
};
use fluxbench::rng::{rng_from_seed, standard_normal, uniform_below, uniform_f64, EngineRng};
use fluxbench::scenarios::{
    build, site_mean_annual_ta, DomainKey, ScenarioKind, ScenarioSpec,
};
use fluxbench::shiftdiag::{
    conditional_shift_shared, conditional_shift_train_marginal, covariate_shift_score,
    importance_weights, PooledSample, WeightSpec,
};
use fluxbench::synthgen::{g, generate, SynthSpec};

/// Print the criterion verdict, then assert every sub-check.
fn criterion(id: &str, desc: &str, checks: &[(String, bool)]) {
    let ok = checks.iter().all(|(_, b)| *b);
    println!("[{}] {id}: {desc}", if ok { "PASS" } else { "FAIL" });
    for (what, b) in checks {
        assert!(*b, "{id} failed: {what}");
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ------------------------------------------------------------------ A1

/// Independent loop-based re-implementation of every aggregation rule,
/// kept deliberately naive: group, count, filter, average.
mod oracle {
    use super::*;

    pub type Daily = BTreeMap<NaiveDate, (f64, f64)>;

    pub fn hourly(points: &[AlignedPoint]) -> BTreeMap<AggKey, (f64, f64)> {
        points
            .iter()
            .filter(|p| p.valid)
            .map(|p| (AggKey::Hour(p.time), (p.truth, p.prediction)))
            .collect()
    }

    pub fn daily(points: &[AlignedPoint]) -> Daily {
        let mut groups: BTreeMap<NaiveDate, Vec<(f64, f64)>> = BTreeMap::new();
        for p in points.iter().filter(|p| p.valid) {
            groups
                .entry(p.time.date())
                .or_default()
                .push((p.truth, p.prediction));
        }
        groups
            .into_iter()
            .filter(|(_, v)| v.len() >= 12)
            .map(|(d, v)| {
                let n = v.len() as f64;
                let t: f64 = v.iter().map(|(t, _)| t).sum();
                let p: f64 = v.iter().map(|(_, p)| p).sum();
                (d, (t / n, p / n))
            })
            .collect()
    }

    pub fn weekly(daily: &Daily) -> BTreeMap<AggKey, (f64, f64)> {
        let mut groups: BTreeMap<(i32, u32), Vec<(f64, f64)>> = BTreeMap::new();
        for (date, v) in daily {
            let iso = date.iso_week();
            groups
                .entry((iso.year(), iso.week()))
                .or_default()
                .push(*v);
        }
        groups
            .into_iter()
            .filter(|(_, v)| v.len() >= 4)
            .map(|((year, week), v)| {
                let n = v.len() as f64;
                let t: f64 = v.iter().map(|(t, _)| t).sum();
                let p: f64 = v.iter().map(|(_, p)| p).sum();
                (AggKey::Week { year, week }, (t / n, p / n))
            })
            .collect()
    }

    pub fn seasonal(daily: &Daily) -> BTreeMap<u32, (f64, f64)> {
        let mut groups: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for (date, v) in daily {
            groups.entry(date.ordinal()).or_default().push(*v);
        }
        groups
            .into_iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(doy, v)| {
                let n = v.len() as f64;
                let t: f64 = v.iter().map(|(t, _)| t).sum();
                let p: f64 = v.iter().map(|(_, p)| p).sum();
                (doy, (t / n, p / n))
            })
            .collect()
    }

    pub fn anomaly(daily: &Daily, msc: &BTreeMap<u32, (f64, f64)>) -> BTreeMap<AggKey, (f64, f64)> {
        daily
            .iter()
            .filter_map(|(date, (t, p))| {
                msc.get(&date.ordinal())
                    .map(|(mt, mp)| (AggKey::Day(*date), (t - mt, p - mp)))
            })
            .collect()
    }

    pub fn yearly(daily: &Daily, basis: &BTreeSet<i32>) -> Vec<(i32, f64, f64)> {
        let mut groups: BTreeMap<i32, Vec<(f64, f64)>> = BTreeMap::new();
        for (date, v) in daily {
            groups.entry(date.year()).or_default().push(*v);
        }
        groups
            .into_iter()
            .filter(|(year, v)| v.len() >= 183 && basis.contains(year))
            .map(|(year, v)| {
                let n = v.len() as f64;
                let t: f64 = v.iter().map(|(t, _)| t).sum();
                let p: f64 = v.iter().map(|(_, p)| p).sum();
                (year, t / n, p / n)
            })
            .collect()
    }
}

fn pairs_to_map(pairs: &AggregatedPairs) -> BTreeMap<AggKey, (f64, f64)> {
    pairs.pairs.iter().map(|(k, t, p)| (*k, (*t, *p))).collect()
}

fn maps_match(
    got: &BTreeMap<AggKey, (f64, f64)>,
    want: &BTreeMap<AggKey, (f64, f64)>,
    tol: f64,
) -> bool {
    got.len() == want.len()
        && got.iter().all(|(k, (t, p))| {
            want.get(k)
                .is_some_and(|(wt, wp)| close(*t, *wt, tol) && close(*p, *wp, tol))
        })
}

#[test]
fn a01_aggregation_oracle() {
    const TOL: f64 = 1e-12;
    let start = Instant::now();
    let mut rng = rng_from_seed(1001);
    let mut series_checked = 0usize;
    let mut all_ok = true;

    for _ in 0..200 {
        // A random multi-year series: hours present with p=0.7, valid
        // with p=0.8, values O(1) so 1e-12 comparisons are meaningful.
        let n_days = 30 + uniform_below(&mut rng, 371) as i64;
        let day0 = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
            + chrono::Days::new(uniform_below(&mut rng, 1500));
        let mut points = Vec::new();
        for d in 0..n_days {
            let date = day0 + chrono::Days::new(d as u64);
            for h in 0..24u32 {
                if uniform_f64(&mut rng) < 0.3 {
                    continue;
                }
                let time =
                    HourTimestamp::new(date.and_hms_opt(h, 0, 0).unwrap()).unwrap();
                points.push(AlignedPoint {
                    time,
                    truth: 10.0 * uniform_f64(&mut rng) - 5.0,
                    prediction: 10.0 * uniform_f64(&mut rng) - 5.0,
                    valid: uniform_f64(&mut rng) < 0.8,
                });
            }
        }
        assert!(points.len() <= 10_000);
        let series = AlignedSeries {
            domain: DomainKey::Site(SiteId::new("ORACLE").unwrap()),
            points,
            missing_predictions: 0,
        };
        let basis: BTreeSet<i32> = series.points.iter().map(|p| p.time.year()).collect();

        let lib_daily = to_daily(&series);
        let want_daily = oracle::daily(&series.points);
        let want_daily_keys: BTreeMap<AggKey, (f64, f64)> = want_daily
            .iter()
            .map(|(d, v)| (AggKey::Day(*d), *v))
            .collect();
        all_ok &= maps_match(&pairs_to_map(&to_hourly(&series)), &oracle::hourly(&series.points), TOL);
        all_ok &= maps_match(&pairs_to_map(&lib_daily), &want_daily_keys, TOL);
        all_ok &= maps_match(
            &pairs_to_map(&to_weekly(&lib_daily).unwrap()),
            &oracle::weekly(&want_daily),
            TOL,
        );
        let lib_msc = msc(&lib_daily).unwrap();
        let want_msc = oracle::seasonal(&want_daily);
        let want_msc_keys: BTreeMap<AggKey, (f64, f64)> = want_msc
            .iter()
            .map(|(d, v)| (AggKey::DayOfYear(*d), *v))
            .collect();
        all_ok &= maps_match(&pairs_to_map(&lib_msc), &want_msc_keys, TOL);
        all_ok &= maps_match(
            &pairs_to_map(&anomalies(&lib_daily, &lib_msc).unwrap()),
            &oracle::anomaly(&want_daily, &want_msc),
            TOL,
        );

        let want_yearly = oracle::yearly(&want_daily, &basis);
        match iav(&lib_daily, &basis) {
            Ok(lib_iav) => {
                let n = want_yearly.len() as f64;
                let t_bar: f64 = want_yearly.iter().map(|(_, t, _)| t).sum::<f64>() / n;
                let p_bar: f64 = want_yearly.iter().map(|(_, _, p)| p).sum::<f64>() / n;
                let want: BTreeMap<AggKey, (f64, f64)> = want_yearly
                    .iter()
                    .map(|(y, t, p)| (AggKey::SiteYear(*y), (t - t_bar, p - p_bar)))
                    .collect();
                all_ok &= maps_match(&pairs_to_map(&lib_iav), &want, TOL);
                let lib_sm = site_mean(&lib_daily, &basis).unwrap();
                all_ok &= lib_sm.pairs.len() == 1;
                let (key, t, p) = &lib_sm.pairs[0];
                all_ok &= *key == AggKey::Site && close(*t, t_bar, TOL) && close(*p, p_bar, TOL);
            }
            Err(AggError::NoRetainedYears) => {
                all_ok &= want_yearly.is_empty();
                all_ok &= matches!(site_mean(&lib_daily, &basis), Err(AggError::NoRetainedYears));
            }
            Err(e) => panic!("unexpected aggregation error: {e}"),
        }
        series_checked += 1;
    }

    let elapsed = start.elapsed();
    criterion(
        "A1",
        "aggregation at all 7 scales matches a loop-based oracle on 200 random series (tol 1e-12, < 60 s)",
        &[
            (format!("checked {series_checked}/200 series"), series_checked == 200),
            ("all retained keys and values match".into(), all_ok),
            (format!("elapsed {elapsed:?} < 60 s"), elapsed < Duration::from_secs(60)),
        ],
    );
}

// ------------------------------------------------------------------ A2

#[test]
fn a02_metric_oracles() {
    let t0 = HourTimestamp::parse("2015-06-01T00:00:00").unwrap();
    let t1 = HourTimestamp::parse("2015-06-01T01:00:00").unwrap();
    let pairs = AggregatedPairs {
        domain: DomainKey::Site(SiteId::new("X").unwrap()),
        scale: Scale::Hourly,
        pairs: vec![
            (AggKey::Hour(t0), 0.0, 3.0),
            (AggKey::Hour(t1), 0.0, 4.0),
        ],
    };
    let err = domain_rmse(&pairs, ScenarioKind::Spatial, "m").unwrap();

    let errors: Vec<DomainError> = (1..=10)
        .map(|i| DomainError {
            domain: DomainKey::Site(SiteId::new(format!("S{i:02}").as_str()).unwrap()),
            scenario: ScenarioKind::Spatial,
            scale: Scale::Hourly,
            model_name: "m".into(),
            rmse: i as f64,
            n_pairs: 1,
        })
        .collect();
    let q90 = summarize(&errors, Statistic::Q90).unwrap();
    let median = summarize(&errors, Statistic::Median).unwrap();

    criterion(
        "A2",
        "domain RMSE and quantile summaries reproduce hand-computed values (tol 1e-12)",
        &[
            (
                format!("rmse of residuals (3, 4) = {} vs sqrt(12.5)", err.rmse),
                close(err.rmse, 12.5f64.sqrt(), 1e-12) && err.n_pairs == 2,
            ),
            (
                format!("q90 of {{1..10}} = {} vs 9.1", q90.value),
                close(q90.value, 9.1, 1e-12) && q90.n_domains == 10,
            ),
            (
                format!("median of {{1..10}} = {} vs 5.5", median.value),
                close(median.value, 5.5, 1e-12),
            ),
        ],
    );
}

// ------------------------------------------------------------------ A3

#[test]
fn a03_skill_identities() {
    let cell = |scale: Scale, model: &str, value: f64| MetricCell {
        scenario: ScenarioKind::Spatial,
        scale,
        model_name: model.into(),
        statistic: Statistic::Median,
        value,
        n_domains: 5,
    };
    let reference: Vec<MetricCell> = Scale::ALL
        .iter()
        .enumerate()
        .map(|(i, s)| cell(*s, "ref", 1.0 + i as f64))
        .collect();
    let same: Vec<MetricCell> = reference
        .iter()
        .map(|c| MetricCell {
            model_name: "ref".into(),
            ..c.clone()
        })
        .collect();
    let perfect: Vec<MetricCell> = Scale::ALL.iter().map(|s| cell(*s, "p", 0.0)).collect();

    let self_row = skill(&same, &reference).unwrap();
    let perfect_row = skill(&perfect, &reference).unwrap();

    criterion(
        "A3",
        "skill of the reference against itself is exactly 0; skill of a zero-error model is exactly 1",
        &[
            (
                "reference-vs-itself: every cell and the overall are bitwise 0.0".into(),
                self_row.per_cell.values().all(|&v| v == 0.0) && self_row.overall == 0.0,
            ),
            (
                "zero-error model: every cell and the overall are bitwise 1.0".into(),
                perfect_row.per_cell.values().all(|&v| v == 1.0) && perfect_row.overall == 1.0,
            ),
            (
                "both rows span all 7 scales".into(),
                self_row.per_cell.len() == 7 && perfect_row.per_cell.len() == 7,
            ),
        ],
    );
}

// ------------------------------------------------------------------ A4

fn gaussian_pool(n: usize, rng: &mut EngineRng, shift: Option<(usize, f64)>) -> PooledSample {
    let mut pool = PooledSample::default();
    for _ in 0..n {
        let mut continuous = [0.0; N_CONTINUOUS];
        for v in continuous.iter_mut() {
            *v = standard_normal(rng);
        }
        if let Some((idx, delta)) = shift {
            continuous[idx] += delta;
        }
        pool.rows.push(FeatureVector {
            continuous,
            pft: Pft::ENF,
        });
        pool.targets.push(0.0);
    }
    pool
}

#[test]
fn a04_covariate_shift_score() {
    let start = Instant::now();
    let mut rng = rng_from_seed(4001);
    let train = gaussian_pool(5000, &mut rng, None);
    let test_null = gaussian_pool(5000, &mut rng, None);
    let test_shifted = gaussian_pool(5000, &mut rng, Some((0, 10.0)));

    let null = covariate_shift_score(&train, &test_null, 40, 10).unwrap();
    let shifted = covariate_shift_score(&train, &test_shifted, 41, 10).unwrap();
    let elapsed = start.elapsed();

    criterion(
        "A4",
        "balanced accuracy is chance on identical-law pools and near-perfect under a 10-sd shift (10 repeats, < 5 min)",
        &[
            (
                format!("null mean {} in [0.47, 0.53]", null.mean),
                (0.47..=0.53).contains(&null.mean),
            ),
            (
                format!("shifted mean {} >= 0.95", shifted.mean),
                shifted.mean >= 0.95,
            ),
            (format!("elapsed {elapsed:?} < 5 min"), elapsed < Duration::from_secs(300)),
        ],
    );
}

// ------------------------------------------------------------------ A5

/// x ~ N(0, I) with an optional mean shift on feature 0; y = ±g(x) + noise.
fn conditional_pool(
    n: usize,
    rng: &mut EngineRng,
    mean_shift: f64,
    flip: bool,
    noise_sd: f64,
) -> PooledSample {
    let mut pool = PooledSample::default();
    for _ in 0..n {
        let mut continuous = [0.0; N_CONTINUOUS];
        for v in continuous.iter_mut() {
            *v = standard_normal(rng);
        }
        continuous[0] += mean_shift;
        let signal = if flip { -g(&continuous) } else { g(&continuous) };
        pool.rows.push(FeatureVector {
            continuous,
            pft: Pft::ENF,
        });
        pool.targets.push(signal + noise_sd * standard_normal(rng));
    }
    pool
}

#[test]
fn a05_conditional_shift() {
    let start = Instant::now();
    let spec = WeightSpec::default();
    let mut rng = rng_from_seed(5001);
    // Mild mean shift on one feature keeps the pools inside common
    // support; noise_sd 0.5 makes the error level noise-dominated so the
    // null percent increase reflects the conditional, not fit texture.
    let train = conditional_pool(12_000, &mut rng, 0.0, false, 0.5);
    let test_null = conditional_pool(8_000, &mut rng, 0.25, false, 0.5);
    let test_flip = conditional_pool(8_000, &mut rng, 0.25, true, 0.5);

    let tm_null = conditional_shift_train_marginal(&train, &test_null, 50, 8, &spec).unwrap();
    let sh_null = conditional_shift_shared(&train, &test_null, 51, 8, &spec).unwrap();
    let tm_flip = conditional_shift_train_marginal(&train, &test_flip, 52, 8, &spec).unwrap();
    let sh_flip = conditional_shift_shared(&train, &test_flip, 53, 8, &spec).unwrap();
    let elapsed = start.elapsed();

    criterion(
        "A5",
        "weighted RMSE increase is within ±5% under a pure covariate shift and ≥ 50% under a flipped conditional (8 repeats, < 10 min)",
        &[
            (
                format!("train-marginal null mean {}% in [-5, 5]", tm_null.mean),
                (-5.0..=5.0).contains(&tm_null.mean),
            ),
            (
                format!("shared-support null mean {}% in [-5, 5]", sh_null.mean),
                (-5.0..=5.0).contains(&sh_null.mean),
            ),
            (
                format!("train-marginal flipped mean {}% >= 50", tm_flip.mean),
                tm_flip.mean >= 50.0,
            ),
            (
                format!("shared-support flipped mean {}% >= 50", sh_flip.mean),
                sh_flip.mean >= 50.0,
            ),
            (format!("elapsed {elapsed:?} < 10 min"), elapsed < Duration::from_secs(600)),
        ],
    );
}

// ------------------------------------------------------------------ A6

#[test]
fn a06_importance_weights() {
    let spec = WeightSpec::default(); // epsilon 0.1, clip 0.99
    let w_half = importance_weights(&[0.5], &spec);
    let w_trim = importance_weights(&[0.9, 0.95], &spec);

    // Raw weights {1, 1, 1, 100}; the 0.75 ceil-rank quantile of the
    // nonzero population is 1, so the outlier clips down to 1.
    let clip_spec = WeightSpec {
        epsilon: 0.1,
        clip_quantile: 0.75,
    };
    let w_clip = importance_weights(&[0.5, 0.5, 0.5, 1.0 / 101.0], &clip_spec);
    // A trimmed zero must not enter the clip population.
    let w_clip_zero = importance_weights(&[0.95, 0.5, 0.5, 0.5, 1.0 / 101.0], &clip_spec);

    criterion(
        "A6",
        "importance-weight spot checks: w(0.5)=1, trim at s ≥ 0.9, ceil-rank clipping (exact)",
        &[
            (format!("w(0.5) = {:?} == [1.0]", w_half), w_half == vec![1.0]),
            (
                format!("w(0.9), w(0.95) = {:?} == [0, 0]", w_trim),
                w_trim == vec![0.0, 0.0],
            ),
            (
                format!("clip oracle {{1,1,1,100}}@0.75 -> {:?}", w_clip),
                w_clip == vec![1.0, 1.0, 1.0, 1.0],
            ),
            (
                format!("zeros excluded from clip population -> {:?}", w_clip_zero),
                w_clip_zero == vec![0.0, 1.0, 1.0, 1.0, 1.0],
            ),
        ],
    );
}

// ------------------------------------------------------------------ A7

#[test]
fn a07_scenario_invariants() {
    let mut spec = SynthSpec::new(207, 99);
    spec.years = (2013, 2020);
    spec.hours_per_day = 1;
    spec.qc_dropout = 0.0;
    let (ds, _) = generate(&spec).unwrap();
    let all_sites: BTreeSet<SiteId> = ds.site_ids().cloned().collect();
    let mut checks: Vec<(String, bool)> = Vec::new();

    // Spatial: 147/20/40 whole sites, disjoint, covering, seed-stable.
    let spatial = build(&ds, &ScenarioSpec::new(ScenarioKind::Spatial, 5)).unwrap();
    let again = build(&ds, &ScenarioSpec::new(ScenarioKind::Spatial, 5)).unwrap();
    let other = build(&ds, &ScenarioSpec::new(ScenarioKind::Spatial, 6)).unwrap();
    let sites_of = |keys: &BTreeSet<DomainKey>| -> BTreeSet<SiteId> {
        keys.iter().map(|k| k.site().clone()).collect()
    };
    let (tr, va, te) = (
        sites_of(&spatial.train),
        sites_of(&spatial.validation),
        sites_of(&spatial.test),
    );
    checks.push((
        format!(
            "spatial sizes train/val/test = {}/{}/{} == 147/20/40",
            tr.len(),
            va.len(),
            te.len()
        ),
        tr.len() == 147 && va.len() == 20 && te.len() == 40,
    ));
    checks.push((
        "spatial pools are disjoint and cover all 207 sites".into(),
        tr.is_disjoint(&va)
            && tr.is_disjoint(&te)
            && va.is_disjoint(&te)
            && tr.union(&va).cloned().collect::<BTreeSet<_>>().union(&te).cloned().collect::<BTreeSet<_>>() == all_sites,
    ));
    checks.push((
        "same seed reproduces the split; another seed moves it".into(),
        again == spatial && other.test != spatial.test,
    ));

    // Temperature: the test pool holds the warmest sites by mean annual TA.
    let temperature = build(&ds, &ScenarioSpec::new(ScenarioKind::Temperature, 5)).unwrap();
    let pool_ta = |keys: &BTreeSet<DomainKey>| -> Vec<f64> {
        sites_of(keys)
            .iter()
            .map(|s| site_mean_annual_ta(&ds, s).unwrap())
            .collect()
    };
    let (ta_tr, ta_va, ta_te) = (
        pool_ta(&temperature.train),
        pool_ta(&temperature.validation),
        pool_ta(&temperature.test),
    );
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let held_out_max = max(&ta_tr).max(max(&ta_va));
    checks.push((
        format!(
            "every test site is warmer than every train/validation site: max(held-out TA) {:.4} <= min(test TA) {:.4}",
            held_out_max,
            min(&ta_te)
        ),
        held_out_max <= min(&ta_te),
    ));
    checks.push((
        "temperature sizes 147/20/40".into(),
        temperature.train.len() == 147
            && temperature.validation.len() == 20
            && temperature.test.len() == 40,
    ));

    // Temporal: site-years split by calendar; all sites eligible here.
    let temporal = build(&ds, &ScenarioSpec::new(ScenarioKind::Temporal, 5)).unwrap();
    let year_ok = |keys: &BTreeSet<DomainKey>, pred: fn(i32) -> bool| {
        keys.iter().all(|k| k.year().is_some_and(pred))
    };
    checks.push((
        "temporal domains are site-years with train <= 2017, validation == 2018, test >= 2019".into(),
        year_ok(&temporal.train, |y| y <= 2017)
            && year_ok(&temporal.validation, |y| y == 2018)
            && year_ok(&temporal.test, |y| y >= 2019),
    ));
    checks.push((
        format!(
            "temporal counts {}/{}/{} == 1035/207/414 (207 sites x 5/1/2 years)",
            temporal.train.len(),
            temporal.validation.len(),
            temporal.test.len()
        ),
        temporal.train.len() == 207 * 5
            && temporal.validation.len() == 207
            && temporal.test.len() == 207 * 2,
    ));

    criterion(
        "A7",
        "split invariants on a 207-site dataset: sizes, disjointness, determinism, temperature ordering, temporal calendar",
        &checks,
    );
}

// ------------------------------------------------------------------ A8

fn planted_records(
    n: usize,
    rng: &mut EngineRng,
    site: &str,
    formula: impl Fn(&FeatureVector) -> f64,
) -> Vec<HourlyRecord> {
    let site = SiteId::new(site).unwrap();
    let base = HourTimestamp::parse("2015-01-01T00:00:00").unwrap().inner();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut continuous = [0.0; N_CONTINUOUS];
        for v in continuous.iter_mut() {
            *v = standard_normal(rng);
        }
        let features = FeatureVector {
            continuous,
            pft: Pft::ALL[i % 3],
        };
        let y = formula(&features);
        out.push(HourlyRecord {
            site: site.clone(),
            time: HourTimestamp::new(base + chrono::Duration::hours(i as i64)).unwrap(),
            features,
            targets: TargetTriple {
                et: y,
                gpp: 0.0,
                nee: 0.0,
            },
            qc: true,
        });
    }
    out
}

#[test]
fn a08_baseline_models() {
    let start = Instant::now();
    let mut checks: Vec<(String, bool)> = Vec::new();

    // OLS recovers a function inside its design span to 1e-8.
    let affine = |f: &FeatureVector| {
        2.5 * f.continuous[0] - 1.2 * f.continuous[1] + 0.7
            + if f.pft == Pft::ALL[1] { 3.0 } else { 0.0 }
    };
    let mut rng = rng_from_seed(8001);
    let fit_rows = planted_records(2000, &mut rng, "OLS-A", affine);
    let probe_rows = planted_records(500, &mut rng, "OLS-B", affine);
    let ols = fit_ols(&fit_rows.iter().collect::<Vec<_>>(), Target::Et).unwrap();
    let ols_err = probe_rows
        .iter()
        .map(|r| (ols.predict(&r.features) - r.targets.et).abs())
        .fold(0.0, f64::max);
    checks.push((
        format!("OLS max prediction error on planted affine data = {ols_err:.2e} <= 1e-8"),
        ols_err <= 1e-8,
    ));
    let (slopes, _) = ols.model.raw_coefficients();
    checks.push((
        format!(
            "OLS recovers the identifiable continuous slopes: {:.9}, {:.9} vs 2.5, -1.2 (tol 1e-8)",
            slopes[0], slopes[1]
        ),
        close(slopes[0], 2.5, 1e-8) && close(slopes[1], -1.2, 1e-8),
    ));

    // GBT reaches R^2 >= 0.95 on the synthetic quadratic response.
    let mut spec = SynthSpec::new(4, 42);
    spec.years = (2015, 2016);
    spec.hours_per_day = 14;
    spec.qc_dropout = 0.0;
    spec.covariate.site_spread = 0.0;
    spec.conditional.noise_sd = 0.05;
    let (ds, _) = generate(&spec).unwrap();
    let sites: Vec<SiteId> = ds.site_ids().cloned().collect();
    let records_of = |ids: &[SiteId]| -> Vec<&HourlyRecord> {
        ids.iter()
            .flat_map(|s| ds.site_records(s).unwrap())
            .filter(|r| r.is_valid())
            .collect()
    };
    let train = records_of(&sites[..2]);
    let probe = records_of(&sites[2..]);
    checks.push((
        format!("GBT training pool has {} rows (>= 20000)", train.len()),
        train.len() >= 20_000,
    ));
    let gbt = fit_gbt(
        &train,
        Target::Et,
        &GbtConfig::fixed(Loss::Squared, 8002),
        None,
    )
    .unwrap();
    let truth_mean = probe.iter().map(|r| r.targets.et).sum::<f64>() / probe.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for r in &probe {
        let e = r.targets.et - gbt.predict(&r.features);
        ss_res += e * e;
        let d = r.targets.et - truth_mean;
        ss_tot += d * d;
    }
    let r2 = 1.0 - ss_res / ss_tot;
    checks.push((format!("GBT holdout R^2 = {r2:.4} >= 0.95"), r2 >= 0.95));

    // The tuner hands back the draw with the lowest validation RMSE.
    let quad = |f: &FeatureVector| g(&f.continuous);
    let tune_rows = planted_records(3000, &mut rng, "TUNE-A", quad);
    let val_rows = planted_records(1000, &mut rng, "TUNE-B", quad);
    let (best, trials) = tune_gbt(
        &tune_rows.iter().collect::<Vec<_>>(),
        &val_rows.iter().collect::<Vec<_>>(),
        Target::Et,
        &TunerSpec::new(8003),
    )
    .unwrap();
    let best_rmse = {
        let mut sq = 0.0;
        for r in &val_rows {
            let e = best.predict(&r.features) - r.targets.et;
            sq += e * e;
        }
        (sq / val_rows.len() as f64).sqrt()
    };
    let min_trial = trials
        .iter()
        .map(|t| t.val_rmse)
        .fold(f64::INFINITY, f64::min);
    checks.push((
        format!("tuner ran {} trials (expected 10)", trials.len()),
        trials.len() == 10,
    ));
    checks.push((
        format!(
            "returned model's validation RMSE {best_rmse:.6} equals the best trial's {min_trial:.6} (tol 1e-9)"
        ),
        close(best_rmse, min_trial, 1e-9),
    ));

    let elapsed = start.elapsed();
    checks.push((
        format!("elapsed {elapsed:?} < 5 min"),
        elapsed < Duration::from_secs(300),
    ));
    criterion(
        "A8",
        "baselines: OLS exact on affine data (1e-8), GBT R^2 >= 0.95 on the quadratic response, tuner picks its best draw",
        &checks,
    );
}

// ------------------------------------------------------------------ A9

fn run_cli(args: &[&str], env: &[(&str, &str)]) -> std::process::Output {
    let exe = env!("CARGO_BIN_EXE_fluxbench");
    let mut cmd = Command::new(exe);
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "fluxbench {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn a09_end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("synth.csv");
    run_cli(
        &[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--n-sites",
            "6",
            "--start-year",
            "2013",
            "--end-year",
            "2020",
            "--hours-per-day",
            "2",
            "--qc-dropout",
            "0.1",
            "--seed",
            "7",
        ],
        &[],
    );
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[run]\ndata = {data:?}\ntarget = \"et\"\noutput = {out:?}\n\n\
             [scenarios]\nn_test_sites = 2\nn_val_sites = 1\n\n[tuner]\nn_configs = 2\n",
            data = data.to_str().unwrap(),
            out = tmp.path().join("unused").to_str().unwrap(),
        ),
    )
    .unwrap();

    let mut snapshots = Vec::new();
    for jobs in ["1", "2", "8"] {
        for rep in 0..2 {
            let out_root = tmp.path().join(format!("run_j{jobs}_r{rep}"));
            run_cli(
                &["report", "--config", config.to_str().unwrap(), "--jobs", jobs],
                &[("FLUXBENCH_OUTPUT_ROOT", out_root.to_str().unwrap())],
            );
            snapshots.push((format!("jobs={jobs} rep={rep}"), snapshot(&out_root)));
        }
    }
    let (ref_name, reference) = &snapshots[0];
    let mut checks: Vec<(String, bool)> = vec![(
        format!(
            "baseline run ({ref_name}) produced {} files including report.json",
            reference.len()
        ),
        reference.contains_key("report/et/report.json") && reference.len() > 10,
    )];
    for (name, snap) in &snapshots[1..] {
        checks.push((
            format!("{name} is byte-identical to {ref_name} across all files"),
            snap == reference,
        ));
    }
    criterion(
        "A9",
        "synth -> split -> train -> predict -> evaluate is byte-identical across reruns and --jobs 1/2/8",
        &checks,
    );
}

// ----------------------------------------------------------------- A10

/// Qualitative full-pipeline smoke at realistic density; run with
/// `cargo test --test acceptance -- --ignored` (several minutes).
#[test]
#[ignore]
fn a10_full_pipeline_smoke() {
    use fluxbench::metrics::{build_report, PredSets};
    use fluxbench::models::{fit_constant, predict_records};

    let mut spec = SynthSpec::new(12, 3);
    spec.years = (2013, 2020);
    spec.hours_per_day = 14;
    spec.qc_dropout = 0.05;
    let (ds, _) = generate(&spec).unwrap();

    let mut splits = Vec::new();
    let mut sets: PredSets = Vec::new();
    for kind in [
        ScenarioKind::Temporal,
        ScenarioKind::Spatial,
        ScenarioKind::Temperature,
    ] {
        let mut sspec = ScenarioSpec::new(kind, 5);
        sspec.n_test = 3;
        sspec.n_val_sites = 2;
        let split = build(&ds, &sspec).unwrap();
        let train = split.train_records(&ds);
        let val = split.validation_records(&ds);
        let test = split.test_records(&ds);

        let constant = fit_constant(&train, Target::Et).unwrap();
        let ols = fit_ols(&train, Target::Et).unwrap();
        let tuner = TunerSpec {
            n_configs: 2,
            seed: 31,
        };
        let (gbt, _) = tune_gbt(&train, &val, Target::Et, &tuner).unwrap();
        sets.push((kind, predict_records(&constant, &test)));
        sets.push((kind, predict_records(&ols, &test)));
        sets.push((kind, predict_records(&gbt, &test)));
        splits.push(split);
    }
    let report = build_report(&ds, &splits, &sets, Target::Et, &Statistic::ALL, "ols").unwrap();

    let mut checks: Vec<(String, bool)> = Vec::new();
    for kind in [
        ScenarioKind::Temporal,
        ScenarioKind::Spatial,
        ScenarioKind::Temperature,
    ] {
        let value = |model: &str| {
            report
                .cell(kind, Scale::Hourly, model, Statistic::Median)
                .map(|c| c.value)
        };
        let (c, o, gbt) = (
            value("constant").unwrap(),
            value("ols").unwrap(),
            value("gbt").unwrap(),
        );
        checks.push((
            format!("{kind} hourly: constant ({c:.3}) is never the best model (ols {o:.3}, gbt {gbt:.3})"),
            c >= o.min(gbt),
        ));
    }
    criterion(
        "A10",
        "full-pipeline smoke: the constant baseline never wins an hourly cell",
        &checks,
    );
}

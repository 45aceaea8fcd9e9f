//! Seeded synthetic dataset generator with known ground-truth shift
//! structure.
//!
//! Each site draws per-feature mean offsets, then emits hourly records
//! whose targets follow a sparse quadratic `g` of the first three
//! covariates plus Gaussian noise. Designated sites can receive a
//! covariate offset (covariate shift) or a negated `g` (conditional
//! shift), recorded in a ground-truth sidecar so diagnostics can be
//! checked against construction.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    Dataset, FeatureVector, HourTimestamp, HourlyRecord, Pft, SiteId, SiteMeta, TargetTriple,
    N_CONTINUOUS,
};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, uniform_f64};
use crate::scenarios::ScenarioSplit;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

/// Per-site covariate law: feature means spread across sites, a seasonal
/// sinusoid on TA, and an optional single-feature offset on designated
/// sites.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateModel {
    /// Standard deviation of per-site feature-mean offsets.
    pub site_spread: f64,
    /// Amplitude of the day-of-year sinusoid added to TA (feature 0).
    pub seasonal_amplitude: f64,
    /// Sites whose `shift_feature` mean is offset by `shift_sd`.
    pub shift_sites: BTreeSet<SiteId>,
    /// Index of the continuous feature receiving the offset.
    pub shift_feature: usize,
    /// Offset in within-site standard deviations (within-site sd is 1).
    pub shift_sd: f64,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel {
            site_spread: 0.5,
            seasonal_amplitude: 1.0,
            shift_sites: BTreeSet::new(),
            shift_feature: 0,
            shift_sd: 0.0,
        }
    }
}

/// Conditional law Y = g(X) + noise, negated on designated sites.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub noise_sd: f64,
    /// Sites where the conditional function is flipped to -g.
    pub flip_sites: BTreeSet<SiteId>,
}

impl Default for ConditionalModel {
    fn default() -> Self {
        ConditionalModel {
            noise_sd: 0.1,
            flip_sites: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sites: usize,
    /// Inclusive year range generated for every site.
    pub years: (i32, i32),
    /// Hours emitted per day, starting at midnight (1..=24).
    pub hours_per_day: u32,
    pub covariate: CovariateModel,
    pub conditional: ConditionalModel,
    /// Probability that a record fails QC.
    pub qc_dropout: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_sites: usize, seed: u64) -> Self {
        SynthSpec {
            n_sites,
            years: (2015, 2020),
            hours_per_day: 24,
            covariate: CovariateModel::default(),
            conditional: ConditionalModel::default(),
            qc_dropout: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.n_sites < 2 {
            return fail(format!("n_sites must be >= 2, got {}", self.n_sites));
        }
        if self.years.0 > self.years.1 {
            return fail(format!("empty year range {:?}", self.years));
        }
        if self.hours_per_day == 0 || self.hours_per_day > 24 {
            return fail(format!("hours_per_day must be 1..=24, got {}", self.hours_per_day));
        }
        if !(0.0..=1.0).contains(&self.qc_dropout) {
            return fail(format!("qc_dropout must be in [0,1], got {}", self.qc_dropout));
        }
        if self.covariate.site_spread < 0.0 || self.covariate.seasonal_amplitude < 0.0 {
            return fail("covariate spread/amplitude must be non-negative".into());
        }
        if self.covariate.shift_feature >= N_CONTINUOUS {
            return fail(format!(
                "shift_feature {} out of range (< {N_CONTINUOUS})",
                self.covariate.shift_feature
            ));
        }
        if self.conditional.noise_sd < 0.0 {
            return fail("noise_sd must be non-negative".into());
        }
        let known: BTreeSet<SiteId> = (0..self.n_sites).map(site_name).collect();
        for s in self.covariate.shift_sites.iter().chain(&self.conditional.flip_sites) {
            if !known.contains(s) {
                return fail(format!("designated site {s} is not generated (n_sites={})", self.n_sites));
            }
        }
        Ok(())
    }
}

/// Canonical generated site id for index `i`.
pub fn site_name(i: usize) -> SiteId {
    SiteId::new(&format!("SY-{i:03}")).expect("non-empty")
}

/// The sparse quadratic conditional: one interaction term keeps OLS
/// imperfect while staying easy for trees.
pub fn g(v: &[f64]) -> f64 {
    0.6 * v[0] + 0.4 * v[1] - 0.5 * v[2] + 0.8 * v[0] * v[0] + 0.7 * v[0] * v[1]
}

/// Ground truth of one generated site.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteTruth {
    pub feature_means: Vec<f64>,
    pub covariate_shifted: bool,
    pub conditional_flipped: bool,
    pub pft: Pft,
}

/// Sidecar recording the generating process, emitted next to the CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthTruth {
    pub g_formula: String,
    pub noise_sd: f64,
    pub seasonal_amplitude: f64,
    pub qc_dropout: f64,
    pub seed: u64,
    pub sites: BTreeMap<SiteId, SiteTruth>,
}

/// Deterministically generate the dataset plus its ground-truth sidecar.
/// Sites generate in parallel from per-site derived seeds, so worker
/// count never changes the output.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, SynthTruth), SynthError> {
    spec.validate()?;
    let per_site: Vec<(Vec<HourlyRecord>, SiteMeta, SiteTruth)> = (0..spec.n_sites)
        .into_par_iter()
        .map(|i| generate_site(spec, i))
        .collect();

    let mut records = Vec::new();
    let mut metas = Vec::new();
    let mut sites = BTreeMap::new();
    for (recs, meta, truth) in per_site {
        sites.insert(meta.site.clone(), truth);
        metas.push(meta);
        records.extend(recs);
    }
    let ds = Dataset::from_records(records, metas).expect("generated keys are unique");
    let truth = SynthTruth {
        g_formula: "0.6*x0 + 0.4*x1 - 0.5*x2 + 0.8*x0^2 + 0.7*x0*x1".into(),
        noise_sd: spec.conditional.noise_sd,
        seasonal_amplitude: spec.covariate.seasonal_amplitude,
        qc_dropout: spec.qc_dropout,
        seed: spec.seed,
        sites,
    };
    Ok((ds, truth))
}

fn generate_site(spec: &SynthSpec, i: usize) -> (Vec<HourlyRecord>, SiteMeta, SiteTruth) {
    let site = site_name(i);
    let mut rng = rng_from_seed(derive_seed(spec.seed, i as u64));
    let pft = Pft::ALL[i % Pft::ALL.len()];

    let mut feature_means: Vec<f64> = (0..N_CONTINUOUS)
        .map(|_| spec.covariate.site_spread * standard_normal(&mut rng))
        .collect();
    let shifted = spec.covariate.shift_sites.contains(&site);
    if shifted {
        feature_means[spec.covariate.shift_feature] += spec.covariate.shift_sd;
    }
    let flipped = spec.conditional.flip_sites.contains(&site);
    let sign = if flipped { -1.0 } else { 1.0 };

    let lat = -55.0 + 125.0 * uniform_f64(&mut rng);
    let lon = -180.0 + 360.0 * uniform_f64(&mut rng);
    let meta = SiteMeta {
        site: site.clone(),
        lat: Some(lat),
        lon: Some(lon),
        pft,
    };

    let mut records = Vec::new();
    for year in spec.years.0..=spec.years.1 {
        let mut day = chrono::NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
        while day.year() == year {
            let season = spec.covariate.seasonal_amplitude
                * (2.0 * std::f64::consts::PI * (day.ordinal() - 1) as f64 / 365.0).sin();
            for h in 0..spec.hours_per_day {
                let mut continuous = [0.0; N_CONTINUOUS];
                for (j, slot) in continuous.iter_mut().enumerate() {
                    *slot = feature_means[j] + standard_normal(&mut rng);
                }
                continuous[0] += season;
                let base = sign * g(&continuous);
                let noise = spec.conditional.noise_sd;
                let targets = TargetTriple {
                    et: base + noise * standard_normal(&mut rng),
                    gpp: 1.5 * base + noise * standard_normal(&mut rng),
                    nee: -0.8 * base + noise * standard_normal(&mut rng),
                };
                let qc = uniform_f64(&mut rng) >= spec.qc_dropout;
                let time = HourTimestamp::new(day.and_hms_opt(h, 0, 0).unwrap()).unwrap();
                records.push(HourlyRecord {
                    site: site.clone(),
                    time,
                    qc,
                    features: FeatureVector { continuous, pft },
                    targets,
                });
            }
            day = day + chrono::Days::new(1);
        }
    }

    let truth = SiteTruth {
        feature_means,
        covariate_shifted: shifted,
        conditional_flipped: flipped,
        pft,
    };
    (records, meta, truth)
}

/// Ground-truth shift structure a split should exhibit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftOracle {
    pub covariate_shift: bool,
    pub conditional_shift: bool,
}

/// Compare the controlled shift markers between the split's train and
/// test site pools: the laws differ exactly when the marked fractions
/// differ.
pub fn shift_oracle(truth: &SynthTruth, split: &ScenarioSplit) -> ShiftOracle {
    let sites_of = |domains: &BTreeSet<crate::scenarios::DomainKey>| -> BTreeSet<SiteId> {
        domains.iter().map(|d| d.site().clone()).collect()
    };
    let train = sites_of(&split.train);
    let test = sites_of(&split.test);
    let fraction_differs = |marked: &dyn Fn(&SiteTruth) -> bool| -> bool {
        let count = |pool: &BTreeSet<SiteId>| {
            pool.iter()
                .filter(|s| truth.sites.get(*s).is_some_and(marked))
                .count()
        };
        // Exact rational comparison of marked fractions.
        count(&train) * test.len() != count(&test) * train.len()
    };
    ShiftOracle {
        covariate_shift: fraction_differs(&|t: &SiteTruth| t.covariate_shifted),
        conditional_shift: fraction_differs(&|t: &SiteTruth| t.conditional_flipped),
    }
}

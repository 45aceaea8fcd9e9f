//! CSV ingestion and emission for the canonical hourly file format.
//!
//! One row per (site, hour); header required. Missing columns and
//! duplicate keys are fatal; a row whose values fail to parse is
//! skipped and reported, so one corrupt line cannot sink a
//! multi-gigabyte ingest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{
    Dataset, DatasetError, FeatureVector, HourTimestamp, HourlyRecord, Pft, SiteId, SiteMeta,
    TargetTriple, CONTINUOUS_NAMES, N_CONTINUOUS,
};

/// Maps canonical field names to the column names used in a file.
///
/// The default schema uses the canonical names themselves. `lat`/`lon`
/// columns are optional; when absent every site's coordinates are unset.
#[derive(Clone, Debug)]
pub struct ColumnSchema {
    pub site: String,
    pub time: String,
    pub qc: String,
    pub continuous: [String; N_CONTINUOUS],
    pub pft: String,
    pub et: String,
    pub gpp: String,
    pub nee: String,
    pub lat: Option<String>,
    pub lon: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            site: "site".into(),
            time: "time".into(),
            qc: "qc_mask".into(),
            continuous: CONTINUOUS_NAMES.map(String::from),
            pft: "PFT".into(),
            et: "ET".into(),
            gpp: "GPP".into(),
            nee: "NEE".into(),
            lat: Some("tower_lat".into()),
            lon: Some("tower_lon".into()),
        }
    }
}

/// One skipped input row and why.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct RowReject {
    /// 1-based data row number (header not counted).
    pub row: usize,
    pub column: String,
    pub message: String,
}

/// Result of [`ingest`]: the parsed dataset plus the row-level report of
/// skipped lines.
#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejects: Vec<RowReject>,
}

/// Resolved column indices for one header row.
struct ColumnIndex {
    site: usize,
    time: usize,
    qc: usize,
    continuous: [usize; N_CONTINUOUS],
    pft: usize,
    et: usize,
    gpp: usize,
    nee: usize,
    lat: Option<usize>,
    lon: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &ColumnSchema) -> Result<Self, DatasetError> {
        let lookup: BTreeMap<&str, usize> = header
            .iter()
            .enumerate()
            .map(|(i, name)| (name, i))
            .collect();
        let find = |name: &str| -> Result<usize, DatasetError> {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
        };
        let mut continuous = [0usize; N_CONTINUOUS];
        for (slot, name) in continuous.iter_mut().zip(&schema.continuous) {
            *slot = find(name)?;
        }
        Ok(ColumnIndex {
            site: find(&schema.site)?,
            time: find(&schema.time)?,
            qc: find(&schema.qc)?,
            continuous,
            pft: find(&schema.pft)?,
            et: find(&schema.et)?,
            gpp: find(&schema.gpp)?,
            nee: find(&schema.nee)?,
            // Coordinates are metadata, not covariates; tolerate their absence.
            lat: schema.lat.as_deref().and_then(|n| lookup.get(n)).copied(),
            lon: schema.lon.as_deref().and_then(|n| lookup.get(n)).copied(),
        })
    }
}

/// Parse a float field; empty and NA sentinels become NaN so the row is
/// kept and later excluded by QC rather than rejected.
fn parse_float(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed == "NA" || trimmed == "nan" {
        return Ok(f64::NAN);
    }
    trimmed
        .parse::<f64>()
        .map_err(|e| format!("invalid float {trimmed:?}: {e}"))
}

fn parse_qc(text: &str) -> Result<bool, String> {
    match text.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("invalid qc flag {other:?} (expected 0 or 1)")),
    }
}

/// Read the canonical CSV format.
///
/// Fatal errors: unreadable file, missing schema columns, duplicate
/// (site, time) keys, inconsistent per-site metadata. Rows with
/// unparseable values are skipped and collected into the reject report.
pub fn ingest(path: &Path, schema: &ColumnSchema) -> Result<Ingested, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(io_like)?;
    let header = reader.headers().map_err(io_like)?.clone();
    let index = ColumnIndex::resolve(&header, schema)?;

    let mut records = Vec::new();
    let mut metas: BTreeMap<SiteId, SiteMeta> = BTreeMap::new();
    let mut rejects = Vec::new();

    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(io_like)?;
        match parse_row(&row, &index) {
            Ok((record, meta)) => {
                match metas.get(&meta.site) {
                    None => {
                        metas.insert(meta.site.clone(), meta);
                    }
                    Some(existing) if meta_consistent(existing, &meta) => {}
                    Some(_) => {
                        rejects.push(RowReject {
                            row: row_no,
                            column: schema.pft.clone(),
                            message: format!(
                                "site {} metadata conflicts with an earlier row",
                                meta.site
                            ),
                        });
                        continue;
                    }
                }
                records.push(record);
            }
            Err((column, message)) => rejects.push(RowReject {
                row: row_no,
                column,
                message,
            }),
        }
    }

    let dataset = Dataset::from_records(records, metas.into_values().collect())?;
    Ok(Ingested { dataset, rejects })
}

fn meta_consistent(a: &SiteMeta, b: &SiteMeta) -> bool {
    fn opt_eq(x: Option<f64>, y: Option<f64>) -> bool {
        match (x, y) {
            (Some(x), Some(y)) => x == y || (x.is_nan() && y.is_nan()),
            (None, None) => true,
            _ => false,
        }
    }
    a.pft == b.pft && opt_eq(a.lat, b.lat) && opt_eq(a.lon, b.lon)
}

fn parse_row(
    row: &csv::StringRecord,
    index: &ColumnIndex,
) -> Result<(HourlyRecord, SiteMeta), (String, String)> {
    let field = |i: usize| row.get(i).unwrap_or("");
    let fail = |col: &str, msg: String| (col.to_string(), msg);

    let site = SiteId::new(field(index.site)).map_err(|e| fail("site", e.to_string()))?;
    let time =
        HourTimestamp::parse(field(index.time)).map_err(|e| fail("time", e.to_string()))?;
    let qc = parse_qc(field(index.qc)).map_err(|m| fail("qc_mask", m))?;

    let mut continuous = [0.0; N_CONTINUOUS];
    for (k, slot) in continuous.iter_mut().enumerate() {
        *slot = parse_float(field(index.continuous[k]))
            .map_err(|m| fail(CONTINUOUS_NAMES[k], m))?;
    }
    let pft: Pft = field(index.pft)
        .trim()
        .parse()
        .map_err(|e: DatasetError| fail("PFT", e.to_string()))?;
    let targets = TargetTriple {
        et: parse_float(field(index.et)).map_err(|m| fail("ET", m))?,
        gpp: parse_float(field(index.gpp)).map_err(|m| fail("GPP", m))?,
        nee: parse_float(field(index.nee)).map_err(|m| fail("NEE", m))?,
    };

    // An absent column or an empty/NaN cell both leave the coordinate unset.
    let coord = |idx: Option<usize>, name: &str| -> Result<Option<f64>, (String, String)> {
        match idx {
            None => Ok(None),
            Some(i) => {
                let v = parse_float(field(i)).map_err(|m| fail(name, m))?;
                Ok(if v.is_finite() { Some(v) } else { None })
            }
        }
    };
    let lat = coord(index.lat, "tower_lat")?;
    let lon = coord(index.lon, "tower_lon")?;

    let record = HourlyRecord {
        site: site.clone(),
        time,
        features: FeatureVector { continuous, pft },
        targets,
        qc,
    };
    let meta = SiteMeta {
        site,
        lat,
        lon,
        pft,
    };
    Ok((record, meta))
}

fn io_like(err: csv::Error) -> DatasetError {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::Parse {
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Write a dataset back to the canonical format.
///
/// Floats use Rust's shortest round-trip formatting, so
/// `ingest(emit(ds))` reproduces every value bit-exactly. Rows are
/// emitted in (site, time) order.
pub fn emit<W: Write>(ds: &Dataset, schema: &ColumnSchema, out: W) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_writer(out);

    let mut header: Vec<&str> = vec![&schema.site, &schema.time, &schema.qc];
    header.extend(schema.continuous.iter().map(String::as_str));
    header.push(&schema.pft);
    header.push(&schema.et);
    header.push(&schema.gpp);
    header.push(&schema.nee);
    let with_coords = schema.lat.is_some() && schema.lon.is_some();
    if with_coords {
        header.push(schema.lat.as_deref().unwrap());
        header.push(schema.lon.as_deref().unwrap());
    }
    writer.write_record(&header).map_err(io_like)?;

    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for rec in ds.iter_records() {
        let meta = ds.meta(&rec.site).expect("record site has meta");
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        fields.push(rec.site.to_string());
        fields.push(rec.time.to_string());
        fields.push(if rec.qc { "1" } else { "0" }.to_string());
        fields.extend(rec.features.continuous.iter().map(|v| v.to_string()));
        fields.push(rec.features.pft.to_string());
        fields.push(rec.targets.et.to_string());
        fields.push(rec.targets.gpp.to_string());
        fields.push(rec.targets.nee.to_string());
        if with_coords {
            fields.push(fmt_opt(meta.lat));
            fields.push(fmt_opt(meta.lon));
        }
        writer.write_record(&fields).map_err(io_like)?;
    }
    writer.flush()?;
    Ok(())
}

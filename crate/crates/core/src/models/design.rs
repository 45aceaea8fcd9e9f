//! Feature expansion and the column-major design matrix.
//!
//! Dataset storage keeps PFT categorical; models see it one-hot encoded.
//! Columns are stored contiguously because both the OLS normal equations
//! and the GBT histogram builder sweep one feature at a time.

use crate::dataset::{FeatureVector, HourlyRecord, Pft, Target, CONTINUOUS_NAMES, N_CONTINUOUS};

/// Width of the expanded feature vector: 12 continuous + 14 one-hot PFT.
pub const N_DESIGN: usize = N_CONTINUOUS + Pft::ALL.len();

/// Expanded column names, continuous first, then `PFT=<class>`.
pub fn design_names() -> Vec<String> {
    let mut names: Vec<String> = CONTINUOUS_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(Pft::ALL.iter().map(|p| format!("PFT={p}")));
    names
}

/// One-hot expand a feature vector; the PFT block sums to exactly 1.
pub fn expand_features(fv: &FeatureVector) -> [f64; N_DESIGN] {
    let mut row = [0.0; N_DESIGN];
    row[..N_CONTINUOUS].copy_from_slice(&fv.continuous);
    row[N_CONTINUOUS + fv.pft.index()] = 1.0;
    row
}

/// Column-major numeric matrix. Width is not fixed to [`N_DESIGN`]: the
/// boosting and least-squares cores are generic over any design.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl DesignMatrix {
    /// Build from columns; all columns must share one length.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(
            columns.iter().all(|c| c.len() == n_rows),
            "ragged design columns"
        );
        DesignMatrix { columns, n_rows }
    }

    /// Expand records into the canonical 26-column design.
    pub fn from_records(records: &[&HourlyRecord]) -> Self {
        let mut columns: Vec<Vec<f64>> = (0..N_DESIGN)
            .map(|_| Vec::with_capacity(records.len()))
            .collect();
        for rec in records {
            let row = expand_features(&rec.features);
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        DesignMatrix {
            columns,
            n_rows: records.len(),
        }
    }

    /// Expand feature vectors, optionally dropping one continuous column
    /// (shift diagnostics fit classifiers without the binning covariate).
    pub fn from_features(rows: &[&FeatureVector], skip_continuous: Option<usize>) -> Self {
        let keep: Vec<usize> = (0..N_DESIGN)
            .filter(|j| skip_continuous != Some(*j))
            .collect();
        let mut columns = vec![Vec::with_capacity(rows.len()); keep.len()];
        for fv in rows {
            let row = expand_features(fv);
            for (col, &j) in columns.iter_mut().zip(&keep) {
                col.push(row[j]);
            }
        }
        DesignMatrix {
            columns,
            n_rows: rows.len(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Materialize one row (used by small-matrix tests, not hot paths).
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Extract the selected target from records, in order.
pub fn target_column(records: &[&HourlyRecord], target: Target) -> Vec<f64> {
    records.iter().map(|r| r.targets.get(target)).collect()
}

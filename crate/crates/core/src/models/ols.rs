//! Ordinary least squares on the expanded design.
//!
//! Columns are centered and scaled before solving the normal equations,
//! so the intercept separates out and the Gram matrix is well
//! conditioned for ordinary data. Exactly collinear designs (the
//! one-hot dummy trap, duplicated columns) make the Gram matrix
//! singular; those fall back to a pseudo-inverse built from a Jacobi
//! eigendecomposition, which picks the minimum-norm solution among the
//! least-squares optima without biasing the fitted values.

use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::ModelError;

/// Eigenvalues below `RCOND_REL * p * lambda_max` are treated as zero
/// (exact collinearity blurred by accumulation roundoff) in the
/// pseudo-inverse fallback.
const RCOND_REL: f64 = 1e-12;

/// Fitted least-squares model over a fixed-width design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OlsModel {
    /// Per-column centering offsets.
    pub means: Vec<f64>,
    /// Per-column scale divisors (1 for constant columns).
    pub scales: Vec<f64>,
    /// Coefficients in standardized space.
    pub std_coefs: Vec<f64>,
    /// Intercept in standardized space (= mean of y).
    pub intercept: f64,
}

impl OlsModel {
    /// Minimize squared error over affine functions of the design.
    pub fn fit(x: &DesignMatrix, y: &[f64]) -> Result<Self, ModelError> {
        let n = x.n_rows();
        let p = x.n_cols();
        if n == 0 || y.len() != n {
            return Err(ModelError::EmptyTraining);
        }

        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = var.sqrt();
            means.push(mean);
            scales.push(if scale > 0.0 { scale } else { 1.0 });
        }

        let y_mean = y.iter().sum::<f64>() / n as f64;

        // Gram matrix and right-hand side in standardized space.
        let std_val = |row: usize, col: usize| (x.value(row, col) - means[col]) / scales[col];
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for j in 0..p {
            for k in j..p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += std_val(i, j) * std_val(i, k);
                }
                gram[j * p + k] = acc;
                gram[k * p + j] = acc;
            }
            let mut acc = 0.0;
            for (i, yi) in y.iter().enumerate() {
                acc += std_val(i, j) * (yi - y_mean);
            }
            rhs[j] = acc;
        }

        if !gram.iter().chain(&rhs).all(|v| v.is_finite()) {
            return Err(ModelError::Numeric(
                "non-finite values in the normal equations".into(),
            ));
        }

        // Plain Cholesky first; the pseudo-inverse runs only if the Gram
        // matrix is singular, so well-posed fits are untouched.
        let std_coefs = match cholesky_solve(&gram, &rhs, p) {
            Some(beta) => beta,
            None => min_norm_solve(&gram, &rhs, p),
        };

        Ok(OlsModel {
            means,
            scales,
            std_coefs,
            intercept: y_mean,
        })
    }

    /// Predict one expanded row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for (j, &v) in row.iter().enumerate() {
            acc += self.std_coefs[j] * (v - self.means[j]) / self.scales[j];
        }
        acc
    }

    pub fn predict_design(&self, x: &DesignMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| {
                let mut acc = self.intercept;
                for j in 0..x.n_cols() {
                    acc += self.std_coefs[j] * (x.value(i, j) - self.means[j]) / self.scales[j];
                }
                acc
            })
            .collect()
    }

    /// Coefficients mapped back to the original feature scale,
    /// returned as (slopes, intercept).
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let slopes: Vec<f64> = self
            .std_coefs
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| b / s)
            .collect();
        let offset: f64 = slopes.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        (slopes, self.intercept - offset)
    }
}

/// Solve A x = b for symmetric positive-definite A (row-major, p×p).
/// Returns None when a pivot is not strictly positive.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    // Decompose A = L Lᵀ.
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= l[j * p + k] * l[j * p + k];
        }
        // Relative tolerance guards against forward-error "successes"
        // on singular matrices that would explode the coefficients.
        if diag <= 1e-12 * a[j * p + j].abs().max(1e-300) {
            return None;
        }
        let diag = diag.sqrt();
        l[j * p + j] = diag;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = v / diag;
        }
    }
    // Forward then backward substitution.
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * p + k] * z[k];
        }
        z[i] = v / l[i * p + i];
    }
    let mut xvec = vec![0.0; p];
    for i in (0..p).rev() {
        let mut v = z[i];
        for k in (i + 1)..p {
            v -= l[k * p + i] * xvec[k];
        }
        xvec[i] = v / l[i * p + i];
    }
    Some(xvec)
}

/// Minimum-norm least-squares solution of A x = b for symmetric
/// positive-semidefinite A: eigenvalues at or below the rcond cutoff are
/// dropped, the rest inverted. Fitted values equal those of every other
/// least-squares optimum; the coefficient vector is the shortest one.
fn min_norm_solve(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let (eigvals, vecs) = jacobi_eigen(a, p);
    let lambda_max = eigvals.iter().cloned().fold(0.0, f64::max);
    let cutoff = RCOND_REL * p as f64 * lambda_max;
    let mut x = vec![0.0; p];
    for k in 0..p {
        if eigvals[k] <= cutoff {
            continue;
        }
        let proj: f64 = (0..p).map(|j| vecs[j * p + k] * b[j]).sum();
        let scale = proj / eigvals[k];
        for j in 0..p {
            x[j] += scale * vecs[j * p + k];
        }
    }
    x
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major,
/// p×p). Returns eigenvalues and an orthogonal matrix whose column k
/// (entries `vecs[j*p + k]`) is the eigenvector for eigenvalue k.
fn jacobi_eigen(a: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; p * p];
    for j in 0..p {
        v[j * p + j] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = frob * 1e-15;
    for _sweep in 0..64 {
        let off: f64 = (0..p)
            .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
            .map(|(i, j)| m[i * p + j] * m[i * p + j])
            .sum::<f64>()
            .sqrt();
        if off <= stop {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = m[i * p + j];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[j * p + j] - m[i * p + i]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[i * p + k];
                    let mjk = m[j * p + k];
                    m[i * p + k] = c * mik - s * mjk;
                    m[j * p + k] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[k * p + i];
                    let mkj = m[k * p + j];
                    m[k * p + i] = c * mki - s * mkj;
                    m[k * p + j] = s * mki + c * mkj;
                    let vki = v[k * p + i];
                    let vkj = v[k * p + j];
                    v[k * p + i] = c * vki - s * vkj;
                    v[k * p + j] = s * vki + c * vkj;
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..p).map(|j| m[j * p + j]).collect();
    (eigvals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal, uniform_f64};

    fn fit_design(cols: Vec<Vec<f64>>, y: &[f64]) -> OlsModel {
        OlsModel::fit(&DesignMatrix::from_columns(cols), y).unwrap()
    }

    #[test]
    fn recovers_exact_line() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let model = fit_design(vec![x], &y);
        let (slopes, intercept) = model.raw_coefficients();
        assert!((slopes[0] - 2.0).abs() < 1e-8, "slope {}", slopes[0]);
        assert!((intercept - 1.0).abs() < 1e-8, "intercept {intercept}");
    }

    #[test]
    fn constant_target_gives_flat_fit() {
        let mut rng = rng_from_seed(3);
        let x: Vec<f64> = (0..40).map(|_| standard_normal(&mut rng)).collect();
        let y = vec![5.0; 40];
        let model = fit_design(vec![x], &y);
        let (slopes, intercept) = model.raw_coefficients();
        assert!(slopes[0].abs() < 1e-8);
        assert!((intercept - 5.0).abs() < 1e-8);
    }

    #[test]
    fn duplicated_column_matches_pseudo_inverse_residuals() {
        // 10-row toy; the duplicated design is singular, so the
        // pseudo-inverse fallback engages; fitted values must match the
        // clean fit.
        let mut rng = rng_from_seed(11);
        let x: Vec<f64> = (0..10).map(|_| uniform_f64(&mut rng) * 4.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 1.5 * v - 2.0 + 0.1 * standard_normal(&mut rng))
            .collect();
        let clean = fit_design(vec![x.clone()], &y);
        let dup = fit_design(vec![x.clone(), x.clone()], &y);
        let xm = DesignMatrix::from_columns(vec![x.clone()]);
        let xd = DesignMatrix::from_columns(vec![x.clone(), x]);
        let pred_clean = clean.predict_design(&xm);
        let pred_dup = dup.predict_design(&xd);
        for (a, b) in pred_clean.iter().zip(&pred_dup) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(dup.std_coefs.iter().all(|c| c.is_finite()));
        // Min-norm splits the shared coefficient evenly across the twins.
        assert!(
            (dup.std_coefs[0] - dup.std_coefs[1]).abs() < 1e-9,
            "{} vs {}",
            dup.std_coefs[0],
            dup.std_coefs[1]
        );
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let mut rng = rng_from_seed(7);
        let n = 200;
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                cols[0][i] - 0.5 * cols[2][i] + 3.0 + standard_normal(&mut rng)
            })
            .collect();
        let x = DesignMatrix::from_columns(cols);
        let model = OlsModel::fit(&x, &y).unwrap();
        let pred = model.predict_design(&x);
        for j in 0..x.n_cols() {
            let col = x.column(j);
            let scale = col.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            let dot: f64 = (0..n).map(|i| (y[i] - pred[i]) * col[i]).sum();
            assert!(
                dot.abs() <= 1e-6 * n as f64 * scale,
                "column {j} dot {dot}"
            );
        }
    }

    #[test]
    fn empty_training_rejected() {
        let err = OlsModel::fit(&DesignMatrix::from_columns(vec![vec![]]), &[]);
        assert!(matches!(err, Err(ModelError::EmptyTraining)));
    }
}

//! Classical PCA on flattened landmark configurations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShapeError};
use crate::landmarks::unflatten;
use crate::linalg::{fix_sign, sym_eigen_desc};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean_vector: DVector<f64>,
    /// `k_max × 3N`, orthonormal rows.
    loadings: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// `n × k_max`.
    scores: DMatrix<f64>,
}

impl PcaModel {
    pub fn mean_vector(&self) -> &DVector<f64> {
        &self.mean_vector
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn k_max(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Scores of new flattened rows against the fitted mean and loadings.
    pub fn project(&self, flattened: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if flattened.ncols() != self.mean_vector.len() {
            return Err(ShapeError::DimensionMismatch(format!(
                "rows have {} entries, model expects {}",
                flattened.ncols(),
                self.mean_vector.len()
            )));
        }
        let mut centered = flattened.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean_vector.transpose();
        }
        Ok(centered * self.loadings.transpose())
    }
}

/// PCA of the rows of `flattened` (`n × 3N`), keeping `min(n − 1, 3N)` components.
///
/// When `3N > n` the Gram route is used and components beyond the numerical
/// rank are dropped.
pub fn pca_fit(flattened: &DMatrix<f64>) -> Result<PcaModel> {
    let n = flattened.nrows();
    if n < 2 {
        return Err(ShapeError::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    if flattened.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::invalid("non-finite PCA input"));
    }
    let d = flattened.ncols();
    let mean_vector = DVector::from_iterator(d, flattened.column_iter().map(|c| c.mean()));
    let mut centered = flattened.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean_vector.transpose();
    }
    let k_max = (n - 1).min(d);
    // the smaller Gram matrix gives the same nonzero spectrum
    let (values, loadings) = if d <= n {
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let (values, vectors) = sym_eigen_desc(&cov)?;
        (values, vectors.columns(0, k_max).transpose())
    } else {
        let gram = &centered * centered.transpose() / (n - 1) as f64;
        let (values, vectors) = sym_eigen_desc(&gram)?;
        // null directions of the Gram matrix carry no loading
        let top = values[0].max(0.0);
        let k_max = values.iter().take(k_max).filter(|&&v| v > 1e-12 * top).count().max(1);
        let mut loadings = DMatrix::zeros(k_max, d);
        for k in 0..k_max {
            let v = centered.transpose() * vectors.column(k);
            let norm = v.norm();
            if norm > 0.0 {
                loadings.row_mut(k).copy_from(&(v / norm).transpose());
            }
        }
        (values, loadings)
    };
    let mut loadings = loadings;
    for mut row in loadings.row_iter_mut() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        fix_sign(&mut v);
        row.copy_from_slice(&v);
    }
    let k_max = loadings.nrows();
    // rows equal up to rounding carry no variance at all
    let constant = centered.amax() <= 1e-12 * flattened.amax();
    let eigenvalues = DVector::from_iterator(
        k_max,
        values.iter().take(k_max).map(|&v| if constant { 0.0 } else { v.max(0.0) }),
    );
    let scores = if constant { DMatrix::zeros(n, k_max) } else { &centered * loadings.transpose() };
    Ok(PcaModel { mean_vector, loadings, eigenvalues, scores })
}

/// Rank-`k` reconstruction `mean + Σ_{j<k} s_j · loading_j`, reshaped to `N × 3`.
pub fn pca_reconstruct(model: &PcaModel, scores: &[f64], k: usize) -> Result<DMatrix<f64>> {
    if k > model.k_max() || k > scores.len() {
        return Err(ShapeError::TooManyComponents {
            requested: k,
            available: model.k_max().min(scores.len()),
        });
    }
    let mut v = model.mean_vector.clone();
    for j in 0..k {
        v += scores[j] * model.loadings.row(j).transpose();
    }
    Ok(unflatten(v.as_slice()))
}

use nalgebra::{DMatrix, DVector};

use super::{argmax, class_counts};
use crate::error::{Result, ShapeError};

/// Relative ridge `δ` added to the pooled covariance as `δ · trace / k`.
pub const LDA_RIDGE: f64 = 1e-8;

/// Linear discriminant analysis with pooled covariance and empirical priors.
#[derive(Debug, Clone)]
pub struct LdaModel {
    /// Per class: `Σ⁻¹μ_c`, or `None` for classes absent from training.
    coefs: Vec<Option<DVector<f64>>>,
    /// `−½ μ_cᵀΣ⁻¹μ_c + ln π_c`.
    offsets: Vec<f64>,
}

impl LdaModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let (n, k) = x.shape();
        let counts = class_counts(labels, n_classes);
        if let Some(c) = counts.iter().position(|&c| c == 1) {
            return Err(ShapeError::InsufficientClassData(format!("class {c} has a single training member")));
        }
        let present = counts.iter().filter(|&&c| c > 0).count();
        if present < 2 {
            return Err(ShapeError::InsufficientClassData("fewer than two classes in training".into()));
        }

        let mut means = vec![DVector::zeros(k); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            means[l] += x.row(i).transpose();
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            if c > 0 {
                *m /= c as f64;
            }
        }
        let mut pooled = DMatrix::zeros(k, k);
        for (i, &l) in labels.iter().enumerate() {
            let d = x.row(i).transpose() - &means[l];
            pooled += &d * d.transpose();
        }
        pooled /= (n.saturating_sub(present)).max(1) as f64;
        let trace = pooled.trace();
        let ridge = LDA_RIDGE * if trace > 0.0 { trace / k as f64 } else { 1.0 };
        for j in 0..k {
            pooled[(j, j)] += ridge;
        }
        let chol = pooled
            .cholesky()
            .ok_or_else(|| ShapeError::Numerical("pooled covariance not positive definite".into()))?;

        let mut coefs = Vec::with_capacity(n_classes);
        let mut offsets = Vec::with_capacity(n_classes);
        for (m, &c) in means.iter().zip(&counts) {
            if c == 0 {
                coefs.push(None);
                offsets.push(f64::NEG_INFINITY);
                continue;
            }
            let a = chol.solve(m);
            offsets.push(-0.5 * m.dot(&a) + (c as f64 / n as f64).ln());
            coefs.push(Some(a));
        }
        Ok(Self { coefs, offsets })
    }

    /// Linear discriminant scores, one row per sample and one column per class.
    pub fn discriminants(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), self.coefs.len(), |i, c| match &self.coefs[c] {
            Some(a) => x.row(i).dot(&a.transpose()) + self.offsets[c],
            None => f64::NEG_INFINITY,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let d = self.discriminants(x);
        d.row_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_at_class_mean_is_assigned_to_it() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0, 6.0, 5.0, 5.0, 6.0]);
        let labels = [0, 0, 0, 1, 1, 1];
        let m = LdaModel::fit(&x, &labels, 2).unwrap();
        let probe = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0 / 3.0, 16.0 / 3.0, 16.0 / 3.0]);
        assert_eq!(m.predict(&probe), vec![0, 1]);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
        assert!(matches!(LdaModel::fit(&x, &[0, 0, 1], 2), Err(ShapeError::InsufficientClassData(_))));
    }
}

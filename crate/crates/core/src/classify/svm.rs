use nalgebra::{DMatrix, DVector};

use super::class_counts;
use crate::error::{Result, ShapeError};

pub const SVM_C: f64 = 1.0;
/// Stopping tolerance on the duality gap relative to `max(1, primal)`.
pub const SVM_GAP_TOL: f64 = 1e-6;
pub const SVM_MAX_EPOCHS: usize = 20_000;

/// Binary soft-margin linear SVM `sign(w·x + b)`.
///
/// The bias is a weight on a constant feature equal to 1 and is regularised
/// together with `w`.
#[derive(Debug, Clone)]
pub struct BinarySvm {
    w: DVector<f64>,
    b: f64,
    converged: bool,
    gap: f64,
}

impl BinarySvm {
    /// `y` holds +1 / −1 targets.
    pub fn fit(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, k) = x.shape();
        if n != y.len() {
            return Err(ShapeError::DimensionMismatch(format!("{n} rows but {} targets", y.len())));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(ShapeError::invalid("SVM targets must be +1 or -1"));
        }
        let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
        let qii: Vec<f64> = rows.iter().map(|r| r.norm_squared() + 1.0).collect();
        let mut alpha = vec![0.0; n];
        let mut w = DVector::zeros(k);
        let mut b = 0.0;
        let mut converged = false;
        let mut gap = f64::INFINITY;
        for _ in 0..SVM_MAX_EPOCHS {
            for i in 0..n {
                let g = y[i] * (w.dot(&rows[i]) + b) - 1.0;
                let next = (alpha[i] - g / qii[i]).clamp(0.0, SVM_C);
                let delta = next - alpha[i];
                if delta != 0.0 {
                    w.axpy(delta * y[i], &rows[i], 1.0);
                    b += delta * y[i];
                    alpha[i] = next;
                }
            }
            let half_norm = 0.5 * (w.norm_squared() + b * b);
            let hinge: f64 = (0..n).map(|i| (1.0 - y[i] * (w.dot(&rows[i]) + b)).max(0.0)).sum();
            let primal = half_norm + SVM_C * hinge;
            let dual = alpha.iter().sum::<f64>() - half_norm;
            gap = primal - dual;
            if gap <= SVM_GAP_TOL * primal.max(1.0) {
                converged = true;
                break;
            }
        }
        Ok(Self { w, b, converged, gap })
    }

    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter().map(|r| r.dot(&self.w.transpose()) + self.b).collect()
    }

    pub fn weights(&self) -> (&DVector<f64>, f64) {
        (&self.w, self.b)
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn duality_gap(&self) -> f64 {
        self.gap
    }
}

/// One-vs-one linear SVMs with majority voting; ties go to the lowest class index.
#[derive(Debug, Clone)]
pub struct SvmModel {
    n_classes: usize,
    /// `(a, b, machine)` with `a < b`; positive decisions vote for `a`.
    pairs: Vec<(usize, usize, BinarySvm)>,
}

impl SvmModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let counts = class_counts(labels, n_classes);
        let present: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
        if present.len() < 2 {
            return Err(ShapeError::InsufficientClassData("fewer than two classes in training".into()));
        }
        let mut pairs = Vec::new();
        for (ia, &a) in present.iter().enumerate() {
            for &b in &present[ia + 1..] {
                let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
                let sub = x.select_rows(&idx);
                let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
                pairs.push((a, b, BinarySvm::fit(&sub, &y)?));
            }
        }
        Ok(Self { n_classes, pairs })
    }

    pub fn converged(&self) -> bool {
        self.pairs.iter().all(|(_, _, m)| m.converged())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let mut votes = vec![vec![0usize; self.n_classes]; x.nrows()];
        for (a, b, m) in &self.pairs {
            for (i, d) in m.decision(x).into_iter().enumerate() {
                votes[i][if d > 0.0 { *a } else { *b }] += 1;
            }
        }
        votes
            .into_iter()
            .map(|v| {
                let top = *v.iter().max().unwrap_or(&0);
                v.iter().position(|&c| c == top).unwrap_or(0)
            })
            .collect()
    }
}

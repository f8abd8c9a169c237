use nalgebra::{DMatrix, DVector};

use super::{argmax, class_counts};
use crate::error::{Result, ShapeError};

/// L2 penalty weight on the coefficients (intercepts are unpenalised).
pub const MULTINOMIAL_PENALTY: f64 = 1e-6;
pub const MULTINOMIAL_MAX_ITER: usize = 500;
pub const MULTINOMIAL_GRAD_TOL: f64 = 1e-6;

/// Softmax parameters: `weights` is `C × k`, `intercepts` has length `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialParams {
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
}

impl MultinomialParams {
    pub fn zeros(n_classes: usize, k: usize) -> Self {
        Self { weights: DMatrix::zeros(n_classes, k), intercepts: DVector::zeros(n_classes) }
    }

    fn norm_squared(&self) -> f64 {
        self.weights.norm_squared() + self.intercepts.norm_squared()
    }

    fn axpy(&self, step: f64, dir: &MultinomialParams) -> MultinomialParams {
        MultinomialParams {
            weights: &self.weights + &dir.weights * step,
            intercepts: &self.intercepts + &dir.intercepts * step,
        }
    }

    /// Class log-probabilities, `n × C`.
    pub fn log_probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = x * self.weights.transpose();
        for mut row in eta.row_iter_mut() {
            row += self.intercepts.transpose();
            let mx = row.max();
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.add_scalar_mut(-lse);
        }
        eta
    }
}

/// Penalised mean log-likelihood `(1/n) Σ log p(y_i | x_i) − ½ · penalty · ‖W‖²`.
pub fn multinomial_objective(params: &MultinomialParams, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let logp = params.log_probabilities(x);
    let ll: f64 = labels.iter().enumerate().map(|(i, &l)| logp[(i, l)]).sum::<f64>() / labels.len() as f64;
    ll - 0.5 * MULTINOMIAL_PENALTY * params.weights.norm_squared()
}

/// Gradient of [`multinomial_objective`] with respect to the parameters.
pub fn multinomial_gradient(params: &MultinomialParams, x: &DMatrix<f64>, labels: &[usize]) -> MultinomialParams {
    let n = labels.len() as f64;
    let mut resid = params.log_probabilities(x).map(|v| -v.exp());
    for (i, &l) in labels.iter().enumerate() {
        resid[(i, l)] += 1.0;
    }
    let weights = resid.transpose() * x / n - &params.weights * MULTINOMIAL_PENALTY;
    let intercepts = DVector::from_iterator(resid.ncols(), resid.column_iter().map(|c| c.sum() / n));
    MultinomialParams { weights, intercepts }
}

/// Softmax regression fitted by gradient ascent with backtracking.
#[derive(Debug, Clone)]
pub struct MultinomialModel {
    /// Training classes in increasing order; parameters are indexed by position here.
    classes: Vec<usize>,
    params: MultinomialParams,
    converged: bool,
    iterations: usize,
}

impl MultinomialModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let counts = class_counts(labels, n_classes);
        let classes: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
        if classes.len() < 2 {
            return Err(ShapeError::InsufficientClassData("fewer than two classes in training".into()));
        }
        let mut index = vec![usize::MAX; n_classes];
        for (i, &c) in classes.iter().enumerate() {
            index[c] = i;
        }
        let y: Vec<usize> = labels.iter().map(|&l| index[l]).collect();
        let n = labels.len() as f64;

        let mut params = MultinomialParams::zeros(classes.len(), x.ncols());
        for (i, &c) in classes.iter().enumerate() {
            params.intercepts[i] = (counts[c] as f64 / n).ln();
        }
        let mut value = multinomial_objective(&params, x, &y);
        let mut step = 1.0;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MULTINOMIAL_MAX_ITER {
            let grad = multinomial_gradient(&params, x, &y);
            let g2 = grad.norm_squared();
            if g2.sqrt() < MULTINOMIAL_GRAD_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = params.axpy(step, &grad);
                let v = multinomial_objective(&cand, x, &y);
                if v >= value + 1e-4 * step * g2 {
                    params = cand;
                    value = v;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // no ascent possible at machine precision
                converged = g2.sqrt() < 1e-3;
                break;
            }
            step *= 2.0;
        }
        Ok(Self { classes, params, converged, iterations })
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn params(&self) -> &MultinomialParams {
        &self.params
    }

    /// Class probabilities over all training classes, `n × C_train`.
    pub fn probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.params.log_probabilities(x).map(f64::exp)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let logp = self.params.log_probabilities(x);
        logp.row_iter().map(|r| self.classes[argmax(r.iter().copied())]).collect()
    }
}

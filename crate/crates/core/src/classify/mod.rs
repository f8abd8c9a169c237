//! Classifiers over component scores and the stratified cross-validation harness.
//!
//! Labels are class indices `0..n_classes`. Every classifier standardizes its
//! inputs with statistics of the training rows, so predictions are invariant
//! to positive per-feature affine rescaling of the scores.

mod cv;
mod lda;
mod multinomial;
mod svm;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShapeError};

pub use cv::{cross_validate, stratified_kfold, CvReport, FixedScores, ScoreExtractor};
pub use lda::LdaModel;
pub use multinomial::{multinomial_gradient, multinomial_objective, MultinomialModel, MultinomialParams};
pub use svm::{BinarySvm, SvmModel};

/// Floor applied to training standard deviations.
pub const SD_FLOOR: f64 = 1e-12;

/// Scores paired with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scores: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(scores: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        check_training(&scores, &labels, n_classes)?;
        Ok(Self { scores, labels, n_classes })
    }
}

pub(crate) fn check_training(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(ShapeError::DimensionMismatch(format!(
            "{} score rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if n_classes < 2 {
        return Err(ShapeError::invalid("at least two classes are required"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(ShapeError::invalid(format!("label {bad} out of range for {n_classes} classes")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::invalid("non-finite score"));
    }
    Ok(())
}

pub(crate) fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Per-column centering and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: DVector<f64>,
    sd: DVector<f64>,
}

impl Standardizer {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(ShapeError::invalid(format!("standardization needs at least 2 rows, got {n}")));
        }
        let k = train.ncols();
        let mean = DVector::from_iterator(k, train.column_iter().map(|c| c.mean()));
        let sd = DVector::from_iterator(
            k,
            train.column_iter().zip(mean.iter()).map(|(c, m)| {
                let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                var.sqrt().max(SD_FLOOR)
            }),
        );
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(ShapeError::DimensionMismatch(format!(
                "{} columns, standardizer fitted on {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.sd[j]))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sd(&self) -> &DVector<f64> {
        &self.sd
    }
}

/// Fits a standardizer on `train` and applies it to both matrices.
pub fn standardize(train: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = Standardizer::fit(train)?;
    Ok((s.apply(train)?, s.apply(test)?))
}

/// Index of the largest score; ties go to the lowest index.
pub(crate) fn argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, s) in scores.into_iter().enumerate() {
        if s > best {
            best = s;
            arg = i;
        }
    }
    arg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassifierKind {
    Lda,
    Multinomial,
    Svm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Lda, ClassifierKind::Multinomial, ClassifierKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Lda => "lda",
            ClassifierKind::Multinomial => "multinom",
            ClassifierKind::Svm => "svm",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lda" => Ok(ClassifierKind::Lda),
            "multinom" | "multinomial" | "logistic" => Ok(ClassifierKind::Multinomial),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(ShapeError::invalid(format!("unknown classifier '{other}'"))),
        }
    }
}

/// A trained classifier together with its input standardization.
#[derive(Debug, Clone)]
pub struct FittedClassifier {
    standardizer: Standardizer,
    model: Model,
}

#[derive(Debug, Clone)]
enum Model {
    Lda(LdaModel),
    Multinomial(MultinomialModel),
    Svm(SvmModel),
}

impl FittedClassifier {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.standardizer.apply(x)?;
        Ok(match &self.model {
            Model::Lda(m) => m.predict(&z),
            Model::Multinomial(m) => m.predict(&z),
            Model::Svm(m) => m.predict(&z),
        })
    }

    /// `false` only for a multinomial fit that hit its iteration cap.
    pub fn converged(&self) -> bool {
        match &self.model {
            Model::Multinomial(m) => m.converged(),
            Model::Svm(m) => m.converged(),
            Model::Lda(_) => true,
        }
    }
}

/// Standardizes `x` and fits the requested classifier.
pub fn fit_classifier(kind: ClassifierKind, x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<FittedClassifier> {
    check_training(x, labels, n_classes)?;
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.apply(x)?;
    let model = match kind {
        ClassifierKind::Lda => Model::Lda(LdaModel::fit(&z, labels, n_classes)?),
        ClassifierKind::Multinomial => Model::Multinomial(MultinomialModel::fit(&z, labels, n_classes)?),
        ClassifierKind::Svm => Model::Svm(SvmModel::fit(&z, labels, n_classes)?),
    };
    Ok(FittedClassifier { standardizer, model })
}

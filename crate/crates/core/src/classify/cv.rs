use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fit_classifier, ClassifierKind};
use crate::error::{Result, ShapeError};
use crate::linalg::{mean, sample_sd};

/// Produces classifier inputs for one fold.
///
/// Implementations fit every data-dependent transform on the `train` indices
/// only and project the `test` indices through those transforms.
pub trait ScoreExtractor: Sync {
    /// Returns `(train scores, test scores)` with rows in the order of the index slices.
    fn extract(&self, train: &[usize], test: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Precomputed scores; folds simply select rows.
#[derive(Debug, Clone)]
pub struct FixedScores(pub DMatrix<f64>);

impl ScoreExtractor for FixedScores {
    fn extract(&self, train: &[usize], test: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.0.select_rows(train), self.0.select_rows(test)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub classifier: ClassifierKind,
    pub per_fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across folds.
    pub sd_accuracy: f64,
    /// `confusion[true][predicted]` summed over folds.
    pub confusion: Vec<Vec<usize>>,
    /// `false` if any fold's classifier stopped at its iteration cap.
    pub converged: bool,
}

/// Fold index in `0..k` for every sample.
///
/// Each class is shuffled with a generator seeded by `seed` and dealt
/// round-robin; the dealing position carries over between classes so total
/// fold sizes also differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(ShapeError::invalid(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(ShapeError::invalid(format!("{} samples cannot fill {k} folds", labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

/// Stratified `k`-fold cross-validation of each classifier in `classifiers`.
///
/// The extractor is refitted once per fold and its scores are shared by all
/// classifiers. Any fold failure fails the whole run.
pub fn cross_validate(
    extractor: &dyn ScoreExtractor,
    labels: &[usize],
    n_classes: usize,
    classifiers: &[ClassifierKind],
    k: usize,
    seed: u64,
) -> Result<Vec<CvReport>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(ShapeError::invalid(format!("label {bad} out of range for {n_classes} classes")));
    }
    let folds = stratified_kfold(labels, k, seed)?;
    let per_fold: Vec<Result<Vec<(Vec<usize>, Vec<usize>, bool)>>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
            let (xtr, xte) = extractor.extract(&train, &test).map_err(|e| e.context(format!("fold {}", f + 1)))?;
            let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            classifiers
                .iter()
                .map(|&kind| {
                    let model = fit_classifier(kind, &xtr, &ytr, n_classes)
                        .map_err(|e| e.context(format!("fold {} {kind}", f + 1)))?;
                    Ok((yte.clone(), model.predict(&xte)?, model.converged()))
                })
                .collect()
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(classifiers
        .iter()
        .enumerate()
        .map(|(c, &kind)| {
            let mut confusion = vec![vec![0; n_classes]; n_classes];
            let mut acc = Vec::with_capacity(k);
            let mut converged = true;
            for fold in &per_fold {
                let (truth, pred, ok) = &fold[c];
                converged &= ok;
                let mut hits = 0;
                for (&t, &p) in truth.iter().zip(pred) {
                    confusion[t][p] += 1;
                    hits += usize::from(t == p);
                }
                acc.push(if truth.is_empty() { 0.0 } else { hits as f64 / truth.len() as f64 });
            }
            CvReport {
                classifier: kind,
                mean_accuracy: mean(&acc),
                sd_accuracy: sample_sd(&acc),
                per_fold_accuracy: acc,
                confusion,
                converged,
            }
        })
        .collect())
}

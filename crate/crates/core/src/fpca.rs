//! Univariate FPCA per coordinate and the multivariate FPCA built on their scores.
//!
//! Curves are stored as rows of an `n × M` matrix over a shared uniform grid.
//! All inner products use trapezoid weights `w`; eigenfunctions are
//! orthonormal in that weighted inner product.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShapeError};
use crate::linalg::{fix_sign, is_uniform, sym_eigen_desc, trapezoid_weights};

/// Upper bound on univariate components kept per coordinate.
pub const MAX_UNIVARIATE_COMPONENTS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateFpcaModel {
    grid: Vec<f64>,
    weights: Vec<f64>,
    mean_fn: DVector<f64>,
    /// `J_p × M`, one eigenfunction per row.
    eigenfunctions: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// `n × J_p`.
    scores: DMatrix<f64>,
}

impl UnivariateFpcaModel {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean_fn(&self) -> &DVector<f64> {
        &self.mean_fn
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Keeps the leading `k` components.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.n_components() {
            return Err(ShapeError::TooManyComponents { requested: k, available: self.n_components() });
        }
        Ok(Self {
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            mean_fn: self.mean_fn.clone(),
            eigenfunctions: self.eigenfunctions.rows(0, k).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, k).into_owned(),
            scores: self.scores.columns(0, k).into_owned(),
        })
    }

    /// Quadrature scores of `samples` (rows on the model grid) after centering by the model mean.
    pub fn project(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.ncols() != self.grid.len() {
            return Err(ShapeError::DimensionMismatch(format!(
                "samples have {} grid points, model has {}",
                samples.ncols(),
                self.grid.len()
            )));
        }
        let mut weighted = samples.clone();
        for mut row in weighted.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean_fn[j]) * self.weights[j];
            }
        }
        Ok(weighted * self.eigenfunctions.transpose())
    }
}

fn check_samples(samples: &DMatrix<f64>, grid: &[f64]) -> Result<()> {
    if samples.ncols() != grid.len() {
        return Err(ShapeError::DimensionMismatch(format!(
            "samples have {} columns, grid has {} points",
            samples.ncols(),
            grid.len()
        )));
    }
    if grid.len() < 2 || !is_uniform(grid, 1e-9) {
        return Err(ShapeError::invalid("FPCA requires a uniform grid with at least 2 points"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::invalid("non-finite sample value"));
    }
    Ok(())
}

/// Univariate FPCA of the rows of `samples` keeping `j_p` components.
pub fn ufpca(samples: &DMatrix<f64>, grid: &[f64], j_p: usize) -> Result<UnivariateFpcaModel> {
    let n = samples.nrows();
    if n < 2 {
        return Err(ShapeError::invalid(format!("FPCA needs at least 2 curves, got {n}")));
    }
    check_samples(samples, grid)?;
    let m = grid.len();
    let available = (n - 1).min(m);
    if j_p == 0 || j_p > available {
        return Err(ShapeError::TooManyComponents { requested: j_p, available });
    }

    let mean_fn = DVector::from_iterator(m, samples.column_iter().map(|c| c.mean()));
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean_fn.transpose();
    }
    let weights = trapezoid_weights(grid);
    let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    // W^½ K W^½ with K = XcᵀXc / (n − 1)
    let mut scaled = centered.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= root[j];
    }
    let a = scaled.transpose() * &scaled / (n - 1) as f64;
    let (values, vectors) = sym_eigen_desc(&a)?;

    let mut eigenfunctions = DMatrix::zeros(j_p, m);
    for k in 0..j_p {
        let mut phi: Vec<f64> = (0..m).map(|j| vectors[(j, k)] / root[j]).collect();
        fix_sign(&mut phi);
        for j in 0..m {
            eigenfunctions[(k, j)] = phi[j];
        }
    }
    let eigenvalues = DVector::from_iterator(j_p, values.iter().take(j_p).map(|&v| v.max(0.0)));

    let mut model = UnivariateFpcaModel {
        grid: grid.to_vec(),
        weights,
        mean_fn,
        eigenfunctions,
        eigenvalues,
        scores: DMatrix::zeros(0, 0),
    };
    model.scores = model.project(samples)?;
    Ok(model)
}

/// Multivariate FPCA over the three coordinate processes.
#[derive(Debug, Clone, PartialEq)]
pub struct MfpcaModel {
    univariate: [UnivariateFpcaModel; 3],
    z_hat: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// `J × J`, eigenvectors of `Ẑ` as columns.
    eigvecs: DMatrix<f64>,
    /// Per coordinate, `J_out × M` with `ψ_j` restricted to that coordinate in row `j`.
    eigenfunctions: [DMatrix<f64>; 3],
    /// `n × J_out`.
    scores: DMatrix<f64>,
    n_components: usize,
}

impl MfpcaModel {
    pub fn univariate(&self) -> &[UnivariateFpcaModel; 3] {
        &self.univariate
    }

    pub fn z_hat(&self) -> &DMatrix<f64> {
        &self.z_hat
    }

    /// All `J` eigenvalues of `Ẑ`, nonincreasing.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn eigenfunctions(&self) -> &[DMatrix<f64>; 3] {
        &self.eigenfunctions
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Number of retained multivariate components `J_out`.
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Total number of univariate components `J = Σ J_p`.
    pub fn total_univariate(&self) -> usize {
        self.univariate.iter().map(|u| u.n_components()).sum()
    }

    pub fn grid(&self) -> &[f64] {
        self.univariate[0].grid()
    }

    /// Mean coordinate functions as an `M × 3` matrix.
    pub fn mean_curve(&self) -> DMatrix<f64> {
        let m = self.grid().len();
        DMatrix::from_fn(m, 3, |i, p| self.univariate[p].mean_fn()[i])
    }

    /// Truncated Karhunen–Loève reconstruction `mean + Σ_{j<k} s_j ψ_j` as an `M × 3` matrix.
    pub fn reconstruct(&self, scores: &[f64], k: usize) -> Result<DMatrix<f64>> {
        if k > self.n_components || k > scores.len() {
            return Err(ShapeError::TooManyComponents {
                requested: k,
                available: self.n_components.min(scores.len()),
            });
        }
        let mut out = self.mean_curve();
        for p in 0..3 {
            let psi = &self.eigenfunctions[p];
            for j in 0..k {
                for i in 0..out.nrows() {
                    out[(i, p)] += scores[j] * psi[(j, i)];
                }
            }
        }
        Ok(out)
    }

    /// Weighted inner product `⟨⟨f, g⟩⟩ = Σ_p ∫ f_p g_p` of two `M × 3` functions.
    pub fn inner(&self, f: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
        let w = self.univariate[0].weights();
        (0..3)
            .map(|p| (0..w.len()).map(|i| w[i] * f[(i, p)] * g[(i, p)]).sum::<f64>())
            .sum()
    }
}

/// Combines three univariate models into a multivariate model keeping `j_out` components.
pub fn mfpca(models: [UnivariateFpcaModel; 3], j_out: usize) -> Result<MfpcaModel> {
    let n = models[0].scores().nrows();
    for u in &models[1..] {
        if u.scores().nrows() != n {
            return Err(ShapeError::DimensionMismatch(format!(
                "univariate models fitted on {} and {} curves",
                n,
                u.scores().nrows()
            )));
        }
        if u.grid() != models[0].grid() {
            return Err(ShapeError::DimensionMismatch("univariate models use different grids".into()));
        }
    }
    let sizes: Vec<usize> = models.iter().map(|u| u.n_components()).collect();
    let total: usize = sizes.iter().sum();
    if j_out == 0 || j_out > total {
        return Err(ShapeError::TooManyComponents { requested: j_out, available: total });
    }

    let mut xi = DMatrix::zeros(n, total);
    let mut offset = 0;
    for u in &models {
        xi.columns_mut(offset, u.n_components()).copy_from(u.scores());
        offset += u.n_components();
    }
    let z_hat = xi.transpose() * &xi / (n - 1) as f64;
    let (eigenvalues, mut eigvecs) = sym_eigen_desc(&z_hat)?;
    for mut col in eigvecs.column_iter_mut() {
        fix_sign(col.as_mut_slice());
    }

    let m = models[0].grid().len();
    let mut eigenfunctions: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(j_out, m));
    let mut offset = 0;
    for (p, u) in models.iter().enumerate() {
        let block = eigvecs.view((offset, 0), (u.n_components(), j_out));
        eigenfunctions[p] = block.transpose() * u.eigenfunctions();
        offset += u.n_components();
    }
    let scores = &xi * eigvecs.columns(0, j_out);

    Ok(MfpcaModel {
        univariate: models,
        z_hat,
        eigenvalues,
        eigvecs,
        eigenfunctions,
        scores,
        n_components: j_out,
    })
}

/// Relative eigenvalue level below which univariate components are dropped by [`fit_mfpca`].
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Fits univariate models with up to `min(n − 1, M, max_univariate)` components
/// each, then the multivariate model keeping `min(J, max_components)` components.
///
/// Univariate components whose eigenvalue is below [`RANK_TOLERANCE`] times the
/// largest eigenvalue over all coordinates are dropped, so a constant
/// coordinate contributes no components.
pub fn fit_mfpca(
    coords: &[DMatrix<f64>; 3],
    grid: &[f64],
    max_univariate: usize,
    max_components: usize,
) -> Result<MfpcaModel> {
    let n = coords[0].nrows();
    if n < 2 {
        return Err(ShapeError::invalid(format!("FPCA needs at least 2 curves, got {n}")));
    }
    let j_p = (n - 1).min(grid.len()).min(max_univariate.max(1));
    let full = [
        ufpca(&coords[0], grid, j_p)?,
        ufpca(&coords[1], grid, j_p)?,
        ufpca(&coords[2], grid, j_p)?,
    ];
    let top = full.iter().map(|u| u.eigenvalues()[0]).fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(ShapeError::NoVariance);
    }
    let keep = |u: &UnivariateFpcaModel| u.eigenvalues().iter().take_while(|&&v| v > RANK_TOLERANCE * top).count();
    let models = [
        full[0].truncate(keep(&full[0]))?,
        full[1].truncate(keep(&full[1]))?,
        full[2].truncate(keep(&full[2]))?,
    ];
    let total: usize = models.iter().map(|u| u.n_components()).sum();
    mfpca(models, total.min(max_components.max(1)))
}

/// Multivariate scores of new curves given per coordinate as `n_new × M` matrices.
pub fn mfpca_project(model: &MfpcaModel, new_samples: &[DMatrix<f64>; 3]) -> Result<DMatrix<f64>> {
    let n = new_samples[0].nrows();
    if new_samples.iter().any(|s| s.nrows() != n) {
        return Err(ShapeError::DimensionMismatch("coordinate blocks have different row counts".into()));
    }
    let mut xi = DMatrix::zeros(n, model.total_univariate());
    let mut offset = 0;
    for (u, s) in model.univariate.iter().zip(new_samples) {
        xi.columns_mut(offset, u.n_components()).copy_from(&u.project(s)?);
        offset += u.n_components();
    }
    Ok(xi * model.eigvecs.columns(0, model.n_components))
}

/// Smallest `k` whose leading eigenvalues explain at least `threshold` of the total.
///
/// Negative eigenvalues (numerical slack) count as zero.
pub fn select_components(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ShapeError::invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::invalid("non-finite eigenvalue"));
    }
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(ShapeError::NoVariance);
    }
    let mut acc = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        // relative slack absorbs rounding in the cumulative sum
        if acc / total >= threshold - 1e-12 {
            return Ok(k + 1);
        }
    }
    Ok(eigenvalues.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    #[test]
    fn rank_one_sine() {
        let grid = uniform_grid(30);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<f64> = (0..50).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let samples = DMatrix::from_fn(50, 30, |i, j| c[i] * (2.0 * PI * grid[j]).sin());
        let u = ufpca(&samples, &grid, 5).unwrap();
        let ev = u.eigenvalues();
        assert!(ev[0] / ev.sum() > 0.9999);
        // eigenfunction equals sin(2πt) normalised in the weighted norm, up to sign
        let w = u.weights();
        let norm: f64 = (0..30).map(|j| w[j] * (2.0 * PI * grid[j]).sin().powi(2)).sum::<f64>().sqrt();
        let phi = u.eigenfunctions().row(0);
        let sign = phi[7].signum();
        for j in 0..30 {
            assert!((phi[j] - sign * (2.0 * PI * grid[j]).sin() / norm).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_curves_have_zero_eigenvalues() {
        let grid = uniform_grid(20);
        let samples = DMatrix::from_fn(5, 20, |_, j| grid[j].powi(2));
        let u = ufpca(&samples, &grid, 4).unwrap();
        assert!(u.eigenvalues().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn white_noise_full_reconstruction() {
        let grid = uniform_grid(30);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = DMatrix::from_fn(200, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = ufpca(&samples, &grid, 30).unwrap();
        let recon = u.scores() * u.eigenfunctions();
        for i in 0..200 {
            for j in 0..30 {
                let centered = samples[(i, j)] - u.mean_fn()[j];
                assert!((recon[(i, j)] - centered).abs() < 1e-8);
            }
        }
        // orthonormal under trapezoid quadrature
        let w = u.weights();
        let phi = u.eigenfunctions();
        for a in 0..30 {
            for b in 0..30 {
                let ip: f64 = (0..30).map(|j| w[j] * phi[(a, j)] * phi[(b, j)]).sum();
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_many_components() {
        let grid = uniform_grid(10);
        let samples = DMatrix::from_fn(4, 10, |i, j| (i * j) as f64);
        assert!(matches!(ufpca(&samples, &grid, 4), Err(ShapeError::TooManyComponents { .. })));
        assert!(ufpca(&samples, &grid, 3).is_ok());
    }

    fn independent_rank_one(n: usize, seed: u64) -> ([DMatrix<f64>; 3], Vec<f64>) {
        let grid = uniform_grid(30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sds = [2.0, 1.0, 0.5];
        // unit-norm shapes under the trapezoid rule on [0, 1]
        let shapes = [
            |t: f64| (2.0 * PI * t).sin(),
            |t: f64| (2.0 * PI * t).cos(),
            |t: f64| (4.0 * PI * t).sin(),
        ];
        let w = trapezoid_weights(&grid);
        let coords: [DMatrix<f64>; 3] = std::array::from_fn(|p| {
            let norm: f64 = (0..30).map(|j| w[j] * shapes[p](grid[j]).powi(2)).sum::<f64>().sqrt();
            // standardised draws so the sample variance is exactly sds[p]²
            let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mu = raw.iter().sum::<f64>() / n as f64;
            let sd = (raw.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let c: Vec<f64> = raw.iter().map(|x| sds[p] * (x - mu) / sd).collect();
            DMatrix::from_fn(n, 30, |i, j| c[i] * shapes[p](grid[j]) / norm)
        });
        (coords, grid)
    }

    #[test]
    fn independent_processes_recover_variances() {
        let (coords, grid) = independent_rank_one(500, 3);
        let model = fit_mfpca(&coords, &grid, 30, usize::MAX).unwrap();
        let ev = model.eigenvalues();
        for (got, want) in ev.iter().take(3).zip([4.0, 1.0, 0.25]) {
            assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn full_model_roundtrip_and_orthonormality() {
        let grid = uniform_grid(25);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: [DMatrix<f64>; 3] =
            std::array::from_fn(|_| DMatrix::from_fn(40, 25, |_, _| rng.sample::<f64, _>(StandardNormal)));
        let model = fit_mfpca(&coords, &grid, 30, usize::MAX).unwrap();
        let k = model.n_components();
        assert_eq!(k, 3 * 25);
        let mean = model.mean_curve();
        for i in 0..40 {
            let s: Vec<f64> = model.scores().row(i).iter().copied().collect();
            let recon = model.reconstruct(&s, k).unwrap();
            let orig = DMatrix::from_fn(25, 3, |t, p| coords[p][(i, t)]);
            let diff = &recon - &orig;
            let centered = &orig - &mean;
            assert!(model.inner(&diff, &diff).sqrt() < 1e-6 * model.inner(&centered, &centered).sqrt().max(1.0));
        }
        let psi = |j: usize| DMatrix::from_fn(25, 3, |t, p| model.eigenfunctions()[p][(j, t)]);
        for a in 0..10 {
            for b in 0..10 {
                let ip = model.inner(&psi(a), &psi(b));
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_coordinate_contributes_nothing() {
        let (mut coords, grid) = independent_rank_one(60, 5);
        coords[2] = DMatrix::zeros(60, 30);
        let model = fit_mfpca(&coords, &grid, 10, usize::MAX).unwrap();
        assert_eq!(model.univariate()[2].n_components(), 0);
        assert!(model.eigenfunctions()[2].amax() < 1e-12);
    }

    #[test]
    fn projection_consistency() {
        let (coords, grid) = independent_rank_one(80, 6);
        let model = fit_mfpca(&coords, &grid, 10, usize::MAX).unwrap();
        let projected = mfpca_project(&model, &coords).unwrap();
        assert!((projected - model.scores()).amax() < 1e-8);

        let mean = model.mean_curve();
        let as_rows = |f: &DMatrix<f64>| -> [DMatrix<f64>; 3] {
            std::array::from_fn(|p| DMatrix::from_fn(1, 30, |_, t| f[(t, p)]))
        };
        let s = mfpca_project(&model, &as_rows(&mean)).unwrap();
        assert!(s.amax() < 1e-8);

        let l1 = model.eigenvalues()[0].sqrt();
        let shifted = DMatrix::from_fn(30, 3, |t, p| mean[(t, p)] + l1 * model.eigenfunctions()[p][(0, t)]);
        let s = mfpca_project(&model, &as_rows(&shifted)).unwrap();
        assert!((s[(0, 0)] - l1).abs() < 1e-8);
        assert!(s.columns(1, s.ncols() - 1).amax() < 1e-8);
    }

    #[test]
    fn mismatched_models() {
        let grid = uniform_grid(10);
        let a = DMatrix::from_fn(5, 10, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0);
        let b = DMatrix::from_fn(6, 10, |i, j| ((i + 3) * (j + 1)) as f64 % 5.0);
        let models = [
            ufpca(&a, &grid, 2).unwrap(),
            ufpca(&b, &grid, 2).unwrap(),
            ufpca(&a, &grid, 2).unwrap(),
        ];
        assert!(matches!(mfpca(models, 3), Err(ShapeError::DimensionMismatch(_))));
    }

    #[test]
    fn component_selection() {
        assert_eq!(select_components(&[95.0, 5.0], 0.95).unwrap(), 1);
        assert_eq!(select_components(&[0.5, 0.3, 0.15, 0.05], 0.95).unwrap(), 3);
        assert_eq!(select_components(&[2.0], 0.95).unwrap(), 1);
        assert!(matches!(select_components(&[0.0, 0.0], 0.95), Err(ShapeError::NoVariance)));
    }
}

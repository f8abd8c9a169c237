//! Small numeric helpers shared by the decomposition modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShapeError};

/// Trapezoid quadrature weights for a (not necessarily uniform) grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    if m < 2 {
        return w;
    }
    for i in 0..m - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Uniform grid of `m` points on [0, 1] with exact endpoints.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let last = (m - 1) as f64;
            (0..m)
                .map(|i| if i == m - 1 { 1.0 } else { i as f64 / last })
                .collect()
        }
    }
}

pub fn is_uniform(grid: &[f64], rel_tol: f64) -> bool {
    if grid.len() < 2 {
        return true;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    grid.windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= rel_tol * h.abs())
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        // strict comparison keeps the first of equal-magnitude entries
        if x.abs() > best + 1e-12 * best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigen-decomposition of a symmetric matrix, sorted by decreasing eigenvalue.
///
/// Returns `(values, vectors)` with eigenvectors as columns.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.nrows() != a.ncols() {
        return Err(ShapeError::DimensionMismatch(format!(
            "eigen-decomposition of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(ShapeError::Numerical(
            "non-finite entry in symmetric matrix".into(),
        ));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or_else(|| ShapeError::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Linear interpolation of `values` (rows indexed like `xs`) at `x`.
///
/// `xs` must be increasing; `x` is clamped to the grid range.
pub fn interp_rows(xs: &[f64], values: &DMatrix<f64>, x: f64, out: &mut [f64]) {
    let m = xs.len();
    let (lo, frac) = locate(xs, x);
    let hi = (lo + 1).min(m - 1);
    for (c, o) in out.iter_mut().enumerate() {
        let a = values[(lo, c)];
        let b = values[(hi, c)];
        *o = a + frac * (b - a);
    }
}

/// Finds `i` and `frac` such that `x ≈ xs[i] + frac (xs[i+1] - xs[i])`.
pub fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    let m = xs.len();
    if m == 1 || x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[m - 1] {
        return (m - 2, 1.0);
    }
    // first index with xs[idx] > x
    let idx = xs.partition_point(|&v| v <= x);
    let i = idx - 1;
    let span = xs[i + 1] - xs[i];
    let frac = if span > 0.0 { (x - xs[i]) / span } else { 0.0 };
    (i, frac)
}

/// Linear interpolation of a scalar table.
pub fn interp1(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let (i, frac) = locate(xs, x);
    let j = (i + 1).min(xs.len() - 1);
    ys[i] + frac * (ys[j] - ys[i])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

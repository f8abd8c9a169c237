//! Cubic B-spline bases and least-squares smoothing of coordinate functions.

use nalgebra::DMatrix;

use crate::curvetools::SampledCurve;
use crate::error::{Result, ShapeError};

/// Largest design-matrix condition number accepted by [`smooth`].
pub const MAX_CONDITION: f64 = 1e12;

/// B-spline basis on [0, 1] with an open-uniform knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    order: usize,
    n_basis: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    /// Knot vector: `order` copies of 0, equally spaced interior knots, `order` copies of 1.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Values of all basis functions at `t ∈ [0, 1]`.
    pub fn eval_point(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(ShapeError::invalid(format!("evaluation point {t} outside [0, 1]")));
        }
        let k = self.order;
        let knots = &self.knots;
        // knot span with knots[span] <= t < knots[span+1]; t = 1 uses the last nonempty span
        let span = {
            let last = self.n_basis - 1;
            if t >= knots[last + 1] {
                last
            } else {
                knots.partition_point(|&u| u <= t) - 1
            }
        };
        // Cox–de Boor on the k nonzero functions of this span
        let mut n = vec![0.0; k];
        n[0] = 1.0;
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        for j in 1..k {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        for (r, v) in n.into_iter().enumerate() {
            out[span + 1 - k + r] = v;
        }
        Ok(out)
    }

    /// Basis matrix `|grid| × n_basis`.
    pub fn design(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(grid.len(), self.n_basis);
        for (i, &t) in grid.iter().enumerate() {
            for (j, v) in self.eval_point(t)?.into_iter().enumerate() {
                b[(i, j)] = v;
            }
        }
        Ok(b)
    }
}

/// Open-uniform B-spline basis with `n_basis` functions of the given `order` (4 = cubic).
pub fn build_basis(n_basis: usize, order: usize) -> Result<BSplineBasis> {
    if order == 0 {
        return Err(ShapeError::invalid("spline order must be positive"));
    }
    if n_basis < order {
        return Err(ShapeError::invalid(format!(
            "n_basis ({n_basis}) must be at least the order ({order})"
        )));
    }
    let interior = n_basis - order;
    let mut knots = vec![0.0; order];
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, order));
    Ok(BSplineBasis { order, n_basis, knots })
}

/// Coordinate functions `X(·), Y(·), Z(·)` expanded in a common basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalObject {
    basis: BSplineBasis,
    coefficients: DMatrix<f64>,
}

impl FunctionalObject {
    pub fn new(basis: BSplineBasis, coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.nrows() != basis.n_basis() || coefficients.ncols() != 3 {
            return Err(ShapeError::DimensionMismatch(format!(
                "coefficients are {}x{}, expected {}x3",
                coefficients.nrows(),
                coefficients.ncols(),
                basis.n_basis()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(ShapeError::invalid("non-finite basis coefficient"));
        }
        Ok(Self { basis, coefficients })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    /// `n_basis × 3` coefficient matrix.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }
}

/// Ordinary least-squares fit of each coordinate of `curve` in `basis`.
pub fn smooth(curve: &SampledCurve, basis: &BSplineBasis) -> Result<FunctionalObject> {
    let m = curve.len();
    if m < basis.n_basis() {
        return Err(ShapeError::Underdetermined { samples: m, basis: basis.n_basis() });
    }
    let design = basis.design(curve.params())?;
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(ShapeError::IllConditioned(cond));
    }
    let coefficients = svd
        .solve(curve.values(), 0.0)
        .map_err(|e| ShapeError::Numerical(format!("least-squares solve failed: {e}")))?;
    FunctionalObject::new(basis.clone(), coefficients)
}

/// Values of `f` on `grid` as a `|grid| × 3` matrix.
pub fn evaluate(f: &FunctionalObject, grid: &[f64]) -> Result<DMatrix<f64>> {
    Ok(f.basis.design(grid)? * &f.coefficients)
}

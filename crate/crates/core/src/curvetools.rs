//! Discrete curve utilities: derivatives, cumulative arc length, uniform
//! resampling and arc-length (constant-speed) reparameterisation.

use nalgebra::DMatrix;

use crate::error::{Result, ShapeError};
use crate::linalg::{interp_rows, locate, uniform_grid};

/// A 3D curve sampled at increasing parameters spanning [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    params: Vec<f64>,
    values: DMatrix<f64>,
}

impl SampledCurve {
    pub fn new(params: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let m = params.len();
        if m < 3 {
            return Err(ShapeError::invalid(format!("curve needs at least 3 samples, got {m}")));
        }
        if values.nrows() != m || values.ncols() != 3 {
            return Err(ShapeError::DimensionMismatch(format!(
                "{} params but values are {}x{}",
                m,
                values.nrows(),
                values.ncols()
            )));
        }
        if params.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(ShapeError::invalid("non-finite curve sample"));
        }
        if params.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ShapeError::invalid("curve parameters must be strictly increasing (duplicate params?)"));
        }
        if params[0].abs() > 1e-12 || (params[m - 1] - 1.0).abs() > 1e-12 {
            return Err(ShapeError::invalid("curve parameters must span [0, 1]"));
        }
        Ok(Self { params, values })
    }

    /// Curve through the rows of `values` at uniform parameters (landmark index order).
    pub fn uniform(values: DMatrix<f64>) -> Result<Self> {
        Self::new(uniform_grid(values.nrows()), values)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Value at an arbitrary parameter by linear interpolation.
    pub fn at(&self, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        interp_rows(&self.params, &self.values, t, &mut out);
        out
    }
}

/// Finite-difference derivative: central differences inside, one-sided at the ends.
pub fn derivative(curve: &SampledCurve) -> DMatrix<f64> {
    let t = curve.params();
    let f = curve.values();
    let m = t.len();
    let mut d = DMatrix::zeros(m, 3);
    for c in 0..3 {
        d[(0, c)] = (f[(1, c)] - f[(0, c)]) / (t[1] - t[0]);
        d[(m - 1, c)] = (f[(m - 1, c)] - f[(m - 2, c)]) / (t[m - 1] - t[m - 2]);
        for i in 1..m - 1 {
            d[(i, c)] = (f[(i + 1, c)] - f[(i - 1, c)]) / (t[i + 1] - t[i - 1]);
        }
    }
    d
}

/// Quadrature used by [`cumulative_arclength`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArcLengthMode {
    /// Polyline chord lengths; the length of the piecewise-linear interpolant.
    #[default]
    Chord,
    /// Trapezoid rule on the finite-difference speed `‖ḟ‖`.
    Trapezoid,
}

/// Cumulative arc length `s(t_i)`; `s[0] = 0`, last entry is the total length.
pub fn cumulative_arclength(curve: &SampledCurve, mode: ArcLengthMode) -> Vec<f64> {
    let m = curve.len();
    let mut s = vec![0.0; m];
    match mode {
        ArcLengthMode::Chord => {
            let f = curve.values();
            for i in 1..m {
                s[i] = s[i - 1] + (f.row(i) - f.row(i - 1)).norm();
            }
        }
        ArcLengthMode::Trapezoid => {
            let d = derivative(curve);
            let t = curve.params();
            let speed: Vec<f64> = d.row_iter().map(|r| r.norm()).collect();
            for i in 1..m {
                s[i] = s[i - 1] + 0.5 * (t[i] - t[i - 1]) * (speed[i] + speed[i - 1]);
            }
        }
    }
    s
}

/// Linear resampling onto `m` uniform parameters of the original parameterisation.
pub fn resample_uniform(curve: &SampledCurve, m: usize) -> Result<SampledCurve> {
    if m < 3 {
        return Err(ShapeError::invalid(format!("resampling needs m >= 3, got {m}")));
    }
    let grid = uniform_grid(m);
    let mut values = DMatrix::zeros(m, 3);
    let mut row = [0.0; 3];
    for (i, &u) in grid.iter().enumerate() {
        interp_rows(curve.params(), curve.values(), u, &mut row);
        for c in 0..3 {
            values[(i, c)] = row[c];
        }
    }
    // endpoints exact
    for c in 0..3 {
        values[(0, c)] = curve.values()[(0, c)];
        values[(m - 1, c)] = curve.values()[(curve.len() - 1, c)];
    }
    SampledCurve::new(grid, values)
}

/// Resamples at equal steps of polyline arc length via the piecewise-linear
/// inverse of the cumulative chord-length map.
pub fn resample_by_arclength(curve: &SampledCurve, m: usize) -> Result<SampledCurve> {
    if m < 3 {
        return Err(ShapeError::invalid(format!("reparameterisation needs m >= 3, got {m}")));
    }
    let s = cumulative_arclength(curve, ArcLengthMode::Chord);
    let total = total_length_checked(curve, &s)?;
    let f = curve.values();
    let grid = uniform_grid(m);
    let mut values = DMatrix::zeros(m, 3);
    for (i, &u) in grid.iter().enumerate() {
        let (j, frac) = locate(&s, u * total);
        let k = (j + 1).min(curve.len() - 1);
        for c in 0..3 {
            values[(i, c)] = f[(j, c)] + frac * (f[(k, c)] - f[(j, c)]);
        }
    }
    for c in 0..3 {
        values[(0, c)] = f[(0, c)];
        values[(m - 1, c)] = f[(curve.len() - 1, c)];
    }
    SampledCurve::new(grid, values)
}

fn total_length_checked(curve: &SampledCurve, s: &[f64]) -> Result<f64> {
    let total = s[s.len() - 1];
    let scale = curve.values().amax().max(1.0);
    if !(total > 1e-12 * scale) {
        return Err(ShapeError::DegenerateCurve("zero total length".into()));
    }
    Ok(total)
}

/// Arc-length reparameterisation onto `m` uniform parameters.
///
/// The output points lie on the input polyline and are separated by equal
/// chords, so the discrete speed `‖Δg‖/Δu` is constant and a second
/// application is a fixed point. The chord is found by bisection, starting
/// from the equal-arc-length resampling; if the walk cannot close onto the
/// end point, the equal-arc-length resampling is returned instead.
pub fn arclength_reparameterise(curve: &SampledCurve, m: usize) -> Result<SampledCurve> {
    let fallback = resample_by_arclength(curve, m)?;
    let s = cumulative_arclength(curve, ArcLengthMode::Chord);
    let total = s[s.len() - 1];
    match equal_chord_walk(curve, &s, m) {
        Some(values) => {
            let chords: Vec<f64> = (1..m).map(|i| (values.row(i) - values.row(i - 1)).norm()).collect();
            let c0 = chords.iter().sum::<f64>() / chords.len() as f64;
            let uniform = chords.iter().all(|c| (c - c0).abs() <= 1e-8 * c0.max(1e-300));
            if uniform && c0 > 1e-12 * total {
                return SampledCurve::new(uniform_grid(m), values);
            }
            Ok(fallback)
        }
        None => Ok(fallback),
    }
}

struct WalkEnd {
    arc_pos: f64,
    points: Vec<[f64; 3]>,
}

/// Walks `m - 1` equal chords of length `c` forward along the polyline.
/// Returns `None` when the polyline ends before the walk completes.
fn walk(curve: &SampledCurve, s: &[f64], m: usize, c: f64) -> Option<WalkEnd> {
    let f = curve.values();
    let n = curve.len();
    let row = |i: usize| [f[(i, 0)], f[(i, 1)], f[(i, 2)]];
    let mut p = row(0);
    let mut seg = 0usize;
    let mut arc_pos = 0.0;
    let mut points = Vec::with_capacity(m);
    points.push(p);
    for _ in 1..m {
        let mut found = None;
        let mut j = seg;
        while j < n - 1 {
            let a = row(j);
            let b = row(j + 1);
            let db = dist(&b, &p);
            if db >= c {
                let d = sub(&b, &a);
                let ap = sub(&a, &p);
                let dd = dot(&d, &d);
                if dd <= 0.0 {
                    j += 1;
                    continue;
                }
                let bq = dot(&ap, &d);
                let cq = dot(&ap, &ap) - c * c;
                let disc = (bq * bq - dd * cq).max(0.0);
                let tau = ((-bq + disc.sqrt()) / dd).clamp(0.0, 1.0);
                let q = [a[0] + tau * d[0], a[1] + tau * d[1], a[2] + tau * d[2]];
                found = Some((j, tau, q));
                break;
            }
            j += 1;
        }
        let (j, tau, q) = found?;
        seg = j;
        arc_pos = s[j] + tau * (s[j + 1] - s[j]);
        p = q;
        points.push(q);
    }
    Some(WalkEnd { arc_pos, points })
}

fn equal_chord_walk(curve: &SampledCurve, s: &[f64], m: usize) -> Option<DMatrix<f64>> {
    let total = s[s.len() - 1];
    let mut lo = 0.0;
    let mut hi = total / (m - 1) as f64;
    let mut best: Option<WalkEnd> = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match walk(curve, s, m, mid) {
            Some(end) if end.arc_pos < total => {
                lo = mid;
                best = Some(end);
            }
            _ => hi = mid,
        }
        if hi - lo <= 1e-15 * total {
            break;
        }
    }
    let end = best?;
    let last = curve.len() - 1;
    let f = curve.values();
    // the closing gap must be negligible before snapping to the end point
    let tail = [f[(last, 0)], f[(last, 1)], f[(last, 2)]];
    let gap = dist(&end.points[m - 1], &tail);
    if gap > 1e-11 * total {
        return None;
    }
    let mut values = DMatrix::zeros(m, 3);
    for (i, p) in end.points.iter().enumerate() {
        for c in 0..3 {
            values[(i, c)] = p[c];
        }
    }
    for c in 0..3 {
        values[(m - 1, c)] = tail[c];
    }
    Some(values)
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    dot(&sub(a, b), &sub(a, b)).sqrt()
}

/// Chord lengths between consecutive samples.
pub fn chord_lengths(curve: &SampledCurve) -> Vec<f64> {
    let f = curve.values();
    (1..curve.len()).map(|i| (f.row(i) - f.row(i - 1)).norm()).collect()
}

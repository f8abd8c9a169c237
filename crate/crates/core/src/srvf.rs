//! Square-root velocity representation of curves and elastic alignment.
//!
//! A curve `f` maps to `q = ḟ / sqrt(‖ḟ‖)`. Reparameterising `f` by a warp
//! `γ` acts on `q` as `(q ∘ γ) · sqrt(γ̇)`, an isometry of L², so elastic
//! alignment reduces to minimising an L² distance over warps. Warps are
//! estimated by dynamic programming over a monotone lattice of grid nodes.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::curvetools::{derivative, SampledCurve};
use crate::error::{Result, ShapeError};
use crate::landmarks::rotation_from_cross_covariance;
use crate::linalg::{interp1, interp_rows, is_uniform, trapezoid_weights, uniform_grid};

/// Square-root velocity function sampled on a uniform grid over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SrvfCurve {
    params: Vec<f64>,
    q: DMatrix<f64>,
}

impl SrvfCurve {
    pub fn new(params: Vec<f64>, q: DMatrix<f64>) -> Result<Self> {
        if params.len() != q.nrows() || q.ncols() != 3 {
            return Err(ShapeError::DimensionMismatch(format!(
                "{} params but q is {}x{}",
                params.len(),
                q.nrows(),
                q.ncols()
            )));
        }
        if params.len() < 2 {
            return Err(ShapeError::invalid("SRVF needs at least 2 samples"));
        }
        if q.iter().chain(params.iter()).any(|v| !v.is_finite()) {
            return Err(ShapeError::invalid("non-finite SRVF sample"));
        }
        Ok(Self { params, q })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// L² norm under trapezoid quadrature.
    pub fn l2_norm(&self) -> f64 {
        let w = trapezoid_weights(&self.params);
        self.q
            .row_iter()
            .zip(&w)
            .map(|(r, w)| w * r.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, other: &SrvfCurve) -> Result<f64> {
        check_same_grid(self, other)?;
        Ok(SrvfCurve {
            params: self.params.clone(),
            q: &self.q - &other.q,
        }
        .l2_norm())
    }

    pub fn rotate(&self, r: &Matrix3<f64>) -> SrvfCurve {
        let mut q = self.q.clone();
        for (i, row) in self.q.row_iter().enumerate() {
            for c in 0..3 {
                q[(i, c)] = (0..3).map(|k| row[k] * r[(k, c)]).sum();
            }
        }
        SrvfCurve {
            params: self.params.clone(),
            q,
        }
    }
}

fn check_same_grid(a: &SrvfCurve, b: &SrvfCurve) -> Result<()> {
    if a.params.len() != b.params.len()
        || a.params.iter().zip(&b.params).any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(ShapeError::DimensionMismatch("SRVFs on different grids".into()));
    }
    Ok(())
}

/// Monotone reparameterisation `γ` of [0, 1], sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingFunction {
    params: Vec<f64>,
    gamma: Vec<f64>,
}

const MIN_WARP_INCREMENT: f64 = 1e-12;

impl WarpingFunction {
    pub fn new(params: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let m = gamma.len();
        if params.len() != m || m < 2 {
            return Err(ShapeError::DimensionMismatch(format!(
                "warp with {} params and {} values",
                params.len(),
                m
            )));
        }
        if gamma[0] != 0.0 || gamma[m - 1] != 1.0 {
            return Err(ShapeError::invalid("warp must fix the endpoints 0 and 1"));
        }
        if gamma.windows(2).any(|w| !(w[1] - w[0] >= MIN_WARP_INCREMENT)) {
            return Err(ShapeError::invalid("warp must be strictly increasing"));
        }
        Ok(Self { params, gamma })
    }

    pub fn identity(m: usize) -> Self {
        let g = uniform_grid(m);
        Self {
            params: g.clone(),
            gamma: g,
        }
    }

    /// The warp `t ↦ t^exponent` (exponent > 0).
    pub fn power(m: usize, exponent: f64) -> Result<Self> {
        let params = uniform_grid(m);
        let gamma = params.iter().map(|t| t.powf(exponent)).collect();
        Self::new(params, gamma)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        interp1(&self.params, &self.gamma, t)
    }

    /// Numerical inverse by swapping the roles of the axes.
    pub fn inverse(&self) -> WarpingFunction {
        let gamma: Vec<f64> = self
            .params
            .iter()
            .map(|&t| interp1(&self.gamma, &self.params, t))
            .collect();
        Self::from_values(self.params.clone(), gamma)
    }

    /// `t ↦ self(other(t))`.
    pub fn compose(&self, other: &WarpingFunction) -> WarpingFunction {
        let gamma = other.gamma.iter().map(|&s| self.eval(s)).collect();
        Self::from_values(self.params.clone(), gamma)
    }

    /// Largest deviation from the identity.
    pub fn max_deviation_from_identity(&self) -> f64 {
        self.params
            .iter()
            .zip(&self.gamma)
            .map(|(t, g)| (t - g).abs())
            .fold(0.0, f64::max)
    }

    /// Builds a warp from computed values, pinning the endpoints and
    /// enforcing the minimum increment.
    fn from_values(params: Vec<f64>, mut gamma: Vec<f64>) -> WarpingFunction {
        let m = gamma.len();
        gamma[0] = 0.0;
        gamma[m - 1] = 1.0;
        for i in 1..m - 1 {
            let floor = gamma[i - 1] + MIN_WARP_INCREMENT;
            let ceil = 1.0 - (m - 1 - i) as f64 * MIN_WARP_INCREMENT;
            gamma[i] = gamma[i].max(floor).min(ceil);
        }
        WarpingFunction { params, gamma }
    }
}

/// Floor applied to the speed before dividing by its square root.
pub const DEFAULT_SPEED_FLOOR: f64 = 1e-8;

/// SRVF `q = ḟ / sqrt(max(‖ḟ‖, eps))` of a curve on a uniform grid.
pub fn to_srvf(curve: &SampledCurve, eps: f64) -> Result<SrvfCurve> {
    if !is_uniform(curve.params(), 1e-9) {
        return Err(ShapeError::invalid("SRVF requires a uniform parameter grid"));
    }
    let mut q = derivative(curve);
    for mut row in q.row_iter_mut() {
        let speed = row.norm().max(eps);
        row /= speed.sqrt();
    }
    SrvfCurve::new(curve.params().to_vec(), q)
}

/// Inverse SRVF: `f(t) = f0 + ∫₀ᵗ q‖q‖` by cumulative trapezoid.
pub fn from_srvf(q: &SrvfCurve, f0: [f64; 3]) -> Result<SampledCurve> {
    let t = q.params();
    let m = t.len();
    let mut f = DMatrix::zeros(m, 3);
    let vel: Vec<[f64; 3]> = q
        .q()
        .row_iter()
        .map(|r| {
            let n = r.norm();
            [r[0] * n, r[1] * n, r[2] * n]
        })
        .collect();
    for c in 0..3 {
        f[(0, c)] = f0[c];
        for i in 1..m {
            f[(i, c)] = f[(i - 1, c)] + 0.5 * (t[i] - t[i - 1]) * (vel[i - 1][c] + vel[i][c]);
        }
    }
    SampledCurve::new(t.to_vec(), f)
}

/// Finite-difference derivative of a warp (central inside, one-sided at the ends).
fn warp_derivative(gamma: &WarpingFunction) -> Vec<f64> {
    let t = gamma.params();
    let g = gamma.gamma();
    let m = g.len();
    let mut d = vec![0.0; m];
    d[0] = (g[1] - g[0]) / (t[1] - t[0]);
    d[m - 1] = (g[m - 1] - g[m - 2]) / (t[m - 1] - t[m - 2]);
    for i in 1..m - 1 {
        d[i] = (g[i + 1] - g[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    d
}

/// Group action `t ↦ q(γ(t)) · sqrt(γ̇(t))`.
pub fn warp_action(q: &SrvfCurve, gamma: &WarpingFunction) -> Result<SrvfCurve> {
    if q.len() != gamma.len() {
        return Err(ShapeError::DimensionMismatch(format!(
            "SRVF has {} samples, warp has {}",
            q.len(),
            gamma.len()
        )));
    }
    let g = gamma.gamma();
    if g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ShapeError::invalid("warp must be strictly increasing"));
    }
    let dg = warp_derivative(gamma);
    let mut out = DMatrix::zeros(q.len(), 3);
    let mut row = [0.0; 3];
    for i in 0..q.len() {
        interp_rows(q.params(), q.q(), g[i], &mut row);
        let s = dg[i].max(0.0).sqrt();
        for c in 0..3 {
            out[(i, c)] = row[c] * s;
        }
    }
    SrvfCurve::new(q.params().to_vec(), out)
}

/// Roughness penalty `∫ (sqrt(γ̇) − 1)² dt` under trapezoid quadrature.
pub fn warp_penalty(gamma: &WarpingFunction) -> f64 {
    let dg = warp_derivative(gamma);
    let w = trapezoid_weights(gamma.params());
    dg.iter()
        .zip(&w)
        .map(|(d, w)| w * (d.max(0.0).sqrt() - 1.0).powi(2))
        .sum()
}

/// Penalised alignment objective evaluated through [`warp_action`].
pub fn alignment_objective(
    q_target: &SrvfCurve,
    q_source: &SrvfCurve,
    gamma: &WarpingFunction,
    lambda: f64,
) -> Result<f64> {
    let warped = warp_action(q_source, gamma)?;
    let d = q_target.distance(&warped)?;
    Ok(d * d + lambda * warp_penalty(gamma))
}

/// Lattice steps `(Δtarget, Δsource)`: coprime pairs with slope in [1/4, 4].
fn lattice_steps() -> Vec<(usize, usize)> {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut steps = Vec::new();
    for a in 1..=6usize {
        for b in 1..=6usize {
            if gcd(a, b) == 1 && b <= 4 * a && a <= 4 * b {
                steps.push((a, b));
            }
        }
    }
    steps
}

/// Warp `γ*` minimising `∫‖q_target − (q_source∘γ)·sqrt(γ̇)‖² + λ∫(sqrt(γ̇)−1)²`
/// over piecewise-linear warps through lattice nodes.
///
/// Coarse grids are linearly upsampled before the lattice search so that the
/// warp is not restricted to pass through the original sample nodes. The
/// returned warp is never worse than the identity under
/// [`alignment_objective`].
pub fn estimate_warp(q_target: &SrvfCurve, q_source: &SrvfCurve, lambda: f64) -> Result<WarpingFunction> {
    let m = q_target.len();
    let refine = if m > FINE_GRID_INTERVALS { 1 } else { 2 };
    estimate_warp_refined(q_target, q_source, lambda, refine)
}

/// Grids with more intervals than this are searched without upsampling.
const FINE_GRID_INTERVALS: usize = 117;

/// [`estimate_warp`] with an explicit lattice refinement factor.
pub fn estimate_warp_refined(
    q_target: &SrvfCurve,
    q_source: &SrvfCurve,
    lambda: f64,
    refine: usize,
) -> Result<WarpingFunction> {
    check_same_grid(q_target, q_source)?;
    let m = q_target.len();
    if m < 5 {
        return Err(ShapeError::invalid(format!("warp estimation needs at least 5 grid points, got {m}")));
    }
    if !is_uniform(q_target.params(), 1e-9) {
        return Err(ShapeError::invalid("warp estimation requires a uniform grid"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ShapeError::invalid("lambda must be finite and nonnegative"));
    }
    let refine = refine.max(1);
    let gamma = if refine == 1 {
        lattice_warp(q_target.params(), q_target.q(), q_source.q(), lambda)?
    } else {
        let fine = uniform_grid(refine * (m - 1) + 1);
        let upsample = |q: &SrvfCurve| {
            let mut out = DMatrix::zeros(fine.len(), 3);
            let mut row = [0.0; 3];
            for (i, &t) in fine.iter().enumerate() {
                interp_rows(q.params(), q.q(), t, &mut row);
                for c in 0..3 {
                    out[(i, c)] = row[c];
                }
            }
            out
        };
        let g = lattice_warp(&fine, &upsample(q_target), &upsample(q_source), lambda)?;
        (0..m).map(|i| g[i * refine]).collect()
    };
    let candidate = WarpingFunction::from_values(q_target.params().to_vec(), gamma);
    let identity = WarpingFunction::identity(m);
    let j_cand = alignment_objective(q_target, q_source, &candidate, lambda)?;
    let j_id = alignment_objective(q_target, q_source, &identity, lambda)?;
    Ok(if j_cand <= j_id { candidate } else { identity })
}

/// Dynamic programming over the node lattice of `t × t`; returns `γ` on `t`.
///
/// `t` must be uniform on [0, 1].
fn lattice_warp(t: &[f64], q1: &DMatrix<f64>, q2: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    let m = t.len();
    let steps = lattice_steps();
    let h = 1.0 / (m - 1) as f64;
    let rows = |q: &DMatrix<f64>| -> Vec<[f64; 3]> { (0..m).map(|r| [q[(r, 0)], q[(r, 1)], q[(r, 2)]]).collect() };
    let (p1, p2) = (rows(q1), rows(q2));

    // trapezoid of the squared residual along the straight segment (k,l) -> (i,j)
    let edge_cost = |k: usize, l: usize, i: usize, j: usize| -> f64 {
        let (a, b) = ((i - k) as f64, (j - l) as f64);
        let slope = b / a;
        let root = slope.sqrt();
        let mut acc = 0.0;
        for r in k..=i {
            let pos = l as f64 + slope * (r - k) as f64;
            let lo = (pos.floor() as usize).min(m - 2);
            let frac = pos - lo as f64;
            let (x, y) = (&p2[lo], &p2[lo + 1]);
            let target = &p1[r];
            let mut e = 0.0;
            for c in 0..3 {
                let d = target[c] - root * (x[c] + frac * (y[c] - x[c]));
                e += d * d;
            }
            acc += if r == k || r == i { 0.5 * e } else { e };
        }
        h * acc + lambda * (root - 1.0).powi(2) * a * h
    };

    let idx = |i: usize, j: usize| i * m + j;
    let mut cost = vec![f64::INFINITY; m * m];
    let mut pred = vec![usize::MAX; m * m];
    cost[0] = 0.0;
    for i in 1..m {
        for j in 1..m {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for &(a, b) in &steps {
                if a > i || b > j {
                    continue;
                }
                let (k, l) = (i - a, j - b);
                let base = cost[idx(k, l)];
                if !base.is_finite() {
                    continue;
                }
                let c = base + edge_cost(k, l, i, j);
                if c < best {
                    best = c;
                    arg = idx(k, l);
                }
            }
            cost[idx(i, j)] = best;
            pred[idx(i, j)] = arg;
        }
    }
    if !cost[idx(m - 1, m - 1)].is_finite() {
        return Err(ShapeError::Numerical("no monotone path through the warp lattice".into()));
    }

    let mut path = vec![(m - 1, m - 1)];
    let mut cur = idx(m - 1, m - 1);
    while cur != 0 {
        cur = pred[cur];
        path.push((cur / m, cur % m));
    }
    path.reverse();

    let mut gamma = vec![0.0; m];
    for w in path.windows(2) {
        let ((k, l), (i, j)) = (w[0], w[1]);
        let slope = (t[j] - t[l]) / (t[i] - t[k]);
        for r in k..=i {
            gamma[r] = t[l] + slope * (t[r] - t[k]);
        }
    }
    Ok(gamma)
}

/// Convex blend `α·γ + (1 − α)·id`.
pub fn soft_warp(gamma: &WarpingFunction, alpha: f64) -> Result<WarpingFunction> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ShapeError::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let g = gamma
        .params()
        .iter()
        .zip(gamma.gamma())
        .map(|(t, g)| alpha * g + (1.0 - alpha) * t)
        .collect();
    Ok(WarpingFunction::from_values(gamma.params().to_vec(), g))
}

/// Rotation minimising the L² distance between `q·R` and `template`.
pub fn rotation_to_template(q: &SrvfCurve, template: &SrvfCurve) -> Result<Matrix3<f64>> {
    check_same_grid(q, template)?;
    let w = trapezoid_weights(q.params());
    let mut h = Matrix3::zeros();
    for (i, wi) in w.iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                h[(a, b)] += wi * q.q()[(i, a)] * template.q()[(i, b)];
            }
        }
    }
    Ok(rotation_from_cross_covariance(&h).rotation)
}

/// Rotates `q` onto `template` (see [`rotation_to_template`]).
pub fn rotation_align_srvf(q: &SrvfCurve, template: &SrvfCurve) -> Result<SrvfCurve> {
    let r = rotation_to_template(q, template)?;
    Ok(q.rotate(&r))
}

/// One specimen's alignment to a template.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: SrvfCurve,
    pub warp: WarpingFunction,
    pub rotation: Matrix3<f64>,
    /// Penalised objective of the alignment against the template.
    pub objective: f64,
}

/// Rotation and warp alignment of `q` onto `template`.
///
/// Rotation is estimated first, then the warp; the rotation is re-estimated
/// on the warped curve and the warp refitted, for a few rounds, keeping the
/// best pair.
pub fn align_to_template(q: &SrvfCurve, template: &SrvfCurve, lambda: f64) -> Result<Alignment> {
    const ROUNDS: usize = 3;
    let mut rotation = rotation_to_template(q, template)?;
    let mut best: Option<Alignment> = None;
    for _ in 0..ROUNDS {
        let rotated = q.rotate(&rotation);
        let warp = estimate_warp(template, &rotated, lambda)?;
        let aligned = warp_action(&rotated, &warp)?;
        let d = template.distance(&aligned)?;
        let objective = d * d + lambda * warp_penalty(&warp);
        let improved = best.as_ref().is_none_or(|b| objective < b.objective - 1e-15);
        if !improved {
            break;
        }
        // rotation commutes with the warp action
        let unrotated = warp_action(q, &warp)?;
        best = Some(Alignment {
            aligned,
            warp,
            rotation,
            objective,
        });
        rotation = rotation_to_template(&unrotated, template)?;
    }
    Ok(best.expect("at least one round"))
}

/// One Karcher step for a single curve: rotation onto `template` estimated on
/// `q` warped by `previous`, then a fresh warp for the rotated curve.
fn karcher_step(q: &SrvfCurve, previous: &WarpingFunction, template: &SrvfCurve, lambda: f64) -> Result<Alignment> {
    // rotation commutes with the warp action
    let rotation = rotation_to_template(&warp_action(q, previous)?, template)?;
    let rotated = q.rotate(&rotation);
    let warp = estimate_warp(template, &rotated, lambda)?;
    let aligned = warp_action(&rotated, &warp)?;
    let d = template.distance(&aligned)?;
    let objective = d * d + lambda * warp_penalty(&warp);
    Ok(Alignment { aligned, warp, rotation, objective })
}

/// Settings for [`karcher_mean`].
#[derive(Debug, Clone, Copy)]
pub struct KarcherOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Warp roughness penalty used in every alignment.
    pub lambda: f64,
    /// Reparameterise the final template to constant speed so that the
    /// representative of the mean orbit does not depend on input phases.
    pub constant_speed_template: bool,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-6,
            lambda: 0.0,
            constant_speed_template: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KarcherResult {
    pub template: SrvfCurve,
    /// Aligned SRVFs, in input order.
    pub aligned: Vec<SrvfCurve>,
    /// Warps applied to the rotated inputs.
    pub warps: Vec<WarpingFunction>,
    pub rotations: Vec<Matrix3<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Total aligned variance `Σ‖aligned_i − template‖²` after each iteration.
    pub variances: Vec<f64>,
}

fn pointwise_mean(qs: &[SrvfCurve]) -> SrvfCurve {
    let mut acc = DMatrix::zeros(qs[0].len(), 3);
    for q in qs {
        acc += q.q();
    }
    SrvfCurve {
        params: qs[0].params.clone(),
        q: acc / qs.len() as f64,
    }
}

fn total_variance(aligned: &[SrvfCurve], template: &SrvfCurve) -> Result<f64> {
    aligned
        .iter()
        .map(|a| a.distance(template).map(|d| d * d))
        .sum()
}

/// Karcher (elastic) mean by alternating alignment to the template and
/// pointwise averaging of the aligned curves.
///
/// An alignment is only replaced when the new one lowers the penalised
/// objective against the current template, so the total aligned variance
/// never increases between iterations.
pub fn karcher_mean(qs: &[SrvfCurve], opts: &KarcherOptions) -> Result<KarcherResult> {
    if qs.len() < 2 {
        return Err(ShapeError::invalid("Karcher mean needs at least 2 curves"));
    }
    for q in &qs[1..] {
        check_same_grid(&qs[0], q)?;
    }
    let m = qs[0].len();
    // start from the observed curve nearest the pointwise mean, which is sharper than the mean itself
    let mean = pointwise_mean(qs);
    let mut best = (f64::INFINITY, 0);
    for (i, q) in qs.iter().enumerate() {
        let d = mean.distance(q)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    let mut template = qs[best.1].clone();
    let mut current: Vec<Alignment> = qs
        .iter()
        .map(|q| Alignment {
            aligned: q.clone(),
            warp: WarpingFunction::identity(m),
            rotation: Matrix3::identity(),
            objective: f64::INFINITY,
        })
        .collect();
    let mut variances = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let updated: Vec<Result<Alignment>> = qs
            .par_iter()
            .zip(current.par_iter())
            .map(|(q, prev)| {
                let cand = karcher_step(q, &prev.warp, &template, opts.lambda)?;
                let d = template.distance(&prev.aligned)?;
                let prev_obj = d * d + opts.lambda * warp_penalty(&prev.warp);
                Ok(if cand.objective <= prev_obj {
                    cand
                } else {
                    Alignment {
                        objective: prev_obj,
                        ..prev.clone()
                    }
                })
            })
            .collect();
        current = updated.into_iter().collect::<Result<_>>()?;
        let aligned: Vec<SrvfCurve> = current.iter().map(|a| a.aligned.clone()).collect();
        let next = pointwise_mean(&aligned);
        let change = next.distance(&template)?;
        template = next;
        variances.push(total_variance(&aligned, &template)?);
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    if opts.constant_speed_template {
        let phase = constant_speed_warp(&template);
        let recomputed: Vec<Result<Alignment>> = qs
            .par_iter()
            .zip(current.par_iter())
            .map(|(q, a)| {
                let warp = a.warp.compose(&phase);
                let aligned = warp_action(&q.rotate(&a.rotation), &warp)?;
                Ok(Alignment {
                    aligned,
                    warp,
                    rotation: a.rotation,
                    objective: a.objective,
                })
            })
            .collect();
        current = recomputed.into_iter().collect::<Result<_>>()?;
        template = pointwise_mean(&current.iter().map(|a| a.aligned.clone()).collect::<Vec<_>>());
    }

    let mut aligned = Vec::with_capacity(qs.len());
    let mut warps = Vec::with_capacity(qs.len());
    let mut rotations = Vec::with_capacity(qs.len());
    for a in current {
        aligned.push(a.aligned);
        warps.push(a.warp);
        rotations.push(a.rotation);
    }
    Ok(KarcherResult {
        template,
        aligned,
        warps,
        rotations,
        iterations,
        converged,
        variances,
    })
}

/// Warp under which the curve of `q` is traversed at (nearly) constant speed.
///
/// The normalised arc length is blended with 0.1% of the identity so the
/// inverse stays strictly increasing where the speed vanishes.
fn constant_speed_warp(q: &SrvfCurve) -> WarpingFunction {
    let t = q.params();
    let m = t.len();
    let speed: Vec<f64> = q.q().row_iter().map(|r| r.norm_squared()).collect();
    let mut s = vec![0.0; m];
    for i in 1..m {
        s[i] = s[i - 1] + 0.5 * (t[i] - t[i - 1]) * (speed[i] + speed[i - 1]);
    }
    let total = s[m - 1];
    if !(total > 0.0) {
        return WarpingFunction::identity(m);
    }
    const BLEND: f64 = 1e-3;
    let s: Vec<f64> = s
        .iter()
        .zip(t)
        .map(|(si, ti)| (1.0 - BLEND) * si / total + BLEND * ti)
        .collect();
    let gamma = t.iter().map(|&u| interp1(&s, t, u)).collect();
    WarpingFunction::from_values(t.to_vec(), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn curve(m: usize, f: impl Fn(f64) -> [f64; 3]) -> SampledCurve {
        let grid = uniform_grid(m);
        SampledCurve::new(grid.clone(), DMatrix::from_fn(m, 3, |i, c| f(grid[i])[c])).unwrap()
    }

    fn helix(t: f64) -> [f64; 3] {
        [(2.0 * PI * t).sin(), (2.0 * PI * t).cos(), t]
    }

    fn wiggle(t: f64) -> [f64; 3] {
        [
            (2.0 * PI * t).sin() + 0.15 * (6.0 * PI * t).sin(),
            (2.0 * PI * t).cos() + 0.1 * (4.0 * PI * t).cos(),
            t + 0.2 * (4.0 * PI * t).sin(),
        ]
    }

    #[test]
    fn srvf_of_lines() {
        let q = to_srvf(&curve(11, |t| [t, 0.0, 0.0]), DEFAULT_SPEED_FLOOR).unwrap();
        for r in q.q().row_iter() {
            assert!((r[0] - 1.0).abs() < 1e-12 && r[1] == 0.0);
        }
        let q = to_srvf(&curve(11, |t| [2.0 * t, 0.0, 0.0]), DEFAULT_SPEED_FLOOR).unwrap();
        for r in q.q().row_iter() {
            assert!((r[0] - 2.0f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn srvf_translation_invariant_and_scale_covariant() {
        let f = curve(40, wiggle);
        let shifted = SampledCurve::new(f.params().to_vec(), f.values().add_scalar(5.0)).unwrap();
        let scaled = SampledCurve::new(f.params().to_vec(), f.values() * 3.0).unwrap();
        let q = to_srvf(&f, DEFAULT_SPEED_FLOOR).unwrap();
        assert!((to_srvf(&shifted, DEFAULT_SPEED_FLOOR).unwrap().q() - q.q()).amax() < 1e-9);
        assert!((to_srvf(&scaled, DEFAULT_SPEED_FLOOR).unwrap().q() - q.q() * 3.0f64.sqrt()).amax() < 1e-10);
    }

    #[test]
    fn from_srvf_cases() {
        let grid = uniform_grid(21);
        let ones = SrvfCurve::new(grid.clone(), DMatrix::from_fn(21, 3, |_, c| if c == 0 { 1.0 } else { 0.0 })).unwrap();
        let f = from_srvf(&ones, [0.0; 3]).unwrap();
        for (i, t) in grid.iter().enumerate() {
            assert!((f.values()[(i, 0)] - t).abs() < 1e-14);
        }
        let zero = SrvfCurve::new(grid, DMatrix::zeros(21, 3)).unwrap();
        let f = from_srvf(&zero, [1.0, 2.0, 3.0]).unwrap();
        assert!(f.values().row_iter().all(|r| r[0] == 1.0 && r[1] == 2.0 && r[2] == 3.0));
    }

    #[test]
    fn srvf_roundtrip_on_helix() {
        let f = curve(200, helix);
        let q = to_srvf(&f, DEFAULT_SPEED_FLOOR).unwrap();
        let back = from_srvf(&q, helix(0.0)).unwrap();
        assert!((back.values() - f.values()).amax() < 5e-3);
    }

    #[test]
    fn identity_warp_is_neutral() {
        let q = to_srvf(&curve(50, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let w = warp_action(&q, &WarpingFunction::identity(50)).unwrap();
        assert!((w.q() - q.q()).amax() < 1e-12);
    }

    #[test]
    fn warp_preserves_norm_and_inverts() {
        let q = to_srvf(&curve(500, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let g = WarpingFunction::power(500, 1.2).unwrap();
        let w = warp_action(&q, &g).unwrap();
        assert!((w.l2_norm() - q.l2_norm()).abs() / q.l2_norm() < 1e-2);
        let back = warp_action(&w, &g.inverse()).unwrap();
        assert!(back.distance(&q).unwrap() / q.l2_norm() < 2e-2);
    }

    #[test]
    fn warp_validation() {
        let bad = WarpingFunction::new(uniform_grid(4), vec![0.0, 0.6, 0.5, 1.0]);
        assert!(bad.is_err());
        assert!(WarpingFunction::new(uniform_grid(3), vec![0.1, 0.5, 1.0]).is_err());
    }

    #[test]
    fn self_alignment_is_identity() {
        let q = to_srvf(&curve(40, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let g = estimate_warp(&q, &q, 0.0).unwrap();
        assert!(g.max_deviation_from_identity() <= 1.0 / 39.0);
        let big = to_srvf(&curve(40, helix), DEFAULT_SPEED_FLOOR).unwrap();
        let g = estimate_warp(&q, &big, 1e6).unwrap();
        assert!(g.max_deviation_from_identity() <= 1.0 / 39.0);
    }

    #[test]
    fn known_warp_is_mostly_removed() {
        let target = to_srvf(&curve(60, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let source = warp_action(&target, &WarpingFunction::power(60, 1.2).unwrap()).unwrap();
        let before = target.distance(&source).unwrap();
        let g = estimate_warp(&target, &source, 0.0).unwrap();
        let after = target.distance(&warp_action(&source, &g).unwrap()).unwrap();
        assert!(after <= 0.2 * before, "before {before}, after {after}");
    }

    #[test]
    fn estimate_warp_rejects_tiny_grids() {
        let q = to_srvf(&curve(4, helix), DEFAULT_SPEED_FLOOR).unwrap();
        assert!(estimate_warp(&q, &q, 0.0).is_err());
    }

    #[test]
    fn soft_warp_blends() {
        let g = WarpingFunction::new(uniform_grid(3), vec![0.0, 0.25, 1.0]).unwrap();
        let s = soft_warp(&g, 0.6).unwrap();
        assert!((s.gamma()[1] - 0.35).abs() < 1e-15);
        assert_eq!(soft_warp(&g, 1.0).unwrap().gamma(), g.gamma());
        assert_eq!(soft_warp(&g, 0.0).unwrap().gamma(), &[0.0, 0.5, 1.0]);
        assert!(soft_warp(&g, 1.5).is_err());
        assert!(soft_warp(&g, -0.1).is_err());
    }

    #[test]
    fn rotation_alignment() {
        let q = to_srvf(&curve(50, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        assert!((rotation_to_template(&q, &q).unwrap() - Matrix3::identity()).norm() < 1e-10);
        let r0 = Rotation3::new(Vector3::new(0.3, -0.2, 0.9)).into_inner();
        let rotated = q.rotate(&r0);
        let back = rotation_align_srvf(&rotated, &q).unwrap();
        assert!((back.q() - q.q()).amax() < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = SrvfCurve::new(uniform_grid(30), DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let b = SrvfCurve::new(uniform_grid(30), DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let after = rotation_align_srvf(&a, &b).unwrap().distance(&b).unwrap();
        assert!(after <= a.distance(&b).unwrap());
    }

    #[test]
    fn karcher_of_identical_curves() {
        let q = to_srvf(&curve(30, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let opts = KarcherOptions {
            constant_speed_template: false,
            ..Default::default()
        };
        let res = karcher_mean(&[q.clone(), q.clone(), q.clone()], &opts).unwrap();
        assert!((res.template.q() - q.q()).amax() < 1e-10);
    }

    #[test]
    fn karcher_single_iteration_template_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let qs: Vec<_> = (0..3)
            .map(|_| SrvfCurve::new(uniform_grid(20), DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap())
            .collect();
        let opts = KarcherOptions {
            max_iter: 1,
            constant_speed_template: false,
            ..Default::default()
        };
        let res = karcher_mean(&qs, &opts).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.template, pointwise_mean(&res.aligned));
    }

    #[test]
    fn karcher_aligns_warped_pair() {
        let q = to_srvf(&curve(60, wiggle), DEFAULT_SPEED_FLOOR).unwrap();
        let warped = warp_action(&q, &WarpingFunction::power(60, 1.15).unwrap()).unwrap();
        let res = karcher_mean(&[q.clone(), warped], &KarcherOptions::default()).unwrap();
        let d = res.aligned[0].distance(&res.aligned[1]).unwrap();
        assert!(d < 0.05 * q.l2_norm(), "aligned distance {d}");
    }

    #[test]
    fn karcher_variance_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let qs: Vec<_> = (0..6)
            .map(|_| {
                let u = rng.random_range(0.8..1.2);
                let amp = rng.random_range(0.0..0.3);
                to_srvf(
                    &curve(40, |t| {
                        let s = t.powf(u);
                        [(2.0 * PI * s).sin() + amp * (6.0 * PI * s).sin(), (2.0 * PI * s).cos(), s]
                    }),
                    DEFAULT_SPEED_FLOOR,
                )
                .unwrap()
            })
            .collect();
        let res = karcher_mean(&qs, &KarcherOptions::default()).unwrap();
        assert!(!res.variances.is_empty());
        for w in res.variances.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", res.variances);
        }
    }
}

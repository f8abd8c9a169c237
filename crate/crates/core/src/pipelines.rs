//! The eight analysis pipelines: component scores, reconstructions and MSE.
//!
//! Every pipeline first maps a specimen's `N` landmarks, read as a curve with
//! uniform parameter, onto an analysis grid of `n_points` uniform parameter
//! values (arc variants use arc length). Reconstructions are mapped back to
//! the specimen's own landmark positions before being compared with the raw
//! landmarks, so every MSE is in input coordinate units.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::{build_basis, evaluate, smooth, BSplineBasis};
use crate::classify::ScoreExtractor;
use crate::curvetools::{arclength_reparameterise, cumulative_arclength, resample_uniform, ArcLengthMode, SampledCurve};
use crate::error::{Result, ShapeError};
use crate::fpca::{fit_mfpca, mfpca_project, select_components, MfpcaModel};
use crate::landmarks::{align_to_reference, flatten, gpa, superimpose, LandmarkConfiguration};
use crate::linalg::{interp_rows, mean, sample_sd, uniform_grid};
use crate::pca::{pca_fit, pca_reconstruct, PcaModel};
use crate::srvf::{
    align_to_template, from_srvf, karcher_mean, soft_warp, to_srvf, warp_action, KarcherOptions, SrvfCurve,
    WarpingFunction, DEFAULT_SPEED_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PipelineId {
    Gm,
    ArcGm,
    Fdm,
    ArcFdm,
    SoftSrvFdm,
    ArcSoftSrvFdm,
    ElasticSrvFdm,
    ArcElasticSrvFdm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Gm,
    Fdm,
    Srv { soft: bool },
}

impl PipelineId {
    pub const ALL: [PipelineId; 8] = [
        PipelineId::Gm,
        PipelineId::ArcGm,
        PipelineId::Fdm,
        PipelineId::ArcFdm,
        PipelineId::SoftSrvFdm,
        PipelineId::ArcSoftSrvFdm,
        PipelineId::ElasticSrvFdm,
        PipelineId::ArcElasticSrvFdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineId::Gm => "GM",
            PipelineId::ArcGm => "Arc-GM",
            PipelineId::Fdm => "FDM",
            PipelineId::ArcFdm => "Arc-FDM",
            PipelineId::SoftSrvFdm => "Soft-SRV-FDM",
            PipelineId::ArcSoftSrvFdm => "Arc-Soft-SRV-FDM",
            PipelineId::ElasticSrvFdm => "Elastic-SRV-FDM",
            PipelineId::ArcElasticSrvFdm => "Arc-Elastic-SRV-FDM",
        }
    }

    /// Whether curves are reparameterised by arc length before anything else.
    pub fn is_arc(self) -> bool {
        matches!(
            self,
            PipelineId::ArcGm | PipelineId::ArcFdm | PipelineId::ArcSoftSrvFdm | PipelineId::ArcElasticSrvFdm
        )
    }

    /// Whether the pipeline performs SRVF alignment.
    pub fn is_elastic(self) -> bool {
        matches!(self.family(), Family::Srv { .. })
    }

    fn family(self) -> Family {
        match self {
            PipelineId::Gm | PipelineId::ArcGm => Family::Gm,
            PipelineId::Fdm | PipelineId::ArcFdm => Family::Fdm,
            PipelineId::SoftSrvFdm | PipelineId::ArcSoftSrvFdm => Family::Srv { soft: true },
            PipelineId::ElasticSrvFdm | PipelineId::ArcElasticSrvFdm => Family::Srv { soft: false },
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineId {
    type Err = ShapeError;

    /// Case-insensitive; `-`, `_` and spaces are ignored (`arc-gm`, `ArcGM`, `arc_gm`).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        PipelineId::ALL
            .into_iter()
            .find(|id| {
                let name: String = id.name().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                name.to_ascii_lowercase() == key
            })
            .or(match key.as_str() {
                "softsrvfdm" | "soft" => Some(PipelineId::SoftSrvFdm),
                "elastic" => Some(PipelineId::ElasticSrvFdm),
                _ => None,
            })
            .ok_or_else(|| ShapeError::invalid(format!("unknown pipeline '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub n_points: usize,
    pub n_basis: usize,
    pub variance_threshold: f64,
    pub alpha_soft: f64,
    pub lambda_soft: f64,
    /// Cap on univariate and multivariate FPCA components.
    pub m_target: usize,
    pub gpa_tol: f64,
    pub gpa_max_iter: usize,
    pub karcher_max_iter: usize,
    pub karcher_tol: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            n_points: 30,
            n_basis: 10,
            variance_threshold: 0.95,
            alpha_soft: 0.6,
            lambda_soft: 0.01,
            m_target: 30,
            gpa_tol: 1e-10,
            gpa_max_iter: 100,
            karcher_max_iter: 20,
            karcher_tol: 1e-6,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 5 {
            return Err(ShapeError::invalid("n_points must be at least 5"));
        }
        if self.n_basis < 4 || self.n_basis > self.n_points {
            return Err(ShapeError::invalid("n_basis must lie in [4, n_points]"));
        }
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return Err(ShapeError::invalid("variance_threshold must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha_soft) {
            return Err(ShapeError::invalid("alpha_soft must lie in [0, 1]"));
        }
        if !(self.lambda_soft >= 0.0 && self.lambda_soft.is_finite()) {
            return Err(ShapeError::invalid("lambda_soft must be finite and nonnegative"));
        }
        if self.m_target == 0 {
            return Err(ShapeError::invalid("m_target must be positive"));
        }
        Ok(())
    }

    fn karcher(&self, lambda: f64) -> KarcherOptions {
        KarcherOptions {
            max_iter: self.karcher_max_iter,
            tol: self.karcher_tol,
            lambda,
            ..KarcherOptions::default()
        }
    }
}

/// A specimen mapped onto the analysis grid.
#[derive(Debug, Clone)]
struct Prepared {
    /// `n_points × 3` on the uniform analysis grid.
    values: DMatrix<f64>,
    /// Analysis-grid parameter of each original landmark.
    landmark_params: Vec<f64>,
}

fn prepare(id: PipelineId, spec: &LandmarkConfiguration, n_points: usize) -> Result<Prepared> {
    let raw = SampledCurve::uniform(spec.points.clone())?;
    if id.is_arc() {
        let cum = cumulative_arclength(&raw, ArcLengthMode::Chord);
        let total = *cum.last().unwrap_or(&0.0);
        if !(total > 0.0) {
            return Err(ShapeError::DegenerateCurve(format!("specimen {} has zero length", spec.specimen_id)));
        }
        let mut landmark_params: Vec<f64> = cum.iter().map(|c| c / total).collect();
        *landmark_params.last_mut().expect("at least 3 landmarks") = 1.0;
        let curve = arclength_reparameterise(&raw, n_points)?;
        Ok(Prepared { values: curve.into_values(), landmark_params })
    } else {
        let curve = resample_uniform(&raw, n_points)?;
        Ok(Prepared { values: curve.into_values(), landmark_params: uniform_grid(spec.n_landmarks()) })
    }
}

/// Rows of `values` (on `grid`) interpolated at `params`.
fn resample_rows(grid: &[f64], values: &DMatrix<f64>, params: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(params.len(), 3);
    let mut row = [0.0; 3];
    for (i, &t) in params.iter().enumerate() {
        interp_rows(grid, values, t, &mut row);
        for c in 0..3 {
            out[(i, c)] = row[c];
        }
    }
    out
}

fn center_rows(values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    for c in 0..3 {
        let m = out.column(c).mean();
        out.column_mut(c).add_scalar_mut(-m);
    }
    out
}

/// Per coordinate, stacks row `i` of each curve: three `n × M` matrices.
fn coordinate_blocks(curves: &[DMatrix<f64>]) -> [DMatrix<f64>; 3] {
    let m = curves[0].nrows();
    std::array::from_fn(|p| DMatrix::from_fn(curves.len(), m, |i, t| curves[i][(t, p)]))
}

fn smooth_on_grid(values: &DMatrix<f64>, basis: &BSplineBasis, grid: &[f64]) -> Result<DMatrix<f64>> {
    let curve = SampledCurve::new(grid.to_vec(), values.clone())?;
    evaluate(&smooth(&curve, basis)?, grid)
}

/// Trained transforms of one pipeline; projects new specimens into its score space.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    id: PipelineId,
    settings: PipelineSettings,
    n_landmarks: usize,
    k95: usize,
    state: State,
}

#[derive(Debug, Clone)]
enum State {
    Gm {
        reference: DMatrix<f64>,
        pca: PcaModel,
    },
    Fdm {
        basis: BSplineBasis,
        mfpca: MfpcaModel,
    },
    Srv {
        reference: DMatrix<f64>,
        template: SrvfCurve,
        lambda: f64,
        alpha: Option<f64>,
        basis: BSplineBasis,
        amplitude: MfpcaModel,
        srvf: MfpcaModel,
        srvf_k95: usize,
    },
}

/// Per-specimen training quantities needed for reconstruction.
#[derive(Debug, Clone)]
struct TrainRecord {
    landmark_params: Vec<f64>,
    /// Warp applied during alignment (identity outside the SRVF pipelines).
    warp: Option<WarpingFunction>,
    /// The specimen as the pipeline sees it, on the analysis grid.
    processed: DMatrix<f64>,
    /// Aligned SRVF on the analysis grid (SRVF pipelines only).
    srvf: Option<DMatrix<f64>>,
}

/// Alignment of one specimen in an SRVF pipeline.
struct SrvAligned {
    q: SrvfCurve,
    warp: WarpingFunction,
    amplitude: DMatrix<f64>,
}

impl FittedPipeline {
    pub fn id(&self) -> PipelineId {
        self.id
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    /// Number of components reaching the variance threshold.
    pub fn k95(&self) -> usize {
        self.k95
    }

    /// Full eigenvalue spectrum of the decomposition that produces the scores.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match &self.state {
            State::Gm { pca, .. } => pca.eigenvalues().iter().copied().collect(),
            State::Fdm { mfpca, .. } => mfpca.eigenvalues().iter().copied().collect(),
            State::Srv { amplitude, .. } => amplitude.eigenvalues().iter().copied().collect(),
        }
    }

    /// Eigenvalues and `k95` of the SRVF-space decomposition (SRVF pipelines only).
    pub fn srvf_spectrum(&self) -> Option<(Vec<f64>, usize)> {
        match &self.state {
            State::Srv { srvf, srvf_k95, .. } => Some((srvf.eigenvalues().iter().copied().collect(), *srvf_k95)),
            _ => None,
        }
    }

    /// Scores of `specimens` on the first `k95` components.
    pub fn project(&self, specimens: &[LandmarkConfiguration]) -> Result<DMatrix<f64>> {
        let all = self.project_all(specimens)?;
        Ok(all.columns(0, self.k95).into_owned())
    }

    /// Scores of `specimens` on every retained component.
    pub fn project_all(&self, specimens: &[LandmarkConfiguration]) -> Result<DMatrix<f64>> {
        if let Some(bad) = specimens.iter().find(|s| s.n_landmarks() != self.n_landmarks) {
            return Err(ShapeError::DimensionMismatch(format!(
                "specimen {} has {} landmarks, pipeline was fitted on {}",
                bad.specimen_id,
                bad.n_landmarks(),
                self.n_landmarks
            )));
        }
        let prepared: Vec<Prepared> = specimens
            .par_iter()
            .map(|s| prepare(self.id, s, self.settings.n_points).map_err(|e| e.context(format!("specimen {}", s.specimen_id))))
            .collect::<Result<_>>()?;
        let grid = uniform_grid(self.settings.n_points);
        match &self.state {
            State::Gm { reference, pca } => {
                let rows: Vec<Vec<f64>> = prepared
                    .par_iter()
                    .map(|p| align_to_reference(&p.values, reference).map(|a| flatten(&a)))
                    .collect::<Result<_>>()?;
                let flat = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
                pca.project(&flat)
            }
            State::Fdm { basis, mfpca } => {
                let smoothed: Vec<DMatrix<f64>> = prepared
                    .par_iter()
                    .map(|p| smooth_on_grid(&p.values, basis, &grid))
                    .collect::<Result<_>>()?;
                mfpca_project(mfpca, &coordinate_blocks(&smoothed))
            }
            State::Srv { reference, template, lambda, alpha, basis, amplitude, .. } => {
                let amps: Vec<DMatrix<f64>> = prepared
                    .par_iter()
                    .map(|p| {
                        let aligned = align_to_reference(&p.values, reference)?;
                        let q = to_srvf(&SampledCurve::new(grid.clone(), aligned)?, DEFAULT_SPEED_FLOOR)?;
                        let a = align_to_template(&q, template, *lambda)?;
                        let warped = finish_alignment(&q, &a.rotation, a.warp, *alpha)?;
                        smooth_on_grid(&warped.amplitude, basis, &grid)
                    })
                    .collect::<Result<_>>()?;
                mfpca_project(amplitude, &coordinate_blocks(&amps))
            }
        }
    }
}

/// Applies the (optionally softened) warp and rotation, and integrates back to a centered curve.
fn finish_alignment(
    q: &SrvfCurve,
    rotation: &nalgebra::Matrix3<f64>,
    warp: WarpingFunction,
    alpha: Option<f64>,
) -> Result<SrvAligned> {
    let warp = match alpha {
        Some(a) => soft_warp(&warp, a)?,
        None => warp,
    };
    let aligned = warp_action(&q.rotate(rotation), &warp)?;
    let amplitude = center_rows(from_srvf(&aligned, [0.0; 3])?.values());
    Ok(SrvAligned { q: aligned, warp, amplitude })
}

/// Result of running a pipeline on a full dataset.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub id: PipelineId,
    pub fitted: FittedPipeline,
    /// `n × k95` scores used for classification.
    pub scores: DMatrix<f64>,
    /// Scores on every retained component.
    pub all_scores: DMatrix<f64>,
    pub k95: usize,
    pub eigenvalues: Vec<f64>,
    /// Components used for reconstruction (`k95` of the SRVF-space model in SRVF pipelines).
    pub recon_components: usize,
    /// Reconstructions at `recon_components`, on each specimen's landmarks.
    pub reconstructions: Vec<DMatrix<f64>>,
    pub mse_per_specimen: Vec<f64>,
    pub mse_mean: f64,
    pub mse_sd: f64,
    /// SRVF-space scores on every retained component (SRVF pipelines only).
    pub srvf_scores: Option<DMatrix<f64>>,
    records: Vec<TrainRecord>,
    originals: Vec<DMatrix<f64>>,
}

impl PipelineOutput {
    /// Number of components available for reconstruction.
    pub fn max_recon_components(&self) -> usize {
        match &self.fitted.state {
            State::Gm { pca, .. } => pca.k_max(),
            State::Fdm { mfpca, .. } => mfpca.n_components(),
            State::Srv { srvf, .. } => srvf.n_components(),
        }
    }
}

/// Fits `id` on `specimens`; returns the fitted transforms, all training scores and per-specimen records.
fn fit(
    id: PipelineId,
    specimens: &[LandmarkConfiguration],
    settings: &PipelineSettings,
) -> Result<(FittedPipeline, DMatrix<f64>, Option<DMatrix<f64>>, Vec<TrainRecord>)> {
    settings.validate()?;
    if specimens.len() < 4 {
        return Err(ShapeError::invalid(format!("pipelines need at least 4 specimens, got {}", specimens.len())));
    }
    let n_landmarks = specimens[0].n_landmarks();
    if let Some(bad) = specimens.iter().find(|s| s.n_landmarks() != n_landmarks) {
        return Err(ShapeError::DimensionMismatch(format!(
            "specimen {} has {} landmarks, expected {}",
            bad.specimen_id,
            bad.n_landmarks(),
            n_landmarks
        )));
    }
    let m = settings.n_points;
    let grid = uniform_grid(m);
    let prepared: Vec<Prepared> = specimens
        .par_iter()
        .map(|s| prepare(id, s, m).map_err(|e| e.context(format!("specimen {}", s.specimen_id))))
        .collect::<Result<_>>()?;
    let n = prepared.len();
    let threshold = settings.variance_threshold;
    let basis = build_basis(settings.n_basis, 4)?;

    let gpa_of = |prepared: &[Prepared]| -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let configs: Vec<LandmarkConfiguration> = specimens
            .iter()
            .zip(prepared)
            .map(|(s, p)| LandmarkConfiguration::new(s.specimen_id.clone(), p.values.clone(), None))
            .collect::<Result<_>>()?;
        let res = gpa(&configs, settings.gpa_tol, settings.gpa_max_iter)?;
        let reference = res.reference();
        Ok((reference, res.aligned.into_iter().map(|c| c.points).collect()))
    };

    let (state, all_scores, srvf_scores, records, k95) = match id.family() {
        Family::Gm => {
            let (reference, aligned) = gpa_of(&prepared)?;
            let flat = DMatrix::from_fn(n, 3 * m, |i, j| aligned[i][(j / 3, j % 3)]);
            let pca = pca_fit(&flat)?;
            let ev: Vec<f64> = pca.eigenvalues().iter().copied().collect();
            let k95 = select_components(&ev, threshold)?;
            let scores = pca.scores().clone();
            let records = prepared
                .into_iter()
                .zip(aligned)
                .map(|(p, a)| TrainRecord { landmark_params: p.landmark_params, warp: None, processed: a, srvf: None })
                .collect();
            (State::Gm { reference, pca }, scores, None, records, k95)
        }
        Family::Fdm => {
            let smoothed: Vec<DMatrix<f64>> = prepared
                .par_iter()
                .map(|p| smooth_on_grid(&p.values, &basis, &grid))
                .collect::<Result<_>>()?;
            let mfpca = fit_mfpca(&coordinate_blocks(&smoothed), &grid, settings.m_target, settings.m_target)?;
            let ev: Vec<f64> = mfpca.eigenvalues().iter().copied().collect();
            let k95 = select_components(&ev, threshold)?.min(mfpca.n_components());
            let scores = mfpca.scores().clone();
            let records = prepared
                .into_iter()
                .zip(smoothed)
                .map(|(p, s)| TrainRecord { landmark_params: p.landmark_params, warp: None, processed: s, srvf: None })
                .collect();
            (State::Fdm { basis, mfpca }, scores, None, records, k95)
        }
        Family::Srv { soft } => {
            let (reference, aligned) = gpa_of(&prepared)?;
            let qs: Vec<SrvfCurve> = aligned
                .par_iter()
                .map(|a| to_srvf(&SampledCurve::new(grid.clone(), a.clone())?, DEFAULT_SPEED_FLOOR))
                .collect::<Result<_>>()?;
            let lambda = if soft { settings.lambda_soft } else { 0.0 };
            let alpha = soft.then_some(settings.alpha_soft);
            let karcher = karcher_mean(&qs, &settings.karcher(lambda))?;
            let finished: Vec<SrvAligned> = qs
                .par_iter()
                .zip(karcher.rotations.par_iter().zip(karcher.warps.par_iter()))
                .map(|(q, (r, w))| finish_alignment(q, r, w.clone(), alpha))
                .collect::<Result<_>>()?;
            let amps: Vec<DMatrix<f64>> = finished
                .par_iter()
                .map(|f| smooth_on_grid(&f.amplitude, &basis, &grid))
                .collect::<Result<_>>()?;
            let amplitude = fit_mfpca(&coordinate_blocks(&amps), &grid, settings.m_target, settings.m_target)?;
            let ev: Vec<f64> = amplitude.eigenvalues().iter().copied().collect();
            let k95 = select_components(&ev, threshold)?.min(amplitude.n_components());

            let q_rows: Vec<DMatrix<f64>> = finished.iter().map(|f| f.q.q().clone()).collect();
            let srvf = fit_mfpca(&coordinate_blocks(&q_rows), &grid, settings.m_target, settings.m_target)?;
            let sev: Vec<f64> = srvf.eigenvalues().iter().copied().collect();
            let srvf_k95 = select_components(&sev, threshold)?.min(srvf.n_components());

            let scores = amplitude.scores().clone();
            let srvf_scores = srvf.scores().clone();
            let records = prepared
                .into_iter()
                .zip(finished)
                .map(|(p, f)| TrainRecord {
                    landmark_params: p.landmark_params,
                    warp: Some(f.warp),
                    processed: f.amplitude,
                    srvf: Some(f.q.q().clone()),
                })
                .collect();
            let state = State::Srv {
                reference,
                template: karcher.template,
                lambda,
                alpha,
                basis,
                amplitude,
                srvf,
                srvf_k95,
            };
            (state, scores, Some(srvf_scores), records, k95)
        }
    };
    let fitted = FittedPipeline { id, settings: settings.clone(), n_landmarks, k95, state };
    Ok((fitted, all_scores, srvf_scores, records))
}

/// Fits a pipeline on training specimens only.
pub fn fit_pipeline(
    id: PipelineId,
    specimens: &[LandmarkConfiguration],
    settings: &PipelineSettings,
) -> Result<FittedPipeline> {
    fit(id, specimens, settings).map(|(f, ..)| f).map_err(|e| e.context(id.name()))
}

/// Runs a pipeline end to end: scores, `k95`, reconstructions and MSE against the raw landmarks.
pub fn run_pipeline(
    id: PipelineId,
    specimens: &[LandmarkConfiguration],
    settings: &PipelineSettings,
) -> Result<PipelineOutput> {
    let (fitted, all_scores, srvf_scores, records) = fit(id, specimens, settings).map_err(|e| e.context(id.name()))?;
    let k95 = fitted.k95;
    let recon_components = match &fitted.state {
        State::Srv { srvf_k95, .. } => *srvf_k95,
        _ => k95,
    };
    let eigenvalues = fitted.eigenvalues();
    let mut out = PipelineOutput {
        id,
        scores: all_scores.columns(0, k95).into_owned(),
        all_scores,
        k95,
        eigenvalues,
        recon_components,
        reconstructions: Vec::new(),
        mse_per_specimen: Vec::new(),
        mse_mean: 0.0,
        mse_sd: 0.0,
        srvf_scores,
        records,
        originals: specimens.iter().map(|s| s.points.clone()).collect(),
        fitted,
    };
    let recon: Vec<(DMatrix<f64>, f64)> = (0..specimens.len())
        .into_par_iter()
        .map(|i| {
            let r = reconstruct_specimen(&out, i, recon_components)?;
            let e = evaluate_mse(&out.originals[i], &r)?;
            Ok((r, e))
        })
        .collect::<Result<_>>()
        .map_err(|e: ShapeError| e.context(id.name()))?;
    let (reconstructions, mse): (Vec<_>, Vec<_>) = recon.into_iter().unzip();
    out.mse_mean = mean(&mse);
    out.mse_sd = sample_sd(&mse);
    out.reconstructions = reconstructions;
    out.mse_per_specimen = mse;
    Ok(out)
}

/// Maps analysis-grid values of a training specimen back onto its landmarks.
fn to_landmarks(record: &TrainRecord, grid: &[f64], values: &DMatrix<f64>) -> DMatrix<f64> {
    match &record.warp {
        // aligned(t) = f(γ(t)), so landmark s sits at t = γ⁻¹(s)
        Some(w) => {
            let inv = w.inverse();
            let params: Vec<f64> = record.landmark_params.iter().map(|&s| inv.eval(s)).collect();
            resample_rows(grid, values, &params)
        }
        None => resample_rows(grid, values, &record.landmark_params),
    }
}

/// The training specimen as processed by the pipeline, on its landmarks.
pub fn processed_specimen(output: &PipelineOutput, index: usize) -> Result<DMatrix<f64>> {
    let record = output
        .records
        .get(index)
        .ok_or_else(|| ShapeError::invalid(format!("specimen index {index} out of range")))?;
    let grid = uniform_grid(output.fitted.settings.n_points);
    Ok(to_landmarks(record, &grid, &record.processed))
}

/// Rank-`k` reconstruction of training specimen `index`, on its landmarks.
///
/// GM pipelines add the truncated PCA expansion to the consensus; FDM
/// pipelines assemble the truncated MFPCA expansion; SRVF pipelines
/// reconstruct in SRVF space and integrate back to a curve.
pub fn reconstruct_specimen(output: &PipelineOutput, index: usize, k: usize) -> Result<DMatrix<f64>> {
    let record = output
        .records
        .get(index)
        .ok_or_else(|| ShapeError::invalid(format!("specimen index {index} out of range")))?;
    let grid = uniform_grid(output.fitted.settings.n_points);
    let row = |m: &DMatrix<f64>| -> Vec<f64> { m.row(index).iter().copied().collect() };
    let values = match &output.fitted.state {
        State::Gm { pca, .. } => pca_reconstruct(pca, &row(&output.all_scores), k)?,
        State::Fdm { mfpca, .. } => mfpca.reconstruct(&row(&output.all_scores), k)?,
        State::Srv { srvf, .. } => {
            let scores = output.srvf_scores.as_ref().expect("SRVF pipelines keep SRVF scores");
            let q = srvf.reconstruct(&row(scores), k)?;
            from_srvf(&SrvfCurve::new(grid.clone(), q)?, [0.0; 3])?.into_values()
        }
    };
    Ok(to_landmarks(record, &grid, &values))
}

/// Squared rank-`k` reconstruction error of training specimen `index` in the
/// space where the decomposition is orthogonal: Euclidean on the aligned grid
/// points for GM, and the trapezoid `L²` norm of the smoothed curve (FDM) or
/// of the aligned SRVF (SRVF pipelines).
///
/// Unlike the landmark MSE, this is nonincreasing in `k` by construction.
pub fn analysis_residual(output: &PipelineOutput, index: usize, k: usize) -> Result<f64> {
    let record = output
        .records
        .get(index)
        .ok_or_else(|| ShapeError::invalid(format!("specimen index {index} out of range")))?;
    let row = |m: &DMatrix<f64>| -> Vec<f64> { m.row(index).iter().copied().collect() };
    Ok(match &output.fitted.state {
        State::Gm { pca, .. } => (pca_reconstruct(pca, &row(&output.all_scores), k)? - &record.processed).norm_squared(),
        State::Fdm { mfpca, .. } => {
            let d = mfpca.reconstruct(&row(&output.all_scores), k)? - &record.processed;
            mfpca.inner(&d, &d)
        }
        State::Srv { srvf, .. } => {
            let scores = output.srvf_scores.as_ref().expect("SRVF pipelines keep SRVF scores");
            let q = record.srvf.as_ref().expect("SRVF pipelines keep aligned SRVFs");
            let d = srvf.reconstruct(&row(scores), k)? - q;
            srvf.inner(&d, &d)
        }
    })
}

/// Mean squared coordinate difference after similarity superimposition of
/// `reconstruction` onto `original`.
pub fn evaluate_mse(original: &DMatrix<f64>, reconstruction: &DMatrix<f64>) -> Result<f64> {
    let fitted = superimpose(reconstruction, original)?;
    mse_raw(original, &fitted)
}

/// Mean squared coordinate difference without superimposition.
pub fn mse_raw(original: &DMatrix<f64>, reconstruction: &DMatrix<f64>) -> Result<f64> {
    if original.shape() != reconstruction.shape() {
        return Err(ShapeError::DimensionMismatch(format!(
            "comparing {:?} with {:?}",
            original.shape(),
            reconstruction.shape()
        )));
    }
    Ok((original - reconstruction).norm_squared() / original.len() as f64)
}

/// Cross-validation adapter: refits the whole pipeline on each training fold.
pub struct PipelineCv<'a> {
    pub id: PipelineId,
    pub specimens: &'a [LandmarkConfiguration],
    pub settings: &'a PipelineSettings,
}

impl ScoreExtractor for PipelineCv<'_> {
    fn extract(&self, train: &[usize], test: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pick = |idx: &[usize]| -> Vec<LandmarkConfiguration> { idx.iter().map(|&i| self.specimens[i].clone()).collect() };
        let train_set = pick(train);
        let (fitted, all_scores, ..) = fit(self.id, &train_set, self.settings).map_err(|e| e.context(self.id.name()))?;
        let k = fitted.k95();
        let test_scores = fitted.project(&pick(test))?;
        Ok((all_scores.columns(0, k).into_owned(), test_scores))
    }
}

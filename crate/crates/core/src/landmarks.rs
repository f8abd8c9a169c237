//! Landmark configuration algebra: centering, centroid size, orthogonal
//! Procrustes rotation and generalised Procrustes analysis (GPA).

use nalgebra::{DMatrix, Matrix3, RowVector3};

use crate::error::{Result, ShapeError};

/// One specimen's ordered N×3 landmark matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkConfiguration {
    pub specimen_id: String,
    pub points: DMatrix<f64>,
    pub label: Option<String>,
}

impl LandmarkConfiguration {
    pub fn new(
        specimen_id: impl Into<String>,
        points: DMatrix<f64>,
        label: Option<String>,
    ) -> Result<Self> {
        let specimen_id = specimen_id.into();
        validate_points(&points).map_err(|e| e.context(format!("specimen {specimen_id}")))?;
        Ok(Self {
            specimen_id,
            points,
            label,
        })
    }

    pub fn n_landmarks(&self) -> usize {
        self.points.nrows()
    }

    /// Same specimen with replaced coordinates.
    pub fn with_points(&self, points: DMatrix<f64>) -> Result<Self> {
        Self::new(self.specimen_id.clone(), points, self.label.clone())
    }
}

pub(crate) fn validate_points(points: &DMatrix<f64>) -> Result<()> {
    if points.ncols() != 3 {
        return Err(ShapeError::invalid(format!(
            "landmark matrix must have 3 columns, got {}",
            points.ncols()
        )));
    }
    if points.nrows() < 3 {
        return Err(ShapeError::invalid(format!(
            "at least 3 landmarks required, got {}",
            points.nrows()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::invalid("non-finite landmark coordinate"));
    }
    Ok(())
}

pub fn centroid(points: &DMatrix<f64>) -> RowVector3<f64> {
    let n = points.nrows() as f64;
    let mut c = RowVector3::zeros();
    for row in points.row_iter() {
        c[0] += row[0];
        c[1] += row[1];
        c[2] += row[2];
    }
    c / n
}

/// Translates the configuration so its centroid is at the origin.
pub fn center(points: &DMatrix<f64>) -> DMatrix<f64> {
    let c = centroid(points);
    let mut out = points.clone();
    for mut row in out.row_iter_mut() {
        row[0] -= c[0];
        row[1] -= c[1];
        row[2] -= c[2];
    }
    out
}

/// Square root of the summed squared distances of the landmarks from their centroid.
pub fn centroid_size(points: &DMatrix<f64>) -> Result<f64> {
    let cs = center(points).norm();
    // relative to the coordinate magnitude so that far-away coincident points still count
    let scale = points.amax().max(1.0);
    if !(cs > 1e-14 * scale) {
        return Err(ShapeError::ZeroCentroidSize);
    }
    Ok(cs)
}

/// Centered, unit-centroid-size copy of a configuration.
pub fn normalize(points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cs = centroid_size(points)?;
    Ok(center(points) / cs)
}

/// Rotation returned by [`optimal_rotation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit {
    pub rotation: Matrix3<f64>,
    /// Set when the cross-covariance has rank < 2 and the minimiser is not unique.
    pub degenerate: bool,
}

/// Rotation `R` (det +1) minimising `‖source·R − target‖²` for centered inputs.
pub fn optimal_rotation(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<RotationFit> {
    if source.shape() != target.shape() || source.ncols() != 3 {
        return Err(ShapeError::DimensionMismatch(format!(
            "rotation between {:?} and {:?} configurations",
            source.shape(),
            target.shape()
        )));
    }
    let h: Matrix3<f64> = Matrix3::from_iterator((source.transpose() * target).iter().copied());
    Ok(rotation_from_cross_covariance(&h))
}

/// Solves `max tr(Rᵀ H)` over proper rotations.
pub(crate) fn rotation_from_cross_covariance(h: &Matrix3<f64>) -> RotationFit {
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let (mut smin_idx, mut smin) = (0, f64::INFINITY);
    let mut smax = 0.0f64;
    let mut sorted = [s[0], s[1], s[2]];
    for (i, &x) in s.iter().enumerate() {
        if x < smin {
            smin = x;
            smin_idx = i;
        }
        smax = smax.max(x);
    }
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let degenerate = !(sorted[1] > 1e-12 * smax.max(f64::MIN_POSITIVE));

    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(smin_idx, smin_idx)] = -1.0;
    }
    RotationFit {
        rotation: u * d * v_t,
        degenerate,
    }
}

pub fn rotate(points: &DMatrix<f64>, r: &Matrix3<f64>) -> DMatrix<f64> {
    let mut out = points.clone();
    for (i, row) in points.row_iter().enumerate() {
        let p = RowVector3::new(row[0], row[1], row[2]) * r;
        out[(i, 0)] = p[0];
        out[(i, 1)] = p[1];
        out[(i, 2)] = p[2];
    }
    out
}

/// Output of [`gpa`].
#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub aligned: Vec<LandmarkConfiguration>,
    /// Coordinate-wise mean of the aligned configurations.
    pub consensus: DMatrix<f64>,
    /// Centroid sizes of the input configurations (input units).
    pub centroid_sizes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ProcrustesResult {
    /// The consensus rescaled to unit centroid size; the rotation target used
    /// while iterating and for aligning new specimens.
    pub fn reference(&self) -> DMatrix<f64> {
        match centroid_size(&self.consensus) {
            Ok(cs) => &self.consensus / cs,
            Err(_) => self.consensus.clone(),
        }
    }

    /// Aligns a new configuration to this result's reference without touching the consensus.
    pub fn align(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        align_to_reference(points, &self.reference())
    }
}

/// Centers, scales to unit size and rotates `points` onto `reference`.
pub fn align_to_reference(points: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = normalize(points)?;
    let fit = optimal_rotation(&x, reference)?;
    Ok(rotate(&x, &fit.rotation))
}

/// Generalised Procrustes analysis with unit-centroid-size scaling.
pub fn gpa(set: &[LandmarkConfiguration], tol: f64, max_iter: usize) -> Result<ProcrustesResult> {
    if set.len() < 2 {
        return Err(ShapeError::invalid("GPA needs at least 2 configurations"));
    }
    let n_landmarks = set[0].n_landmarks();
    if let Some(bad) = set.iter().find(|c| c.n_landmarks() != n_landmarks) {
        return Err(ShapeError::DimensionMismatch(format!(
            "specimen {} has {} landmarks, expected {}",
            bad.specimen_id,
            bad.n_landmarks(),
            n_landmarks
        )));
    }

    let mut centroid_sizes = Vec::with_capacity(set.len());
    let mut shapes = Vec::with_capacity(set.len());
    for c in set {
        let cs = centroid_size(&c.points).map_err(|e| e.context(format!("specimen {}", c.specimen_id)))?;
        centroid_sizes.push(cs);
        shapes.push(center(&c.points) / cs);
    }

    let mut reference = shapes[0].clone();
    let mut aligned = shapes.clone();
    let mut consensus = reference.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for (dst, x) in aligned.iter_mut().zip(&shapes) {
            let fit = optimal_rotation(x, &reference)?;
            *dst = rotate(x, &fit.rotation);
        }
        consensus = mean_configuration(&aligned);
        let cs = centroid_size(&consensus)
            .map_err(|_| ShapeError::Numerical("consensus collapsed to a point".into()))?;
        let next = &consensus / cs;
        let change = (&next - &reference).norm();
        reference = next;
        if change < tol {
            converged = true;
            break;
        }
    }

    let aligned = set
        .iter()
        .zip(aligned)
        .map(|(c, pts)| LandmarkConfiguration {
            specimen_id: c.specimen_id.clone(),
            points: pts,
            label: c.label.clone(),
        })
        .collect();
    Ok(ProcrustesResult {
        aligned,
        consensus,
        centroid_sizes,
        iterations,
        converged,
    })
}

pub(crate) fn mean_configuration(shapes: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(shapes[0].nrows(), shapes[0].ncols());
    for s in shapes {
        acc += s;
    }
    acc / shapes.len() as f64
}

/// Similarity (translation, rotation, uniform scale) superimposition of
/// `source` onto `target`; returns the transformed source.
pub fn superimpose(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if source.shape() != target.shape() {
        return Err(ShapeError::DimensionMismatch(format!(
            "superimposing {:?} onto {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let tc = centroid(target);
    let xs = center(source);
    let xt = center(target);
    let ss = xs.norm_squared();
    if ss <= f64::MIN_POSITIVE {
        // a point cannot be rotated or scaled; only translation applies
        let mut out = xs;
        for mut row in out.row_iter_mut() {
            row += tc;
        }
        return Ok(out);
    }
    let fit = optimal_rotation(&xs, &xt)?;
    let rotated = rotate(&xs, &fit.rotation);
    let scale = rotated.dot(&xt) / ss;
    let mut out = rotated * scale;
    for mut row in out.row_iter_mut() {
        row += tc;
    }
    Ok(out)
}

/// Landmark-major flattening `(x1, y1, z1, x2, ...)`.
pub fn flatten(points: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    for row in points.row_iter() {
        out.extend(row.iter().copied());
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(flat.len() / 3, 3, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        Rotation3::new(axis.normalize() * angle).into_inner()
    }

    #[test]
    fn centroid_size_of_right_triangle() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // deviations from (1/3, 1/3, 0): 2/9 + 5/9 + 5/9 = 4/3
        assert!((centroid_size(&p).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((centroid_size(&(p.clone() * 2.0)).unwrap() - 2.0 * centroid_size(&p).unwrap()).abs() < 1e-12);
        assert!((centroid_size(&center(&p)).unwrap() - centroid_size(&p).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn coincident_points_have_zero_size() {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 2.0, 1.0, 0.5, 2.0, 1.0, 0.5]);
        assert_eq!(centroid_size(&p), Err(ShapeError::ZeroCentroidSize));
    }

    #[test]
    fn rotation_of_identical_sets_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = center(&random_points(&mut rng, 6));
        let fit = optimal_rotation(&x, &x).unwrap();
        assert!((fit.rotation - Matrix3::identity()).norm() < 1e-10);
        assert!(!fit.degenerate);
    }

    #[test]
    fn rotation_recovers_known_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = center(&random_points(&mut rng, 7));
            let r0 = random_rotation(&mut rng);
            let y = rotate(&x, &r0);
            let fit = optimal_rotation(&x, &y).unwrap();
            assert!((fit.rotation - r0).norm() < 1e-8);
            assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
            assert!((fit.rotation.transpose() * fit.rotation - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = center(&random_points(&mut rng, 5));
        let y = center(&random_points(&mut rng, 5));
        let fit = optimal_rotation(&x, &y).unwrap();
        let best = (rotate(&x, &fit.rotation) - &y).norm_squared();
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            assert!(best <= (rotate(&x, &r) - &y).norm_squared() + 1e-12);
        }
    }

    #[test]
    fn rotation_excludes_reflections() {
        let x = center(&DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0],
        ));
        let mut mirrored = x.clone();
        mirrored.column_mut(0).iter_mut().for_each(|v| *v = -*v);
        let fit = optimal_rotation(&x, &mirrored).unwrap();
        assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_configuration_flags_degenerate() {
        let x = center(&DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0]));
        let fit = optimal_rotation(&x, &x).unwrap();
        assert!(fit.degenerate);
        assert!((rotate(&x, &fit.rotation) - &x).norm() < 1e-10);
    }

    fn configs(shapes: Vec<DMatrix<f64>>) -> Vec<LandmarkConfiguration> {
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, p)| LandmarkConfiguration::new(format!("s{i}"), p, None).unwrap())
            .collect()
    }

    #[test]
    fn gpa_of_identical_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_points(&mut rng, 8);
        let res = gpa(&configs(vec![p.clone(); 5]), 1e-10, 100).unwrap();
        assert!(res.converged);
        for a in &res.aligned {
            assert!((&a.points - &res.consensus).norm() < 1e-12);
        }
    }

    #[test]
    fn gpa_removes_similarity_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_points(&mut rng, 10);
        let r = random_rotation(&mut rng);
        let mut q = rotate(&p, &r) * 3.7;
        for mut row in q.row_iter_mut() {
            row += RowVector3::new(4.0, -2.0, 9.0);
        }
        let res = gpa(&configs(vec![p, q]), 1e-10, 100).unwrap();
        assert!((&res.aligned[0].points - &res.aligned[1].points).norm() < 1e-8);
    }

    #[test]
    fn gpa_aligned_are_centered_unit_size_and_consensus_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let template = random_points(&mut rng, 12);
        let set: Vec<_> = (0..10)
            .map(|_| {
                let noisy = &template + random_points(&mut rng, 12) * 0.02;
                rotate(&noisy, &random_rotation(&mut rng)) * rng.random_range(0.5..2.0)
            })
            .collect();
        let res = gpa(&configs(set), 1e-10, 100).unwrap();
        assert!(res.converged);
        for a in &res.aligned {
            assert!(centroid(&a.points).norm() < 1e-10);
            assert!((a.points.norm() - 1.0).abs() < 1e-10);
        }
        let mean = mean_configuration(&res.aligned.iter().map(|a| a.points.clone()).collect::<Vec<_>>());
        assert!((&mean - &res.consensus).norm() < 1e-12);
        assert!((res.reference().norm() - 1.0).abs() < 1e-8);

        // consensus close to the normalised template, up to a global rotation
        let t = normalize(&template).unwrap();
        let fit = optimal_rotation(&t, &res.reference()).unwrap();
        let d = (rotate(&t, &fit.rotation) - res.reference()).norm();
        assert!(d < 0.02, "consensus distance {d}");
    }

    #[test]
    fn gpa_rejects_mismatched_and_degenerate_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_points(&mut rng, 5);
        let b = random_points(&mut rng, 6);
        assert!(matches!(
            gpa(&configs(vec![a.clone(), b]), 1e-10, 100),
            Err(ShapeError::DimensionMismatch(_))
        ));
        let flat = LandmarkConfiguration {
            specimen_id: "flat".into(),
            points: DMatrix::from_element(5, 3, 1.0),
            label: None,
        };
        let mut set = configs(vec![a]);
        set.push(flat);
        assert_eq!(gpa(&set, 1e-10, 100).unwrap_err().root(), &ShapeError::ZeroCentroidSize);
    }

    #[test]
    fn superimpose_removes_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_points(&mut rng, 9);
        let mut q = rotate(&p, &random_rotation(&mut rng)) * 0.3;
        q.column_mut(2).add_scalar_mut(5.0);
        let back = superimpose(&q, &p).unwrap();
        assert!((back - p).norm() < 1e-10);
    }

    #[test]
    fn flatten_is_landmark_major() {
        let p = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(flatten(&p), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unflatten(&flatten(&p)), p);
    }
}

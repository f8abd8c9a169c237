use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use shapefda::classify::{multinomial_gradient, multinomial_objective, stratified_kfold, MultinomialParams, Standardizer};
use shapefda::curvetools::{arclength_reparameterise, chord_lengths, SampledCurve};
use shapefda::fpca::fit_mfpca;
use shapefda::io::{read_landmarks, write_landmarks, Table};
use shapefda::landmarks::{gpa, rotate, LandmarkConfiguration};
use shapefda::linalg::uniform_grid;
use shapefda::pca::{pca_fit, pca_reconstruct};
use shapefda::simgen::group_curve;
use shapefda::srvf::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

/// Smooth open curve `Σ_k a_k sin(kπt + b_k)` per coordinate plus a linear drift.
fn smooth_curve(coef: &[f64], t: f64) -> [f64; 3] {
    let mut p = [t, 0.5 * t, -0.3 * t];
    for (c, out) in p.iter_mut().enumerate() {
        for k in 0..3 {
            let a = coef[c * 6 + 2 * k];
            let b = coef[c * 6 + 2 * k + 1];
            *out += a * ((k + 1) as f64 * PI * t + b).sin();
        }
    }
    p
}

fn sample(m: usize, warp: impl Fn(f64) -> f64, f: impl Fn(f64) -> [f64; 3]) -> DMatrix<f64> {
    let grid = uniform_grid(m);
    DMatrix::from_fn(m, 3, |i, c| f(warp(grid[i]))[c])
}

fn rotation(q: [f64; 4]) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

fn quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64).prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 0.05)
}

fn procrustes_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn arclength_chords_are_uniform(coef in prop::collection::vec(-0.3..0.3f64, 18), u in 0.7..1.5f64, m in 100usize..200) {
        // regular curves only: near-cusps admit no equal-chord polygon
        let speeds = chord_lengths(&SampledCurve::uniform(sample(1000, |t| t, |t| smooth_curve(&coef, t))).unwrap());
        let mean_speed = speeds.iter().sum::<f64>() / speeds.len() as f64;
        prop_assume!(speeds.iter().all(|&v| v > 0.3 * mean_speed));
        let raw = sample(20 * m, |t| t.powf(u), |t| smooth_curve(&coef, t));
        let curve = arclength_reparameterise(&SampledCurve::uniform(raw).unwrap(), m).unwrap();
        let chords = chord_lengths(&curve);
        let mean = chords.iter().sum::<f64>() / chords.len() as f64;
        let worst = chords.iter().map(|c| (c - mean).abs() / mean).fold(0.0, f64::max);
        prop_assert!(worst < 0.02, "chord deviation {worst}");
    }

    #[test]
    fn srvf_roundtrip_on_warped_helices(a in -0.5..0.5f64, group in 1usize..=4) {
        let m = 200;
        // smooth warp with speed in [0.5, 1.5]
        let values = sample(m, |t| t + a * (PI * t).sin() / PI, |t| group_curve(group, t, 0.3).unwrap());
        let curve = SampledCurve::uniform(values.clone()).unwrap();
        let q = to_srvf(&curve, DEFAULT_SPEED_FLOOR).unwrap();
        let start = [values[(0, 0)], values[(0, 1)], values[(0, 2)]];
        let back = from_srvf(&q, start).unwrap();
        let err = (back.values() - &values).amax();
        prop_assert!(err < 5e-3, "roundtrip error {err}");
    }

    #[test]
    fn gpa_distances_ignore_similarity_transforms(
        coords in prop::collection::vec(-1.0..1.0f64, 5 * 8 * 3),
        quats in prop::collection::vec(quaternion(), 5),
        scales in prop::collection::vec(0.1..10.0f64, 5),
        shifts in prop::collection::vec(-5.0..5.0f64, 15),
    ) {
        let set: Vec<LandmarkConfiguration> = (0..5)
            .map(|s| {
                let m = DMatrix::from_fn(8, 3, |i, c| coords[s * 24 + i * 3 + c] + if c == 0 { i as f64 * 0.3 } else { 0.0 });
                LandmarkConfiguration::new(format!("s{s}"), m, None).unwrap()
            })
            .collect();
        let moved: Vec<LandmarkConfiguration> = set
            .iter()
            .enumerate()
            .map(|(s, c)| {
                let mut m = rotate(&c.points, &rotation(quats[s])) * scales[s];
                for mut row in m.row_iter_mut() {
                    for k in 0..3 {
                        row[k] += shifts[s * 3 + k];
                    }
                }
                c.with_points(m).unwrap()
            })
            .collect();
        let a = gpa(&set, 1e-12, 500).unwrap();
        let b = gpa(&moved, 1e-12, 500).unwrap();
        // the iteration is rotation-equivariant, so the property holds at any iteration count
        for i in 0..5 {
            for j in i + 1..5 {
                let da = procrustes_distance(&a.aligned[i].points, &a.aligned[j].points);
                let db = procrustes_distance(&b.aligned[i].points, &b.aligned[j].points);
                prop_assert!((da - db).abs() < 1e-8, "pair ({i},{j}): {da} vs {db}");
            }
        }
    }

    #[test]
    fn mfpca_karhunen_loeve_properties(n in 5usize..14, m in 15usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = uniform_grid(m);
        let coef: Vec<Vec<f64>> = (0..n).map(|_| (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let coords: [DMatrix<f64>; 3] =
            std::array::from_fn(|p| DMatrix::from_fn(n, m, |i, t| smooth_curve(&coef[i], grid[t])[p]));
        let model = fit_mfpca(&coords, &grid, 100, 100).unwrap();
        let j = model.n_components();
        let ev = model.eigenvalues();

        for i in 0..n {
            let scores: Vec<f64> = model.scores().row(i).iter().copied().collect();
            let r = model.reconstruct(&scores, j).unwrap();
            for p in 0..3 {
                for t in 0..m {
                    prop_assert!((r[(t, p)] - coords[p][(i, t)]).abs() < 1e-6);
                }
            }
        }
        let ef = model.eigenfunctions();
        let psi = |k: usize| DMatrix::from_fn(m, 3, |t, p| ef[p][(k, t)]);
        for a in 0..j {
            for b in 0..j {
                let g = model.inner(&psi(a), &psi(b));
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((g - want).abs() < 1e-5, "<psi_{a}, psi_{b}> = {g}");
            }
        }
        let s = model.scores();
        let cov = s.transpose() * s / (n - 1) as f64;
        for a in 0..j {
            for b in 0..j {
                let want = if a == b { ev[a] } else { 0.0 };
                prop_assert!((cov[(a, b)] - want).abs() < 1e-6, "score cov ({a},{b})");
            }
        }
    }

    #[test]
    fn multinomial_gradient_matches_central_differences(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(24, 3, |_, _| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..24).map(|i| i % 4).collect();
        for _ in 0..5 {
            let p = MultinomialParams {
                weights: DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
                intercepts: nalgebra::DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)),
            };
            let g = multinomial_gradient(&p, &x, &labels);
            let h = 1e-5;
            for r in 0..4 {
                for c in 0..3 {
                    let (mut plus, mut minus) = (p.clone(), p.clone());
                    plus.weights[(r, c)] += h;
                    minus.weights[(r, c)] -= h;
                    let fd = (multinomial_objective(&plus, &x, &labels) - multinomial_objective(&minus, &x, &labels)) / (2.0 * h);
                    let an = g.weights[(r, c)];
                    prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-2), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn pca_full_rank_roundtrip(rows in 3usize..12, n_landmarks in 3usize..7, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(rows, 3 * n_landmarks, |_, _| rng.random_range(-1.0..1.0));
        let model = pca_fit(&x).unwrap();
        let ev = model.eigenvalues();
        prop_assert!(ev.iter().zip(ev.iter().skip(1)).all(|(a, b)| a >= b));
        for i in 0..rows {
            let s: Vec<f64> = model.scores().row(i).iter().copied().collect();
            let r = pca_reconstruct(&model, &s, model.k_max()).unwrap();
            for l in 0..n_landmarks {
                for c in 0..3 {
                    prop_assert!((r[(l, c)] - x[(i, 3 * l + c)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dp_warp_is_a_valid_warp_and_beats_identity(a in -0.4..0.4f64, u in 0.7..1.4f64, m in 20usize..60) {
        let f = |t: f64| [(2.0 * PI * t).sin() + a * t, (2.0 * PI * t).cos(), t + 0.2 * (4.0 * PI * t).sin()];
        let target = to_srvf(&SampledCurve::uniform(sample(m, |t| t, f)).unwrap(), DEFAULT_SPEED_FLOOR).unwrap();
        let source = to_srvf(&SampledCurve::uniform(sample(m, |t| t.powf(u), f)).unwrap(), DEFAULT_SPEED_FLOOR).unwrap();
        let g = estimate_warp(&target, &source, 0.0).unwrap();
        let gamma = g.gamma();
        prop_assert_eq!(gamma[0], 0.0);
        prop_assert_eq!(gamma[m - 1], 1.0);
        prop_assert!(gamma.windows(2).all(|w| w[1] >= w[0]));
        let id = WarpingFunction::identity(m);
        let with = alignment_objective(&target, &source, &g, 0.0).unwrap();
        let without = alignment_objective(&target, &source, &id, 0.0).unwrap();
        prop_assert!(with <= without + 1e-12);
    }

    #[test]
    fn soft_warp_stays_between_identity_and_warp(u in 0.5..2.0f64, alpha in 0.0..1.0f64) {
        let g = WarpingFunction::power(41, u).unwrap();
        let s = soft_warp(&g, alpha).unwrap();
        for (i, &t) in g.params().iter().enumerate() {
            let (lo, hi) = if g.gamma()[i] < t { (g.gamma()[i], t) } else { (t, g.gamma()[i]) };
            prop_assert!(s.gamma()[i] >= lo - 1e-15 && s.gamma()[i] <= hi + 1e-15);
        }
        prop_assert!(s.gamma().windows(2).all(|w| w[1] >= w[0]));
        let back = g.compose(&g.inverse());
        prop_assert!(back.max_deviation_from_identity() < 0.02);
    }

    #[test]
    fn standardised_training_columns_have_zero_mean_and_unit_sd(seed in any::<u64>(), n in 3usize..30) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 4, |_, c| rng.random_range(-1.0..1.0) * (c + 1) as f64 * 10.0 + c as f64);
        let z = Standardizer::fit(&x).unwrap().apply(&x).unwrap();
        for col in z.column_iter() {
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            prop_assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stratified_folds_partition_and_balance(sizes in prop::collection::vec(1usize..30, 2..5), k in 2usize..8, seed in any::<u64>()) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
        prop_assume!(labels.len() >= k);
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert!(folds.iter().all(|&f| f < k));
        for (c, &size) in sizes.iter().enumerate() {
            for f in 0..k {
                let count = (0..labels.len()).filter(|&i| labels[i] == c && folds[i] == f).count() as f64;
                prop_assert!((count - size as f64 / k as f64).abs() <= 1.0);
            }
        }
        prop_assert_eq!(folds, stratified_kfold(&labels, k, seed).unwrap());
    }

    #[test]
    fn landmark_csv_roundtrip(values in prop::collection::vec(prop::num::f64::NORMAL, 2 * 4 * 3), label in "[A-Za-z0-9 ,\"]{0,8}") {
        let specimens: Vec<LandmarkConfiguration> = (0..2)
            .map(|s| {
                let m = DMatrix::from_fn(4, 3, |i, c| values[s * 12 + i * 3 + c]);
                let label = Some(label.trim().to_string()).filter(|l| !l.is_empty());
                LandmarkConfiguration::new(format!("id {s}"), m, label).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_landmarks(&mut buf, &specimens).unwrap();
        prop_assert_eq!(read_landmarks(buf.as_slice()).unwrap(), specimens);
    }

    #[test]
    fn table_roundtrip(cells in prop::collection::vec(prop::collection::vec("[ -~]{0,6}", 3), 0..6)) {
        let mut table = Table::new(&["a", "b,c", "d\"e"]);
        for row in cells {
            table.push(row).unwrap();
        }
        let mut buf = Vec::new();
        table.write(&mut buf).unwrap();
        prop_assert_eq!(Table::read(buf.as_slice()).unwrap(), table);
    }
}

#[test]
fn srvf_roundtrip_group_one_helix() {
    let m = 200;
    let values = sample(m, |t| t, |t| group_curve(1, t, 0.0).unwrap());
    let q = to_srvf(&SampledCurve::uniform(values.clone()).unwrap(), DEFAULT_SPEED_FLOOR).unwrap();
    let back = from_srvf(&q, [0.0, 1.0, 0.0]).unwrap();
    assert!((back.values() - &values).amax() < 5e-3);
}

#[test]
fn rotation_of_srvf_matches_rotation_of_curve() {
    let values = sample(50, |t| t, |t| group_curve(2, t, 0.0).unwrap());
    let r = rotation([0.3, -0.5, 0.2, 0.7]);
    let q = to_srvf(&SampledCurve::uniform(values.clone()).unwrap(), DEFAULT_SPEED_FLOOR).unwrap();
    let q_rot = to_srvf(&SampledCurve::uniform(rotate(&values, &r)).unwrap(), DEFAULT_SPEED_FLOOR).unwrap();
    assert!((q.rotate(&r).q() - q_rot.q()).amax() < 1e-12);
    let _ = Vector3::<f64>::zeros();
}

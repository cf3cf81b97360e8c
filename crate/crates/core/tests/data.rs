mod common;

use common::rng;
use cqvae::data::*;
use cqvae::matching::sample_gt_shapes;
use cqvae::metrics::shape_variation;
use cqvae::{Error, Shape};
use nalgebra::DMatrix;
use rand::Rng;

fn small_params() -> SceneParams {
    SceneParams { j: 48, height: 32, width: 32, ..SceneParams::default() }
}

fn var_gt(experts: &cqvae::matching::ExpertSet<f64>, seed: u64) -> f64 {
    shape_variation(&sample_gt_shapes(experts, 32, &mut rng(seed)).unwrap()).unwrap().scalar_variation
}

#[test]
fn zero_ambiguity_experts_equal_consensus() {
    let scene = generate_scene(&small_params(), 0.0, &mut rng(1)).unwrap();
    for e in scene.experts.experts() {
        assert_eq!(e, scene.experts.consensus());
    }
    assert!(var_gt(&scene.experts, 2) < 1e-15);
}

#[test]
fn scenes_are_reproducible() {
    let a = generate_scene(&small_params(), 1.0, &mut rng(9)).unwrap();
    let b = generate_scene(&small_params(), 1.0, &mut rng(9)).unwrap();
    assert_eq!(a, b);
    assert!(a.image.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(a.experts.num_points(), 48);
    assert_eq!(a.experts.experts().len(), 3);
}

#[test]
fn ambiguity_drives_ground_truth_variation() {
    let params = small_params();
    let mut r = rng(3);
    let (mut low, mut high) = (0.0, 0.0);
    for i in 0..200 {
        let a = if i % 2 == 0 { 0.5 } else { 2.0 };
        let scene = generate_scene(&params, a, &mut r).unwrap();
        let v = var_gt(&scene.experts, i);
        if a < 1.0 { low += v } else { high += v }
    }
    assert!(high > low, "high {high} vs low {low}");
}

#[test]
fn experts_stay_in_a_bounded_tube() {
    let params = small_params();
    let mut r = rng(4);
    for a in [0.5, 1.0, 2.0] {
        for _ in 0..20 {
            let scene = generate_scene(&params, a, &mut r).unwrap();
            let limit = 3.0 * a * params.noise_unit + 1e-12;
            for e in scene.experts.experts() {
                for (p, q) in e.points().iter().zip(scene.experts.consensus().points()) {
                    assert!((p[0] - q[0]).hypot(p[1] - q[1]) <= limit);
                }
            }
        }
    }
}

#[test]
fn dataset_split_is_by_scene() {
    let ds = generate_dataset(&small_params(), 20, 0.8, 5).unwrap();
    assert_eq!(ds.split(Split::Train).len(), 16);
    assert_eq!(ds.split(Split::Test).len(), 4);
    let levels: Vec<f64> = ds.records.iter().map(|r| r.ambiguity).collect();
    assert_eq!(&levels[..3], &[0.5, 1.0, 2.0]);
    assert_eq!(ds, generate_dataset(&small_params(), 20, 0.8, 5).unwrap());
}

#[test]
fn dataset_round_trips_bit_exactly() {
    let ds = generate_dataset(&small_params(), 6, 0.5, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(manifest.records.len(), 6);
    for r in &manifest.records {
        assert!(dir.path().join(&r.image).exists() && dir.path().join(&r.consensus).exists());
        assert_eq!(r.experts.len(), 3);
    }
    assert!(dir.path().join("shapes/scene0000/expert2.csv").exists());
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn corrupt_files_are_reported() {
    let ds = generate_dataset(&small_params(), 2, 0.5, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    std::fs::write(dir.path().join("images/scene0001.f32"), [0u8; 12]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Dataset(_))));
    std::fs::write(dir.path().join("shapes/scene0000/expert1.csv"), "0.1;0.2\n").unwrap();
    assert!(read_shape_csv(&dir.path().join("shapes/scene0000/expert1.csv")).is_err());
}

fn random_shapes(count: usize, j: usize, r: &mut impl Rng) -> Vec<Shape> {
    (0..count).map(|_| Shape::new((0..j).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect())).collect()
}

#[test]
fn ssm_of_identical_shapes_has_no_modes() {
    let s = random_shapes(1, 5, &mut rng(1)).remove(0);
    let ssm = fit_ssm(&[s.clone(), s.clone(), s.clone()], 0.8).unwrap();
    assert!(ssm.modes.is_empty());
    assert_eq!(ssm.mean_shape, s);
    assert!(fit_ssm(&[s], 0.8).is_err());
}

#[test]
fn ssm_finds_a_single_direction() {
    let base = random_shapes(1, 4, &mut rng(2)).remove(0).to_flat();
    let dir: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0).sin()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let shapes: Vec<Shape> = [-2.0, -0.5, 0.3, 1.0, 1.2]
        .iter()
        .map(|t| Shape::from_flat(&base.iter().zip(&dir).map(|(b, d)| b + t * d).collect::<Vec<_>>()).unwrap())
        .collect();
    let ssm = fit_ssm(&shapes, 0.8).unwrap();
    assert_eq!(ssm.modes.len(), 1);
    let cos: f64 = ssm.modes[0].iter().zip(&dir).map(|(m, d)| m * d).sum::<f64>() / norm;
    assert!((cos.abs() - 1.0).abs() < 1e-9);
}

#[test]
fn ssm_retains_the_requested_variance() {
    let mut r = rng(3);
    let shapes = random_shapes(40, 10, &mut r);
    for fraction in [0.5, 0.8, 0.95] {
        let ssm = fit_ssm(&shapes, fraction).unwrap();
        // Oracle: singular values of the centered data matrix.
        let mean = ssm.mean_shape.to_flat();
        let x = DMatrix::from_fn(40, 20, |i, d| shapes[i].to_flat()[d] - mean[d]);
        let mut eig: Vec<f64> = x.svd(false, false).singular_values.iter().map(|s| s * s / 39.0).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = eig.iter().sum();
        assert!((ssm.total_variance - total).abs() < 1e-9 * total);
        let k = ssm.modes.len();
        let kept: f64 = eig[..k].iter().sum();
        assert!(kept / total >= fraction);
        assert!(eig[..k - 1].iter().sum::<f64>() / total < fraction);
        assert!(ssm.retained_fraction() >= fraction);
        for (a, b) in ssm.mode_variances.iter().zip(&eig) {
            assert!((a - b).abs() < 1e-9 * total);
        }
        assert!(ssm.mode_variances.windows(2).all(|w| w[0] >= w[1]));
        for (i, a) in ssm.modes.iter().enumerate() {
            for (j, b) in ssm.modes.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ssm_sampling_reproduces_mode_covariance() {
    let mut r = rng(4);
    let shapes = random_shapes(30, 6, &mut r);
    let ssm = fit_ssm(&shapes, 0.8).unwrap();
    assert_eq!(ssm.shape_from(&vec![0.0; ssm.modes.len()]).unwrap(), ssm.mean_shape);
    let n = 10_000;
    let mean = ssm.mean_shape.to_flat();
    let samples: Vec<Shape> = (0..n).map(|_| sample_ssm(&ssm, &mut r)).collect();
    let k = ssm.modes.len();
    let mut cov = vec![vec![0.0; k]; k];
    for s in &samples {
        let d: Vec<f64> = s.to_flat().iter().zip(&mean).map(|(a, b)| a - b).collect();
        let b: Vec<f64> = ssm.modes.iter().map(|m| m.iter().zip(&d).map(|(x, y)| x * y).sum()).collect();
        for i in 0..k {
            for j in 0..k {
                cov[i][j] += b[i] * b[j] / n as f64;
            }
        }
    }
    for i in 0..k {
        let v = ssm.mode_variances[i];
        assert!((cov[i][i] - v).abs() < 0.05 * v, "mode {i}: {} vs {v}", cov[i][i]);
        for j in 0..i {
            assert!(cov[i][j].abs() < 0.05 * (cov[i][i] * cov[j][j]).sqrt());
        }
    }
    let refit = fit_ssm(&samples, 0.999).unwrap();
    for (a, b) in refit.mode_variances.iter().zip(&ssm.mode_variances) {
        assert!((a - b).abs() < 0.1 * b);
    }
    let mut r1 = rng(77);
    let mut r2 = rng(77);
    assert_eq!(sample_ssm(&ssm, &mut r1), sample_ssm(&ssm, &mut r2));
}

fn scene_and_target(seed: u64) -> (SyntheticScene, Shape) {
    let mut r = rng(seed);
    let scene = generate_scene(&small_params(), 1.0, &mut r).unwrap();
    let target = Shape::new(
        scene
            .experts
            .consensus()
            .points()
            .iter()
            .map(|p| [p[0] + 0.02 * (6.0 * p[1]).sin(), p[1] + 0.02 * (5.0 * p[0]).cos()])
            .collect(),
    );
    (scene, target)
}

#[test]
fn identity_warp_leaves_pixels() {
    let (scene, _) = scene_and_target(1);
    let c = scene.experts.consensus();
    let w = tps_warp(&scene.image, c, c, scene.experts.experts(), 0.0, 8).unwrap();
    let worst = w.image.pixels.iter().zip(&scene.image.pixels).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst <= 1e-6, "max pixel change {worst}");
    for (a, b) in w.shapes.iter().zip(scene.experts.experts()) {
        for (p, q) in a.points().iter().zip(b.points()) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn translation_warp_translates_image_and_shapes() {
    let (scene, _) = scene_and_target(2);
    let c = scene.experts.consensus();
    let (dx, dy) = (3.0 / 32.0, -2.0 / 32.0);
    let moved = c.translated(dx, dy);
    let w = tps_warp(&scene.image, c, &moved, scene.experts.experts(), 0.0, 8).unwrap();
    for (a, b) in w.shapes.iter().zip(scene.experts.experts()) {
        for (p, q) in a.points().iter().zip(b.points()) {
            assert!((p[0] - q[0] - dx).abs() < 1e-9 && (p[1] - q[1] - dy).abs() < 1e-9);
        }
    }
    for y in 4..28 {
        for x in 4..28 {
            let want = scene.image.get(y + 2, x - 3);
            assert!((w.image.get(y, x) - want).abs() < 1e-5);
        }
    }
}

#[test]
fn spline_interpolates_control_points() {
    let (scene, target) = scene_and_target(3);
    let src = control_points(scene.experts.consensus(), 8);
    let dst = control_points(&target, 8);
    let tps = ThinPlateSpline::fit(&src, &dst, 0.0).unwrap();
    for (s, t) in src.iter().zip(&dst) {
        let p = tps.apply(*s);
        assert!((p[0] - t[0]).abs() < 1e-8 && (p[1] - t[1]).abs() < 1e-8);
    }
    let (a, rhs) = ThinPlateSpline::system(&src, &dst, 0.0);
    let residual = (&a * tps.coefficients() - &rhs).abs().max();
    assert!(residual < 1e-8, "residual {residual}");
    let w = tps_warp(&scene.image, scene.experts.consensus(), &target, &[scene.experts.consensus().clone()], 0.0, 8).unwrap();
    for (p, t) in control_points(&w.shapes[0], 8).iter().zip(&dst) {
        assert!((p[0] - t[0]).abs() < 1e-8 && (p[1] - t[1]).abs() < 1e-8);
    }
}

#[test]
fn smoothing_relaxes_interpolation() {
    let (scene, target) = scene_and_target(4);
    let src = control_points(scene.experts.consensus(), 8);
    let dst = control_points(&target, 8);
    let tps = ThinPlateSpline::fit(&src, &dst, 1.0).unwrap();
    let moved = src.iter().zip(&dst).map(|(s, t)| (tps.apply(*s)[0] - t[0]).abs()).fold(0.0, f64::max);
    assert!(moved > 1e-6);
}

#[test]
fn degenerate_controls_are_rejected() {
    let line: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
    assert!(matches!(ThinPlateSpline::fit(&line, &line, 0.0), Err(Error::DegenerateControlPoints(_))));
    let dup = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
    let err = ThinPlateSpline::fit(&dup, &dup, 0.0).unwrap_err();
    assert!(err.to_string().contains("lambda"));
    assert!(ThinPlateSpline::fit(&dup, &dup, 0.1).is_ok());
}

fn augment_inputs() -> (Vec<Record>, StatisticalShapeModel) {
    let ds = generate_dataset(&small_params(), 10, 1.0, 2).unwrap();
    let train = ds.split_owned(Split::Train);
    let consensus: Vec<Shape> = train.iter().map(|r| r.experts.consensus().clone()).collect();
    (train, fit_ssm(&consensus, 0.8).unwrap())
}

#[test]
fn augmentation_keeps_originals_and_hits_virtual_shapes() {
    let (train, ssm) = augment_inputs();
    let same = augment(&train, &ssm, &AugmentSettings { count: train.len(), lambda: 0.0, stride: 8, seed: 1 }).unwrap();
    assert_eq!(same, train);
    let settings = AugmentSettings { count: 25, lambda: 0.0, stride: 8, seed: 1 };
    let grown = augment(&train, &ssm, &settings).unwrap();
    assert_eq!(grown.len(), 25);
    assert_eq!(&grown[..train.len()], &train[..]);
    for (i, rec) in grown[train.len()..].iter().enumerate() {
        // Replay the draw that produced this record to recover its virtual shape.
        let mut r = cqvae::rng::Seeds::new(1).rng(cqvae::rng::Stream::Augment, &[i as u64, 0]);
        let _base: usize = r.random_range(0..train.len());
        let virtual_shape = sample_ssm(&ssm, &mut r);
        for (p, q) in control_points(rec.experts.consensus(), 8).iter().zip(control_points(&virtual_shape, 8)) {
            assert!((p[0] - q[0]).abs() < 1e-8 && (p[1] - q[1]).abs() < 1e-8);
        }
        assert_eq!(rec.split, Split::Train);
        assert_eq!(rec.experts.experts().len(), 3);
    }
    assert_eq!(grown, augment(&train, &ssm, &settings).unwrap());
    assert!(augment(&train, &ssm, &AugmentSettings { count: 2, ..settings }).is_err());
}

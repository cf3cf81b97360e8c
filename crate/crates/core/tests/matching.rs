mod common;

use common::rng;
use cqvae::matching::*;
use cqvae::Shape;
use proptest::prelude::*;
use rand::Rng;

fn random_shape(j: usize, rng: &mut impl Rng) -> Shape {
    Shape::new((0..j).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect())
}

/// Brute force over every injective map, written independently of the oracle.
fn enumerate_min_cost(d: &DistanceMatrix) -> f64 {
    fn go(d: &DistanceMatrix, k: usize, used: u32) -> f64 {
        if k == d.rows {
            return 0.0;
        }
        (0..d.cols).filter(|l| used & (1 << l) == 0).map(|l| d.get(k, l) + go(d, k + 1, used | (1 << l))).fold(f64::INFINITY, f64::min)
    }
    go(d, 0, 0)
}

#[test]
fn documented_two_by_two_cases() {
    let diag = DistanceMatrix::new(2, 2, vec![1.0, 9.0, 9.0, 1.0]).unwrap();
    let g = greedy_match_matrix(&diag).unwrap();
    assert_eq!(g.assignment, vec![0, 1]);
    assert_eq!(g.total_cost(), 2.0);

    let trap = DistanceMatrix::new(2, 2, vec![1.0, 2.0, 1.0, 100.0]).unwrap();
    let g = greedy_match_matrix(&trap).unwrap();
    assert_eq!(g.assignment, vec![0, 1]);
    assert_eq!(g.total_cost(), 101.0);
    let o = optimal_match_oracle(&trap).unwrap();
    assert_eq!(o.assignment, vec![1, 0]);
    assert_eq!(o.total_cost(), 3.0);
}

#[test]
fn single_gt_sample_takes_the_nearest_model_shape() {
    let mut r = rng(2);
    let model: Vec<Shape> = (0..9).map(|_| random_shape(5, &mut r)).collect();
    let gt = vec![random_shape(5, &mut r)];
    let m = greedy_match(&model, &gt).unwrap();
    let nearest = (0..model.len())
        .min_by(|&a, &b| shape_distance(&gt[0], &model[a]).unwrap().total_cmp(&shape_distance(&gt[0], &model[b]).unwrap()))
        .unwrap();
    assert_eq!(m.assignment, vec![nearest]);
}

#[test]
fn ties_prefer_smaller_gt_then_model_index() {
    let d = DistanceMatrix::new(2, 3, vec![1.0; 6]).unwrap();
    assert_eq!(greedy_match_matrix(&d).unwrap().assignment, vec![0, 1]);
    let d = DistanceMatrix::new(2, 3, vec![5.0, 1.0, 1.0, 1.0, 1.0, 5.0]).unwrap();
    assert_eq!(greedy_match_matrix(&d).unwrap().assignment, vec![1, 0]);
}

#[test]
fn rejects_too_few_model_samples() {
    let d = DistanceMatrix::new(3, 2, vec![0.0; 6]).unwrap();
    assert!(greedy_match_matrix(&d).is_err());
    assert!(optimal_match_oracle(&DistanceMatrix::new(2, 9, vec![0.0; 18]).unwrap()).is_err());
}

#[test]
fn greedy_never_beats_the_oracle() {
    let mut r = rng(7);
    for trial in 0..500 {
        let (k, l) = if trial < 250 { (5, 7) } else {
            let l = r.random_range(1..=ORACLE_MAX);
            (r.random_range(1..=l), l)
        };
        let d = DistanceMatrix::new(k, l, (0..k * l).map(|_| r.random_range(0.0..10.0)).collect()).unwrap();
        let greedy = greedy_match_matrix(&d).unwrap();
        let oracle = optimal_match_oracle(&d).unwrap();
        assert!(greedy.is_injective() && oracle.is_injective());
        assert_eq!(greedy.assignment.len(), k);
        assert!(greedy.total_cost() >= oracle.total_cost() - 1e-12);
        assert!((oracle.total_cost() - enumerate_min_cost(&d)).abs() < 1e-9);
    }
}

#[test]
fn dominant_diagonal_is_matched_optimally() {
    let mut r = rng(9);
    for _ in 0..100 {
        let n = r.random_range(1..=6);
        let values = (0..n * n).map(|i| if i / n == i % n { r.random_range(0.0..1.0) } else { r.random_range(2.0..3.0) }).collect();
        let d = DistanceMatrix::new(n, n, values).unwrap();
        let g = greedy_match_matrix(&d).unwrap();
        assert_eq!(g.assignment, (0..n).collect::<Vec<_>>());
        assert!((g.total_cost() - optimal_match_oracle(&d).unwrap().total_cost()).abs() < 1e-12);
    }
}

#[test]
fn simplex_mean_is_uniform() {
    let mut r = rng(13);
    let draws = 100_000;
    let mut mean = [0.0; 3];
    for _ in 0..draws {
        let a = sample_simplex(3, &mut r);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12 && a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (m, v) in mean.iter_mut().zip(a) {
            *m += v / draws as f64;
        }
    }
    for m in mean {
        assert!((m - 1.0 / 3.0).abs() < 0.01, "mean weight {m}");
    }
}

#[test]
fn gt_samples_of_identical_experts_are_identical() {
    let mut r = rng(1);
    let s = random_shape(6, &mut r);
    let set = ExpertSet::new(vec![s.clone(), s.clone(), s.clone()], s.clone()).unwrap();
    for g in sample_gt_shapes(&set, 8, &mut r).unwrap() {
        assert!(shape_distance(&g, &s).unwrap() < 1e-15);
    }
    assert!(convex_combination(&[s.clone(), random_shape(6, &mut r)], &[1.0, 0.0]).unwrap() == s);
    assert!(sample_gt_shapes(&set, 0, &mut r).is_err());
}

#[test]
fn empty_expert_set_is_rejected() {
    let s = Shape::new(vec![[0.0, 0.0]]);
    let set = ExpertSet::new(vec![], s).unwrap();
    assert!(sample_gt_shapes(&set, 1, &mut rng(0)).is_err());
}

#[test]
fn distance_matches_scalar_loop() {
    let mut r = rng(4);
    let (a, b) = (random_shape(11, &mut r), random_shape(11, &mut r));
    let mut sq = 0.0;
    for j in 0..11 {
        for c in 0..2 {
            sq += (a.points()[j][c] - b.points()[j][c]).powi(2);
        }
    }
    assert!((shape_distance(&a, &b).unwrap() - sq.sqrt()).abs() < 1e-14);
    assert_eq!(shape_distance(&a, &b).unwrap(), shape_distance(&b, &a).unwrap());
}

proptest! {
    #[test]
    fn gt_samples_stay_in_the_pointwise_hull(seed in 0u64..1000) {
        let mut r = rng(seed);
        let experts: Vec<Shape> = (0..3).map(|_| random_shape(4, &mut r)).collect();
        let set = ExpertSet::new(experts.clone(), experts[0].clone()).unwrap();
        for s in sample_gt_shapes(&set, 5, &mut r).unwrap() {
            for (j, p) in s.points().iter().enumerate() {
                for c in 0..2 {
                    let lo = experts.iter().map(|e| e.points()[j][c]).fold(f64::INFINITY, f64::min);
                    let hi = experts.iter().map(|e| e.points()[j][c]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p[c] >= lo - 1e-12 && p[c] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_total(values in prop::collection::vec(0.0f64..5.0, 12)) {
        let d = DistanceMatrix::new(3, 4, values).unwrap();
        let a = greedy_match_matrix(&d).unwrap();
        prop_assert_eq!(&a, &greedy_match_matrix(&d).unwrap());
        prop_assert!(a.is_injective() && a.assignment.iter().all(|&l| l < 4));
    }
}

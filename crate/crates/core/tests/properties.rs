use nalgebra::DVector;
use proptest::prelude::*;

use nrds_core::attractor::{cluster, hausdorff_dist, hausdorff_semidist, SetCloud};
use nrds_core::conjugation::{conjugate_state, deconjugate_state, NoiseShape};
use nrds_core::driver::{PathPoint, WienerPath};

fn sample_path(seed: u64) -> WienerPath {
    WienerPath::sample(seed, -60.0, 20.0, 0.01).unwrap()
}

fn brute_semidist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            best = best.min(d);
        }
        worst = worst.max(best);
    }
    worst
}

fn to_cloud(pts: &[Vec<f64>]) -> SetCloud {
    SetCloud::from_points(pts.iter().map(|p| DVector::from_vec(p.clone())).collect(), 0.0, 0.0)
}

fn points(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), 1..25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_composes_exactly(seed in 0u64..1000, a in -500i64..500, b in -500i64..500) {
        let p = sample_path(seed);
        let (sa, sb) = (a as f64 * 0.01, b as f64 * 0.01);
        let two = p.shift(sa).unwrap().shift(sb).unwrap();
        let one = p.shift((a + b) as f64 * 0.01).unwrap();
        prop_assert_eq!(two.values(), one.values());
        prop_assert_eq!(two.t_min(), one.t_min());
    }

    #[test]
    fn shifted_path_is_anchored(seed in 0u64..1000, a in -1000i64..1000, k in -200i64..200) {
        let p = sample_path(seed);
        let s = a as f64 * 0.01;
        let q = p.shift(s).unwrap();
        prop_assert_eq!(q.value(0.0).unwrap(), 0.0);
        let t = k as f64 * 0.01;
        let expected = p.value(s + t).unwrap() - p.value(s).unwrap();
        prop_assert!((q.value(t).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn stationary_ou_commutes_with_shift(seed in 0u64..1000, a in -500i64..500, t in -5.0f64..5.0) {
        let p = sample_path(seed);
        let s = a as f64 * 0.01;
        let lhs = p.shift(s).unwrap().z_star(t).unwrap();
        let rhs = p.z_star(s + t).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn path_point_shift_moves_tau(tau in -5.0f64..5.0, a in -300i64..300) {
        let pp = PathPoint::new(tau, sample_path(3));
        let s = a as f64 * 0.01;
        let q = pp.shift(s).unwrap();
        prop_assert!((q.tau - (tau + s)).abs() <= 1e-12);
    }

    #[test]
    fn conjugation_round_trip(seed in 0u64..200, eta in 0.0f64..1.0, t in -5.0f64..5.0, v in -3.0f64..3.0, w in -3.0f64..3.0) {
        let pp = PathPoint::new(0.0, sample_path(seed));
        let x = DVector::from_vec(vec![v, w]);
        for shape in [NoiseShape::Decaying, NoiseShape::Constant(0.7)] {
            let y = conjugate_state(&x, t, &pp, eta, shape).unwrap();
            let back = deconjugate_state(&y, t, &pp, eta, shape).unwrap();
            prop_assert!((back - &x).norm() <= 1e-12 * x.norm().max(1.0));
        }
    }

    #[test]
    fn hausdorff_matches_brute_force(a in points(2), b in points(2)) {
        let (ca, cb) = (to_cloud(&a), to_cloud(&b));
        let ab = hausdorff_semidist(&ca, &cb).unwrap();
        let ba = hausdorff_semidist(&cb, &ca).unwrap();
        prop_assert!((ab - brute_semidist(&a, &b)).abs() <= 1e-12);
        prop_assert!((ba - brute_semidist(&b, &a)).abs() <= 1e-12);
        prop_assert_eq!(hausdorff_dist(&ca, &cb).unwrap(), ab.max(ba));
        prop_assert_eq!(hausdorff_dist(&ca, &cb).unwrap(), hausdorff_dist(&cb, &ca).unwrap());
        prop_assert_eq!(hausdorff_dist(&ca, &ca).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_triangle_inequality(a in points(1), b in points(1), c in points(1)) {
        let (ca, cb, cc) = (to_cloud(&a), to_cloud(&b), to_cloud(&c));
        let lhs = hausdorff_dist(&ca, &cc).unwrap();
        let rhs = hausdorff_dist(&ca, &cb).unwrap() + hausdorff_dist(&cb, &cc).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
        prop_assert!(hausdorff_semidist(&ca, &cc).unwrap() <= hausdorff_semidist(&ca, &cb).unwrap() + hausdorff_semidist(&cb, &cc).unwrap() + 1e-12);
    }

    #[test]
    fn semidistance_to_superset_vanishes(a in points(3), b in points(3)) {
        let union: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        prop_assert_eq!(hausdorff_semidist(&to_cloud(&a), &to_cloud(&union)).unwrap(), 0.0);
    }

    #[test]
    fn clustering_separates_and_covers(pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..300), eps in 0.01f64..0.5) {
        let input: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_vec(p.clone())).collect();
        let kept = cluster(&input, eps);
        prop_assert!(!kept.is_empty());
        for i in 0..kept.len() {
            for j in (i + 1)..kept.len() {
                prop_assert!((&kept[i] - &kept[j]).norm() >= 0.5 * eps - 1e-12);
            }
        }
        for p in &input {
            let near = kept.iter().map(|k| (k - p).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(near < 0.5 * eps + 1e-12);
        }
    }
}

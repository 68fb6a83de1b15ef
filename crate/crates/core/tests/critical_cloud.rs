use approx::assert_abs_diff_eq;
use critfield::critical::{cloud_critical_points, cloud_critical_points_bruteforce, CriticalSet};
use critfield::distfield::{generalized_gradient, CompactSetHandle};
use critfield::geom::{convex_membership, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn same_sets(a: &CriticalSet, b: &CriticalSet) -> bool {
    a.points.len() == b.points.len()
        && a.points.iter().zip(&b.points).all(|(p, q)| {
            p.location.dist(&q.location) <= 1e-9 && (p.value - q.value).abs() <= 1e-9 && p.multiplicity == q.multiplicity
        })
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            Point::new(&c)
        })
        .collect()
}

#[test]
fn square_corners() {
    let sq = vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(1.0, 1.0), Point::xy(0.0, 1.0)];
    for cs in [cloud_critical_points_bruteforce(&sq).unwrap(), cloud_critical_points(&sq).unwrap()] {
        assert_eq!(cs.len(), 5);
        let mids = [(0.0, 0.5), (0.5, 0.0), (0.5, 1.0), (1.0, 0.5)];
        for (p, m) in cs.points[..4].iter().zip(mids) {
            assert!(p.location.dist(&Point::xy(m.0, m.1)) < 1e-12);
            assert_abs_diff_eq!(p.value, 0.5, epsilon = 1e-12);
            assert_eq!(p.multiplicity, 2);
        }
        let c = &cs.points[4];
        assert!(c.location.dist(&Point::xy(0.5, 0.5)) < 1e-12);
        assert_abs_diff_eq!(c.value, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(c.multiplicity, 4);
        assert!(c.exceeds_simplex);
    }
}

#[test]
fn equilateral_triangle_and_pair() {
    let h = 3f64.sqrt() / 2.0;
    let tri = vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(0.5, h)];
    let cs = cloud_critical_points(&tri).unwrap();
    assert!(same_sets(&cs, &cloud_critical_points_bruteforce(&tri).unwrap()));
    assert_eq!(cs.len(), 4);
    for p in &cs.points[..3] {
        assert_abs_diff_eq!(p.value, 0.5, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(cs.points[3].value, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
    assert!(cs.points[3].location.dist(&Point::xy(0.5, h / 3.0)) < 1e-12);

    let pair = vec![Point::xy(-1.0, 0.0), Point::xy(1.0, 0.0)];
    let cs = cloud_critical_points(&pair).unwrap();
    assert_eq!(cs.len(), 1);
    assert!(cs.points[0].location.norm() < 1e-15);
    assert_eq!(cs.points[0].multiplicity, 2);
    assert_abs_diff_eq!(cs.points[0].value, 1.0, epsilon = 1e-15);
}

#[test]
fn collinear_cloud() {
    let pts = vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(2.0, 0.0)];
    for cs in [cloud_critical_points(&pts).unwrap(), cloud_critical_points_bruteforce(&pts).unwrap()] {
        assert_eq!(cs.len(), 2);
        assert!(cs.points[0].location.dist(&Point::xy(0.5, 0.0)) < 1e-15);
        assert!(cs.points[1].location.dist(&Point::xy(1.5, 0.0)) < 1e-15);
    }
}

#[test]
fn coplanar_cloud_in_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Point> = (0..10).map(|_| Point::xyz(rng.gen(), rng.gen(), 0.25)).collect();
    let a = cloud_critical_points(&pts).unwrap();
    let b = cloud_critical_points_bruteforce(&pts).unwrap();
    assert!(same_sets(&a, &b));
    assert!(!a.is_empty());
}

#[test]
fn guards() {
    assert!(cloud_critical_points(&[]).is_err());
    let many: Vec<Point> = (0..41).map(|i| Point::xy(i as f64, (i * i) as f64)).collect();
    assert!(cloud_critical_points_bruteforce(&many).is_err());
    let single = cloud_critical_points(&[Point::xy(1.0, 1.0)]).unwrap();
    assert!(single.is_empty());
}

#[test]
fn oracle_equivalence_on_random_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..60 {
        let d = if trial % 2 == 0 { 2 } else { 3 };
        let n = if d == 2 { rng.gen_range(3..=25) } else { rng.gen_range(4..=12) };
        let cloud = random_cloud(&mut rng, n, d);
        let a = cloud_critical_points(&cloud).unwrap();
        let b = cloud_critical_points_bruteforce(&cloud).unwrap();
        assert!(same_sets(&a, &b), "trial {trial}: {} vs {}", a.len(), b.len());
    }
}

#[test]
fn critical_points_have_zero_gradient_and_lie_in_the_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cloud = random_cloud(&mut rng, 30, 2);
    let cs = cloud_critical_points(&cloud).unwrap();
    let set = CompactSetHandle::cloud(cloud.clone()).unwrap();
    for p in &cs.points {
        let g = generalized_gradient(&set, &p.location).unwrap();
        assert!(g.norm <= 1e-8, "{:?}: {}", p.location, g.norm);
        assert!(convex_membership(&p.location, &cloud).weights().is_some());
        let w: f64 = p.weights.iter().sum();
        assert!((w - 1.0).abs() < 1e-9);
    }
}

#[test]
fn deterministic_across_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = random_cloud(&mut rng, 200, 2);
    let a = cloud_critical_points(&cloud).unwrap();
    let mut rev = cloud.clone();
    rev.reverse();
    let b = cloud_critical_points(&rev).unwrap();
    assert!(same_sets(&a, &b));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&cloud_critical_points(&cloud).unwrap()).unwrap());
}

#[test]
fn large_cloud_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud = random_cloud(&mut rng, 5000, 3);
    let t = std::time::Instant::now();
    let cs = cloud_critical_points(&cloud).unwrap();
    assert!(!cs.is_empty());
    eprintln!("5000 points in R^3: {} critical points in {:?}", cs.len(), t.elapsed());
}

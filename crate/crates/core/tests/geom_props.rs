use critfield::distfield::{generalized_gradient, hausdorff_distance, project_cloud, CompactSetHandle};
use critfield::geom::{
    circumcenter_in_affine_hull, convex_membership, packing_count, simplex_volume, smallest_enclosing_ball, Membership,
    Point,
};
use proptest::prelude::*;

fn pt2() -> impl Strategy<Value = Point> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y)| Point::xy(x, y))
}

fn pt3() -> impl Strategy<Value = Point> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Point::xyz(x, y, z))
}

// Smallest ball over all circumballs of subsets of size <= 3 that contain
// every point.
fn brute_meb_radius(pts: &[Point]) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    let covers = |c: &Point, r: f64| pts.iter().all(|p| p.dist(c) <= r * (1.0 + 1e-9) + 1e-12);
    for i in 0..n {
        if covers(&pts[i], 0.0) {
            best = best.min(0.0);
        }
        for j in i + 1..n {
            let c = (pts[i] + pts[j]) / 2.0;
            let r = pts[i].dist(&c);
            if covers(&c, r) {
                best = best.min(r);
            }
            for k in j + 1..n {
                if let Ok((c, r)) = circumcenter_in_affine_hull(&[pts[i], pts[j], pts[k]]) {
                    if covers(&c, r) {
                        best = best.min(r);
                    }
                }
            }
        }
    }
    best
}

fn shoelace(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
}

#[test]
fn fixed_volumes_and_circumcenters() {
    let tri = [Point::xy(0.0, 0.0), Point::xy(2.0, 0.0), Point::xy(0.0, 2.0)];
    assert!((simplex_volume(&tri) - 2.0).abs() < 1e-12);
    let (c, r) = circumcenter_in_affine_hull(&tri).unwrap();
    assert!(c.dist(&Point::xy(1.0, 1.0)) < 1e-12);
    assert!((r - 2f64.sqrt()).abs() < 1e-12);
    let tet = [Point::xyz(0.0, 0.0, 0.0), Point::xyz(1.0, 0.0, 0.0), Point::xyz(0.0, 1.0, 0.0), Point::xyz(0.0, 0.0, 1.0)];
    assert!((simplex_volume(&tet) - 1.0 / 6.0).abs() < 1e-12);
    let seg = [Point::xyz(0.0, 0.0, 0.0), Point::xyz(3.0, 4.0, 0.0)];
    assert!((simplex_volume(&seg) - 5.0).abs() < 1e-12);
}

#[test]
fn packing_count_on_a_line() {
    let pts: Vec<Point> = (0..11).map(|i| Point::xy(i as f64 * 0.1, 0.0)).collect();
    assert_eq!(packing_count(&pts, &Point::xy(0.5, 0.0), 0.2, 0.5).unwrap(), 6);
    assert_eq!(packing_count(&pts, &Point::xy(0.5, 0.0), 0.25, 0.5).unwrap(), 4);
    assert!(packing_count(&pts, &Point::xy(0.0, 0.0), 0.0, 1.0).is_err());
}

#[test]
fn hausdorff_of_shifted_sets() {
    let a = vec![Point::xy(0.0, 0.0), Point::xy(1.0, 0.0)];
    let b = vec![Point::xy(0.0, 0.5), Point::xy(1.0, 0.0), Point::xy(3.0, 0.0)];
    assert!((hausdorff_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    assert!(hausdorff_distance(&a, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn meb_matches_brute_force(pts in prop::collection::vec(pt2(), 1..9)) {
        let ball = smallest_enclosing_ball(&pts).unwrap();
        for p in &pts {
            prop_assert!(ball.contains(p));
        }
        let r = brute_meb_radius(&pts);
        prop_assert!((ball.radius - r).abs() <= 1e-9 * (1.0 + r));
    }

    #[test]
    fn meb_within_jung_bound(pts in prop::collection::vec(pt3(), 1..12)) {
        let ball = smallest_enclosing_ball(&pts).unwrap();
        let diam = pts.iter().flat_map(|p| pts.iter().map(move |q| p.dist(q))).fold(0.0, f64::max);
        prop_assert!(ball.radius <= diam * (3.0f64 / 8.0).sqrt() + 1e-12);
        prop_assert!(ball.radius >= diam / 2.0 - 1e-12);
    }

    #[test]
    fn circumcenter_is_equidistant_and_in_hull_plane(a in pt3(), b in pt3(), c in pt3()) {
        let v = [a, b, c];
        prop_assume!(simplex_volume(&v) > 1e-3);
        let (z, r) = circumcenter_in_affine_hull(&v).unwrap();
        for p in &v {
            prop_assert!((p.dist(&z) - r).abs() <= 1e-9 * (1.0 + r));
        }
        let e1 = b - a;
        let e2 = c - a;
        let n = Point::xyz(e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]);
        prop_assert!(((z - a).dot(&n)).abs() <= 1e-9 * n.norm() * (1.0 + r));
    }

    #[test]
    fn triangle_volume_matches_shoelace(a in pt2(), b in pt2(), c in pt2()) {
        prop_assert!((simplex_volume(&[a, b, c]) - shoelace(&a, &b, &c)).abs() <= 1e-12);
    }

    #[test]
    fn convex_combinations_are_members(
        v in prop::collection::vec(pt3(), 2..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let w: Vec<f64> = raw[..v.len()].to_vec();
        let s: f64 = w.iter().sum();
        let q = v.iter().zip(&w).fold(Point::zeros(3), |acc, (p, wi)| acc + *p * (wi / s));
        match convex_membership(&q, &v) {
            Membership::Inside { weights, .. } => {
                prop_assert!(weights.iter().all(|x| *x >= -1e-12));
                prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                let back = v.iter().zip(&weights).fold(Point::zeros(3), |acc, (p, wi)| acc + *p * *wi);
                prop_assert!(back.dist(&q) <= 1e-8);
            }
            Membership::Outside => prop_assert!(false, "convex combination reported outside"),
        }
    }

    #[test]
    fn far_points_are_outside(v in prop::collection::vec(pt2(), 1..6), dir in 0.0f64..std::f64::consts::TAU) {
        let q = Point::xy(3.0 * dir.cos(), 3.0 * dir.sin());
        prop_assert_eq!(convex_membership(&q, &v), Membership::Outside);
    }

    #[test]
    fn distance_is_one_lipschitz(cloud in prop::collection::vec(pt2(), 1..15), x in pt2(), y in pt2()) {
        let dx = project_cloud(&cloud, &x, 0.0).distance;
        let dy = project_cloud(&cloud, &y, 0.0).distance;
        prop_assert!((dx - dy).abs() <= x.dist(&y) + 1e-12);
    }

    #[test]
    fn gradient_norm_at_most_one(cloud in prop::collection::vec(pt3(), 1..15), z in pt3()) {
        let h = CompactSetHandle::cloud(cloud.clone()).unwrap();
        let g = generalized_gradient(&h, &z).unwrap();
        prop_assert!(g.norm <= 1.0 + 1e-12);
        let dmin = cloud.iter().map(|p| p.dist(&z)).fold(f64::INFINITY, f64::min);
        prop_assert!((g.distance - dmin).abs() <= 1e-12);
    }
}

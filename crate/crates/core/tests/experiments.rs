use critfield::conditions::{evaluate_conditions, ConditionOptions};
use critfield::critical::manifold_critical_points;
use critfield::experiments::{
    default_offsets, farthest_point_sampling, grid_betti, offset_betti_scan, perturbed_scenario, run_perturbation_study,
    run_sampling_study, Perturbation, PerturbationOptions, SamplingOptions,
};
use critfield::manifold::parse_scenario_spec;
use critfield::Point;
use proptest::prelude::*;

fn circle_dense(n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            Point::xy(t.cos(), t.sin())
        })
        .collect()
}

fn conditions_failed(spec: &str) -> Vec<String> {
    let sc = parse_scenario_spec(spec).unwrap();
    let cs = manifold_critical_points(&sc).unwrap();
    let opts = ConditionOptions { mu_scan: false, ..ConditionOptions::default() };
    evaluate_conditions(&sc, &cs, &opts).failed().into_iter().map(|s| s.to_string()).collect()
}

#[test]
fn fps_rejects_bad_input() {
    let dense = circle_dense(400);
    assert!(farthest_point_sampling(&dense, 0.0).is_err());
    assert!(farthest_point_sampling(&dense, -0.1).is_err());
    assert!(farthest_point_sampling(&dense, f64::NAN).is_err());
    assert!(farthest_point_sampling(&[], 0.1).is_err());
    // spacing 2 pi / 400 ~ 0.0157 exceeds 0.04 / 4
    assert!(farthest_point_sampling(&dense, 0.04).is_err());
}

#[test]
fn fps_on_a_circle() {
    let dense = circle_dense(2000);
    let s = farthest_point_sampling(&dense, 0.1).unwrap();
    assert_eq!(s.points[0], *dense.iter().min_by(|a, b| a.lex_cmp(b)).unwrap());
    assert!(s.covering_radius <= 0.1);
    assert!(s.delta > 0.1);
    // neighbours are more than eps apart and gaps are at most 2 eps
    assert!(s.points.len() >= 32 && s.points.len() <= 62, "{}", s.points.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fps_covers_and_separates(n in 200usize..800, eps in 0.1f64..0.8) {
        let dense = circle_dense(n);
        prop_assume!(std::f64::consts::TAU / n as f64 <= eps / 4.0);
        let s = farthest_point_sampling(&dense, eps).unwrap();
        for p in &dense {
            let d = s.points.iter().map(|q| q.dist(p)).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= eps);
        }
        for (i, p) in s.points.iter().enumerate() {
            for q in &s.points[i + 1..] {
                prop_assert!(p.dist(q) > eps);
            }
        }
        for (i, &k) in s.indices.iter().enumerate() {
            prop_assert_eq!(dense[k], s.points[i]);
        }
    }
}

#[test]
fn condition_verdicts_of_builtins() {
    assert!(conditions_failed("ellipse:2,1").is_empty());
    assert!(conditions_failed("ellipsoid:3,2,1").is_empty());
    assert_eq!(conditions_failed("paper_cubic"), ["P4"]);
    let sphere = conditions_failed("sphere:1");
    assert!(sphere.contains(&"P1".to_string()) && sphere.contains(&"P2".to_string()), "{sphere:?}");
}

#[test]
fn zero_amplitude_is_identity() {
    let base = parse_scenario_spec("paper_cubic").unwrap();
    let zero = perturbed_scenario(&base, &Perturbation::CubicLinear, 0.0).unwrap();
    let a = manifold_critical_points(&base).unwrap();
    let b = manifold_critical_points(&zero).unwrap();
    assert_eq!(a.len(), b.len());
    for (p, q) in a.points.iter().zip(&b.points) {
        assert!(p.location.dist(&q.location) <= 1e-12);
        assert!((p.value - q.value).abs() <= 1e-12);
    }
    let ell = parse_scenario_spec("ellipse:2,1").unwrap();
    let st = run_perturbation_study(&ell, &[0.0], &PerturbationOptions::default()).unwrap();
    assert!(st.runs[0].bijection);
    assert!(st.runs[0].max_displacement.unwrap() <= 1e-9);
    assert!(st.stable);
}

#[test]
fn displacement_grows_with_amplitude() {
    let ell = parse_scenario_spec("ellipse:2,1").unwrap();
    let st = run_perturbation_study(&ell, &[0.005, 0.01, 0.02], &PerturbationOptions::default()).unwrap();
    let d: Vec<f64> = st.runs.iter().map(|r| r.max_displacement.unwrap()).collect();
    assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    assert!(st.runs.iter().all(|r| r.bijection && r.conditions_overall));
}

#[test]
fn sampling_study_input_checks() {
    let ell = parse_scenario_spec("ellipse:2,1").unwrap();
    let o = SamplingOptions::default();
    assert!(run_sampling_study(&ell, &[], &o).is_err());
    assert!(run_sampling_study(&ell, &[0.1, 0.2], &o).is_err());
    assert!(run_sampling_study(&ell, &[0.1, 0.1], &o).is_err());
    assert!(run_sampling_study(&ell, &[0.1, 0.0], &o).is_err());
}

#[test]
fn small_sampling_study_matches_far_points() {
    let ell = parse_scenario_spec("ellipse:2,1").unwrap();
    let st = run_sampling_study(&ell, &[0.1, 0.05], &SamplingOptions::default()).unwrap();
    assert_eq!(st.runs.len(), 2);
    assert_eq!(st.unclassified_total, 0);
    for r in &st.runs {
        assert!(!r.far_matched.is_empty());
        assert!(r.far_matched.iter().all(|f| f.distance <= 2.0 * r.eps));
        assert!(r.covering_radius <= r.eps);
    }
}

#[test]
fn grid_betti_fixtures() {
    // 5x5 ring with a one-cell hole
    let ring: Vec<bool> = (0..25).map(|k| {
        let (i, j) = (k % 5, k / 5);
        (1..=3).contains(&i) && (1..=3).contains(&j) && !(i == 2 && j == 2)
    }).collect();
    assert_eq!(grid_betti(&ring, 5, 5), (1, 1));
    let two: Vec<bool> = (0..25).map(|k| k % 5 == 1 || k % 5 == 3).collect();
    assert_eq!(grid_betti(&two, 5, 5), (2, 0));
    // diagonal neighbours are not foreground-connected
    let diag: Vec<bool> = (0..9).map(|k| k == 0 || k == 4 || k == 8).collect();
    assert_eq!(grid_betti(&diag, 3, 3), (3, 0));
}

#[test]
fn default_offsets_span() {
    let o = default_offsets(0.01, 1.0);
    assert!((o[0] - 0.02).abs() < 1e-12);
    assert!(*o.last().unwrap() <= 1.2 + 1e-12);
    assert!(o.windows(2).all(|w| (w[1] - w[0] - 0.005).abs() < 1e-12));
}

#[test]
fn offsets_of_a_circle() {
    let c = parse_scenario_spec("circle:1").unwrap();
    let scan = offset_betti_scan(&c, 0.02, Some(&[0.5, 0.9, 1.1])).unwrap();
    assert_eq!(scan.betti1, [1, 1, 0]);
    assert_eq!(scan.betti0, [1, 1, 1]);
    assert!(offset_betti_scan(&parse_scenario_spec("sphere:1").unwrap(), 0.05, None).is_err());
    assert!(offset_betti_scan(&c, 0.0, None).is_err());
}

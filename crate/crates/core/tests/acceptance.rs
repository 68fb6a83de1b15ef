//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines always reach stdout.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use critfield::conditions::{assemble_b_form, evaluate_conditions, mu_scan, default_h_values, ConditionOptions};
use critfield::critical::{cloud_critical_points, cloud_critical_points_bruteforce, manifold_critical_points, CriticalSet};
use critfield::distfield::{project_manifold, PROJ_TIE_TOL, STARTS_PER_CHART};
use critfield::experiments::{
    offset_betti_scan, reproduce_counterexample_p4, run_perturbation_study, run_sampling_study, PerturbationOptions,
    SamplingOptions,
};
use critfield::manifold::{parse_scenario_spec, ChartPoint, Scenario, BUILTIN_SUITE};
use critfield::Point;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(t.as_secs_f64() <= limit_s, || format!("{what} took {:.1} s > {limit_s} s", t.as_secs_f64()))
}

fn same_sets(a: &CriticalSet, b: &CriticalSet, tol: f64) -> bool {
    a.len() == b.len()
        && a.points.iter().zip(&b.points).all(|(p, q)| {
            p.location.dist(&q.location) <= tol && (p.value - q.value).abs() <= tol && p.multiplicity == q.multiplicity
        })
}

fn scenario(s: &str) -> Scenario {
    parse_scenario_spec(s).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let t = Instant::now();
    let mut total = 0;
    for trial in 0..100 {
        let d = if trial < 50 { 2 } else { 3 };
        let n = if d == 2 { rng.gen_range(3..=25) } else { rng.gen_range(4..=12) };
        let cloud: Vec<Point> = (0..n).map(|_| Point::new(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
        let a = cloud_critical_points(&cloud).map_err(|e| e.to_string())?;
        let b = cloud_critical_points_bruteforce(&cloud).map_err(|e| e.to_string())?;
        ensure(same_sets(&a, &b, 1e-9), || format!("trial {trial} (n={n}, D={d}): {} vs {} points", a.len(), b.len()))?;
        total += a.len();
    }
    within(t.elapsed(), 60.0, "100 clouds")?;
    Ok(format!("100 clouds, {total} critical points, {:.2} s", t.elapsed().as_secs_f64()))
}

fn fixture_exactness() -> Outcome {
    let check = |cs: &CriticalSet, want: &[((f64, f64), f64)], name: &str| -> Result<(), String> {
        ensure(cs.len() == want.len(), || format!("{name}: {} points, want {}", cs.len(), want.len()))?;
        for ((x, y), r) in want {
            let z = Point::xy(*x, *y);
            ensure(cs.points.iter().any(|p| p.location.dist(&z) <= 1e-9 && (p.value - r).abs() <= 1e-9), || {
                format!("{name}: no critical point at {z:?} with r = {r}")
            })?;
        }
        Ok(())
    };
    let sq = [Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(1.0, 1.0), Point::xy(0.0, 1.0)];
    let cs = cloud_critical_points(&sq).map_err(|e| e.to_string())?;
    check(&cs, &[((0.5, 0.0), 0.5), ((1.0, 0.5), 0.5), ((0.5, 1.0), 0.5), ((0.0, 0.5), 0.5), ((0.5, 0.5), 0.5f64.sqrt())], "square")?;
    let h = 3f64.sqrt() / 2.0;
    let tri = [Point::xy(0.0, 0.0), Point::xy(1.0, 0.0), Point::xy(0.5, h)];
    let cs = cloud_critical_points(&tri).map_err(|e| e.to_string())?;
    check(&cs, &[((0.5, 0.0), 0.5), ((0.75, h / 2.0), 0.5), ((0.25, h / 2.0), 0.5), ((0.5, h / 3.0), 1.0 / 3f64.sqrt())], "triangle")?;
    let pair = [Point::xy(-1.0, 0.0), Point::xy(1.0, 0.0)];
    let cs = cloud_critical_points(&pair).map_err(|e| e.to_string())?;
    check(&cs, &[((0.0, 0.0), 1.0)], "pair")?;
    Ok("square 5, triangle 4, pair 1".into())
}

fn ellipse_pipeline() -> Outcome {
    let t = Instant::now();
    let sc = scenario("ellipse:2,1");
    let cs = manifold_critical_points(&sc).map_err(|e| e.to_string())?;
    let rep = evaluate_conditions(&sc, &cs, &ConditionOptions::default());
    let el = t.elapsed();
    ensure(cs.len() == 1 && cs.suspects.is_empty(), || format!("{} points, {} suspects", cs.len(), cs.suspects.len()))?;
    let cp = &cs.points[0];
    ensure(cp.location.norm() <= 1e-7, || format!("z = {:?}", cp.location))?;
    ensure((cp.value - 1.0).abs() <= 1e-7, || format!("r = {}", cp.value))?;
    ensure(cp.multiplicity == 2, || format!("s = {}", cp.multiplicity))?;
    for want in [Point::xy(0.0, 1.0), Point::xy(0.0, -1.0)] {
        ensure(cp.projection_points().iter().any(|p| p.dist(&want) <= 1e-7), || format!("missing projection {want:?}"))?;
    }
    ensure(rep.overall, || format!("conditions failed: {:?}", rep.failed()))?;
    let alpha = rep.points[0].p3.as_ref().and_then(|v| v.alpha).ok_or("no alpha")?;
    ensure((alpha - 0.75).abs() <= 1e-6, || format!("alpha = {alpha}"))?;
    let b = &rep.points[0].p4.as_ref().ok_or("no P4 verdict")?.b_matrix;
    ensure(b.len() == 1 && (b[0][0] - 4.0 / 9.0).abs() <= 1e-6, || format!("B = {b:?}"))?;
    within(el, 10.0, "ellipse pipeline")?;
    Ok(format!("z = {:?}, r = {:.12}, alpha = {alpha:.9}, B = {:.9}, {:.2} s", cp.location, cp.value, b[0][0], el.as_secs_f64()))
}

fn fd_differential(sc: &Scenario, at: ChartPoint, z: Point, step: f64) -> DMatrix<f64> {
    let d = z.dim();
    DMatrix::from_fn(d, d, |i, k| {
        let (mut zp, mut zm) = (z, z);
        zp[k] += step;
        zm[k] -= step;
        let pp = sc.local_projection(at, zp).unwrap().point;
        let pm = sc.local_projection(at, zm).unwrap().point;
        (pp[i] - pm[i]) / (2.0 * step)
    })
}

fn projection_differential() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (name, z) in [("ellipse:2,1", Point::xy(0.0, 0.0)), ("circle:1", Point::xy(2.0, 0.0)), ("paper_cubic", Point::xy(0.0, 0.0))] {
        let sc = scenario(name);
        let ps = project_manifold(&sc, &z, PROJ_TIE_TOL, STARTS_PER_CHART).map_err(|e| e.to_string())?;
        for p in &ps.projections {
            let at = p.at.ok_or("projection without chart point")?;
            let dp = sc.projection_differential(z, at).map_err(|e| e.to_string())?;
            let fd = fd_differential(&sc, at, z, 1e-5);
            let rel = (&dp - &fd).amax() / fd.amax().max(1e-300);
            ensure(rel <= 1e-6, || format!("{name} at {:?}: relative error {rel:.3e}", p.point))?;
            worst = worst.max(rel);
            n += 1;
        }
    }
    Ok(format!("{n} projections, max relative error {worst:.2e}"))
}

fn osculation() -> Outcome {
    let c = scenario("circle:1");
    let v = c.osculation_check(ChartPoint { chart: 0, u: [0.0, 0.0] }, Point::xy(0.0, 0.0)).map_err(|e| e.to_string())?;
    ensure(v.is_osculating() && (v.lambda_max() - 1.0).abs() <= 1e-8, || format!("circle: {v:?}"))?;
    let e = scenario("ellipse:2,1");
    let w = e
        .osculation_check(ChartPoint { chart: 0, u: [std::f64::consts::FRAC_PI_2, 0.0] }, Point::xy(0.0, 0.0))
        .map_err(|e| e.to_string())?;
    ensure(!w.is_osculating() && (w.lambda_max() - 0.25).abs() <= 1e-8, || format!("ellipse: {w:?}"))?;
    Ok(format!("circle lambda_max = {}, ellipse lambda_max = {}", v.lambda_max(), w.lambda_max()))
}

fn counterexample() -> Outcome {
    let r = reproduce_counterexample_p4().map_err(|e| e.to_string())?;
    for x in [1e-3, 5e-3, 1e-2] {
        let row = r.rows.iter().find(|w| w.x == x).ok_or_else(|| format!("no row for x = {x}"))?;
        let q = row.gradient_ratio.ok_or("missing ratio")?;
        ensure((0.95..=1.05).contains(&q), || format!("x = {x}: ratio {q}"))?;
    }
    let slope = r.mu_slope.ok_or("no cubic scan slope")?;
    ensure((1.9..=2.1).contains(&slope), || format!("cubic scan slope {slope}"))?;
    let b = r.b_max_abs.ok_or("no B-form")?;
    ensure(b <= 1e-9, || format!("cubic |B| = {b:e}"))?;
    let sc = scenario("ellipse:2,1");
    let cs = manifold_critical_points(&sc).map_err(|e| e.to_string())?;
    let ms = mu_scan(&sc, &cs.points[0], &default_h_values()).map_err(|e| e.to_string())?;
    let es = ms.fit.as_ref().ok_or("no ellipse fit")?.slope;
    ensure((0.9..=1.1).contains(&es), || format!("ellipse scan slope {es}"))?;
    Ok(format!("cubic slope {slope:.4}, |B| = {b:.2e}, ellipse slope {es:.4}"))
}

fn sampling() -> Outcome {
    let t = Instant::now();
    let sc = scenario("ellipse:2,1");
    let st = run_sampling_study(&sc, &[0.2, 0.1, 0.05, 0.025], &SamplingOptions::default()).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let near = st.near_fit.as_ref().ok_or("no near fit")?.slope;
    let far = st.far_fit.as_ref().ok_or("no far fit")?.slope;
    ensure((1.8..=2.2).contains(&near), || format!("near slope {near}"))?;
    ensure(far <= 1.2, || format!("far slope {far}"))?;
    let c4 = st.constants.c4_hat.ok_or("no C4")?;
    for r in &st.runs {
        ensure(r.unclassified.is_empty(), || format!("eps {}: {} unclassified", r.eps, r.unclassified.len()))?;
        for f in &r.far_matched {
            ensure(f.distance <= c4 * r.eps * (1.0 + 1e-12), || format!("eps {}: far point beyond C4 eps", r.eps))?;
        }
        for b in &r.ball_checks {
            ensure(b.disjoint && b.all_nonempty, || format!("eps {}: projections not one per ball", r.eps))?;
            ensure((b.far_points as f64).log2() <= (b.packing_n * b.multiplicity) as f64, || {
                format!("eps {}: {} far points > 2^({}*{})", r.eps, b.far_points, b.packing_n, b.multiplicity)
            })?;
        }
    }
    ensure(st.pass, || "study flagged failure".into())?;
    within(el, 120.0, "sampling study")?;
    Ok(format!(
        "near slope {near:.3}, far slope {far:.3}, C4 {c4:.3}, C5 {:.3}, {:.2} s",
        st.constants.c5_hat.unwrap_or(f64::NAN),
        el.as_secs_f64()
    ))
}

fn mu_bound() -> Outcome {
    let sc = scenario("ellipse:2,1");
    let st = run_sampling_study(&sc, &[0.2, 0.1, 0.05, 0.025], &SamplingOptions::default()).map_err(|e| e.to_string())?;
    let tau = 0.5;
    ensure((st.reach - tau).abs() < 1e-12, || format!("reach {}", st.reach))?;
    let big_r = sc.meta.diameter;
    let mut n = 0;
    let mut worst: f64 = 0.0;
    for r in &st.runs {
        for f in &r.far_matched {
            let bound = (r.eps / f.d_m) * (1.0 + big_r / (2.0 * tau));
            let w = &f.mu_witness;
            ensure(w.witness_offset <= r.eps, || format!("witness {:?} farther than eps", w.witness))?;
            ensure(w.mu <= bound, || format!("eps {}: mu {} > bound {bound}", r.eps, w.mu))?;
            worst = worst.max(w.mu / bound);
            n += 1;
        }
    }
    ensure(n > 0, || "no far points".into())?;
    Ok(format!("{n} far points, max mu/bound {worst:.3}"))
}

fn stability_pair() -> Outcome {
    let sc = scenario("ellipse:2,1");
    let st = run_perturbation_study(&sc, &[1e-2], &PerturbationOptions::default()).map_err(|e| e.to_string())?;
    let r = &st.runs[0];
    ensure(r.bijection, || format!("no bijection: {:?}", r.witness))?;
    let disp = r.max_displacement.ok_or("no displacement")?;
    ensure(disp <= 0.05, || format!("displacement {disp}"))?;
    ensure(st.base_conditions_overall && r.conditions_overall, || format!("conditions not preserved: {:?}", r.failed_conditions))?;
    let cubic = scenario("paper_cubic");
    let ct = run_perturbation_study(&cubic, &[0.1], &PerturbationOptions::default()).map_err(|e| e.to_string())?;
    let cr = &ct.runs[0];
    let probe = cr.probe.as_ref().ok_or("no probe")?;
    ensure(probe.base_count >= 1 && probe.perturbed_count == 0, || format!("probe {probe:?}"))?;
    ensure(ct.base_failed_conditions == ["P4"], || format!("base failures {:?}", ct.base_failed_conditions))?;
    ensure(ct.expected_p4_failure, || "not reported as the P4 failure mode".into())?;
    Ok(format!("ellipse displacement {disp:.4}; cubic: {}", cr.witness.as_deref().unwrap_or("")))
}

fn offsets() -> Outcome {
    let t = Instant::now();
    let scan = offset_betti_scan(&scenario("ellipse:2,1"), 0.01, None).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let drops: Vec<_> = scan.changes.iter().filter(|c| c.betti1 == (1, 0)).collect();
    ensure(drops.len() == 1, || format!("betti1 1->0 changes: {}", drops.len()))?;
    let c = drops[0];
    ensure((c.radius - 1.0).abs() <= 0.02, || format!("betti1 drops at {}", c.radius))?;
    let inside: Vec<usize> = (0..scan.offsets.len()).filter(|&k| scan.offsets[k] > 0.05 && scan.offsets[k] < 0.98).collect();
    ensure(!inside.is_empty(), || "no offsets in (0.05, 0.98)".into())?;
    let k0 = inside[0];
    ensure(inside.iter().all(|&k| scan.betti0[k] == scan.betti0[k0] && scan.betti1[k] == scan.betti1[k0]), || {
        "Betti numbers vary on (0.05, 0.98)".into()
    })?;
    within(el, 60.0, "offset scan")?;
    Ok(format!("betti1 1->0 at {:.4} (bracket {}..{}), {:.2} s", c.radius, c.lower, c.upper, el.as_secs_f64()))
}

fn gram_oracle(sc: &Scenario, seeds: &[ChartPoint], z: Point, eps: f64) -> f64 {
    let cols: Vec<Point> = seeds.iter().map(|s| sc.local_projection(*s, z).unwrap().point - z).collect();
    let g = DMatrix::from_fn(cols.len(), cols.len(), |i, j| cols[i].dot(&cols[j]));
    g.determinant() / (eps * eps)
}

fn volume_oracle() -> Outcome {
    let eps = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let opts = ConditionOptions { mu_scan: false, ..ConditionOptions::default() };
    for name in BUILTIN_SUITE {
        let sc = scenario(name);
        let cs = manifold_critical_points(&sc).map_err(|e| e.to_string())?;
        let rep = evaluate_conditions(&sc, &cs, &opts);
        for (cp, pc) in cs.points.iter().zip(&rep.points) {
            if !pc.pass {
                continue;
            }
            let form = assemble_b_form(&sc, cp).map_err(|e| e.to_string())?;
            let seeds: Vec<ChartPoint> = cp.projections.iter().map(|p| p.at.unwrap()).collect();
            let mut dirs = form.eperp_basis.clone();
            if dirs.len() == 2 {
                dirs.push((dirs[0] + dirs[1]) / 2f64.sqrt());
            }
            for h in dirs {
                let b = form.value(&h);
                let o = gram_oracle(&sc, &seeds, cp.location + h * eps, eps);
                let rel = (b - o).abs() / b.abs().max(1e-300);
                ensure(rel <= 1e-3, || format!("{name} at {:?}, h = {h:?}: B = {b:e}, oracle = {o:e}", cp.location))?;
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(checked > 0, || "no passing critical points".into())?;
    Ok(format!("{checked} directions, max relative error {worst:.2e}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", oracle_equivalence),
        ("fixture exactness", fixture_exactness),
        ("ellipse(2,1) full pipeline", ellipse_pipeline),
        ("projection differential", projection_differential),
        ("osculation detection", osculation),
        ("counterexample quantitative", counterexample),
        ("sampling scaling", sampling),
        ("mu-critical bound for far points", mu_bound),
        ("stability/instability pair", stability_pair),
        ("offset Morse check", offsets),
        ("B-form vs volume oracle", volume_oracle),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match out {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{:.1} s]", k + 1, t.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{:.1} s]", k + 1, t.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Desk-scale experiments: farthest point sampling and the sampling study,
//! perturbation stability, the (P4) counterexample on `paper_cubic`, and
//! Betti-number scans of planar offsets.

use std::collections::VecDeque;

use kiddo::{KdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{
    assemble_b_form, core_point, default_h_values, evaluate_conditions, mu_scan, BspForm, ConditionOptions, MuScan,
    SCHEMA_VERSION,
};
use crate::critical::{cloud_critical_points, manifold_critical_points, CriticalPoint, CriticalSet};
use crate::distfield::{gradient_from_projections, project_manifold, CloudIndex, PROJ_TIE_TOL, STARTS_PER_CHART};
use crate::error::{Error, Result};
use crate::fit::{fit_loglog, ScalingFit};
use crate::geom::{bounding_box, canonical_sorted, packing_count, Point};
use crate::manifold::{paper_cubic_with, Bump, Scenario};

/// Points per chart of the dense discretization fed to FPS.
pub const DENSE_PER_CHART: usize = 4096;
/// Near/far cutoff `NEAR_FACTOR·ε²/τ`.
pub const NEAR_FACTOR: f64 = 10.0;
/// Default bump radius in parameter space.
pub const BUMP_RADIUS: f64 = 0.5;
/// Gradient-ratio band for the counterexample.
pub const RATIO_BAND: (f64, f64) = (0.95, 1.05);
/// Projections of `p(x)` must match the closed forms to this tolerance.
pub const CLOSED_FORM_TOL: f64 = 1e-8;
pub const COUNTEREXAMPLE_XS: [f64; 8] = [0.0, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1];

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn max_of(it: impl IntoIterator<Item = f64>) -> Option<f64> {
    it.into_iter().fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn min_pairwise(pts: &[Point]) -> Option<f64> {
    let mut out: Option<f64> = None;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = a.dist(b);
            out = Some(out.map_or(d, |m| m.min(d)));
        }
    }
    out
}

fn nearest(pts: &[Point], z: &Point) -> Option<(usize, f64)> {
    pts.iter().enumerate().map(|(i, p)| (i, p.dist(z))).min_by(|a, b| a.1.total_cmp(&b.1))
}

// ---------------------------------------------------------------------------
// Farthest point sampling

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FpsSample {
    pub eps: f64,
    pub points: Vec<Point>,
    /// Indices into the dense input.
    pub indices: Vec<usize>,
    /// Smallest pairwise distance in the sample.
    pub delta: f64,
    /// Largest distance from a dense point to the sample.
    pub covering_radius: f64,
}

/// Greedy farthest point sampling from the lexicographically lowest point
/// until every dense point lies within `eps` of the sample. The dense set's
/// nearest-neighbour spacing must not exceed `eps/4`.
pub fn farthest_point_sampling(dense: &[Point], eps: f64) -> Result<FpsSample> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(bad(format!("eps must be positive and finite, got {eps}")));
    }
    if dense.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if dense.len() > 1 {
        let index = CloudIndex::new(dense);
        let reach = 0.25 * eps * (1.0 + 1e-12);
        let sparse = (0..dense.len()).into_par_iter().find_first(|&i| {
            let mut near = Vec::new();
            index.in_open_ball(&dense[i], reach, &mut near);
            !near.iter().any(|&j| j != i)
        });
        if let Some(i) = sparse {
            return Err(bad(format!(
                "dense set too sparse for eps = {eps}: point {i} has no neighbour within eps/4"
            )));
        }
    }
    let mut first = 0;
    for i in 1..dense.len() {
        if dense[i].lex_cmp(&dense[first]).is_lt() {
            first = i;
        }
    }
    let mut indices = vec![first];
    let mut dist: Vec<f64> = dense.iter().map(|p| p.dist(&dense[first])).collect();
    loop {
        let (far, dmax) = dist.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        if dmax <= eps {
            break;
        }
        indices.push(far);
        let q = dense[far];
        dist.par_iter_mut().zip(dense.par_iter()).for_each(|(d, p)| *d = d.min(p.dist(&q)));
    }
    let points: Vec<Point> = indices.iter().map(|&i| dense[i]).collect();
    Ok(FpsSample {
        eps,
        delta: min_pairwise(&points).unwrap_or(f64::INFINITY),
        covering_radius: dist.iter().copied().fold(0.0, f64::max),
        points,
        indices,
    })
}

// ---------------------------------------------------------------------------
// Sampling study

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NearPoint {
    pub location: Point,
    pub d_m: f64,
}

/// μ-critical witness near a far critical point of the sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuWitness {
    /// `|∇d_M|` at the far point itself.
    pub mu_at_z: f64,
    /// `|∇d_M|` at the core medial axis point over `π_{E⊥}(z - z0)`.
    pub mu_core: Option<f64>,
    pub core_offset: Option<f64>,
    /// Smallest gradient norm among the candidates within ε of `z`.
    pub mu: f64,
    pub witness: Point,
    pub witness_kind: String,
    pub witness_offset: f64,
    /// `(ε/r)(1 + R/(2τ))`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FarMatch {
    pub location: Point,
    pub value: f64,
    pub d_m: f64,
    /// Index of the matched point of Z(M).
    pub matched: usize,
    pub matched_location: Point,
    pub distance: f64,
    /// Distance from each projection of `z` in the sample to the nearest
    /// projection of the matched critical point.
    pub projection_offsets: Vec<f64>,
    pub mu_witness: MuWitness,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Unclassified {
    pub location: Point,
    pub d_m: f64,
    pub nearest_distance: Option<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallCheck {
    pub matched: usize,
    pub far_points: usize,
    pub ball_radius: f64,
    pub disjoint: bool,
    pub all_nonempty: bool,
    /// Max over the balls of the packing number N(δ, C₅ε) on the dense set.
    pub packing_n: usize,
    pub multiplicity: usize,
    /// `log2` of the bound `2^(N·s)`.
    pub log2_count_bound: f64,
    pub count_bound_holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingRun {
    pub eps: f64,
    pub delta: f64,
    pub covering_radius: f64,
    pub n_sample: usize,
    pub sample: Vec<Point>,
    pub za: CriticalSet,
    pub near_cutoff: f64,
    pub near_manifold: Vec<NearPoint>,
    pub far_matched: Vec<FarMatch>,
    pub unclassified: Vec<Unclassified>,
    pub ball_checks: Vec<BallCheck>,
    pub mu_bound_violations: usize,
    pub max_near_d_m: Option<f64>,
    pub max_far_distance: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedConstants {
    /// `max d_M(z)/ε²` over near points.
    pub c1_hat: Option<f64>,
    /// `max d_{Z(M)}(z)/ε` over far points.
    pub c4_hat: Option<f64>,
    /// `max` projection offset `/ε` over far points.
    pub c5_hat: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingStudy {
    pub schema_version: String,
    pub scenario: String,
    pub reach: f64,
    pub diameter: f64,
    pub eps_list: Vec<f64>,
    pub truth: Vec<Point>,
    pub match_radius: f64,
    pub runs: Vec<SamplingRun>,
    pub constants: FittedConstants,
    /// Max near-branch `d_M` against ε.
    pub near_fit: Option<ScalingFit>,
    /// Max far-branch distance to Z(M) against ε (zero distances dropped).
    pub far_fit: Option<ScalingFit>,
    pub near_slope_ok: bool,
    pub far_slope_ok: bool,
    pub unclassified_total: usize,
    pub one_per_ball: bool,
    pub count_bound: bool,
    pub mu_bound_violations: usize,
    pub warnings: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct SamplingOptions {
    pub dense_per_chart: usize,
    pub near_factor: f64,
    pub near_slope: (f64, f64),
    pub far_slope_max: f64,
}

impl Default for SamplingOptions {
    fn default() -> SamplingOptions {
        SamplingOptions { dense_per_chart: DENSE_PER_CHART, near_factor: NEAR_FACTOR, near_slope: (1.8, 2.2), far_slope_max: 1.2 }
    }
}

struct Ctx<'a> {
    sc: &'a Scenario,
    truth: &'a [CriticalPoint],
    dense: &'a [Point],
    tau: f64,
    match_radius: f64,
    near_factor: f64,
}

fn d_m(sc: &Scenario, z: &Point) -> Result<f64> {
    Ok(project_manifold(sc, z, PROJ_TIE_TOL, STARTS_PER_CHART)?.distance)
}

fn grad_norm(sc: &Scenario, z: &Point) -> Result<f64> {
    Ok(gradient_from_projections(&project_manifold(sc, z, PROJ_TIE_TOL, STARTS_PER_CHART)?)?.norm)
}

fn mu_witness(ctx: &Ctx, z: &CriticalPoint, z0: &CriticalPoint, r: f64, eps: f64) -> Result<MuWitness> {
    let bound = (eps / r) * (1.0 + ctx.sc.meta.diameter / (2.0 * ctx.tau));
    let mu_at_z = grad_norm(ctx.sc, &z.location)?;
    let mut best = (mu_at_z, z.location, "z".to_string(), 0.0);
    let core = core_point(ctx.sc, z0, &(z.location - z0.location)).ok();
    let (mu_core, core_offset) = match &core {
        Some(c) => (Some(c.gradient_norm), Some(c.location.dist(&z.location))),
        None => (None, None),
    };
    if let (Some(c), Some(off)) = (&core, core_offset) {
        if off <= eps && c.gradient_norm < best.0 {
            best = (c.gradient_norm, c.location, "core_axis".into(), off);
        }
    }
    let off0 = z0.location.dist(&z.location);
    if off0 <= eps && 0.0 < best.0 {
        best = (0.0, z0.location, "critical_point".into(), off0);
    }
    Ok(MuWitness {
        mu_at_z,
        mu_core,
        core_offset,
        mu: best.0,
        witness: best.1,
        witness_kind: best.2,
        witness_offset: best.3,
        bound,
        holds: best.0 <= bound,
    })
}

enum Class {
    Near(NearPoint),
    Far(FarMatch),
    Unclassified(Unclassified),
}

fn classify(ctx: &Ctx, cp: &CriticalPoint, eps: f64) -> Class {
    let z = cp.location;
    let dm = match d_m(ctx.sc, &z) {
        Ok(v) => v,
        Err(e) => {
            return Class::Unclassified(Unclassified { location: z, d_m: f64::NAN, nearest_distance: None, reason: e.to_string() })
        }
    };
    if dm <= ctx.near_factor * eps * eps / ctx.tau {
        return Class::Near(NearPoint { location: z, d_m: dm });
    }
    let locs: Vec<Point> = ctx.truth.iter().map(|c| c.location).collect();
    let Some((j, dist)) = nearest(&locs, &z) else {
        return Class::Unclassified(Unclassified { location: z, d_m: dm, nearest_distance: None, reason: "Z(M) is empty".into() });
    };
    if dist > ctx.match_radius {
        return Class::Unclassified(Unclassified {
            location: z,
            d_m: dm,
            nearest_distance: Some(dist),
            reason: format!("nearest critical point at {dist:.4e} > match radius {:.4e}", ctx.match_radius),
        });
    }
    let z0 = &ctx.truth[j];
    let true_proj = z0.projection_points();
    let offsets = cp.projection_points().iter().map(|p| nearest(&true_proj, p).map_or(f64::INFINITY, |n| n.1)).collect();
    match mu_witness(ctx, cp, z0, dm, eps) {
        Ok(w) => Class::Far(FarMatch {
            location: z,
            value: cp.value,
            d_m: dm,
            matched: j,
            matched_location: z0.location,
            distance: dist,
            projection_offsets: offsets,
            mu_witness: w,
        }),
        Err(e) => Class::Unclassified(Unclassified {
            location: z,
            d_m: dm,
            nearest_distance: Some(dist),
            reason: format!("gradient evaluation failed: {e}"),
        }),
    }
}

fn sampling_run(ctx: &Ctx, eps: f64) -> Result<SamplingRun> {
    let fps = farthest_point_sampling(ctx.dense, eps)?;
    let za = cloud_critical_points(&fps.points)?;
    let classes: Vec<Class> = za.points.par_iter().map(|cp| classify(ctx, cp, eps)).collect();
    let mut near = Vec::new();
    let mut far = Vec::new();
    let mut unc = Vec::new();
    for c in classes {
        match c {
            Class::Near(n) => near.push(n),
            Class::Far(f) => far.push(f),
            Class::Unclassified(u) => unc.push(u),
        }
    }
    let mut notes = Vec::new();
    if far.is_empty() {
        notes.push("no far critical points at this eps".to_string());
    }
    Ok(SamplingRun {
        eps,
        delta: fps.delta,
        covering_radius: fps.covering_radius,
        n_sample: fps.points.len(),
        near_cutoff: ctx.near_factor * eps * eps / ctx.tau,
        max_near_d_m: max_of(near.iter().map(|n| n.d_m)),
        max_far_distance: max_of(far.iter().map(|f| f.distance)),
        mu_bound_violations: far.iter().filter(|f| !f.mu_witness.holds).count(),
        sample: fps.points,
        za,
        near_manifold: near,
        far_matched: far,
        unclassified: unc,
        ball_checks: Vec::new(),
        notes,
    })
}

fn ball_checks(ctx: &Ctx, run: &SamplingRun, c5: f64) -> Result<Vec<BallCheck>> {
    let radius = c5 * run.eps;
    let mut out = Vec::new();
    for (j, z0) in ctx.truth.iter().enumerate() {
        let fs: Vec<&FarMatch> = run.far_matched.iter().filter(|f| f.matched == j).collect();
        if fs.is_empty() {
            continue;
        }
        let centers = z0.projection_points();
        let disjoint = min_pairwise(&centers).is_none_or(|d| d > 2.0 * radius);
        let tol = 1e-12 * (1.0 + radius);
        let all_nonempty = fs.iter().all(|f| {
            let ps: Vec<Point> = run.za.points.iter().find(|c| c.location == f.location).map(|c| c.projection_points()).unwrap_or_default();
            centers.iter().all(|x| ps.iter().any(|p| p.dist(x) <= radius + tol))
        });
        let mut packing_n = 0;
        for x in &centers {
            packing_n = packing_n.max(packing_count(ctx.dense, x, run.delta, radius.max(f64::MIN_POSITIVE))?);
        }
        let s = z0.multiplicity;
        let log2_bound = (packing_n * s) as f64;
        out.push(BallCheck {
            matched: j,
            far_points: fs.len(),
            ball_radius: radius,
            disjoint,
            all_nonempty,
            packing_n,
            multiplicity: s,
            log2_count_bound: log2_bound,
            count_bound_holds: (fs.len() as f64).log2() <= log2_bound,
        });
    }
    Ok(out)
}

/// Samples the scenario by FPS at each ε, computes the critical points of
/// each sample and sorts them into near-manifold and far points matched to
/// the manifold's critical points.
pub fn run_sampling_study(sc: &Scenario, eps_list: &[f64], opts: &SamplingOptions) -> Result<SamplingStudy> {
    if eps_list.is_empty() {
        return Err(bad("eps list is empty"));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(bad("eps values must be positive and finite"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(bad("eps list must be strictly decreasing"));
    }
    let tau = sc.meta.reach.ok_or_else(|| bad(format!("{}: sampling study needs a known reach", sc.name)))?;
    let mut warnings = Vec::new();
    if eps_list[0] > tau / 8.0 {
        warnings.push(format!("max eps {} exceeds tau/8 = {}", eps_list[0], tau / 8.0));
    }
    let truth_set = manifold_critical_points(sc)?;
    if !truth_set.suspects.is_empty() {
        warnings.push(format!("{} continuum suspects in Z(M)", truth_set.suspects.len()));
    }
    let truth = truth_set.points;
    let locs: Vec<Point> = truth.iter().map(|c| c.location).collect();
    let match_radius = min_pairwise(&locs).map_or(tau, |s| tau.min(0.5 * s));
    let dense = sc.discretize_points(opts.dense_per_chart);
    let ctx = Ctx { sc, truth: &truth, dense: &dense, tau, match_radius, near_factor: opts.near_factor };
    let mut runs = eps_list.par_iter().map(|&e| sampling_run(&ctx, e)).collect::<Result<Vec<_>>>()?;

    let c1 = max_of(runs.iter().flat_map(|r| r.near_manifold.iter().map(move |n| n.d_m / (r.eps * r.eps))));
    let c4 = max_of(runs.iter().flat_map(|r| r.far_matched.iter().map(move |f| f.distance / r.eps)));
    let c5 = max_of(runs.iter().flat_map(|r| r.far_matched.iter().flat_map(move |f| f.projection_offsets.iter().map(move |o| o / r.eps))));
    if let Some(c5) = c5 {
        for r in runs.iter_mut() {
            r.ball_checks = ball_checks(&ctx, r, c5)?;
        }
    }

    let (ex, ny): (Vec<f64>, Vec<f64>) = runs.iter().filter_map(|r| r.max_near_d_m.map(|d| (r.eps, d))).unzip();
    let near_fit = fit_loglog(&ex, &ny).ok();
    let (fx, fy): (Vec<f64>, Vec<f64>) = runs.iter().filter_map(|r| r.max_far_distance.filter(|d| *d > 0.0).map(|d| (r.eps, d))).unzip();
    let far_fit = fit_loglog(&fx, &fy).ok();
    if far_fit.is_none() {
        warnings.push("fewer than two eps values with a positive far distance; far slope not fitted".into());
    }
    let near_slope_ok = near_fit.as_ref().is_some_and(|f| (opts.near_slope.0..=opts.near_slope.1).contains(&f.slope));
    let far_slope_ok = far_fit.as_ref().is_some_and(|f| f.slope <= opts.far_slope_max);
    let unclassified_total = runs.iter().map(|r| r.unclassified.len()).sum();
    let one_per_ball = runs.iter().flat_map(|r| &r.ball_checks).all(|b| b.disjoint && b.all_nonempty);
    let count_bound = runs.iter().flat_map(|r| &r.ball_checks).all(|b| b.count_bound_holds);
    let mu_bound_violations = runs.iter().map(|r| r.mu_bound_violations).sum();
    let pass = unclassified_total == 0 && near_slope_ok && far_slope_ok && one_per_ball && count_bound && mu_bound_violations == 0;
    Ok(SamplingStudy {
        schema_version: SCHEMA_VERSION.into(),
        scenario: sc.name.clone(),
        reach: tau,
        diameter: sc.meta.diameter,
        eps_list: eps_list.to_vec(),
        truth: locs,
        match_radius,
        runs,
        constants: FittedConstants { c1_hat: c1, c4_hat: c4, c5_hat: c5 },
        near_fit,
        far_fit,
        near_slope_ok,
        far_slope_ok,
        unclassified_total,
        one_per_ball,
        count_bound,
        mu_bound_violations,
        warnings,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Perturbation study

/// How the base scenario is perturbed for a given amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// `(1 - t²)³` bump of the given amplitude on one chart.
    Bump { chart: usize, center: [f64; 2], radius: f64, direction: Option<Point> },
    /// `paper_cubic_perturbed(amp)`: `y = ±(1 + amp·x + x³)` near the origin.
    CubicLinear,
}

#[derive(Clone, Debug, Default)]
pub struct PerturbationOptions {
    /// Defaults to [`default_perturbation`].
    pub perturbation: Option<Perturbation>,
    /// Defaults to a quarter of `min(reach or diameter, separation of Z(M))`.
    pub match_radius: Option<f64>,
    /// Ball whose critical points are counted before and after.
    pub probe: Option<(Point, f64)>,
}

/// `CubicLinear` with a unit probe ball at the origin for `paper_cubic`; a
/// normal bump at the first projection of the first critical point
/// otherwise.
pub fn default_perturbation(sc: &Scenario, base: &CriticalSet) -> Result<(Perturbation, Option<(Point, f64)>)> {
    if sc.name == "paper_cubic" {
        return Ok((Perturbation::CubicLinear, Some((Point::zeros(2), 1.0))));
    }
    let at = base
        .points
        .first()
        .and_then(|c| c.projections.first())
        .and_then(|p| p.at)
        .unwrap_or(crate::manifold::ChartPoint { chart: 0, u: sc.charts[0].parameter_grid(1)[0] });
    Ok((Perturbation::Bump { chart: at.chart, center: at.u, radius: BUMP_RADIUS, direction: None }, None))
}

pub fn perturbed_scenario(sc: &Scenario, p: &Perturbation, amp: f64) -> Result<Scenario> {
    match p {
        Perturbation::Bump { chart, center, radius, direction } => {
            sc.with_bump(&Bump { chart: *chart, center: *center, radius: *radius, amplitude: amp, direction: *direction })
        }
        Perturbation::CubicLinear => paper_cubic_with(amp),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointMatch {
    pub base: Point,
    pub matched: Option<Point>,
    pub candidates: usize,
    pub displacement: Option<f64>,
    /// Max distance from a base projection to the nearest perturbed one.
    pub projection_displacement: Option<f64>,
    /// Each ball of radius half the base projection separation holds
    /// exactly one perturbed projection.
    pub one_per_ball: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeResult {
    pub center: Point,
    pub radius: f64,
    pub base_count: usize,
    pub perturbed_count: usize,
    pub vanished: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeRun {
    pub amplitude: f64,
    pub scenario: String,
    pub n_base: usize,
    pub n_perturbed: usize,
    pub matches: Vec<PointMatch>,
    pub unmatched_perturbed: Vec<Point>,
    pub bijection: bool,
    pub max_displacement: Option<f64>,
    pub conditions_overall: bool,
    pub failed_conditions: Vec<String>,
    pub probe: Option<ProbeResult>,
    pub witness: Option<String>,
    pub perturbed_points: CriticalSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationStudy {
    pub schema_version: String,
    pub scenario: String,
    pub perturbation: Perturbation,
    pub base_points: Vec<Point>,
    pub base_conditions_overall: bool,
    pub base_failed_conditions: Vec<String>,
    pub match_radius: f64,
    pub runs: Vec<AmplitudeRun>,
    /// Every run is a bijection and keeps P1-P4.
    pub stable: bool,
    /// The base fails only (P4) and a probed critical point vanished.
    pub expected_p4_failure: bool,
}

fn match_points(base: &CriticalSet, pert: &CriticalSet, radius: f64) -> (Vec<PointMatch>, Vec<Point>, Option<String>) {
    let mut used = vec![false; pert.points.len()];
    let mut witness = None;
    let mut out = Vec::new();
    for b in &base.points {
        let cands: Vec<usize> = (0..pert.points.len()).filter(|&k| pert.points[k].location.dist(&b.location) <= radius).collect();
        let pick = cands.iter().copied().filter(|&k| !used[k]).min_by(|&i, &k| {
            pert.points[i].location.dist(&b.location).total_cmp(&pert.points[k].location.dist(&b.location))
        });
        if cands.len() > 1 && witness.is_none() {
            witness = Some(format!("ambiguous match: {} candidates within {radius:.3e} of {:?}", cands.len(), b.location));
        }
        let m = match pick {
            Some(k) if cands.len() == 1 => {
                used[k] = true;
                let p = &pert.points[k];
                let bp = b.projection_points();
                let pp = p.projection_points();
                let proj = max_of(bp.iter().map(|x| nearest(&pp, x).map_or(f64::INFINITY, |n| n.1)));
                let rho = 0.5 * min_pairwise(&bp).unwrap_or(f64::INFINITY);
                let opb = bp.len() == pp.len() && bp.iter().all(|x| pp.iter().filter(|y| y.dist(x) < rho).count() == 1);
                PointMatch {
                    base: b.location,
                    matched: Some(p.location),
                    candidates: 1,
                    displacement: Some(p.location.dist(&b.location)),
                    projection_displacement: proj,
                    one_per_ball: Some(opb),
                }
            }
            _ => {
                if cands.is_empty() && witness.is_none() {
                    witness = Some(format!("critical point vanished: no match within {radius:.3e} of {:?}", b.location));
                }
                PointMatch { base: b.location, matched: None, candidates: cands.len(), displacement: None, projection_displacement: None, one_per_ball: None }
            }
        };
        out.push(m);
    }
    let extra: Vec<Point> = (0..pert.points.len()).filter(|&k| !used[k]).map(|k| pert.points[k].location).collect();
    if !extra.is_empty() && witness.is_none() {
        witness = Some(format!("{} perturbed critical point(s) without a base partner, first {:?}", extra.len(), extra[0]));
    }
    (out, extra, witness)
}

fn count_in(cs: &CriticalSet, c: &Point, r: f64) -> usize {
    cs.points.iter().filter(|p| p.location.dist(c) <= r).count()
}

/// Recomputes the critical points and conditions for each amplitude and
/// matches them to the base critical points.
pub fn run_perturbation_study(sc: &Scenario, amplitudes: &[f64], opts: &PerturbationOptions) -> Result<PerturbationStudy> {
    if amplitudes.is_empty() {
        return Err(bad("amplitude list is empty"));
    }
    if amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(bad("amplitudes must be finite"));
    }
    let copts = ConditionOptions { mu_scan: false, h_values: default_h_values() };
    let base = manifold_critical_points(sc)?;
    let base_report = evaluate_conditions(sc, &base, &copts);
    let (default_p, default_probe) = default_perturbation(sc, &base)?;
    let perturbation = opts.perturbation.clone().unwrap_or(default_p);
    let probe = opts.probe.or(if opts.perturbation.is_none() { default_probe } else { None });
    let locs = base.locations();
    let scale = sc.meta.reach.unwrap_or(sc.meta.diameter);
    let match_radius = opts.match_radius.unwrap_or_else(|| 0.25 * min_pairwise(&locs).map_or(scale, |s| scale.min(s)));
    let runs = amplitudes
        .par_iter()
        .map(|&amp| -> Result<AmplitudeRun> {
            let psc = perturbed_scenario(sc, &perturbation, amp)?;
            let pcs = manifold_critical_points(&psc)?;
            let rep = evaluate_conditions(&psc, &pcs, &copts);
            let (matches, extra, mut witness) = match_points(&base, &pcs, match_radius);
            let probe = probe.map(|(c, r)| {
                let b = count_in(&base, &c, r);
                let p = count_in(&pcs, &c, r);
                ProbeResult { center: c, radius: r, base_count: b, perturbed_count: p, vanished: p < b }
            });
            if let Some(pr) = probe.as_ref().filter(|pr| pr.vanished) {
                witness = Some(format!(
                    "critical point vanished: {} critical point(s) in B({:?}, {}) before, {} after",
                    pr.base_count, pr.center, pr.radius, pr.perturbed_count
                ));
            }
            let bijection = extra.is_empty() && matches.iter().all(|m| m.matched.is_some()) && base.len() == pcs.len();
            Ok(AmplitudeRun {
                amplitude: amp,
                scenario: psc.name.clone(),
                n_base: base.len(),
                n_perturbed: pcs.len(),
                max_displacement: max_of(matches.iter().filter_map(|m| m.displacement)),
                matches,
                unmatched_perturbed: extra,
                bijection,
                conditions_overall: rep.overall,
                failed_conditions: rep.failed().iter().map(|s| s.to_string()).collect(),
                probe,
                witness,
                perturbed_points: pcs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stable = base_report.overall && runs.iter().all(|r| r.bijection && r.conditions_overall);
    let base_failed: Vec<String> = base_report.failed().iter().map(|s| s.to_string()).collect();
    let expected_p4_failure = base_failed == ["P4"] && runs.iter().any(|r| r.probe.as_ref().is_some_and(|p| p.vanished));
    Ok(PerturbationStudy {
        schema_version: SCHEMA_VERSION.into(),
        scenario: sc.name.clone(),
        perturbation,
        base_points: locs,
        base_conditions_overall: base_report.overall,
        base_failed_conditions: base_failed,
        match_radius,
        runs,
        stable,
        expected_p4_failure,
    })
}

// ---------------------------------------------------------------------------
// Counterexample to (P4) without the Big Simplex Property

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub x: f64,
    /// `p(x) = (x + 3x² + 3x⁵, 0)`.
    pub p: Point,
    pub projections: Vec<Point>,
    /// `(x, ±(1 + x³))`.
    pub expected: Vec<Point>,
    pub projection_error: f64,
    pub gradient_norm: f64,
    /// `|∇d_M(p(x))| / (3x²)`.
    pub gradient_ratio: Option<f64>,
    /// `|p(x) - z0| / x`.
    pub distance_ratio: Option<f64>,
    /// Gradient ratio inside the band; checked for `0 < x ≤ 0.01`.
    pub in_band: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub schema_version: String,
    pub scenario: String,
    pub rows: Vec<CounterexampleRow>,
    pub z0: Point,
    pub z0_value: f64,
    pub b_form: Option<BspForm>,
    pub b_max_abs: Option<f64>,
    pub mu_scan: Option<MuScan>,
    pub mu_slope: Option<f64>,
    pub projections_ok: bool,
    pub ratios_ok: bool,
    pub b_form_vanishes: bool,
    pub slope_ok: bool,
    pub pass: bool,
}

pub const B_ZERO_TOL: f64 = 1e-9;
pub const CUBIC_SLOPE_BAND: (f64, f64) = (1.9, 2.1);

fn counterexample_row(sc: &Scenario, z0: &Point, x: f64) -> Result<CounterexampleRow> {
    let p = Point::xy(x + 3.0 * x * x + 3.0 * x.powi(5), 0.0);
    let ps = project_manifold(sc, &p, PROJ_TIE_TOL, STARTS_PER_CHART)?;
    let g = gradient_from_projections(&ps)?;
    let y = 1.0 + x.powi(3);
    let expected = vec![Point::xy(x, y), Point::xy(x, -y)];
    let projections = canonical_sorted(&ps.points());
    let err = if projections.len() == 2 {
        expected.iter().map(|e| nearest(&projections, e).map_or(f64::INFINITY, |n| n.1)).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let ratio = (x > 0.0).then(|| g.norm / (3.0 * x * x));
    Ok(CounterexampleRow {
        x,
        p,
        projections,
        expected,
        projection_error: err,
        gradient_norm: g.norm,
        gradient_ratio: ratio,
        distance_ratio: (x > 0.0).then(|| p.dist(z0) / x),
        in_band: ratio.filter(|_| x <= 0.01).map(|r| (RATIO_BAND.0..=RATIO_BAND.1).contains(&r)),
    })
}

/// Gradient decay along `p(x)`, the vanishing B-form and the μ-scan at the
/// origin of `paper_cubic`.
pub fn reproduce_counterexample_p4() -> Result<CounterexampleReport> {
    let sc = paper_cubic_with(0.0)?;
    let cs = manifold_critical_points(&sc)?;
    let origin = Point::zeros(2);
    let cp = cs
        .points
        .iter()
        .min_by(|a, b| a.location.dist(&origin).total_cmp(&b.location.dist(&origin)))
        .filter(|c| c.location.dist(&origin) < 1e-3)
        .cloned();
    let rows = COUNTEREXAMPLE_XS.par_iter().map(|&x| counterexample_row(&sc, &origin, x)).collect::<Result<Vec<_>>>()?;
    let (b_form, scan) = match &cp {
        Some(c) => (assemble_b_form(&sc, c).ok(), mu_scan(&sc, c, &default_h_values()).ok()),
        None => (None, None),
    };
    let b_max_abs = b_form.as_ref().map(|f| f.b_matrix.iter().flatten().fold(0.0, |a: f64, v| a.max(v.abs())));
    let mu_slope = scan.as_ref().and_then(|s| s.fit.as_ref()).map(|f| f.slope);
    let projections_ok = rows.iter().all(|r| r.projection_error <= CLOSED_FORM_TOL);
    let ratios_ok = rows.iter().filter_map(|r| r.in_band).all(|b| b) && rows.iter().any(|r| r.in_band.is_some());
    let b_form_vanishes = b_max_abs.is_some_and(|b| b <= B_ZERO_TOL);
    let slope_ok = mu_slope.is_some_and(|s| (CUBIC_SLOPE_BAND.0..=CUBIC_SLOPE_BAND.1).contains(&s));
    Ok(CounterexampleReport {
        schema_version: SCHEMA_VERSION.into(),
        scenario: sc.name.clone(),
        rows,
        z0: cp.as_ref().map_or(origin, |c| c.location),
        z0_value: cp.as_ref().map_or(f64::NAN, |c| c.value),
        b_form,
        b_max_abs,
        mu_scan: scan,
        mu_slope,
        projections_ok,
        ratios_ok,
        b_form_vanishes,
        slope_ok,
        pass: projections_ok && ratios_ok && b_form_vanishes && slope_ok,
    })
}

// ---------------------------------------------------------------------------
// Offset topology

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BettiChange {
    /// Midpoint of the bracketing offsets.
    pub radius: f64,
    pub lower: f64,
    pub upper: f64,
    pub betti0: (usize, usize),
    pub betti1: (usize, usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffsetTopologyScan {
    pub schema_version: String,
    pub scenario: String,
    pub grid_step: f64,
    pub grid_origin: Point,
    pub grid_shape: [usize; 2],
    pub dense_points: usize,
    pub offsets: Vec<f64>,
    pub betti0: Vec<usize>,
    pub betti1: Vec<usize>,
    pub change_radii: Vec<f64>,
    pub changes: Vec<BettiChange>,
    pub critical_values: Vec<f64>,
    /// Every change is bracketed within two grid steps of a critical value.
    pub changes_at_critical_values: bool,
    pub warnings: Vec<String>,
}

/// Offsets from `2·grid` to `1.2·max_value` in steps of `grid/2`.
pub fn default_offsets(grid: f64, max_value: f64) -> Vec<f64> {
    let hi = 1.2 * max_value;
    let step = 0.5 * grid;
    let n = ((hi - 2.0 * grid) / step).floor().max(0.0) as usize;
    (0..=n).map(|k| 2.0 * grid + k as f64 * step).collect()
}

fn label_count(mask: &[bool], nx: usize, ny: usize, eight: bool, skip_border: bool) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    let nbrs: &[(i64, i64)] = if eight {
        &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    } else {
        &[(-1, 0), (1, 0), (0, -1), (0, 1)]
    };
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut border = false;
        while let Some(c) = queue.pop_front() {
            let (i, j) = ((c % nx) as i64, (c / nx) as i64);
            if i == 0 || j == 0 || i == nx as i64 - 1 || j == ny as i64 - 1 {
                border = true;
            }
            for (di, dj) in nbrs {
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    continue;
                }
                let k = b as usize * nx + a as usize;
                if mask[k] && !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        if !(skip_border && border) {
            count += 1;
        }
    }
    count
}

/// Betti numbers of a rasterized sublevel set: 4-connected foreground
/// components and 8-connected bounded background components.
pub fn grid_betti(mask: &[bool], nx: usize, ny: usize) -> (usize, usize) {
    let bg: Vec<bool> = mask.iter().map(|m| !m).collect();
    (label_count(mask, nx, ny, false, false), label_count(&bg, nx, ny, true, true))
}

/// Betti numbers of `{d_M ≤ a}` on a grid for each offset `a`. The scenario
/// must be a closed curve in the plane. Offsets default to
/// [`default_offsets`] up to the largest critical value.
pub fn offset_betti_scan(sc: &Scenario, grid: f64, offsets: Option<&[f64]>) -> Result<OffsetTopologyScan> {
    if !(grid > 0.0 && grid.is_finite()) {
        return Err(bad(format!("grid step must be positive, got {grid}")));
    }
    if sc.dim() != 2 || sc.m() != 1 || !sc.charts.iter().all(|c| c.domain.periodic[0]) {
        return Err(bad(format!("{}: offset scans need closed curves in R^2", sc.name)));
    }
    let cs = manifold_critical_points(sc)?;
    // continuum suspects are critical too, only not isolated
    let mut critical_values: Vec<f64> = cs.points.iter().map(|c| c.value).chain(cs.suspects.iter().map(|s| s.value)).collect();
    critical_values.sort_by(f64::total_cmp);
    let offsets: Vec<f64> = match offsets {
        Some(o) => {
            let mut v = o.to_vec();
            if v.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return Err(bad("offsets must be finite and nonnegative"));
            }
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
        None => default_offsets(grid, critical_values.last().copied().unwrap_or(0.5 * sc.meta.diameter)),
    };
    if offsets.is_empty() {
        return Err(bad("no offsets to scan"));
    }
    let coarse = sc.discretize_points(4096);
    let length: f64 = coarse.windows(2).map(|w| w[0].dist(&w[1])).sum::<f64>() + coarse[0].dist(&coarse[coarse.len() - 1]);
    let per_chart = ((2.0 * length / grid).ceil() as usize).max(4096);
    let dense = sc.discretize_points(per_chart);
    let mut tree: KdTree<f64, 2> = KdTree::with_capacity(dense.len());
    for (i, p) in dense.iter().enumerate() {
        tree.add(&[p[0], p[1]], i as u64);
    }
    let pad = offsets.last().copied().unwrap_or(0.0) + 2.0 * grid;
    let (lo, hi) = bounding_box(&dense);
    let origin = Point::xy(lo[0] - pad, lo[1] - pad);
    let nx = ((hi[0] - lo[0] + 2.0 * pad) / grid).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1] + 2.0 * pad) / grid).ceil() as usize + 1;
    let field: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let q = Point::xy(origin[0] + (k % nx) as f64 * grid, origin[1] + (k / nx) as f64 * grid);
            tree.nearest_one::<SquaredEuclidean>(&[q[0], q[1]]).distance.sqrt()
        })
        .collect();
    let betti: Vec<(usize, usize)> = offsets
        .par_iter()
        .map(|&a| {
            let mask: Vec<bool> = field.iter().map(|d| *d <= a).collect();
            grid_betti(&mask, nx, ny)
        })
        .collect();
    let mut changes = Vec::new();
    let mut warnings = Vec::new();
    for k in 1..offsets.len() {
        if betti[k] != betti[k - 1] {
            let (lo_a, hi_a) = (offsets[k - 1], offsets[k]);
            if hi_a - lo_a > 2.0 * grid {
                warnings.push(format!("change between offsets {lo_a} and {hi_a} straddles more than two grid cells"));
            }
            changes.push(BettiChange {
                radius: 0.5 * (lo_a + hi_a),
                lower: lo_a,
                upper: hi_a,
                betti0: (betti[k - 1].0, betti[k].0),
                betti1: (betti[k - 1].1, betti[k].1),
            });
        }
    }
    let slack = 2.0 * grid;
    let changes_at_critical_values =
        changes.iter().all(|c| critical_values.iter().any(|v| *v >= c.lower - slack && *v <= c.upper + slack));
    Ok(OffsetTopologyScan {
        schema_version: SCHEMA_VERSION.into(),
        scenario: sc.name.clone(),
        grid_step: grid,
        grid_origin: origin,
        grid_shape: [nx, ny],
        dense_points: dense.len(),
        change_radii: changes.iter().map(|c| c.radius).collect(),
        betti0: betti.iter().map(|b| b.0).collect(),
        betti1: betti.iter().map(|b| b.1).collect(),
        offsets,
        changes,
        critical_values,
        changes_at_critical_values,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn betti_of_ring_and_disk() {
        let (nx, ny) = (9, 9);
        let ring: Vec<bool> = (0..nx * ny)
            .map(|k| {
                let (i, j) = ((k % nx) as i64 - 4, (k / nx) as i64 - 4);
                let m = i.abs().max(j.abs());
                (2..=3).contains(&m)
            })
            .collect();
        assert_eq!(grid_betti(&ring, nx, ny), (1, 1));
        let disk: Vec<bool> = (0..nx * ny).map(|k| (k % nx).abs_diff(4).max((k / nx).abs_diff(4)) <= 3).collect();
        assert_eq!(grid_betti(&disk, nx, ny), (1, 0));
    }

    #[test]
    fn diagonal_cells_are_separate_components() {
        let mut m = vec![false; 16];
        m[5] = true;
        m[10] = true;
        assert_eq!(grid_betti(&m, 4, 4), (2, 0));
    }

    #[test]
    fn default_offsets_span() {
        let o = default_offsets(0.01, 1.0);
        assert!((o[0] - 0.02).abs() < 1e-15);
        assert!(*o.last().unwrap() <= 1.2 + 1e-12 && *o.last().unwrap() > 1.19);
    }
}

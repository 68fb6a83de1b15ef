//! Genericity conditions P1-P4 on a computed critical set, the quadratic
//! form B of the Big Simplex Property, μ-scans along the core medial axis
//! and the η table.
//!
//! Convention: `B(h) = hᵀ M h` for `h` written in the orthonormal basis of
//! E⊥ stored in [`BspForm::eperp_basis`], with `M` symmetric. For the
//! ellipse(2,1) center this gives `M = [[4/9]]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::critical::{CriticalPoint, CriticalSet, SuspectPoint};
use crate::distfield::{project_manifold, PROJ_TIE_TOL, STARTS_PER_CHART};
use crate::error::{Error, Result};
use crate::fit::{fit_loglog, geomspace, ScalingFit};
use crate::geom::{bounding_box, convex_membership_with, simplex_volume, smallest_enclosing_ball, Point, INTERIOR_TOL};
use crate::manifold::{orthogonal_complement, orthonormalize, ChartPoint, Osculation, Scenario};

pub const SCHEMA_VERSION: &str = "1.0";
/// Simplex volume floor relative to `(2r)^(s-1)`.
pub const VOL_TOL: f64 = 1e-8;
/// Minimum pairwise separation relative to the diameter.
pub const SEP_TOL_REL: f64 = 1e-6;
pub const COND_MAX: f64 = 1e10;
/// Non-degeneracy floor for B relative to `diam^(2(s-1))`.
pub const BSP_TOL: f64 = 1e-8;
pub const L_FUDGE: f64 = 1e-3;
/// Slopes below this classify as linear growth of the gradient.
pub const SLOPE_CUT: f64 = 1.25;
/// Slopes at or above this classify as superlinear.
pub const SLOPE_FAIL: f64 = 1.5;
pub const CORE_STEPS: usize = 32;
pub const VOLUME_ORACLE_EPS: f64 = 1e-4;
pub const INDEX_EIG_BAND: f64 = 1e-5;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P1Verdict {
    pub pass: bool,
    pub multiplicity: usize,
    pub simplex_volume: f64,
    pub volume_floor: f64,
    pub min_barycentric: Option<f64>,
    pub reason: Option<String>,
}

/// Nondegenerate projection simplex with `z` in its relative interior.
pub fn check_p1(cp: &CriticalPoint, dim: usize) -> P1Verdict {
    let xs = cp.projection_points();
    let s = xs.len();
    let vol = simplex_volume(&xs);
    let floor = VOL_TOL * (2.0 * cp.value).powi(s.saturating_sub(1) as i32);
    let mb = convex_membership_with(&cp.location, &xs, INTERIOR_TOL)
        .weights()
        .map(|w| w.iter().copied().fold(f64::INFINITY, f64::min));
    let reason = if s > dim + 1 {
        Some(format!("s = {s} exceeds D+1 = {}", dim + 1))
    } else if s < 2 {
        Some(format!("s = {s} projections"))
    } else if !(vol > floor) {
        Some(format!("degenerate simplex: volume {vol:.3e} <= {floor:.3e}"))
    } else {
        match mb {
            None => Some("z outside the projection hull".into()),
            Some(m) if !(m > INTERIOR_TOL) => Some(format!("z on the hull boundary: min barycentric {m:.3e}")),
            _ => None,
        }
    };
    P1Verdict { pass: reason.is_none(), multiplicity: s, simplex_volume: vol, volume_floor: floor, min_barycentric: mb, reason }
}

/// P1 verdict for a location whose projection set looks like a continuum.
pub fn check_p1_suspect(sp: &SuspectPoint) -> P1Verdict {
    P1Verdict {
        pass: false,
        multiplicity: sp.clusters,
        simplex_volume: 0.0,
        volume_floor: 0.0,
        min_barycentric: None,
        reason: Some(sp.reason.clone()),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P2Verdict {
    pub pass: bool,
    pub count: usize,
    pub count_is_lower_bound: bool,
    pub min_separation: Option<f64>,
    pub separation_floor: f64,
    pub max_condition_number: Option<f64>,
    pub suspects: usize,
    pub diverged_seeds: usize,
    pub reasons: Vec<String>,
}

/// Finitely many isolated critical points with well-conditioned Newton
/// solutions.
pub fn check_p2(cs: &CriticalSet, diameter: f64) -> P2Verdict {
    let floor = SEP_TOL_REL * diameter;
    let mut min_sep: Option<f64> = None;
    for (i, a) in cs.points.iter().enumerate() {
        for b in &cs.points[i + 1..] {
            let d = a.location.dist(&b.location);
            min_sep = Some(min_sep.map_or(d, |m| m.min(d)));
        }
    }
    let max_cond = cs.points.iter().filter_map(|p| p.condition_number).fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
    let mut reasons = Vec::new();
    if !cs.suspects.is_empty() {
        reasons.push(format!("{} non-isolated (continuum suspected) locations", cs.suspects.len()));
    }
    if cs.diverged_seeds > 0 {
        reasons.push(format!("{} seed(s) failed to converge", cs.diverged_seeds));
    }
    if let Some(m) = min_sep {
        if !(m > floor) {
            reasons.push(format!("separation {m:.3e} <= {floor:.3e}"));
        }
    }
    if let Some(c) = max_cond {
        if !(c < COND_MAX) {
            reasons.push(format!("Newton condition number {c:.3e} >= {COND_MAX:e}"));
        }
    }
    P2Verdict {
        pass: reasons.is_empty(),
        count: cs.points.len(),
        count_is_lower_bound: cs.count_is_lower_bound,
        min_separation: min_sep,
        separation_floor: floor,
        max_condition_number: max_cond,
        suspects: cs.suspects.len(),
        diverged_seeds: cs.diverged_seeds,
        reasons,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P3Verdict {
    pub pass: bool,
    pub lambda_max: Vec<f64>,
    pub one_minus_lambda: Vec<f64>,
    /// `min(1 - λ_max)`, capped at 1, when every projection is non-osculating.
    pub alpha: Option<f64>,
    pub reason: Option<String>,
}

fn chart_points(cp: &CriticalPoint) -> Result<Vec<ChartPoint>> {
    cp.projections
        .iter()
        .map(|p| p.at.ok_or_else(|| Error::InvalidArgument("projection without chart coordinates".into())))
        .collect()
}

/// Non-osculation at every projection.
pub fn check_p3(sc: &Scenario, cp: &CriticalPoint) -> Result<P3Verdict> {
    let mut lm = Vec::new();
    let mut osc = false;
    for at in chart_points(cp)? {
        let o = sc.osculation_check(at, cp.location)?;
        osc |= matches!(o, Osculation::Osculating { .. });
        lm.push(o.lambda_max());
    }
    let gaps: Vec<f64> = lm.iter().map(|l| 1.0 - l).collect();
    let alpha = (!osc).then(|| gaps.iter().copied().fold(f64::INFINITY, f64::min).min(1.0));
    Ok(P3Verdict {
        pass: !osc,
        reason: osc.then(|| "osculating sphere at a projection".to_string()),
        lambda_max: lm,
        one_minus_lambda: gaps,
        alpha,
    })
}

/// The quadratic form B restricted to E⊥.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BspForm {
    pub location: Point,
    pub s: usize,
    pub e_basis: Vec<Point>,
    pub eperp_basis: Vec<Point>,
    /// `M` with `B(h) = hᵀMh` in `eperp_basis` coordinates.
    pub b_matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// `None` when E⊥ is trivial (s = D + 1).
    pub min_abs_eigenvalue: Option<f64>,
    pub min_eigen_direction: Option<Point>,
    pub l_estimate: Option<f64>,
    pub symmetry_error: f64,
}

impl BspForm {
    /// `B(h)` for an ambient vector `h`, through its E⊥ coordinates.
    pub fn value(&self, h: &Point) -> f64 {
        let c: Vec<f64> = self.eperp_basis.iter().map(|f| f.dot(h)).collect();
        let mut acc = 0.0;
        for (a, ca) in c.iter().enumerate() {
            for (b, cb) in c.iter().enumerate() {
                acc += ca * self.b_matrix[a][b] * cb;
            }
        }
        acc
    }
}

struct Frame {
    z0: Point,
    r0: f64,
    xs: Vec<Point>,
    seeds: Vec<ChartPoint>,
    e: Vec<Point>,
    eperp: Vec<Point>,
}

fn frame(sc: &Scenario, cp: &CriticalPoint) -> Result<Frame> {
    let seeds = chart_points(cp)?;
    let xs = cp.projection_points();
    if sc.m() == 0 {
        return Err(Error::IntrinsicDimZero);
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two projections".into()));
    }
    let diffs: Vec<Point> = xs[1..].iter().map(|x| *x - xs[0]).collect();
    let e = orthonormalize(&diffs, 1e-9);
    if e.len() != xs.len() - 1 {
        return Err(Error::Degenerate);
    }
    let eperp = orthogonal_complement(&e, sc.dim());
    Ok(Frame { z0: cp.location, r0: cp.value, xs, seeds, e, eperp })
}

fn projection_differentials(sc: &Scenario, fr: &Frame) -> Result<Vec<DMatrix<f64>>> {
    fr.seeds.iter().map(|at| sc.projection_differential(fr.z0, *at)).collect()
}

/// `Σ_{i,j} det(A_iᵀ A_j)` where `A_i` is `[x_1 - z0, …, x_s - z0]` with
/// column `i` replaced by `dp_i(h) - h`.
fn b_sum(fr: &Frame, dps: &[DMatrix<f64>], h: &Point) -> f64 {
    let d = fr.z0.dim();
    let s = fr.xs.len();
    let hv = h.to_dvector();
    let a: Vec<DMatrix<f64>> = (0..s)
        .map(|i| {
            let col_i = &dps[i] * &hv - &hv;
            DMatrix::from_fn(d, s, |r, c| if c == i { col_i[r] } else { fr.xs[c][r] - fr.z0[r] })
        })
        .collect();
    let mut acc = 0.0;
    for ai in &a {
        for aj in &a {
            acc += (ai.transpose() * aj).determinant();
        }
    }
    acc
}

/// B evaluated directly from the determinant sum, for any ambient `h`.
pub fn b_direct(sc: &Scenario, cp: &CriticalPoint, h: &Point) -> Result<f64> {
    let fr = frame(sc, cp)?;
    let dps = projection_differentials(sc, &fr)?;
    Ok(b_sum(&fr, &dps, h))
}

/// Polarizes B on an orthonormal basis of E⊥.
pub fn assemble_b_form(sc: &Scenario, cp: &CriticalPoint) -> Result<BspForm> {
    let fr = frame(sc, cp)?;
    let dps = projection_differentials(sc, &fr)?;
    let k = fr.eperp.len();
    let s = fr.xs.len();
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k {
        m[(a, a)] = b_sum(&fr, &dps, &fr.eperp[a]);
    }
    for a in 0..k {
        for b in a + 1..k {
            let both = b_sum(&fr, &dps, &(fr.eperp[a] + fr.eperp[b]));
            let v = 0.5 * (both - m[(a, a)] - m[(b, b)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    // Symmetry of the raw bilinear form, as a consistency check.
    let mut sym_err: f64 = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let plus = b_sum(&fr, &dps, &(fr.eperp[a] + fr.eperp[b]));
            let minus = b_sum(&fr, &dps, &(fr.eperp[a] - fr.eperp[b]));
            sym_err = sym_err.max(((plus - minus) / 4.0 - m[(a, b)]).abs());
        }
    }
    let (eigenvalues, min_abs, dir) = if k == 0 {
        (Vec::new(), None, None)
    } else {
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let imin = (0..k).min_by(|&i, &j| eig.eigenvalues[i].abs().total_cmp(&eig.eigenvalues[j].abs())).expect("k > 0");
        let mut dir = Point::zeros(sc.dim());
        for a in 0..k {
            dir += fr.eperp[a] * eig.eigenvectors[(a, imin)];
        }
        // Canonical sign: first significant coordinate positive.
        if let Some(c) = dir.coords().iter().find(|c| c.abs() > 1e-12) {
            if *c < 0.0 {
                dir = -dir;
            }
        }
        (vals, Some(eig.eigenvalues[imin].abs()), Some(dir))
    };
    let l_estimate = match eigenvalues.first() {
        Some(&lo) if lo > 0.0 => Some(lo.sqrt() / factorial(s) * (1.0 - L_FUDGE)),
        _ => None,
    };
    Ok(BspForm {
        location: fr.z0,
        s,
        e_basis: fr.e.clone(),
        eperp_basis: fr.eperp.clone(),
        b_matrix: (0..k).map(|a| (0..k).map(|b| m[(a, b)]).collect()).collect(),
        eigenvalues,
        min_abs_eigenvalue: min_abs,
        min_eigen_direction: dir,
        l_estimate,
        symmetry_error: sym_err,
    })
}

/// `(s!)² Vol_s(Δ(εh))² / ε²` with `Δ` spanned by `z0 + εh` and the local
/// projections `p_i(z0 + εh)`.
pub fn volume_oracle(sc: &Scenario, cp: &CriticalPoint, h: &Point, eps: f64) -> Result<f64> {
    let fr = frame(sc, cp)?;
    let z = fr.z0 + *h * eps;
    let d = sc.dim();
    let s = fr.xs.len();
    let mut g = DMatrix::zeros(d, s);
    for (j, seed) in fr.seeds.iter().enumerate() {
        let p = sc.local_projection(*seed, z)?.point;
        for i in 0..d {
            g[(i, j)] = p[i] - z[i];
        }
    }
    Ok((g.transpose() * &g).determinant() / (eps * eps))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P4Verdict {
    pub pass: bool,
    pub min_abs_eigenvalue: Option<f64>,
    pub tolerance: f64,
    pub b_matrix: Vec<Vec<f64>>,
    pub l_estimate: Option<f64>,
    pub slope_fit: Option<ScalingFit>,
    pub slope_class: Option<SlopeClass>,
    /// Whether the μ-scan slope class agrees with the verdict.
    pub consistent_with_scan: Option<bool>,
    pub reason: Option<String>,
}

/// Non-degeneracy of B on E⊥.
pub fn check_p4(form: &BspForm, diameter: f64) -> P4Verdict {
    let tol = BSP_TOL * diameter.powi(2 * (form.s as i32 - 1));
    let (pass, reason) = match form.min_abs_eigenvalue {
        None => (true, None),
        Some(v) if v > tol => (true, None),
        Some(v) => (false, Some(format!("B degenerate on E⊥: min |eigenvalue| {v:.3e} <= {tol:.3e}"))),
    };
    P4Verdict {
        pass,
        min_abs_eigenvalue: form.min_abs_eigenvalue,
        tolerance: tol,
        b_matrix: form.b_matrix.clone(),
        l_estimate: form.l_estimate,
        slope_fit: None,
        slope_class: None,
        consistent_with_scan: None,
        reason,
    }
}

/// Growth regime of the gradient norm along the core medial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeClass {
    Linear,
    Superlinear,
    Ambiguous,
}

pub fn classify_slope(slope: f64) -> SlopeClass {
    if slope < SLOPE_CUT {
        SlopeClass::Linear
    } else if slope >= SLOPE_FAIL {
        SlopeClass::Superlinear
    } else {
        SlopeClass::Ambiguous
    }
}

/// A traced point of the core medial axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoreSample {
    /// `|π_{E⊥}(z - z0)|`.
    pub h: f64,
    pub location: Point,
    pub distance: f64,
    pub gradient_norm: f64,
    pub dist_to_critical: f64,
    /// `|π_E(z - z0)|`.
    pub e_offset: f64,
}

struct CoreState {
    c: Vec<f64>,
    seeds: Vec<ChartPoint>,
}

impl CoreState {
    fn start(fr: &Frame) -> CoreState {
        CoreState { c: vec![0.0; fr.e.len()], seeds: fr.seeds.clone() }
    }
}

/// Solves equidistance of the local projections over `z0 + h + E`.
fn core_solve(sc: &Scenario, fr: &Frame, h: Point, st: &mut CoreState) -> Result<CoreSample> {
    let k = fr.e.len();
    let scale = 1.0 + fr.r0 + fr.z0.max_abs();
    let at_c = |c: &[f64]| {
        let mut z = fr.z0 + h;
        for (e, ck) in fr.e.iter().zip(c) {
            z += *e * *ck;
        }
        z
    };
    let eval = |c: &[f64], seeds: &[ChartPoint]| -> Result<(Point, Vec<Point>, Vec<ChartPoint>, Vec<f64>)> {
        let z = at_c(c);
        let mut ps = Vec::with_capacity(seeds.len());
        let mut ats = Vec::with_capacity(seeds.len());
        for s in seeds {
            let lp = sc.local_projection(*s, z)?;
            ps.push(lp.point);
            ats.push(lp.at);
        }
        let f: Vec<f64> = ps[1..].iter().map(|p| ps[0].dist(&z) - p.dist(&z)).collect();
        Ok((z, ps, ats, f))
    };
    let amax = |f: &[f64]| f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut z, mut ps, mut ats, mut f) = eval(&st.c, &st.seeds)?;
    for _ in 0..40 {
        if amax(&f) <= 1e-13 * scale {
            st.seeds = ats;
            let dists: Vec<f64> = ps.iter().map(|p| p.dist(&z)).collect();
            let dist = dists.iter().sum::<f64>() / dists.len() as f64;
            let ball = smallest_enclosing_ball(&ps)?;
            let off = z - fr.z0;
            return Ok(CoreSample {
                h: h.norm(),
                location: z,
                distance: dist,
                gradient_norm: z.dist(&ball.center) / dist,
                dist_to_critical: off.norm(),
                e_offset: st.c.iter().map(|v| v * v).sum::<f64>().sqrt(),
            });
        }
        let units: Vec<Point> = ps.iter().map(|p| (z - *p) / p.dist(&z)).collect();
        let jac = DMatrix::from_fn(k, k, |j, kk| (units[0] - units[j + 1]).dot(&fr.e[kk]));
        let rhs = DVector::from_vec(f.clone());
        let step = jac.clone().lu().solve(&rhs).or_else(|| jac.svd(true, true).solve(&rhs, 1e-14).ok()).ok_or_else(|| Error::Diverged("core axis Jacobian singular".into()))?;
        let f0 = amax(&f);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = st.c.iter().zip(step.iter()).map(|(c, d)| c - t * d).collect();
            let (nz, nps, nats, nf) = eval(&cand, &ats)?;
            if amax(&nf) < f0 || t < 1e-4 {
                st.c = cand;
                (z, ps, ats, f) = (nz, nps, nats, nf);
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Diverged(format!("core axis trace stalled at h = {:.3e}", h.norm())))
}

/// Continuation from `z0` to `z0 + h` in `steps` equal steps.
fn core_trace(sc: &Scenario, fr: &Frame, h: Point, steps: usize) -> Result<CoreSample> {
    let mut st = CoreState::start(fr);
    let mut last = None;
    for k in 1..=steps.max(1) {
        last = Some(core_solve(sc, fr, h * (k as f64 / steps.max(1) as f64), &mut st)?);
    }
    Ok(last.expect("at least one step"))
}

/// Core medial axis point over `z0 + π_{E⊥}(h)`, traced from the critical
/// point in [`CORE_STEPS`] steps.
pub fn core_point(sc: &Scenario, cp: &CriticalPoint, h: &Point) -> Result<CoreSample> {
    let fr = frame(sc, cp)?;
    let mut hp = Point::zeros(sc.dim());
    for f in &fr.eperp {
        hp += *f * f.dot(h);
    }
    core_trace(sc, &fr, hp, if hp.norm() == 0.0 { 1 } else { CORE_STEPS })
}

fn is_global(sc: &Scenario, smp: &CoreSample) -> Result<bool> {
    let ps = project_manifold(sc, &smp.location, PROJ_TIE_TOL, STARTS_PER_CHART)?;
    Ok(smp.distance <= ps.distance * (1.0 + 1e-8) + 1e-12)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuScan {
    pub direction: Point,
    pub samples: Vec<CoreSample>,
    /// Gradient norm against distance to the critical point.
    pub fit: Option<ScalingFit>,
    pub slope_class: Option<SlopeClass>,
    /// `max |π_E(z - z0)| / |z - z0|²` over the traced points.
    pub pinning_constant: Option<f64>,
    pub truncated: Option<String>,
}

/// Default `h` magnitudes: nine values from 1e-3 to 1e-1.
pub fn default_h_values() -> Vec<f64> {
    geomspace(1e-3, 1e-1, 9)
}

/// μ-scan along the eigen-direction of B with the smallest |eigenvalue|.
pub fn mu_scan(sc: &Scenario, cp: &CriticalPoint, h_values: &[f64]) -> Result<MuScan> {
    let form = assemble_b_form(sc, cp)?;
    let dir = form.min_eigen_direction.ok_or_else(|| Error::InvalidArgument("E⊥ is trivial".into()))?;
    mu_scan_along(sc, cp, dir, h_values)
}

/// μ-scan along a given direction (projected to E⊥ and normalized).
pub fn mu_scan_along(sc: &Scenario, cp: &CriticalPoint, direction: Point, h_values: &[f64]) -> Result<MuScan> {
    let fr = frame(sc, cp)?;
    let mut dir = Point::zeros(sc.dim());
    for f in &fr.eperp {
        dir += *f * f.dot(&direction);
    }
    let dir = dir.normalized().ok_or_else(|| Error::InvalidArgument("direction has no E⊥ component".into()))?;
    let mut hs: Vec<f64> = h_values.to_vec();
    hs.sort_by(f64::total_cmp);
    let mut samples = Vec::new();
    let mut truncated = None;
    for &h in &hs {
        if h < 0.0 || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("h values must be finite and nonnegative, got {h}")));
        }
        let smp = if h == 0.0 {
            core_trace(sc, &fr, Point::zeros(sc.dim()), 1)
        } else {
            core_trace(sc, &fr, dir * h, CORE_STEPS)
        };
        match smp {
            Ok(smp) => {
                if !is_global(sc, &smp)? {
                    truncated = Some(format!("local projections stop being global at h = {h:.3e}"));
                    break;
                }
                samples.push(smp);
            }
            Err(e) => {
                truncated = Some(format!("trace failed at h = {h:.3e}: {e}"));
                break;
            }
        }
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.dist_to_critical).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.gradient_norm).collect();
    let fit = fit_loglog(&xs, &ys).ok();
    let pin = samples
        .iter()
        .filter(|s| s.dist_to_critical > 0.0)
        .map(|s| s.e_offset / s.dist_to_critical.powi(2))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(MuScan { direction: dir, slope_class: fit.as_ref().map(|f| classify_slope(f.slope)), samples, fit, pinning_constant: pin, truncated })
}

/// Points of the core medial axis traced outward from `cp` along `n_dirs`
/// directions of E⊥, at the given magnitudes; stops a direction at its
/// first failure.
pub fn core_axis_samples(sc: &Scenario, cp: &CriticalPoint, magnitudes: &[f64], n_dirs: usize) -> Result<Vec<CoreSample>> {
    let fr = frame(sc, cp)?;
    let dirs: Vec<Point> = match fr.eperp.len() {
        0 => Vec::new(),
        1 => vec![fr.eperp[0], -fr.eperp[0]],
        _ => (0..n_dirs.max(2))
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n_dirs.max(2) as f64;
                fr.eperp[0] * t.cos() + fr.eperp[1] * t.sin()
            })
            .collect(),
    };
    let mut mags = magnitudes.to_vec();
    mags.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for dir in dirs {
        let mut st = CoreState::start(&fr);
        let mut prev = 0.0;
        for &m in &mags {
            // Substeps keep each continuation step below m/8.
            let n = (((m - prev) / (m / 8.0)).ceil() as usize).max(1);
            let mut ok = true;
            let mut last = None;
            for k in 1..=n {
                let hk = prev + (m - prev) * k as f64 / n as f64;
                match core_solve(sc, &fr, dir * hk, &mut st) {
                    Ok(s) => last = Some(s),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            match last {
                Some(s) if ok && is_global(sc, &s)? => out.push(s),
                _ => break,
            }
            prev = m;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaRow {
    pub mu: f64,
    /// Largest distance from Z(M) among scanned μ-critical points; `None`
    /// when Z(M) is empty.
    pub eta: Option<f64>,
    pub eta_over_mu: Option<f64>,
    pub unbounded: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaTable {
    pub rows: Vec<EtaRow>,
    pub box_lo: Point,
    pub box_hi: Point,
    pub box_radius: f64,
    pub grid_points: usize,
    pub traced_points: usize,
}

/// Options for [`estimate_eta`].
#[derive(Clone, Debug)]
pub struct EtaOptions {
    /// Grid nodes per axis of the scan box.
    pub grid_per_axis: usize,
    pub trace_magnitudes: Vec<f64>,
    pub trace_directions: usize,
}

impl Default for EtaOptions {
    fn default() -> EtaOptions {
        EtaOptions { grid_per_axis: 40, trace_magnitudes: geomspace(1e-3, 0.3, 16), trace_directions: 8 }
    }
}

/// η_M(μ) estimated on a box grid plus traced core-axis points around each
/// critical point; nondecreasing in μ by construction.
pub fn estimate_eta(sc: &Scenario, cs: &CriticalSet, mu_grid: &[f64], opts: &EtaOptions) -> Result<EtaTable> {
    use rayon::prelude::*;
    let d = sc.dim();
    let pts = sc.discretize_points(256);
    let (mut lo, mut hi) = bounding_box(&pts);
    let pad = 0.1 * lo.dist(&hi);
    for i in 0..d {
        lo[i] -= pad;
        hi[i] += pad;
    }
    let n = opts.grid_per_axis.max(2);
    let total = n.pow(d as u32);
    let grid: Vec<Point> = (0..total)
        .map(|mut idx| {
            let mut p = Point::zeros(d);
            for i in 0..d {
                let k = idx % n;
                idx /= n;
                p[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / (n - 1) as f64;
            }
            p
        })
        .collect();
    let mut scored: Vec<(f64, Point)> = grid
        .par_iter()
        .filter_map(|p| {
            let ps = project_manifold(sc, p, PROJ_TIE_TOL, STARTS_PER_CHART).ok()?;
            let g = crate::distfield::gradient_from_projections(&ps).ok()?;
            (g.distance > 1e-12).then_some((g.norm, *p))
        })
        .collect();
    let grid_points = scored.len();
    let mut traced = 0;
    for cp in &cs.points {
        if let Ok(samples) = core_axis_samples(sc, cp, &opts.trace_magnitudes, opts.trace_directions) {
            traced += samples.len();
            scored.extend(samples.into_iter().map(|s| (s.gradient_norm, s.location)));
        }
    }
    let zs = cs.locations();
    let dist_z = |p: &Point| zs.iter().map(|z| z.dist(p)).fold(f64::INFINITY, f64::min);
    let corners: Vec<Point> = (0..1usize << d)
        .map(|mask| {
            let mut c = Point::zeros(d);
            for i in 0..d {
                c[i] = if mask & (1 << i) != 0 { hi[i] } else { lo[i] };
            }
            c
        })
        .collect();
    let box_radius = if zs.is_empty() { lo.dist(&hi) } else { corners.iter().map(&dist_z).fold(0.0, f64::max) };
    let mut mus: Vec<f64> = mu_grid.to_vec();
    mus.sort_by(f64::total_cmp);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Vec::new();
    let mut running: f64 = 0.0;
    let mut k = 0;
    for mu in mus {
        let unbounded = mu >= 1.0;
        while k < scored.len() && scored[k].0 <= mu {
            running = running.max(dist_z(&scored[k].1));
            k += 1;
        }
        let eta = if zs.is_empty() {
            None
        } else if unbounded {
            Some(box_radius)
        } else {
            Some(running.min(box_radius))
        };
        rows.push(EtaRow { mu, eta, eta_over_mu: eta.filter(|_| mu > 0.0).map(|e| e / mu), unbounded });
    }
    Ok(EtaTable { rows, box_lo: lo, box_hi: hi, box_radius, grid_points, traced_points: traced })
}

/// Morse index split as `(s - 1, restricted index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexPair {
    pub simplex_part: usize,
    pub restricted: usize,
    pub total: usize,
    pub hessian_eigenvalues: Vec<f64>,
}

/// Index of a cloud critical point: the core axis is the affine space
/// `z + E⊥`, along which `d = sqrt(r² + |h|²)` is minimal at `z`.
pub fn classify_cloud_index(cp: &CriticalPoint, dim: usize) -> Result<IndexPair> {
    if !check_p1(cp, dim).pass {
        return Err(Error::RequiresConditions);
    }
    let s = cp.multiplicity;
    Ok(IndexPair { simplex_part: s - 1, restricted: 0, total: s - 1, hessian_eigenvalues: vec![1.0 / cp.value; dim + 1 - s] })
}

/// Index of the `k`-th critical point of a manifold scenario; requires
/// P1-P4 to hold (P2 on the whole set).
pub fn classify_index(sc: &Scenario, cs: &CriticalSet, k: usize) -> Result<IndexPair> {
    let cp = cs.points.get(k).ok_or_else(|| Error::InvalidArgument(format!("no critical point {k}")))?;
    let d = sc.dim();
    let ok = check_p2(cs, sc.meta.diameter).pass
        && check_p1(cp, d).pass
        && check_p3(sc, cp).map(|v| v.pass).unwrap_or(false)
        && assemble_b_form(sc, cp).map(|f| check_p4(&f, sc.meta.diameter).pass).unwrap_or(false);
    if !ok {
        return Err(Error::RequiresConditions);
    }
    let fr = frame(sc, cp)?;
    let kd = fr.eperp.len();
    let delta = 1e-3 * (1.0 + cp.value);
    let r = |h: Point| -> Result<f64> { Ok(core_trace(sc, &fr, h, 4)?.distance) };
    let r0 = cp.value;
    let mut hess = DMatrix::zeros(kd, kd);
    for a in 0..kd {
        let ea = fr.eperp[a] * delta;
        hess[(a, a)] = (r(ea)? - 2.0 * r0 + r(-ea)?) / (delta * delta);
        for b in a + 1..kd {
            let eb = fr.eperp[b] * delta;
            let v = (r(ea + eb)? - r(ea - eb)? - r(eb - ea)? + r(-ea - eb)?) / (4.0 * delta * delta);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let mut ev: Vec<f64> = if kd == 0 { Vec::new() } else { SymmetricEigen::new(hess).eigenvalues.iter().copied().collect() };
    ev.sort_by(f64::total_cmp);
    let restricted = ev.iter().filter(|&&v| v < -INDEX_EIG_BAND).count();
    let s = fr.xs.len();
    Ok(IndexPair { simplex_part: s - 1, restricted, total: s - 1 + restricted, hessian_eigenvalues: ev })
}

/// Conditions at one critical point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointConditions {
    pub location: Point,
    pub value: f64,
    pub multiplicity: usize,
    pub p1: P1Verdict,
    pub p3: Option<P3Verdict>,
    pub p4: Option<P4Verdict>,
    pub mu_scan: Option<MuScan>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuspectConditions {
    pub location: Point,
    pub value: f64,
    pub p1: P1Verdict,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub schema_version: String,
    pub scenario: String,
    pub points: Vec<PointConditions>,
    pub suspects: Vec<SuspectConditions>,
    pub p2: P2Verdict,
    pub p1_pass: bool,
    pub p3_pass: bool,
    pub p4_pass: bool,
    pub overall: bool,
}

impl ConditionReport {
    /// Names of the failed conditions, in order.
    pub fn failed(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (ok, name) in [(self.p1_pass, "P1"), (self.p2.pass, "P2"), (self.p3_pass, "P3"), (self.p4_pass, "P4")] {
            if !ok {
                out.push(name);
            }
        }
        out
    }
}

/// Options for [`evaluate_conditions`].
#[derive(Clone, Debug)]
pub struct ConditionOptions {
    pub mu_scan: bool,
    pub h_values: Vec<f64>,
}

impl Default for ConditionOptions {
    fn default() -> ConditionOptions {
        ConditionOptions { mu_scan: true, h_values: default_h_values() }
    }
}

/// Conditions at one critical point; later checks run only when the
/// earlier ones pass.
pub fn point_conditions(sc: &Scenario, cp: &CriticalPoint, opts: &ConditionOptions) -> PointConditions {
    let p1 = check_p1(cp, sc.dim());
    let mut p3 = None;
    let mut p4 = None;
    let mut scan = None;
    if p1.pass {
        let v3 = check_p3(sc, cp).unwrap_or_else(|e| P3Verdict {
            pass: false,
            lambda_max: Vec::new(),
            one_minus_lambda: Vec::new(),
            alpha: None,
            reason: Some(e.to_string()),
        });
        if v3.pass {
            p4 = Some(match assemble_b_form(sc, cp) {
                Ok(form) => {
                    let mut v4 = check_p4(&form, sc.meta.diameter);
                    if opts.mu_scan && form.min_eigen_direction.is_some() {
                        if let Ok(ms) = mu_scan(sc, cp, &opts.h_values) {
                            v4.slope_fit = ms.fit.clone();
                            v4.slope_class = ms.slope_class;
                            v4.consistent_with_scan = ms.slope_class.and_then(|c| match c {
                                SlopeClass::Linear => Some(v4.pass),
                                SlopeClass::Superlinear => Some(!v4.pass),
                                SlopeClass::Ambiguous => None,
                            });
                            scan = Some(ms);
                        }
                    }
                    v4
                }
                Err(e) => P4Verdict {
                    pass: false,
                    min_abs_eigenvalue: None,
                    tolerance: 0.0,
                    b_matrix: Vec::new(),
                    l_estimate: None,
                    slope_fit: None,
                    slope_class: None,
                    consistent_with_scan: None,
                    reason: Some(e.to_string()),
                },
            });
        }
        p3 = Some(v3);
    }
    let pass = p1.pass && p3.as_ref().is_some_and(|v| v.pass) && p4.as_ref().is_some_and(|v| v.pass);
    PointConditions { location: cp.location, value: cp.value, multiplicity: cp.multiplicity, p1, p3, p4, mu_scan: scan, pass }
}

/// Full report; `overall` is the AND of every flag.
pub fn evaluate_conditions(sc: &Scenario, cs: &CriticalSet, opts: &ConditionOptions) -> ConditionReport {
    use rayon::prelude::*;
    let points: Vec<PointConditions> = cs.points.par_iter().map(|cp| point_conditions(sc, cp, opts)).collect();
    let suspects: Vec<SuspectConditions> =
        cs.suspects.iter().map(|s| SuspectConditions { location: s.location, value: s.value, p1: check_p1_suspect(s) }).collect();
    let p2 = check_p2(cs, sc.meta.diameter);
    let p1_pass = points.iter().all(|p| p.p1.pass) && suspects.is_empty();
    // P3 and P4 are judged on the points where they could be evaluated;
    // `overall` still requires every point to pass everything.
    let p3_pass = points.iter().filter(|p| p.p1.pass).all(|p| p.p3.as_ref().is_some_and(|v| v.pass));
    let p4_pass = points.iter().filter(|p| p.p3.as_ref().is_some_and(|v| v.pass)).all(|p| p.p4.as_ref().is_some_and(|v| v.pass));
    let overall = p1_pass && p2.pass && p3_pass && p4_pass && points.iter().all(|p| p.pass);
    ConditionReport {
        schema_version: SCHEMA_VERSION.to_string(),
        scenario: sc.name.clone(),
        points,
        suspects,
        p2,
        p1_pass,
        p3_pass,
        p4_pass,
        overall,
    }
}

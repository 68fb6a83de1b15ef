//! Parametric C² submanifolds of R^2 and R^3 given by charts with exact first
//! and second derivatives, plus the local differential geometry needed for
//! critical-point analysis: tangent/normal frames, shape operators,
//! osculation tests, the projection differential and Newton projections.

mod builtin;
mod json;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::jet::Jet;

pub use builtin::{builtin, paper_cubic_with, parse_scenario_spec, BUILTIN_NAMES, BUILTIN_SUITE};
pub use json::{load_scenario_file, scenario_from_json, ChartSpec, DomainSpec, ScenarioSpec, Term};

/// Immersion threshold on the smallest singular value of the chart Jacobian.
pub const IMMERSION_TOL: f64 = 1e-8;
/// Default osculation tolerance on `lambda_max`.
pub const OSC_TOL: f64 = 1e-6;
/// Safety margin subtracted from `1 - lambda_max` when reporting α.
pub const ALPHA_MARGIN: f64 = 1e-9;
/// Newton iteration cap for local projections.
pub const NEWTON_MAX_ITER: usize = 60;

/// Map from parameter jets to ambient coordinate jets (unused slots zero).
pub type ChartFn = Arc<dyn Fn([Jet; 2]) -> [Jet; 3] + Send + Sync>;

/// Parameter box; periodic axes wrap into `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub periodic: [bool; 2],
}

impl Domain {
    pub fn interval(lo: f64, hi: f64, periodic: bool) -> Domain {
        Domain { lo: [lo, 0.0], hi: [hi, 0.0], periodic: [periodic, false] }
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2], periodic: [bool; 2]) -> Domain {
        Domain { lo, hi, periodic }
    }

    pub fn width(&self, a: usize) -> f64 {
        self.hi[a] - self.lo[a]
    }

    fn wrap(&self, m: usize, mut u: [f64; 2]) -> [f64; 2] {
        for a in 0..m {
            if self.periodic[a] {
                let w = self.width(a);
                u[a] = self.lo[a] + (u[a] - self.lo[a]).rem_euclid(w);
            }
        }
        u
    }

    /// Signed parameter difference `u - v`, shortest representative on
    /// periodic axes.
    pub fn delta(&self, m: usize, u: [f64; 2], v: [f64; 2]) -> [f64; 2] {
        let mut d = [0.0; 2];
        for a in 0..m {
            d[a] = u[a] - v[a];
            if self.periodic[a] {
                let w = self.width(a);
                d[a] -= w * (d[a] / w).round();
            }
        }
        d
    }

    /// Newton iterates may leave a non-periodic box by up to one box width.
    fn within_soft_bounds(&self, m: usize, u: [f64; 2]) -> bool {
        (0..m).all(|a| {
            self.periodic[a] || {
                let w = self.width(a);
                u[a] >= self.lo[a] - w && u[a] <= self.hi[a] + w
            }
        })
    }
}

/// Value, Jacobian columns and second-derivative columns of a chart at `u`.
#[derive(Clone, Copy, Debug)]
pub struct ChartEval {
    pub f: Point,
    pub d1: [Point; 2],
    pub d2: [[Point; 2]; 2],
}

#[derive(Clone)]
pub struct Chart {
    pub m: usize,
    pub dim: usize,
    pub domain: Domain,
    pub label: String,
    map: ChartFn,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart")
            .field("m", &self.m)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("label", &self.label)
            .finish()
    }
}

impl Chart {
    pub fn new(m: usize, dim: usize, domain: Domain, label: impl Into<String>, map: ChartFn) -> Chart {
        assert!((1..=2).contains(&m) && (2..=3).contains(&dim) && m < dim);
        Chart { m, dim, domain, label: label.into(), map }
    }

    pub fn map(&self) -> &ChartFn {
        &self.map
    }

    pub fn jet(&self, u: [f64; 2]) -> ChartEval {
        let vars = [Jet::var(u[0], 0), if self.m > 1 { Jet::var(u[1], 1) } else { Jet::constant(u[1]) }];
        let out = (self.map)(vars);
        let pick = |f: &dyn Fn(&Jet) -> f64| {
            let c: Vec<f64> = out[..self.dim].iter().map(f).collect();
            Point::new(&c)
        };
        ChartEval {
            f: pick(&|j| j.v),
            d1: [pick(&|j| j.g[0]), pick(&|j| j.g[1])],
            d2: [
                [pick(&|j| j.h[0][0]), pick(&|j| j.h[0][1])],
                [pick(&|j| j.h[1][0]), pick(&|j| j.h[1][1])],
            ],
        }
    }

    pub fn eval(&self, u: [f64; 2]) -> Point {
        let vars = [Jet::constant(u[0]), Jet::constant(u[1])];
        let out = (self.map)(vars);
        let c: Vec<f64> = out[..self.dim].iter().map(|j| j.v).collect();
        Point::new(&c)
    }

    /// Uniform parameter grid with about `n` nodes; cell-centred on
    /// non-periodic axes so neighbouring charts do not share nodes.
    pub fn parameter_grid(&self, n: usize) -> Vec<[f64; 2]> {
        let side = if self.m == 1 { n.max(1) } else { (n as f64).sqrt().ceil().max(1.0) as usize };
        let coord = |a: usize, i: usize| {
            let w = self.domain.width(a);
            if self.domain.periodic[a] {
                self.domain.lo[a] + w * i as f64 / side as f64
            } else {
                self.domain.lo[a] + w * (i as f64 + 0.5) / side as f64
            }
        };
        if self.m == 1 {
            (0..side).map(|i| [coord(0, i), 0.0]).collect()
        } else {
            let mut out = Vec::with_capacity(side * side);
            for i in 0..side {
                for j in 0..side {
                    out.push([coord(0, i), coord(1, j)]);
                }
            }
            out
        }
    }

    pub fn grid_side(&self, n: usize) -> usize {
        if self.m == 1 {
            n.max(1)
        } else {
            (n as f64).sqrt().ceil().max(1.0) as usize
        }
    }
}

/// A location on the manifold in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: usize,
    pub u: [f64; 2],
}

/// A discretization node: ambient point plus chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub point: Point,
    pub at: ChartPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    /// `None` when the reach is unknown.
    pub reach: Option<f64>,
    pub diameter: f64,
    /// Number of critical points the scenario is known to have, if any.
    pub expected_critical: Option<usize>,
    /// Free-form construction notes (closure parameters, bump settings).
    pub notes: Vec<String>,
}

/// Parameters of a compactly supported C² bump `amp·(1 - t²)³·dir` with
/// `t = |u - center| / radius` in parameter space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub chart: usize,
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
    /// Ambient displacement direction; the unit normal at the bump center
    /// when absent (first normal for codimension two).
    pub direction: Option<Point>,
}

pub struct Scenario {
    pub name: String,
    pub charts: Vec<Chart>,
    pub meta: ScenarioMeta,
    sample_cache: Mutex<HashMap<usize, Arc<Vec<Sample>>>>,
}

impl Clone for Scenario {
    fn clone(&self) -> Scenario {
        Scenario::new(self.name.clone(), self.charts.clone(), self.meta.clone())
    }
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("charts", &self.charts)
            .field("meta", &self.meta)
            .finish()
    }
}

/// Result of `tangent_normal_frames`.
#[derive(Clone, Debug)]
pub struct Frames {
    pub point: Point,
    pub tangent: Vec<Point>,
    pub normal: Vec<Point>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeOperatorEval {
    pub base: Point,
    /// Unnormalized normal direction `z - x`.
    pub normal_dir: Point,
    /// Matrix in the orthonormal tangent basis `tangent`.
    pub matrix: Vec<Vec<f64>>,
    pub tangent: Vec<Point>,
    pub lambda_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Osculation {
    NonOsculating { alpha: f64, raw_alpha: f64, lambda_max: f64 },
    Osculating { lambda_max: f64 },
}

impl Osculation {
    pub fn lambda_max(&self) -> f64 {
        match *self {
            Osculation::NonOsculating { lambda_max, .. } | Osculation::Osculating { lambda_max } => lambda_max,
        }
    }

    pub fn is_osculating(&self) -> bool {
        matches!(self, Osculation::Osculating { .. })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LocalProjection {
    pub point: Point,
    pub at: ChartPoint,
    pub residual: f64,
    pub iterations: usize,
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Orthonormal basis of the span of `vs` by modified Gram-Schmidt; vectors
/// whose residual falls below `tol` times their length are skipped.
pub fn orthonormalize(vs: &[Point], tol: f64) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for v in vs {
        let mut w = *v;
        for _ in 0..2 {
            for e in &out {
                w -= *e * e.dot(&w);
            }
        }
        let n = w.norm();
        if n > tol * v.norm().max(f64::MIN_POSITIVE) {
            out.push(w / n);
        }
    }
    out
}

/// Completes an orthonormal family to a basis of R^dim and returns only the
/// added vectors.
pub fn orthogonal_complement(basis: &[Point], dim: usize) -> Vec<Point> {
    let mut all: Vec<Point> = basis.to_vec();
    let mut added = Vec::new();
    for i in 0..dim {
        if all.len() == dim {
            break;
        }
        let mut w = Point::basis(dim, i);
        for _ in 0..2 {
            for e in &all {
                w -= *e * e.dot(&w);
            }
        }
        let n = w.norm();
        if n > 1e-6 {
            all.push(w / n);
            added.push(w / n);
        }
    }
    added
}

fn tangential_residual(chart: &Chart, u: [f64; 2], z: &Point) -> f64 {
    let ev = chart.jet(u);
    let r = ev.f - *z;
    orthonormalize(&ev.d1[..chart.m], 1e-12).iter().map(|e| e.dot(&r).powi(2)).sum::<f64>().sqrt()
}

fn jacobian(ev: &ChartEval, m: usize) -> DMatrix<f64> {
    let d = ev.f.dim();
    DMatrix::from_fn(d, m, |i, a| ev.d1[a][i])
}

impl Scenario {
    pub fn new(name: impl Into<String>, charts: Vec<Chart>, meta: ScenarioMeta) -> Scenario {
        Scenario { name: name.into(), charts, meta, sample_cache: Mutex::new(HashMap::new()) }
    }

    pub fn dim(&self) -> usize {
        self.meta.ambient_dim
    }

    pub fn m(&self) -> usize {
        self.meta.intrinsic_dim
    }

    pub fn eval(&self, at: ChartPoint) -> Point {
        self.charts[at.chart].eval(at.u)
    }

    pub fn jet(&self, at: ChartPoint) -> ChartEval {
        self.charts[at.chart].jet(at.u)
    }

    /// About `per_chart` nodes on each chart.
    pub fn discretize(&self, per_chart: usize) -> Arc<Vec<Sample>> {
        if let Some(v) = self.sample_cache.lock().expect("cache lock").get(&per_chart) {
            return v.clone();
        }
        let mut out = Vec::new();
        for (ci, ch) in self.charts.iter().enumerate() {
            for u in ch.parameter_grid(per_chart) {
                out.push(Sample { point: ch.eval(u), at: ChartPoint { chart: ci, u } });
            }
        }
        let arc = Arc::new(out);
        self.sample_cache.lock().expect("cache lock").insert(per_chart, arc.clone());
        arc
    }

    pub fn discretize_points(&self, per_chart: usize) -> Vec<Point> {
        self.discretize(per_chart).iter().map(|s| s.point).collect()
    }

    /// Orthonormal tangent and normal bases at a chart point.
    pub fn tangent_normal_frames(&self, at: ChartPoint) -> Result<Frames> {
        let ev = self.jet(at);
        let m = self.charts[at.chart].m;
        let sv = jacobian(&ev, m).singular_values();
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if !(smin > IMMERSION_TOL) {
            return Err(Error::NotImmersion(format!(
                "chart {} at {:?}: smallest singular value {smin:.3e}",
                at.chart, at.u
            )));
        }
        let tangent = orthonormalize(&ev.d1[..m], 1e-12);
        let normal = orthogonal_complement(&tangent, self.dim());
        Ok(Frames { point: ev.f, tangent, normal })
    }

    /// Shape operator in the normal direction `eta` (not normalized).
    pub fn shape_operator(&self, at: ChartPoint, eta: Point) -> Result<ShapeOperatorEval> {
        let frames = self.tangent_normal_frames(at)?;
        let tan_comp = frames.tangent.iter().map(|e| e.dot(&eta).abs()).fold(0.0, f64::max);
        if tan_comp > 1e-8 * eta.norm().max(1.0) {
            return Err(Error::NotNormal(tan_comp));
        }
        let ev = self.jet(at);
        let m = self.charts[at.chart].m;
        let j = jacobian(&ev, m);
        let jtj = j.transpose() * &j;
        let jtj_inv = jtj.try_inverse().ok_or_else(|| Error::NotImmersion("singular metric".into()))?;
        // Parameter-space preimages of the orthonormal tangent vectors.
        let pre: Vec<DVector<f64>> = frames
            .tangent
            .iter()
            .map(|e| &jtj_inv * (j.transpose() * e.to_dvector()))
            .collect();
        let hdot: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|k| eta.dot(&ev.d2[i][k])).collect())
            .collect();
        let mut mat = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                let mut s = 0.0;
                for i in 0..m {
                    for k in 0..m {
                        s += pre[a][i] * pre[b][k] * hdot[i][k];
                    }
                }
                mat[(a, b)] = s;
            }
        }
        let mat = (&mat + mat.transpose()) * 0.5;
        let lambda_max = sym_eigenvalues(&mat).last().copied().unwrap_or(0.0);
        Ok(ShapeOperatorEval {
            base: ev.f,
            normal_dir: eta,
            matrix: (0..m).map(|a| (0..m).map(|b| mat[(a, b)]).collect()).collect(),
            tangent: frames.tangent,
            lambda_max,
        })
    }

    /// Osculation verdict at a chart point for the sphere centred at `z`,
    /// without checking that the point is a global projection of `z`.
    pub fn osculation_at(&self, at: ChartPoint, z: Point) -> Result<Osculation> {
        let x = self.eval(at);
        let so = self.shape_operator(at, z - x)?;
        let lm = so.lambda_max;
        if lm >= 1.0 - OSC_TOL {
            Ok(Osculation::Osculating { lambda_max: lm })
        } else {
            let raw = 1.0 - lm;
            Ok(Osculation::NonOsculating { alpha: (raw - ALPHA_MARGIN).max(0.0), raw_alpha: raw, lambda_max: lm })
        }
    }

    /// Osculation verdict for `x ∈ π_M(z)`; fails when `x` is not a global
    /// projection of `z` within the projection tie tolerance.
    pub fn osculation_check(&self, at: ChartPoint, z: Point) -> Result<Osculation> {
        let x = self.eval(at);
        let ps = crate::distfield::project_manifold(self, &z, crate::distfield::PROJ_TIE_TOL, crate::distfield::STARTS_PER_CHART)?;
        let dx = x.dist(&z);
        if dx > ps.distance + crate::distfield::PROJ_TIE_TOL * (1.0 + ps.distance) {
            return Err(Error::NotAProjection(format!(
                "d(z,x) = {dx:.12} but d_M(z) = {:.12}",
                ps.distance
            )));
        }
        self.osculation_at(at, z)
    }

    /// Differential of the local projection at `z` around the chart point
    /// `at`, as a D×D matrix mapping ambient vectors to T_x M.
    pub fn projection_differential(&self, z: Point, at: ChartPoint) -> Result<DMatrix<f64>> {
        let x = self.eval(at);
        let so = self.shape_operator(at, z - x)?;
        let gap = 1.0 - so.lambda_max;
        if gap < OSC_TOL {
            return Err(Error::NearlyOsculating(gap));
        }
        let m = so.tangent.len();
        let d = self.dim();
        let w = DMatrix::from_fn(m, m, |a, b| so.matrix[a][b]);
        let inv = (DMatrix::identity(m, m) - w)
            .try_inverse()
            .ok_or(Error::NearlyOsculating(gap))?;
        let e = DMatrix::from_fn(d, m, |i, a| so.tangent[a][i]);
        Ok(&e * inv * e.transpose())
    }

    /// Damped Newton refinement of a seed towards the local projection of
    /// `z`, i.e. a zero of `π_T(f(u) - z)`.
    pub fn local_projection(&self, seed: ChartPoint, z: Point) -> Result<LocalProjection> {
        let chart = &self.charts[seed.chart];
        let m = chart.m;
        let dom = chart.domain;
        let mut u = dom.wrap(m, seed.u);
        let mut trace: Vec<(f64, f64)> = Vec::new();
        let obj = |u: [f64; 2]| 0.5 * chart.eval(u).dist2(&z);
        for it in 0..=NEWTON_MAX_ITER {
            let ev = chart.jet(u);
            let r = ev.f - z;
            let tangent = orthonormalize(&ev.d1[..m], 1e-12);
            if tangent.len() < m {
                return Err(Error::NotImmersion(format!("chart {} at {:?}", seed.chart, u)));
            }
            let tres = tangent.iter().map(|e| e.dot(&r).powi(2)).sum::<f64>().sqrt();
            let scale = 1.0 + r.norm() + z.max_abs();
            trace.push((u[0], tres));
            if tres <= 1e-12 * scale {
                return Ok(LocalProjection { point: ev.f, at: ChartPoint { chart: seed.chart, u }, residual: tres, iterations: it });
            }
            if it == NEWTON_MAX_ITER {
                break;
            }
            let mut g = DVector::zeros(m);
            let mut gn = DMatrix::zeros(m, m);
            let mut h = DMatrix::zeros(m, m);
            for a in 0..m {
                g[a] = ev.d1[a].dot(&r);
                for b in 0..m {
                    gn[(a, b)] = ev.d1[a].dot(&ev.d1[b]);
                    h[(a, b)] = gn[(a, b)] + r.dot(&ev.d2[a][b]);
                }
            }
            let ev_h = sym_eigenvalues(&h);
            let mat = if ev_h.first().copied().unwrap_or(0.0) > 1e-12 * gn.amax() { h } else { gn };
            let step = match mat.lu().solve(&g) {
                Some(s) => s,
                None => return Err(Error::Diverged(format!("singular system at {:?}", u))),
            };
            let f0 = obj(u);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut cand = u;
                for a in 0..m {
                    cand[a] -= t * step[a];
                }
                let cand = dom.wrap(m, cand);
                let fc = obj(cand);
                // Near the minimum the objective is flat to roundoff; fall back
                // to the tangential residual as merit.
                if fc < f0 || (fc <= f0 + 1e-15 * (1.0 + f0) && tangential_residual(chart, cand, &z) < tres) {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(c) => u = c,
                None => {
                    // No decrease possible: accept when at the precision floor.
                    if tres <= 1e-9 * scale {
                        return Ok(LocalProjection { point: ev.f, at: ChartPoint { chart: seed.chart, u }, residual: tres, iterations: it });
                    }
                    return Err(Error::Diverged(format!("line search stalled; trace {:?}", &trace[trace.len().saturating_sub(5)..])));
                }
            }
            if !dom.within_soft_bounds(m, u) {
                return Err(Error::Diverged(format!("left chart {} domain at {:?}", seed.chart, u)));
            }
        }
        Err(Error::Diverged(format!(
            "no convergence in {NEWTON_MAX_ITER} iterations; trace tail {:?}",
            &trace[trace.len().saturating_sub(5)..]
        )))
    }

    /// Copy of the scenario with a C² bump added to one chart.
    pub fn with_bump(&self, bump: &Bump) -> Result<Scenario> {
        let ci = bump.chart;
        let base = self.charts.get(ci).ok_or_else(|| Error::Scenario(format!("no chart {ci}")))?;
        if !(bump.radius > 0.0) {
            return Err(Error::InvalidArgument("bump radius must be positive".into()));
        }
        let dir = match bump.direction {
            Some(d) => d,
            None => {
                let fr = self.tangent_normal_frames(ChartPoint { chart: ci, u: bump.center })?;
                fr.normal[0]
            }
        };
        let m = base.m;
        let dom = base.domain;
        let inner = base.map().clone();
        let b = *bump;
        let map: ChartFn = Arc::new(move |u: [Jet; 2]| {
            let mut out = inner(u);
            let d = dom.delta(m, [u[0].v, u[1].v], b.center);
            let mut t2 = Jet::constant(0.0);
            for a in 0..m {
                let da = u[a] - (u[a].v - d[a]);
                t2 = t2 + (da / b.radius).square();
            }
            if t2.v < 1.0 {
                let prof = (1.0 - t2).powi(3) * b.amplitude;
                for (i, o) in out.iter_mut().enumerate().take(dir.dim()) {
                    *o = *o + prof * dir[i];
                }
            }
            out
        });
        let mut charts = self.charts.clone();
        charts[ci] = Chart::new(m, base.dim, dom, format!("{}+bump", base.label), map);
        let mut meta = self.meta.clone();
        meta.reach = None;
        meta.expected_critical = None;
        meta.diameter += 2.0 * bump.amplitude.abs();
        meta.notes.push(format!(
            "bump: chart {ci}, center {:?}, radius {}, amplitude {}, direction {:?}, profile (1-t^2)^3",
            bump.center, bump.radius, bump.amplitude, dir
        ));
        Ok(Scenario::new(format!("{}+bump({})", self.name, bump.amplitude), charts, meta))
    }
}

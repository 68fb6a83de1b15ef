//! Distance-function queries against compact sets: projection sets, the
//! generalized gradient `(z - m(π(z))) / d(z)` and μ-criticality.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{canonical_sorted, smallest_enclosing_ball, Point};
use crate::manifold::{ChartPoint, Scenario};

/// Relative tolerance grouping near-equal distances into one projection set.
pub const PROJ_TIE_TOL: f64 = 1e-6;
/// Multi-start seeds per chart for manifold projections.
pub const STARTS_PER_CHART: usize = 256;
/// Discretization density per chart for Hausdorff distances to manifolds.
pub const HAUSDORFF_PER_CHART: usize = 4096;
/// Distances at or below this (times `1 + |z|`) count as "on the set".
pub const ONSET_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum SetKind {
    PointCloud(Arc<Vec<Point>>),
    Manifold(Arc<Scenario>),
}

/// A compact subset of R^D: a finite cloud or a parametric manifold.
#[derive(Clone, Debug)]
pub struct CompactSetHandle {
    pub kind: SetKind,
    pub tie_tol: f64,
    pub starts_per_chart: usize,
}

impl CompactSetHandle {
    pub fn cloud(points: Vec<Point>) -> Result<CompactSetHandle> {
        let first = points.first().ok_or(Error::EmptyPointSet)?;
        let d = first.dim();
        if points.iter().any(|p| p.dim() != d || !p.is_finite()) {
            return Err(Error::InvalidArgument("cloud points must be finite and share a dimension".into()));
        }
        Ok(CompactSetHandle { kind: SetKind::PointCloud(Arc::new(points)), tie_tol: PROJ_TIE_TOL, starts_per_chart: STARTS_PER_CHART })
    }

    pub fn manifold(scenario: Arc<Scenario>) -> CompactSetHandle {
        CompactSetHandle { kind: SetKind::Manifold(scenario), tie_tol: PROJ_TIE_TOL, starts_per_chart: STARTS_PER_CHART }
    }

    pub fn with_tie_tol(mut self, tie_tol: f64) -> CompactSetHandle {
        self.tie_tol = tie_tol;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::PointCloud(p) => p[0].dim(),
            SetKind::Manifold(s) => s.dim(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub point: Point,
    /// Chart coordinates when the set is a manifold.
    pub at: Option<ChartPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSet {
    pub query: Point,
    pub distance: f64,
    pub projections: Vec<Projection>,
    pub tie_tol_used: f64,
    /// More than D+1 separated nearest points survived deduplication.
    pub continuum_suspected: bool,
}

impl ProjectionSet {
    pub fn points(&self) -> Vec<Point> {
        self.projections.iter().map(|p| p.point).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientInfo {
    pub meb_center: Point,
    pub vector: Point,
    pub norm: f64,
    pub distance: f64,
    pub multiplicity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuClass {
    MuCritical,
    Regular,
}

/// Exhaustive nearest-point search over a cloud. Points within
/// `tie·d_min + ONSET_TOL·(1+|z|)` of the minimum are kept, in input order.
pub fn nearest_with_ties(points: &[Point], z: &Point, tie: f64) -> (f64, Vec<usize>) {
    let mut dmin = f64::INFINITY;
    for p in points {
        dmin = dmin.min(p.dist(z));
    }
    let thr = tie_threshold(dmin, z, tie);
    let idx = (0..points.len()).filter(|&i| points[i].dist(z) <= thr).collect();
    (dmin, idx)
}

#[inline]
pub fn tie_threshold(dmin: f64, z: &Point, tie: f64) -> f64 {
    dmin * (1.0 + tie) + ONSET_TOL * (1.0 + z.max_abs())
}

/// Uniform grid over a point cloud for exact nearest-neighbour and ball
/// queries.
#[derive(Clone, Debug)]
pub struct CloudIndex {
    points: Vec<Point>,
    lo: Point,
    cell: f64,
    dims: [usize; 3],
    start: Vec<u32>,
    items: Vec<u32>,
}

impl CloudIndex {
    pub fn new(points: &[Point]) -> CloudIndex {
        assert!(!points.is_empty());
        let d = points[0].dim();
        let (lo, hi) = crate::geom::bounding_box(points);
        let ext: Vec<f64> = (0..d).map(|i| hi[i] - lo[i]).collect();
        let max_ext = ext.iter().copied().fold(0.0, f64::max);
        let cell = if max_ext > 0.0 { max_ext / (points.len() as f64).powf(1.0 / d as f64).max(1.0) } else { 1.0 };
        let mut dims = [1usize; 3];
        for i in 0..d {
            dims[i] = ((ext[i] / cell).floor() as usize + 1).max(1);
        }
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncell + 1];
        let keys: Vec<usize> = points.iter().map(|p| Self::key_of(&lo, cell, &dims, p)).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        CloudIndex { points: points.to_vec(), lo, cell, dims, start: counts, items }
    }

    fn coord_of(lo: &Point, cell: f64, dims: &[usize; 3], p: &Point, i: usize) -> usize {
        if i >= p.dim() {
            return 0;
        }
        let c = ((p[i] - lo[i]) / cell).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(dims[i] - 1)
        }
    }

    fn key_of(lo: &Point, cell: f64, dims: &[usize; 3], p: &Point) -> usize {
        let c = [0, 1, 2].map(|i| Self::coord_of(lo, cell, dims, p, i));
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_items(&self, c: [usize; 3]) -> &[u32] {
        let k = (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0];
        &self.items[self.start[k] as usize..self.start[k + 1] as usize]
    }

    /// Visits every cell at Chebyshev ring distance `k` from `c0`.
    fn for_ring(&self, c0: [usize; 3], k: usize, mut f: impl FnMut([usize; 3])) {
        let rng = |i: usize| -> (i64, i64) {
            if self.dims[i] == 1 {
                (0, 0)
            } else {
                ((c0[i] as i64 - k as i64).max(0), (c0[i] as i64 + k as i64).min(self.dims[i] as i64 - 1))
            }
        };
        let (r0, r1, r2) = (rng(0), rng(1), rng(2));
        let k = k as i64;
        let c0 = c0.map(|v| v as i64);
        for a in r0.0..=r0.1 {
            for b in r1.0..=r1.1 {
                if (a - c0[0]).abs() == k || (b - c0[1]).abs() == k {
                    for c in r2.0..=r2.1 {
                        f([a as usize, b as usize, c as usize]);
                    }
                } else {
                    // Only the two caps along the third axis lie on the shell.
                    for c in [c0[2] - k, c0[2] + k] {
                        if c >= r2.0 && c <= r2.1 && (k > 0 || c == c0[2]) {
                            f([a as usize, b as usize, c as usize]);
                            if k == 0 {
                                break;
                            }
                        }
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(1)
    }

    fn home(&self, z: &Point) -> [usize; 3] {
        [0, 1, 2].map(|i| Self::coord_of(&self.lo, self.cell, &self.dims, z, i))
    }

    /// Exact equivalent of [`nearest_with_ties`], returning indices sorted
    /// ascending.
    pub fn nearest_with_ties(&self, z: &Point, tie: f64) -> (f64, Vec<usize>) {
        let c0 = self.home(z);
        let mut cand: Vec<(usize, f64)> = Vec::new();
        let mut dmin = f64::INFINITY;
        let mut k = 0;
        loop {
            let lower = (k as f64 - 1.0).max(0.0) * self.cell;
            if lower > tie_threshold(dmin, z, tie) || k > self.max_ring() {
                break;
            }
            self.for_ring(c0, k, |c| {
                for &i in self.cell_items(c) {
                    let d = self.points[i as usize].dist(z);
                    dmin = dmin.min(d);
                    // The threshold only shrinks, so later filtering stays exact.
                    if d <= tie_threshold(dmin, z, tie) {
                        cand.push((i as usize, d));
                    }
                }
            });
            k += 1;
        }
        let thr = tie_threshold(dmin, z, tie);
        let mut idx: Vec<usize> = cand.into_iter().filter(|&(_, d)| d <= thr).map(|(i, _)| i).collect();
        idx.sort_unstable();
        (dmin, idx)
    }

    /// Indices of points with `dist(p, center) < radius`.
    pub fn in_open_ball(&self, center: &Point, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let span = |i: usize| -> (usize, usize) {
            if i >= center.dim() {
                return (0, 0);
            }
            let lo = ((center[i] - radius - self.lo[i]) / self.cell).floor();
            let hi = ((center[i] + radius - self.lo[i]) / self.cell).floor();
            let clamp = |v: f64| if v <= 0.0 { 0 } else { (v as usize).min(self.dims[i] - 1) };
            (clamp(lo), clamp(hi))
        };
        let (s0, s1, s2) = (span(0), span(1), span(2));
        for c in s2.0..=s2.1 {
            for b in s1.0..=s1.1 {
                for a in s0.0..=s0.1 {
                    for &i in self.cell_items([a, b, c]) {
                        if self.points[i as usize].dist(center) < radius {
                            out.push(i as usize);
                        }
                    }
                }
            }
        }
    }
}

fn dedup_points(mut items: Vec<(Point, Option<ChartPoint>, f64)>, tol: f64) -> Vec<(Point, Option<ChartPoint>, f64)> {
    items.sort_by(|a, b| a.0.lex_cmp(&b.0));
    let mut out: Vec<(Point, Option<ChartPoint>, f64)> = Vec::new();
    for it in items {
        if let Some(j) = out.iter().position(|o| o.0.dist(&it.0) <= tol) {
            if it.2 < out[j].2 {
                out[j] = it;
            }
        } else {
            out.push(it);
        }
    }
    out.sort_by(|a, b| a.0.lex_cmp(&b.0));
    out
}

pub fn project_cloud(points: &[Point], z: &Point, tie: f64) -> ProjectionSet {
    let (d, idx) = nearest_with_ties(points, z, tie);
    let sel: Vec<Point> = canonical_sorted(&idx.iter().map(|&i| points[i]).collect::<Vec<_>>());
    let cont = sel.len() > z.dim() + 1;
    ProjectionSet {
        query: *z,
        distance: d,
        projections: sel.into_iter().map(|p| Projection { point: p, at: None }).collect(),
        tie_tol_used: tie,
        continuum_suspected: cont,
    }
}

/// Seeds at discrete local minima of the sampled distance, keeping only
/// those that could still beat the best sample.
fn seed_candidates(sc: &Scenario, z: &Point, per_chart: usize) -> Vec<ChartPoint> {
    let samples = sc.discretize(per_chart);
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    let mut slack = 0.0f64;
    let mut offset = 0;
    let mut local: Vec<(ChartPoint, f64)> = Vec::new();
    for (ci, ch) in sc.charts.iter().enumerate() {
        let side = ch.grid_side(per_chart);
        let n = if ch.m == 1 { side } else { side * side };
        let s = &samples[offset..offset + n];
        offset += n;
        let d: Vec<f64> = s.iter().map(|p| p.point.dist(z)).collect();
        let idx = |i: i64, j: i64| -> Option<usize> {
            let wrap = |v: i64, a: usize| -> Option<i64> {
                if v >= 0 && v < side as i64 {
                    Some(v)
                } else if ch.domain.periodic[a] {
                    Some(v.rem_euclid(side as i64))
                } else {
                    None
                }
            };
            if ch.m == 1 {
                wrap(i, 0).map(|i| i as usize)
            } else {
                Some((wrap(i, 0)? * side as i64 + wrap(j, 1)?) as usize)
            }
        };
        for i in 0..side as i64 {
            let jmax = if ch.m == 1 { 1 } else { side as i64 };
            for j in 0..jmax {
                let me = idx(i, j).expect("in range");
                let mut is_min = true;
                for di in -1..=1i64 {
                    for dj in -1..=1i64 {
                        if (di == 0 && dj == 0) || (ch.m == 1 && dj != 0) {
                            continue;
                        }
                        if let Some(nb) = idx(i + di, j + dj) {
                            slack = slack.max(s[me].point.dist(&s[nb].point));
                            if d[nb] < d[me] {
                                is_min = false;
                            }
                        }
                    }
                }
                best = best.min(d[me]);
                if is_min {
                    local.push((s[me].at, d[me]));
                }
            }
        }
        let _ = ci;
    }
    for (at, d) in local {
        if d - slack <= best {
            out.push(at);
        }
    }
    out
}

/// Multi-start Newton projection onto a manifold scenario.
pub fn project_manifold(sc: &Scenario, z: &Point, tie: f64, per_chart: usize) -> Result<ProjectionSet> {
    if !z.is_finite() || z.dim() != sc.dim() {
        return Err(Error::InvalidArgument(format!("query {z:?} does not fit the scenario")));
    }
    let seeds = seed_candidates(sc, z, per_chart);
    let mut found: Vec<(Point, Option<ChartPoint>, f64)> = Vec::new();
    let mut failures = Vec::new();
    for seed in &seeds {
        match sc.local_projection(*seed, *z) {
            Ok(lp) => found.push((lp.point, Some(lp.at), lp.point.dist(z))),
            Err(e) => failures.push(format!("{:?}: {e}", seed)),
        }
    }
    if found.is_empty() {
        return Err(Error::ProjectionFailed(format!(
            "{} seeds, all failed; first: {}",
            seeds.len(),
            failures.first().cloned().unwrap_or_default()
        )));
    }
    let dmin = found.iter().map(|f| f.2).fold(f64::INFINITY, f64::min);
    let thr = dmin + tie * (1.0 + dmin);
    let kept: Vec<_> = found.into_iter().filter(|f| f.2 <= thr).collect();
    let kept = dedup_points(kept, 1e-7 * sc.meta.diameter.max(1.0));
    let cont = kept.len() > sc.dim() + 1;
    Ok(ProjectionSet {
        query: *z,
        distance: dmin,
        projections: kept.into_iter().map(|(p, at, _)| Projection { point: p, at }).collect(),
        tie_tol_used: tie,
        continuum_suspected: cont,
    })
}

pub fn project(set: &CompactSetHandle, z: &Point) -> Result<ProjectionSet> {
    if !z.is_finite() {
        return Err(Error::InvalidArgument("query must be finite".into()));
    }
    match &set.kind {
        SetKind::PointCloud(p) => Ok(project_cloud(p, z, set.tie_tol)),
        SetKind::Manifold(s) => project_manifold(s, z, set.tie_tol, set.starts_per_chart),
    }
}

/// Gradient from an already computed projection set.
pub fn gradient_from_projections(ps: &ProjectionSet) -> Result<GradientInfo> {
    let z = ps.query;
    if ps.distance <= ONSET_TOL * (1.0 + z.max_abs()) {
        return Ok(GradientInfo {
            meb_center: z,
            vector: Point::zeros(z.dim()),
            norm: 0.0,
            distance: ps.distance,
            multiplicity: ps.projections.len(),
        });
    }
    let ball = smallest_enclosing_ball(&ps.points())?;
    let vector = (z - ball.center) / ps.distance;
    Ok(GradientInfo { meb_center: ball.center, vector, norm: vector.norm(), distance: ps.distance, multiplicity: ps.projections.len() })
}

pub fn generalized_gradient(set: &CompactSetHandle, z: &Point) -> Result<GradientInfo> {
    gradient_from_projections(&project(set, z)?)
}

pub fn mu_classify(set: &CompactSetHandle, z: &Point, mu: f64) -> Result<MuClass> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!("mu = {mu} outside [0, 1]")));
    }
    let g = generalized_gradient(set, z)?;
    let off_set = g.distance > ONSET_TOL * (1.0 + z.max_abs());
    Ok(if off_set && g.norm <= mu { MuClass::MuCritical } else { MuClass::Regular })
}

fn directed_hausdorff(a: &[Point], b: &CloudIndex) -> f64 {
    a.iter().map(|p| b.nearest_with_ties(p, 0.0).0).fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two finite sets.
pub fn hausdorff_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ia = CloudIndex::new(a);
    let ib = CloudIndex::new(b);
    Ok(directed_hausdorff(a, &ib).max(directed_hausdorff(b, &ia)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    pub distance: f64,
    pub points_per_chart: usize,
    pub discretization_size: usize,
}

/// Hausdorff distance from a cloud to a dense discretization of a scenario.
pub fn hausdorff_to_manifold(cloud: &[Point], sc: &Scenario, per_chart: usize) -> Result<HausdorffReport> {
    let dense = sc.discretize_points(per_chart);
    Ok(HausdorffReport { distance: hausdorff_distance(cloud, &dense)?, points_per_chart: per_chart, discretization_size: dense.len() })
}

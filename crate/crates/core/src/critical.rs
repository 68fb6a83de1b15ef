//! Critical points of the distance function: exact enumeration for point
//! clouds (a brute-force oracle and a Delaunay-pruned enumerator sharing one
//! verification routine) and Newton-refined detection on manifolds.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distfield::{self, CloudIndex, Projection, ONSET_TOL, PROJ_TIE_TOL, STARTS_PER_CHART};
use crate::error::{Error, Result};
use crate::geom::{
    circumcenter_in_affine_hull, convex_membership, diameter, normalized_gram_det, smallest_enclosing_ball, Point, DIST_TIE_TOL,
    GRAM_TOL,
};
use crate::manifold::{orthonormalize, ChartPoint, Scenario};

/// Size guard for the brute-force oracle.
pub const BRUTE_FORCE_LIMIT: usize = 40;
/// Size guard for [`cloud_critical_points`].
pub const CLOUD_LIMIT: usize = 5000;
/// Default manifold discretization per chart.
pub const MANIFOLD_SAMPLES_PER_CHART: usize = 2048;
pub const MANIFOLD_SAMPLES_PER_SURFACE_CHART: usize = 576;
/// Dedup radius relative to the set diameter.
pub const DEDUP_REL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CloudExact,
    ManifoldNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Point,
    pub value: f64,
    pub projections: Vec<Projection>,
    pub multiplicity: usize,
    pub weights: Vec<f64>,
    /// Largest residual of the defining equations.
    pub residual: f64,
    pub source: Source,
    /// More projections than D+1; such points violate (P1).
    pub exceeds_simplex: bool,
    /// Condition number of the Newton Jacobian (manifold points only).
    pub condition_number: Option<f64>,
}

impl CriticalPoint {
    pub fn projection_points(&self) -> Vec<Point> {
        self.projections.iter().map(|p| p.point).collect()
    }
}

/// A location whose projection set looks like a continuum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspectPoint {
    pub location: Point,
    pub value: f64,
    pub clusters: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    /// Sorted by (value, lexicographic location).
    pub points: Vec<CriticalPoint>,
    pub dedup_radius: f64,
    /// Continuum candidates found on manifolds (not valid critical points).
    pub suspects: Vec<SuspectPoint>,
    /// True when the count is only a lower bound (manifold search).
    pub count_is_lower_bound: bool,
    /// Seeds that failed to refine, with reasons.
    pub diagnostics: Vec<String>,
    /// Seeds whose Newton solve diverged.
    pub diverged_seeds: usize,
}

impl CriticalSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn locations(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.location).collect()
    }
}

fn check_cloud(cloud: &[Point]) -> Result<usize> {
    let first = cloud.first().ok_or(Error::EmptyPointSet)?;
    let d = first.dim();
    if cloud.iter().any(|p| p.dim() != d || !p.is_finite()) {
        return Err(Error::InvalidArgument("cloud points must be finite and share a dimension".into()));
    }
    Ok(d)
}

/// Accepts a candidate center when it is a critical point whose projection
/// set contains `sigma`; returns the projection index set.
fn verify_candidate(
    points: &[Point],
    nearest: &dyn Fn(&Point) -> (f64, Vec<usize>),
    sigma: &[usize],
    z: &Point,
) -> Option<Vec<usize>> {
    let (dmin, ties) = nearest(z);
    if dmin <= ONSET_TOL * (1.0 + z.max_abs()) {
        return None;
    }
    if !sigma.iter().all(|i| ties.binary_search(i).is_ok()) {
        return None;
    }
    let tp: Vec<Point> = ties.iter().map(|&i| points[i]).collect();
    let ball = smallest_enclosing_ball(&tp).ok()?;
    (ball.center.dist(z) <= 1e-9 * (1.0 + dmin)).then_some(ties)
}

/// The critical point determined by its projection index set.
fn finalize(points: &[Point], ties: &[usize]) -> Option<CriticalPoint> {
    let tp: Vec<Point> = ties.iter().map(|&i| points[i]).collect();
    let mut sorted = tp.clone();
    sorted.sort_by(|a, b| a.lex_cmp(b));
    let ball = smallest_enclosing_ball(&tp).ok()?;
    let z = ball.center;
    let weights = convex_membership(&z, &sorted).weights()?.to_vec();
    let (lo, hi) = sorted.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
        let d = p.dist(&z);
        (lo.min(d), hi.max(d))
    });
    let d = z.dim();
    Some(CriticalPoint {
        location: z,
        value: ball.radius,
        multiplicity: sorted.len(),
        exceeds_simplex: sorted.len() > d + 1,
        projections: sorted.into_iter().map(|p| Projection { point: p, at: None }).collect(),
        weights,
        residual: hi - lo,
        source: Source::CloudExact,
        condition_number: None,
    })
}

fn canonical_order(a: &CriticalPoint, b: &CriticalPoint) -> std::cmp::Ordering {
    a.value.total_cmp(&b.value).then_with(|| a.location.lex_cmp(&b.location))
}

fn assemble(points: &[Point], tie_sets: BTreeMap<Vec<usize>, ()>) -> CriticalSet {
    let diam = diameter(points);
    let dedup_radius = DEDUP_REL * diam;
    let keys: Vec<&Vec<usize>> = tie_sets.keys().collect();
    let mut cps: Vec<CriticalPoint> = keys.par_iter().filter_map(|t| finalize(points, t)).collect();
    cps.sort_by(canonical_order);
    let kept = dedup_by_location(cps, dedup_radius);
    CriticalSet {
        points: kept,
        dedup_radius,
        suspects: Vec::new(),
        count_is_lower_bound: false,
        diagnostics: Vec::new(),
        diverged_seeds: 0,
    }
}

/// Keeps the first of any points closer than `radius`, in input order.
fn dedup_by_location(cps: Vec<CriticalPoint>, radius: f64) -> Vec<CriticalPoint> {
    let cell = radius.max(f64::MIN_POSITIVE);
    let key = |p: &Point| -> [i64; 3] {
        let mut k = [0i64; 3];
        for i in 0..p.dim() {
            k[i] = (p[i] / cell).floor() as i64;
        }
        k
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for c in cps {
        let k = key(&c.location);
        let d = c.location.dim();
        let mut clash = false;
        'outer: for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    if (d < 3 && dz != 0) || (d < 2 && dy != 0) {
                        continue;
                    }
                    if let Some(list) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if list.iter().any(|&j| kept[j].location.dist(&c.location) <= radius) {
                            clash = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        if !clash {
            grid.entry(k).or_default().push(kept.len());
            kept.push(c);
        }
    }
    kept
}

fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Definitional oracle: every affinely independent subset of size 2..=D+1,
/// circumcenter in its affine hull, exhaustive verification.
pub fn cloud_critical_points_bruteforce(cloud: &[Point]) -> Result<CriticalSet> {
    let d = check_cloud(cloud)?;
    if cloud.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard { size: cloud.len(), limit: BRUTE_FORCE_LIMIT });
    }
    let nearest = |z: &Point| distfield::nearest_with_ties(cloud, z, DIST_TIE_TOL);
    let mut found = BTreeMap::new();
    for k in 2..=d + 1 {
        for_each_subset(cloud.len(), k, &mut |sigma| {
            let verts: Vec<Point> = sigma.iter().map(|&i| cloud[i]).collect();
            if normalized_gram_det(&verts) <= GRAM_TOL {
                return;
            }
            if let Ok((z, _)) = circumcenter_in_affine_hull(&verts) {
                if let Some(t) = verify_candidate(cloud, &nearest, sigma, &z) {
                    found.insert(t, ());
                }
            }
        });
    }
    Ok(assemble(cloud, found))
}

/// Production enumerator, identical in output to
/// [`cloud_critical_points_bruteforce`].
pub fn cloud_critical_points(cloud: &[Point]) -> Result<CriticalSet> {
    check_cloud(cloud)?;
    if cloud.len() > CLOUD_LIMIT {
        return Err(Error::SizeGuard { size: cloud.len(), limit: CLOUD_LIMIT });
    }
    cloud_critical_points_unbounded(cloud)
}

/// [`cloud_critical_points`] without the size guard.
pub fn cloud_critical_points_unbounded(cloud: &[Point]) -> Result<CriticalSet> {
    let d = check_cloud(cloud)?;
    let faces = delaunay::candidate_faces(cloud);
    let index = CloudIndex::new(cloud);
    let nearest = |z: &Point| index.nearest_with_ties(z, DIST_TIE_TOL);
    let diam = diameter(cloud);
    // Jung: a critical value never exceeds diam·sqrt(D / (2(D+1))).
    let rmax = diam * (d as f64 / (2.0 * (d as f64 + 1.0))).sqrt() * (1.0 + 1e-9);
    let key_scale = 1e-9 * diam.max(f64::MIN_POSITIVE);
    let candidates: Vec<(Vec<usize>, Point)> = faces
        .into_par_iter()
        .filter_map(|sigma| {
            let verts: Vec<Point> = sigma.iter().map(|&i| cloud[i]).collect();
            if normalized_gram_det(&verts) <= GRAM_TOL {
                return None;
            }
            let (z, r) = circumcenter_in_affine_hull(&verts).ok()?;
            if r > rmax {
                return None;
            }
            // A critical point lies in the relative interior of some face of
            // the triangulation of its projection set.
            match convex_membership(&z, &verts) {
                crate::geom::Membership::Inside { .. } => Some((sigma, z)),
                crate::geom::Membership::Outside => None,
            }
        })
        .collect();
    // Many faces share a circumcenter (cospherical inputs): verify once per
    // center and projection-set membership.
    let mut by_center: HashMap<[i64; 3], Vec<(Vec<usize>, Point)>> = HashMap::new();
    for (sigma, z) in candidates {
        let mut key = [0i64; 3];
        for i in 0..d {
            key[i] = (z[i] / key_scale).round() as i64;
        }
        by_center.entry(key).or_default().push((sigma, z));
    }
    let mut groups: Vec<Vec<(Vec<usize>, Point)>> = by_center.into_values().collect();
    groups.sort_by(|a, b| a[0].0.cmp(&b[0].0));
    let results: Vec<Vec<Vec<usize>>> = groups
        .par_iter()
        .map(|group| {
            let mut accepted: Vec<Vec<usize>> = Vec::new();
            for (sigma, z) in group {
                if accepted.iter().any(|t| sigma.iter().all(|i| t.binary_search(i).is_ok())) {
                    continue;
                }
                if let Some(t) = verify_candidate(cloud, &nearest, sigma, z) {
                    accepted.push(t);
                }
            }
            accepted
        })
        .collect();
    let mut found = BTreeMap::new();
    for t in results.into_iter().flatten() {
        found.insert(t, ());
    }
    Ok(assemble(cloud, found))
}

/// Delaunay triangulation by gift wrapping on a tiny deterministic
/// perturbation of the cloud, reduced to its affine hull.
mod delaunay {
    use super::*;

    const PERTURB: f64 = 1e-9;

    struct Reduced {
        pts: Vec<Point>,
        k: usize,
    }

    fn reduce(cloud: &[Point]) -> Reduced {
        let d = cloud[0].dim();
        let n = cloud.len();
        let mut mean = Point::zeros(d);
        for p in cloud {
            mean += *p;
        }
        mean = mean / n as f64;
        let centered = DMatrix::from_fn(n, d, |i, j| cloud[i][j] - mean[j]);
        let svd = centered.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let mut axes: Vec<(f64, usize)> = svd.singular_values.iter().copied().enumerate().map(|(i, s)| (s, i)).collect();
        axes.sort_by(|a, b| b.0.total_cmp(&a.0));
        let kept: Vec<usize> = axes.iter().filter(|(s, _)| *s > 1e-9 * smax && smax > 0.0).map(|&(_, i)| i).collect();
        let k = kept.len();
        if k == 0 {
            return Reduced { pts: Vec::new(), k: 0 };
        }
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let c: Vec<f64> = kept.iter().map(|&a| (0..d).map(|j| centered[(i, j)] * vt[(a, j)]).sum()).collect();
                Point::new(&c)
            })
            .collect();
        // Deterministic jitter resolves cospherical and collinear ties.
        let (lo, hi) = crate::geom::bounding_box(&pts);
        let scale = lo.dist(&hi) * PERTURB;
        let mut rng = ChaCha8Rng::seed_from_u64(0x0de1_a0a7);
        let pts = pts
            .into_iter()
            .map(|mut p| {
                for a in 0..k {
                    p[a] += scale * rng.gen_range(-1.0..1.0);
                }
                p
            })
            .collect();
        Reduced { pts, k }
    }

    /// All faces with 2..=k+1 vertices of the Delaunay simplices, as sorted
    /// index lists.
    pub fn candidate_faces(cloud: &[Point]) -> Vec<Vec<usize>> {
        if cloud.len() < 2 {
            return Vec::new();
        }
        let red = reduce(cloud);
        let simplices: Vec<Vec<usize>> = match red.k {
            0 => Vec::new(),
            1 => {
                let mut idx: Vec<usize> = (0..cloud.len()).collect();
                idx.sort_by(|&a, &b| red.pts[a][0].total_cmp(&red.pts[b][0]).then(a.cmp(&b)));
                idx.windows(2).map(|w| w.to_vec()).collect()
            }
            _ => GiftWrap::new(&red.pts, red.k).run(),
        };
        let mut faces: HashSet<Vec<usize>> = HashSet::new();
        for s in &simplices {
            let mut s = s.clone();
            s.sort_unstable();
            let n = s.len();
            for mask in 1u32..(1 << n) {
                if mask.count_ones() < 2 {
                    continue;
                }
                let f: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| s[i]).collect();
                faces.insert(f);
            }
        }
        let mut out: Vec<Vec<usize>> = faces.into_iter().collect();
        out.sort_unstable();
        out
    }

    struct GiftWrap<'a> {
        pts: &'a [Point],
        k: usize,
        index: CloudIndex,
        reach: f64,
    }

    struct Facet {
        c: Point,
        r2: f64,
        n: Point,
    }

    impl<'a> GiftWrap<'a> {
        fn new(pts: &'a [Point], k: usize) -> GiftWrap<'a> {
            let (lo, hi) = crate::geom::bounding_box(pts);
            GiftWrap { pts, k, index: CloudIndex::new(pts), reach: lo.dist(&hi) }
        }

        /// Entry parameter of `x` into the ball family `c + t·n` through the
        /// facet, or `None` off the positive side.
        fn entry(&self, f: &Facet, x: usize) -> Option<f64> {
            let v = self.pts[x] - f.c;
            let side = f.n.dot(&v);
            (side > 0.0).then(|| (v.norm2() - f.r2) / (2.0 * side))
        }

        fn best_among(&self, f: &Facet, excl: &[usize], cands: &[usize]) -> Option<(f64, usize)> {
            let mut best: Option<(f64, usize)> = None;
            for &x in cands {
                if excl.contains(&x) {
                    continue;
                }
                if let Some(t) = self.entry(f, x) {
                    if best.is_none_or(|(bt, bi)| t < bt || (t == bt && x < bi)) {
                        best = Some((t, x));
                    }
                }
            }
            best
        }

        /// First point entering the ball family across the facet.
        fn next_point(&self, f: &Facet, excl: &[usize]) -> Option<usize> {
            let mut buf = Vec::new();
            let mut radius = f.r2.sqrt().max(self.reach * 1e-6);
            loop {
                self.index.in_open_ball(&f.c, radius, &mut buf);
                if let Some((t, x)) = self.best_among(f, excl, &buf) {
                    // Every point beating `t` lies inside the ball at `t`.
                    let center = f.c + f.n * t;
                    let rho = (f.r2 + t * t).sqrt();
                    self.index.in_open_ball(&center, rho * (1.0 + 1e-9) + 1e-12 * self.reach, &mut buf);
                    buf.push(x);
                    return self.best_among(f, excl, &buf).map(|(_, i)| i);
                }
                if radius > 4.0 * self.reach + f.c.norm() {
                    return None;
                }
                radius *= 2.0;
            }
        }

        fn facet(&self, verts: &[usize], normal_hint: Point) -> Option<Facet> {
            let vp: Vec<Point> = verts.iter().map(|&i| self.pts[i]).collect();
            let (c, _) = circumcenter_in_affine_hull(&vp).ok()?;
            let r2 = c.dist2(&vp[0]);
            let dirs: Vec<Point> = vp[1..].iter().map(|v| *v - vp[0]).collect();
            let basis = orthonormalize(&dirs, 1e-12);
            let mut n = normal_hint;
            for _ in 0..2 {
                for e in &basis {
                    n -= *e * e.dot(&n);
                }
            }
            let n = n.normalized()?;
            Some(Facet { c, r2, n })
        }

        fn first_simplex(&self) -> Option<Vec<usize>> {
            let p0 = (0..self.pts.len()).min_by(|&a, &b| self.pts[a].lex_cmp(&self.pts[b]))?;
            let mut simplex = vec![p0];
            // Ball family grows from the empty half-space x_1 < p0_1.
            let mut hint = Point::basis(self.k, 0);
            let mut center: Option<Point> = None;
            while simplex.len() < self.k + 1 {
                let f = match center {
                    None => Facet { c: self.pts[p0], r2: 0.0, n: hint },
                    Some(c) => {
                        let vp: Vec<Point> = simplex.iter().map(|&i| self.pts[i]).collect();
                        let (cf, _) = circumcenter_in_affine_hull(&vp).ok()?;
                        let away = c - cf;
                        let h = if away.norm() > 1e-12 * self.reach { away } else { hint };
                        self.facet(&simplex, h).or_else(|| {
                            (0..self.k).find_map(|a| self.facet(&simplex, Point::basis(self.k, a)))
                        })?
                    }
                };
                let all: Vec<usize> = (0..self.pts.len()).collect();
                let (t, x) = match self.best_among(&f, &simplex, &all) {
                    Some(b) => b,
                    None => {
                        let flipped = Facet { n: -f.n, ..f };
                        let (t, x) = self.best_among(&flipped, &simplex, &all)?;
                        hint = -f.n;
                        center = Some(flipped.c + flipped.n * t);
                        simplex.push(x);
                        continue;
                    }
                };
                hint = f.n;
                center = Some(f.c + f.n * t);
                simplex.push(x);
            }
            Some(simplex)
        }

        fn run(&self) -> Vec<Vec<usize>> {
            let Some(first) = self.first_simplex() else { return Vec::new() };
            let mut simplices: HashSet<Vec<usize>> = HashSet::new();
            let mut facet_uses: HashMap<Vec<usize>, u8> = HashMap::new();
            let mut queue: Vec<(Vec<usize>, usize)> = Vec::new();
            let add = |s: Vec<usize>, simplices: &mut HashSet<Vec<usize>>, queue: &mut Vec<(Vec<usize>, usize)>, facet_uses: &mut HashMap<Vec<usize>, u8>| {
                let mut key = s.clone();
                key.sort_unstable();
                if !simplices.insert(key.clone()) {
                    return;
                }
                for skip in 0..key.len() {
                    let facet: Vec<usize> = key.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &v)| v).collect();
                    *facet_uses.entry(facet.clone()).or_insert(0) += 1;
                    queue.push((facet, key[skip]));
                }
            };
            add(first, &mut simplices, &mut queue, &mut facet_uses);
            while let Some((facet, opposite)) = queue.pop() {
                if facet_uses.get(&facet).copied().unwrap_or(0) >= 2 {
                    continue;
                }
                let vp: Vec<Point> = facet.iter().map(|&i| self.pts[i]).collect();
                let Ok((c, _)) = circumcenter_in_affine_hull(&vp) else { continue };
                let away = c - self.pts[opposite];
                let Some(f) = self.facet(&facet, away) else { continue };
                if f.n.dot(&(self.pts[opposite] - f.c)) >= 0.0 {
                    continue;
                }
                if let Some(x) = self.next_point(&f, &facet) {
                    let mut s = facet.clone();
                    s.push(x);
                    // Mark this side as explored even if the simplex exists.
                    *facet_uses.entry(facet.clone()).or_insert(0) = 2;
                    add(s, &mut simplices, &mut queue, &mut facet_uses);
                } else {
                    facet_uses.insert(facet, 2);
                }
            }
            let mut out: Vec<Vec<usize>> = simplices.into_iter().collect();
            out.sort_unstable();
            out
        }
    }
}

/// Options for [`manifold_critical_points_with`].
#[derive(Clone, Debug)]
pub struct ManifoldOptions {
    /// Seed discretization of curve charts.
    pub samples_per_chart: usize,
    /// Seed discretization of surface charts.
    pub samples_per_surface_chart: usize,
    /// Projection clusters merge below this multiple of the sample spacing.
    pub cluster_factor: f64,
    pub max_newton_iter: usize,
}

impl Default for ManifoldOptions {
    fn default() -> ManifoldOptions {
        ManifoldOptions {
            samples_per_chart: MANIFOLD_SAMPLES_PER_CHART,
            samples_per_surface_chart: MANIFOLD_SAMPLES_PER_SURFACE_CHART,
            cluster_factor: 3.0, max_newton_iter: 60 }
    }
}

pub fn manifold_critical_points(sc: &Scenario) -> Result<CriticalSet> {
    manifold_critical_points_with(sc, &ManifoldOptions::default())
}

fn clusters(pts: &[Point], thr: f64) -> Vec<Vec<usize>> {
    let n = pts.len();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![s];
        label[s] = id;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..n {
                if label[j] == usize::MAX && pts[i].dist(&pts[j]) <= thr {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

enum SeedOutcome {
    Skip,
    Suspect(SuspectPoint),
    Solved(CriticalPoint),
    Rejected(String),
    Diverged(String),
}

/// Solution of the square system for s local projections.
pub struct SquareSolution {
    pub at: Vec<ChartPoint>,
    pub z: Point,
    pub r: f64,
    pub lambda: Vec<f64>,
    pub residual: f64,
    pub condition_number: f64,
}

/// Newton on `(u_1..u_s, z, r, λ)` with equations `d1(u_j)ᵀ(f_j - z) = 0`,
/// `|f_j - z|² - r² = 0`, `z - Σλ_j f_j = 0`, `Σλ_j - 1 = 0`.
pub fn solve_square_system(sc: &Scenario, seeds: &[ChartPoint], z0: Point, r0: f64, lambda0: &[f64], max_iter: usize) -> Result<SquareSolution> {
    let s = seeds.len();
    let d = sc.dim();
    let ms: Vec<usize> = seeds.iter().map(|a| sc.charts[a.chart].m).collect();
    let nu: usize = ms.iter().sum();
    let n = nu + d + 1 + s;
    let mut at: Vec<ChartPoint> = seeds.to_vec();
    let mut z = z0;
    let mut r = r0;
    let mut lam: Vec<f64> = lambda0.to_vec();
    let scale = 1.0 + z0.max_abs() + r0;
    let eval = |at: &[ChartPoint], z: &Point, r: f64, lam: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let (zc, rc, lc) = (nu, nu + d, nu + d + 1);
        let mut row = 0;
        let mut ucol = 0;
        let evs: Vec<_> = at.iter().map(|a| sc.jet(*a)).collect();
        for (j, ev) in evs.iter().enumerate() {
            let diff = ev.f - *z;
            for a in 0..ms[j] {
                f[row] = ev.d1[a].dot(&diff);
                for b in 0..ms[j] {
                    jac[(row, ucol + b)] = ev.d2[a][b].dot(&diff) + ev.d1[a].dot(&ev.d1[b]);
                }
                for i in 0..d {
                    jac[(row, zc + i)] = -ev.d1[a][i];
                }
                row += 1;
            }
            ucol += ms[j];
        }
        ucol = 0;
        for (j, ev) in evs.iter().enumerate() {
            let diff = ev.f - *z;
            f[row] = diff.norm2() - r * r;
            for b in 0..ms[j] {
                jac[(row, ucol + b)] = 2.0 * ev.d1[b].dot(&diff);
            }
            for i in 0..d {
                jac[(row, zc + i)] = -2.0 * diff[i];
            }
            jac[(row, rc)] = -2.0 * r;
            row += 1;
            ucol += ms[j];
        }
        for i in 0..d {
            let mut acc = z[i];
            ucol = 0;
            for (j, ev) in evs.iter().enumerate() {
                acc -= lam[j] * ev.f[i];
                for b in 0..ms[j] {
                    jac[(row, ucol + b)] = -lam[j] * ev.d1[b][i];
                }
                jac[(row, lc + j)] = -ev.f[i];
                ucol += ms[j];
            }
            jac[(row, zc + i)] = 1.0;
            f[row] = acc;
            row += 1;
        }
        f[row] = lam.iter().sum::<f64>() - 1.0;
        for j in 0..s {
            jac[(row, lc + j)] = 1.0;
        }
        (f, jac)
    };
    let mut last_res = f64::INFINITY;
    for it in 0..=max_iter {
        let (f, jac) = eval(&at, &z, r, &lam);
        let res = f.amax();
        // Singular Jacobians (degenerate critical points) converge linearly,
        // so iterate until the residual stops shrinking.
        let converged = res <= 1e-15 * scale * scale;
        let stalled = res >= 0.9 * last_res && res <= 1e-10 * scale * scale;
        if converged || it == max_iter || stalled {
            if res > 1e-10 * scale * scale {
                return Err(Error::Diverged(format!("square system residual {res:.3e} after {it} iterations")));
            }
            let sv = jac.clone().svd(false, false).singular_values;
            let smax = sv.iter().copied().fold(0.0, f64::max);
            let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            return Ok(SquareSolution { at, z, r: r.abs(), lambda: lam, residual: res, condition_number: cond });
        }
        last_res = res;
        let step = match jac.clone().lu().solve(&f) {
            Some(st) if st.iter().all(|v| v.is_finite()) => st,
            _ => jac.svd(true, true).solve(&f, 1e-14).map_err(|e| Error::Diverged(e.to_string()))?,
        };
        // Damped update on the residual norm.
        let mut t = 1.0;
        let fnorm = f.norm();
        let mut accepted = false;
        for _ in 0..30 {
            let (nat, nz, nr, nl) = apply_step(sc, &at, &ms, z, r, &lam, &step, t, d);
            let (nf, _) = eval(&nat, &nz, nr, &nl);
            if nf.norm() < fnorm || t < 1e-6 {
                at = nat;
                z = nz;
                r = nr;
                lam = nl;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Diverged("square system line search failed".into()));
        }
    }
    unreachable!()
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    sc: &Scenario,
    at: &[ChartPoint],
    ms: &[usize],
    z: Point,
    r: f64,
    lam: &[f64],
    step: &DVector<f64>,
    t: f64,
    d: usize,
) -> (Vec<ChartPoint>, Point, f64, Vec<f64>) {
    let nu: usize = ms.iter().sum();
    let mut nat = at.to_vec();
    let mut col = 0;
    for (j, a) in nat.iter_mut().enumerate() {
        for b in 0..ms[j] {
            a.u[b] -= t * step[col + b];
        }
        let dom = sc.charts[a.chart].domain;
        for b in 0..ms[j] {
            if dom.periodic[b] {
                let w = dom.width(b);
                a.u[b] = dom.lo[b] + (a.u[b] - dom.lo[b]).rem_euclid(w);
            }
        }
        col += ms[j];
    }
    let mut nz = z;
    for i in 0..d {
        nz[i] -= t * step[nu + i];
    }
    let nr = r - t * step[nu + d];
    let nl: Vec<f64> = lam.iter().enumerate().map(|(j, l)| l - t * step[nu + d + 1 + j]).collect();
    (nat, nz, nr, nl)
}

fn refine_seed(
    sc: &Scenario,
    samples: &[crate::manifold::Sample],
    cp: &CriticalPoint,
    proj_idx: &[usize],
    thr: f64,
    opts: &ManifoldOptions,
) -> SeedOutcome {
    let d = sc.dim();
    let pts: Vec<Point> = proj_idx.iter().map(|&i| samples[i].point).collect();
    let cl = clusters(&pts, thr);
    if cl.len() == 1 {
        let spread = diameter(&pts);
        if spread <= thr {
            return SeedOutcome::Skip;
        }
        return SeedOutcome::Suspect(SuspectPoint {
            location: cp.location,
            value: cp.value,
            clusters: 1,
            reason: format!("continuum suspected: {} equidistant samples spread over {spread:.3e}", pts.len()),
        });
    }
    if cl.len() > d + 1 {
        return SeedOutcome::Suspect(SuspectPoint {
            location: cp.location,
            value: cp.value,
            clusters: cl.len(),
            reason: format!("continuum suspected: {} projection clusters exceed D+1", cl.len()),
        });
    }
    let mut seeds = Vec::new();
    let mut lam0 = Vec::new();
    for c in &cl {
        let best = c
            .iter()
            .copied()
            .min_by(|&a, &b| pts[a].dist(&cp.location).total_cmp(&pts[b].dist(&cp.location)).then(a.cmp(&b)))
            .expect("nonempty cluster");
        seeds.push(samples[proj_idx[best]].at);
        lam0.push(c.iter().map(|&i| cp.weights.get(i).copied().unwrap_or(0.0)).sum::<f64>());
    }
    let sum: f64 = lam0.iter().sum();
    if sum > 0.0 {
        for l in &mut lam0 {
            *l /= sum;
        }
    }
    let mut seeds_try = seeds.clone();
    let mut lam_try = lam0.clone();
    let mut z0 = cp.location;
    let mut r0 = cp.value;
    for attempt in 0..2 {
        let sol = match solve_square_system(sc, &seeds_try, z0, r0, &lam_try, opts.max_newton_iter) {
            Ok(s) => s,
            Err(e) => return SeedOutcome::Diverged(format!("seed at {:?}: {e}", cp.location)),
        };
        let ps = match distfield::project_manifold(sc, &sol.z, PROJ_TIE_TOL, STARTS_PER_CHART) {
            Ok(p) => p,
            Err(e) => return SeedOutcome::Rejected(format!("{:?}: {e}", sol.z)),
        };
        if sol.r > ps.distance * (1.0 + 1e-8) + ONSET_TOL {
            return SeedOutcome::Rejected(format!(
                "{:?}: system distance {:.12} exceeds d_M {:.12}",
                sol.z, sol.r, ps.distance
            ));
        }
        if ps.continuum_suspected {
            return SeedOutcome::Suspect(SuspectPoint {
                location: sol.z,
                value: sol.r,
                clusters: ps.projections.len(),
                reason: "continuum suspected at refined location".into(),
            });
        }
        if ps.projections.len() != sol.at.len() && attempt == 0 {
            // The global projection set differs: re-solve on it.
            seeds_try = ps.projections.iter().filter_map(|p| p.at).collect();
            if seeds_try.len() < 2 {
                return SeedOutcome::Rejected(format!("{:?}: single global projection", sol.z));
            }
            lam_try = vec![1.0 / seeds_try.len() as f64; seeds_try.len()];
            z0 = sol.z;
            r0 = sol.r;
            continue;
        }
        let fpts: Vec<Point> = sol.at.iter().map(|a| sc.eval(*a)).collect();
        if sol.lambda.iter().any(|&l| l < -1e-9) || convex_membership(&sol.z, &fpts).weights().is_none() {
            return SeedOutcome::Rejected(format!("{:?}: outside the projection hull", sol.z));
        }
        let mut order: Vec<usize> = (0..fpts.len()).collect();
        order.sort_by(|&a, &b| fpts[a].lex_cmp(&fpts[b]));
        let s = fpts.len();
        return SeedOutcome::Solved(CriticalPoint {
            location: sol.z,
            value: sol.r,
            projections: order.iter().map(|&j| Projection { point: fpts[j], at: Some(sol.at[j]) }).collect(),
            multiplicity: s,
            weights: order.iter().map(|&j| sol.lambda[j]).collect(),
            residual: sol.residual,
            source: Source::ManifoldNewton,
            exceeds_simplex: s > d + 1,
            condition_number: Some(sol.condition_number),
        });
    }
    SeedOutcome::Rejected(format!("{:?}: projection set unstable", cp.location))
}

pub fn manifold_critical_points_with(sc: &Scenario, opts: &ManifoldOptions) -> Result<CriticalSet> {
    let per_chart = if sc.m() == 2 { opts.samples_per_surface_chart } else { opts.samples_per_chart };
    let samples = sc.discretize(per_chart);
    let pts: Vec<Point> = samples.iter().map(|s| s.point).collect();
    let cloud = cloud_critical_points_unbounded(&pts)?;
    let index = CloudIndex::new(&pts);
    let spacing = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut buf = Vec::new();
            let mut r = 1e-9 * sc.meta.diameter;
            loop {
                index.in_open_ball(p, r, &mut buf);
                if buf.iter().any(|&j| j != i) {
                    return buf.iter().filter(|&&j| j != i).map(|&j| pts[j].dist(p)).fold(f64::INFINITY, f64::min);
                }
                r *= 2.0;
            }
        })
        .reduce(|| 0.0, f64::max);
    let thr = opts.cluster_factor * spacing;
    let seeds: Vec<&CriticalPoint> = cloud.points.iter().filter(|c| c.value > thr).collect();
    // Projection indices of each cloud critical point.
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|cp| {
            let (_, idx) = index.nearest_with_ties(&cp.location, DIST_TIE_TOL);
            let mut ordered: Vec<usize> = idx;
            ordered.sort_by(|&a, &b| pts[a].lex_cmp(&pts[b]));
            refine_seed(sc, &samples, cp, &ordered, thr, opts)
        })
        .collect();
    let dedup_radius = DEDUP_REL * sc.meta.diameter;
    let mut found: Vec<CriticalPoint> = Vec::new();
    let mut suspects: Vec<SuspectPoint> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut diverged = 0;
    for o in outcomes {
        match o {
            SeedOutcome::Skip => {}
            SeedOutcome::Suspect(s) => {
                if suspects.iter().all(|k| k.location.dist(&s.location) > thr) {
                    suspects.push(s);
                }
            }
            SeedOutcome::Solved(c) => match found.iter().position(|k| k.location.dist(&c.location) <= dedup_radius) {
                Some(j) => {
                    if c.residual < found[j].residual {
                        found[j] = c;
                    }
                }
                None => found.push(c),
            },
            SeedOutcome::Rejected(msg) => diagnostics.push(format!("rejected: {msg}")),
            SeedOutcome::Diverged(msg) => {
                diverged += 1;
                diagnostics.push(format!("diverged: {msg}"));
            }
        }
    }
    found.sort_by(canonical_order);
    suspects.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.location.lex_cmp(&b.location)));
    // Suspects that coincide with a proper critical point are dropped.
    suspects.retain(|s| found.iter().all(|c| c.location.dist(&s.location) > thr));
    let lower_bound = sc.meta.expected_critical != Some(found.len());
    Ok(CriticalSet { points: found, dedup_radius, suspects, count_is_lower_bound: lower_bound, diagnostics, diverged_seeds: diverged })
}

//! Low-dimensional geometric kernel: points in R^1..R^3, smallest enclosing
//! balls, circumcenters, convex-hull membership, simplex volumes and
//! greedy packings.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine-independence threshold on the normalized Gram determinant.
pub const GRAM_TOL: f64 = 1e-10;
/// Relative tolerance used to decide that two distances tie.
pub const DIST_TIE_TOL: f64 = 1e-8;
/// Barycentric weights above this count as strictly inside.
pub const INTERIOR_TOL: f64 = 1e-6;
/// Containment slack for enclosing balls, scaled by `1 + radius`.
pub const BALL_TOL: f64 = 1e-12;

/// A point of R^D for D in 1..=3, stored inline.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Point {
    c: [f64; 3],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Point {
        assert!(
            (1..=3).contains(&coords.len()),
            "points must have 1 to 3 coordinates"
        );
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Point { c, dim: coords.len() as u8 }
    }

    pub fn xy(x: f64, y: f64) -> Point {
        Point { c: [x, y, 0.0], dim: 2 }
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Point {
        Point { c: [x, y, z], dim: 3 }
    }

    pub fn zeros(dim: usize) -> Point {
        assert!((1..=3).contains(&dim));
        Point { c: [0.0; 3], dim: dim as u8 }
    }

    /// Unit vector along axis `i`.
    pub fn basis(dim: usize, i: usize) -> Point {
        let mut p = Point::zeros(dim);
        p.c[i] = 1.0;
        p
    }

    pub fn from_dvector(v: &DVector<f64>) -> Point {
        Point::new(v.as_slice())
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.coords())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn dot(&self, o: &Point) -> f64 {
        self.c[0] * o.c[0] + self.c[1] * o.c[1] + self.c[2] * o.c[2]
    }

    #[inline]
    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist2(&self, o: &Point) -> f64 {
        (*self - *o).norm2()
    }

    #[inline]
    pub fn dist(&self, o: &Point) -> f64 {
        self.dist2(o).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|v| v.is_finite())
    }

    /// Normalized copy; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Point> {
        let n = self.norm();
        (n > 0.0).then(|| *self / n)
    }

    pub fn lex_cmp(&self, o: &Point) -> Ordering {
        for (a, b) in self.coords().iter().zip(o.coords()) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.dim.cmp(&o.dim)
    }

    pub fn max_abs(&self) -> f64 {
        self.coords().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.coords().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = String;
    fn try_from(v: Vec<f64>) -> std::result::Result<Point, String> {
        if (1..=3).contains(&v.len()) {
            Ok(Point::new(&v))
        } else {
            Err(format!("expected 1 to 3 coordinates, got {}", v.len()))
        }
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        let d = self.dim as usize;
        &mut self.c[..d][i]
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        Point {
            c: [self.c[0] + o.c[0], self.c[1] + o.c[1], self.c[2] + o.c[2]],
            dim: self.dim,
        }
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        Point {
            c: [self.c[0] - o.c[0], self.c[1] - o.c[1], self.c[2] - o.c[2]],
            dim: self.dim,
        }
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point { c: [self.c[0] * s, self.c[1] * s, self.c[2] * s], dim: self.dim }
    }
}

impl Div<f64> for Point {
    type Output = Point;
    #[inline]
    fn div(self, s: f64) -> Point {
        Point { c: [self.c[0] / s, self.c[1] / s, self.c[2] / s], dim: self.dim }
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self * -1.0
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        *self = *self + o;
    }
}

impl SubAssign for Point {
    fn sub_assign(&mut self, o: Point) {
        *self = *self - o;
    }
}

/// Sorts lexicographically and drops exact duplicates.
pub fn canonical_sorted(points: &[Point]) -> Vec<Point> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.lex_cmp(b));
    v.dedup_by(|a, b| a.lex_cmp(b) == Ordering::Equal);
    v
}

/// Closed ball `B(center, radius)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, p: &Point) -> bool {
        self.center.dist(p) <= self.radius + BALL_TOL * (1.0 + self.radius)
    }
}

/// Vertex list of a (possibly degenerate) simplex with at most D+1 vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Point>,
}

impl Simplex {
    pub fn new(vertices: Vec<Point>) -> Result<Simplex> {
        let first = vertices.first().ok_or(Error::EmptyPointSet)?;
        let d = first.dim();
        if vertices.iter().any(|v| v.dim() != d || !v.is_finite()) {
            return Err(Error::InvalidArgument("mixed or non-finite vertices".into()));
        }
        if vertices.len() > d + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} vertices exceed D+1 = {}",
                vertices.len(),
                d + 1
            )));
        }
        Ok(Simplex { vertices })
    }

    pub fn is_degenerate(&self) -> bool {
        normalized_gram_det(&self.vertices) <= GRAM_TOL
    }

    pub fn volume(&self) -> f64 {
        simplex_volume(&self.vertices)
    }

    pub fn circumcenter(&self) -> Result<(Point, f64)> {
        circumcenter_in_affine_hull(&self.vertices)
    }
}

fn edge_gram(vertices: &[Point]) -> DMatrix<f64> {
    let k = vertices.len().saturating_sub(1);
    let v0 = vertices[0];
    let edges: Vec<Point> = vertices[1..].iter().map(|v| *v - v0).collect();
    DMatrix::from_fn(k, k, |i, j| edges[i].dot(&edges[j]))
}

/// Gram determinant of the edge vectors divided by the product of squared
/// edge lengths. Lies in [0, 1]; 1 for orthogonal edges.
pub fn normalized_gram_det(vertices: &[Point]) -> f64 {
    if vertices.len() <= 1 {
        return 1.0;
    }
    let g = edge_gram(vertices);
    let diag: f64 = (0..g.nrows()).map(|i| g[(i, i)]).product();
    if diag <= 0.0 {
        return 0.0;
    }
    (g.determinant() / diag).max(0.0)
}

/// Center and radius of the sphere through all vertices whose center lies in
/// their affine hull.
pub fn circumcenter_in_affine_hull(vertices: &[Point]) -> Result<(Point, f64)> {
    let v0 = *vertices.first().ok_or(Error::EmptyPointSet)?;
    if vertices.len() == 1 {
        return Ok((v0, 0.0));
    }
    if vertices.len() > v0.dim() + 1 || normalized_gram_det(vertices) <= GRAM_TOL {
        return Err(Error::Degenerate);
    }
    let g = edge_gram(vertices);
    let rhs = DVector::from_fn(g.nrows(), |i, _| 0.5 * g[(i, i)]);
    let alpha = g.lu().solve(&rhs).ok_or(Error::Degenerate)?;
    let mut c = v0;
    for (i, v) in vertices[1..].iter().enumerate() {
        c += (*v - v0) * alpha[i];
    }
    let r = vertices.iter().map(|v| c.dist(v)).sum::<f64>() / vertices.len() as f64;
    Ok((c, r))
}

fn ball_from_support(support: &[Point]) -> Option<Ball> {
    match support.len() {
        0 => None,
        1 => Some(Ball { center: support[0], radius: 0.0 }),
        _ => match circumcenter_in_affine_hull(support) {
            Ok((center, _)) => {
                let radius = support.iter().map(|p| center.dist(p)).fold(0.0, f64::max);
                Some(Ball { center, radius })
            }
            Err(_) => {
                // Nearly dependent support: fall back to the widest pair.
                let mut best = (0, 0, -1.0);
                for i in 0..support.len() {
                    for j in i + 1..support.len() {
                        let d = support[i].dist(&support[j]);
                        if d > best.2 {
                            best = (i, j, d);
                        }
                    }
                }
                let center = (support[best.0] + support[best.1]) * 0.5;
                let radius = support.iter().map(|p| center.dist(p)).fold(0.0, f64::max);
                Some(Ball { center, radius })
            }
        },
    }
}

fn welzl_mtf(pts: &mut [Point], end: usize, support: &mut Vec<Point>, dim: usize) -> Option<Ball> {
    let mut ball = ball_from_support(support);
    if support.len() == dim + 1 {
        return ball;
    }
    for i in 0..end {
        let p = pts[i];
        if ball.is_some_and(|b| b.contains(&p)) {
            continue;
        }
        support.push(p);
        ball = welzl_mtf(pts, i, support, dim);
        support.pop();
        pts[..=i].rotate_right(1);
    }
    ball
}

/// Smallest ball containing all points.
///
/// Move-to-front Welzl on a canonically sorted copy, then a fixed-seed
/// shuffle so the expected running time stays linear; the result does not
/// depend on the input order.
pub fn smallest_enclosing_ball(points: &[Point]) -> Result<Ball> {
    let first = points.first().ok_or(Error::EmptyPointSet)?;
    let dim = first.dim();
    if points.iter().any(|p| p.dim() != dim || !p.is_finite()) {
        return Err(Error::InvalidArgument("mixed or non-finite points".into()));
    }
    let mut pts = canonical_sorted(points);
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed_ba11));
    let n = pts.len();
    let mut support = Vec::with_capacity(dim + 1);
    Ok(welzl_mtf(&mut pts, n, &mut support, dim).expect("nonempty input"))
}

/// Result of a convex-hull membership query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Membership {
    Inside { weights: Vec<f64>, relative_interior: bool },
    Outside,
}

impl Membership {
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Membership::Inside { weights, .. } => Some(weights),
            Membership::Outside => None,
        }
    }

    pub fn is_relative_interior(&self) -> bool {
        matches!(self, Membership::Inside { relative_interior: true, .. })
    }
}

/// Lawson-Hanson non-negative least squares.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-14 * (1.0 + a.amax() * b.amax()) * n as f64;
    for _outer in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        for _inner in 0..3 * n + 10 {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let sol = sub
                .svd(true, true)
                .solve(b, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if sol.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = sol[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if sol[k] <= 0.0 {
                    let denom = x[i] - sol[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (sol[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Barycentric weights of `point` with respect to `vertices`, or `Outside`.
pub fn convex_membership(point: &Point, vertices: &[Point]) -> Membership {
    convex_membership_with(point, vertices, INTERIOR_TOL)
}

pub fn convex_membership_with(point: &Point, vertices: &[Point], interior_tol: f64) -> Membership {
    let n = vertices.len();
    if n == 0 {
        return Membership::Outside;
    }
    let d = point.dim();
    let scale = vertices.iter().map(|v| v.dist(point)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Membership::Inside { weights: vec![1.0 / n as f64; n], relative_interior: true };
    }
    // Work relative to the query so the system is O(1)-scaled; the last row
    // carries the affine constraint sum(lambda) = 1.
    let a = DMatrix::from_fn(d + 1, n, |i, j| {
        if i < d {
            (vertices[j][i] - point[i]) / scale
        } else {
            1.0
        }
    });
    let mut b = DVector::zeros(d + 1);
    b[d] = 1.0;
    let mut lam = nnls(&a, &b);
    let sum: f64 = lam.iter().sum();
    if !(sum > 0.0) {
        return Membership::Outside;
    }
    lam /= sum;
    let mut recon = Point::zeros(d);
    for (j, v) in vertices.iter().enumerate() {
        recon += *v * lam[j];
    }
    let pscale = 1.0 + point.max_abs().max(scale);
    if recon.dist(point) > 1e-10 * pscale {
        return Membership::Outside;
    }
    let relative_interior = lam.iter().all(|&l| l > interior_tol);
    Membership::Inside { weights: lam.iter().copied().collect(), relative_interior }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// s-dimensional volume of the simplex spanned by `s + 1` vertices.
pub fn simplex_volume(vertices: &[Point]) -> f64 {
    if vertices.len() <= 1 {
        return 0.0;
    }
    let s = vertices.len() - 1;
    let det = edge_gram(vertices).determinant();
    det.max(0.0).sqrt() / factorial(s)
}

/// Cardinality of a greedy maximal δ-separated subset of the points lying in
/// the closed ball `B(center, eps)`, taken in lexicographic order.
pub fn packing_count(points: &[Point], center: &Point, delta: f64, eps: f64) -> Result<usize> {
    if !(delta > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument("delta and eps must be positive".into()));
    }
    let window: Vec<Point> = canonical_sorted(points)
        .into_iter()
        .filter(|p| p.dist(center) <= eps * (1.0 + 1e-9))
        .collect();
    let sep = delta * (1.0 - 1e-9);
    let mut kept: Vec<Point> = Vec::new();
    for p in window {
        if kept.iter().all(|q| q.dist(&p) >= sep) {
            kept.push(p);
        }
    }
    Ok(kept.len())
}

/// Axis-aligned bounding box of a nonempty point list.
pub fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for i in 0..p.dim() {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

/// Largest pairwise distance; exact up to 512 points, the bounding-box
/// diagonal (an upper bound) beyond that.
pub fn diameter(points: &[Point]) -> f64 {
    if points.len() <= 512 {
        let mut d = 0.0f64;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                d = d.max(points[i].dist(&points[j]));
            }
        }
        d
    } else {
        let (lo, hi) = bounding_box(points);
        lo.dist(&hi)
    }
}

//! Built-in scenario registry.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{Chart, ChartFn, Domain, Scenario, ScenarioMeta};
use crate::error::{Error, Result};
use crate::geom::diameter;
use crate::jet::{smoothstep, Jet};

pub const BUILTIN_NAMES: &[&str] = &[
    "circle",
    "ellipse",
    "ellipsoid",
    "sphere",
    "torus",
    "paper_cubic",
    "paper_cubic_perturbed",
];

/// One parameterization of each built-in, in shorthand form.
pub const BUILTIN_SUITE: &[&str] = &[
    "circle:1",
    "ellipse:2,1",
    "ellipsoid:3,2,1",
    "sphere:1",
    "torus:2,0.5",
    "paper_cubic",
    "paper_cubic_perturbed:0.1",
];

fn zero() -> Jet {
    Jet::constant(0.0)
}

fn meta(m: usize, d: usize, reach: Option<f64>, diameter: f64, expected: Option<usize>) -> ScenarioMeta {
    ScenarioMeta {
        intrinsic_dim: m,
        ambient_dim: d,
        reach,
        diameter,
        expected_critical: expected,
        notes: Vec::new(),
    }
}

fn periodic_curve(label: &str, map: ChartFn) -> Chart {
    Chart::new(1, 2, Domain::interval(0.0, 2.0 * PI, true), label, map)
}

pub fn circle(r: f64) -> Result<Scenario> {
    ellipse_named("circle", r, r)
}

pub fn ellipse(a: f64, b: f64) -> Result<Scenario> {
    ellipse_named("ellipse", a, b)
}

fn ellipse_named(name: &str, a: f64, b: f64) -> Result<Scenario> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Scenario("ellipse axes must be positive".into()));
    }
    let map: ChartFn = Arc::new(move |u: [Jet; 2]| [u[0].cos() * a, u[0].sin() * b, zero()]);
    let (lo, hi) = (a.min(b), a.max(b));
    let expected = if a == b { None } else { Some(1) };
    let label = if name == "circle" { format!("circle({a})") } else { format!("ellipse({a},{b})") };
    Ok(Scenario::new(label.clone(), vec![periodic_curve(&label, map)], meta(1, 2, Some(lo * lo / hi), 2.0 * hi, expected)))
}

/// Six cube-face charts `diag(a,b,c)·p/|p|` with `p` on a face of [-1,1]³.
pub fn ellipsoid(a: f64, b: f64, c: f64) -> Result<Scenario> {
    ellipsoid_named("ellipsoid", a, b, c)
}

pub fn sphere(r: f64) -> Result<Scenario> {
    ellipsoid_named("sphere", r, r, r)
}

fn ellipsoid_named(name: &str, a: f64, b: f64, c: f64) -> Result<Scenario> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Scenario("ellipsoid axes must be positive".into()));
    }
    let axes = [a, b, c];
    let mut charts = Vec::new();
    for axis in 0..3 {
        for sign in [1.0f64, -1.0] {
            let map: ChartFn = Arc::new(move |u: [Jet; 2]| {
                let mut p = [zero(); 3];
                p[axis] = Jet::constant(sign);
                p[(axis + 1) % 3] = u[0];
                p[(axis + 2) % 3] = u[1];
                let n = (p[0].square() + p[1].square() + p[2].square()).sqrt();
                [p[0] / n * axes[0], p[1] / n * axes[1], p[2] / n * axes[2]]
            });
            let label = format!("face {}{}", if sign > 0.0 { '+' } else { '-' }, ['x', 'y', 'z'][axis]);
            charts.push(Chart::new(2, 3, Domain::rect([-1.0, -1.0], [1.0, 1.0], [false, false]), label, map));
        }
    }
    let mut s = axes;
    s.sort_by(f64::total_cmp);
    let reach = s[0] * s[0] / s[2];
    let label = if name == "sphere" { format!("sphere({a})") } else { format!("ellipsoid({a},{b},{c})") };
    let expected = if s[0] < s[1] { Some(1) } else { None };
    Ok(Scenario::new(label, charts, meta(2, 3, Some(reach), 2.0 * s[2], expected)))
}

pub fn torus(big_r: f64, r: f64) -> Result<Scenario> {
    if !(big_r > r && r > 0.0) {
        return Err(Error::Scenario("torus needs R > r > 0".into()));
    }
    let map: ChartFn = Arc::new(move |u: [Jet; 2]| {
        let ring = u[1].cos() * r + big_r;
        [ring * u[0].cos(), ring * u[0].sin(), u[1].sin() * r]
    });
    let dom = Domain::rect([0.0, 0.0], [2.0 * PI, 2.0 * PI], [true, true]);
    let label = format!("torus({big_r},{r})");
    let chart = Chart::new(2, 3, dom, label.clone(), map);
    Ok(Scenario::new(label, vec![chart], meta(2, 3, Some(r.min(big_r - r)), 2.0 * (big_r + r), None)))
}

/// Closure of the cubic example. The closed curve is `y² = G(x)` with
/// `G = (1 + a·x + x³)²` on |x| ≤ 0.3, blended with the C² quintic
/// smoothstep into the ellipse `y² = 1 - (x/1.3)²` on the left (over
/// [-0.75, -0.3]) and into `y² = 4(1 - ((x-3)/3.3)²)` on the right (over
/// [0.3, 0.8]). It is parameterized by `x = c + A cos θ`,
/// `y = A sin θ · sqrt(K(x))` with `G = (x - x_L)(x_R - x)·K`.
pub mod cubic {
    use super::*;

    pub const WINDOW: f64 = 0.3;
    pub const LEFT_BLEND: f64 = -0.75;
    pub const RIGHT_BLEND: f64 = 0.8;
    pub const LEFT_A: f64 = 1.3;
    pub const LEFT_B: f64 = 1.0;
    pub const RIGHT_C: f64 = 3.0;
    pub const RIGHT_A: f64 = 3.3;
    pub const RIGHT_B: f64 = 2.0;
    pub const X_L: f64 = -LEFT_A;
    pub const X_R: f64 = RIGHT_C + RIGHT_A;
    pub const CENTER: f64 = 0.5 * (X_L + X_R);
    pub const HALF: f64 = 0.5 * (X_R - X_L);

    /// `K(x)` as a jet.
    pub fn k_of(x: Jet, a: f64) -> Jet {
        let q = (x - X_L) * (X_R - x);
        let left_k = || (LEFT_A - x) / (X_R - x) * (LEFT_B * LEFT_B / (LEFT_A * LEFT_A));
        let right_k = || (x - (RIGHT_C - RIGHT_A)) / (x - X_L) * (RIGHT_B * RIGHT_B / (RIGHT_A * RIGHT_A));
        let cubic_g = || ((x * a + 1.0) + x.powi(3)).square();
        if x.v <= LEFT_BLEND {
            left_k()
        } else if x.v >= RIGHT_BLEND {
            right_k()
        } else if x.v < 0.0 {
            let beta = smoothstep((x - LEFT_BLEND) / (-WINDOW - LEFT_BLEND));
            let gl = left_k() * q;
            (beta * cubic_g() + (1.0 - beta) * gl) / q
        } else {
            let beta = 1.0 - smoothstep((x - WINDOW) / (RIGHT_BLEND - WINDOW));
            let gr = right_k() * q;
            (beta * cubic_g() + (1.0 - beta) * gr) / q
        }
    }

    pub fn chart_fn(a: f64) -> ChartFn {
        Arc::new(move |u: [Jet; 2]| {
            let x = u[0].cos() * HALF + CENTER;
            let y = u[0].sin() * HALF * k_of(x, a).sqrt();
            [x, y, Jet::constant(0.0)]
        })
    }

    /// Parameter of the upper-branch point above `x` (valid for |x| < A).
    #[cfg(test)]
    pub fn theta_upper(x: f64) -> f64 {
        ((x - CENTER) / HALF).acos()
    }
}

pub fn paper_cubic_with(a: f64) -> Result<Scenario> {
    let label = if a == 0.0 { "paper_cubic".to_string() } else { format!("paper_cubic_perturbed({a})") };
    let chart = periodic_curve(&label, cubic::chart_fn(a));
    let pts: Vec<_> = chart.parameter_grid(1024).into_iter().map(|u| chart.eval(u)).collect();
    // z0 = (0,0) and the right-cap center (3,0); the perturbation removes z0.
    let expected = if a == 0.0 { Some(2) } else if a.abs() <= 0.1 { Some(1) } else { None };
    let mut md = meta(1, 2, None, diameter(&pts), expected);
    md.notes.push(format!(
        "y = ±(1 + {a}·x + x³) exactly on |x| ≤ {}; C² quintic blend into ellipse caps outside (left cap semi-axes {}×{}, right cap centered at x = {} with semi-axes {}×{})",
        cubic::WINDOW,
        cubic::LEFT_A,
        cubic::LEFT_B,
        cubic::RIGHT_C,
        cubic::RIGHT_A,
        cubic::RIGHT_B
    ));
    Ok(Scenario::new(label, vec![chart], md))
}

fn want(params: &[f64], n: usize, name: &str) -> Result<()> {
    if params.len() == n {
        Ok(())
    } else {
        Err(Error::Scenario(format!("{name} takes {n} parameter(s), got {}", params.len())))
    }
}

/// Built-in scenario by name.
pub fn builtin(name: &str, params: &[f64]) -> Result<Scenario> {
    match name {
        "circle" => {
            want(params, 1, name)?;
            circle(params[0])
        }
        "ellipse" => {
            want(params, 2, name)?;
            ellipse(params[0], params[1])
        }
        "ellipsoid" => {
            want(params, 3, name)?;
            ellipsoid(params[0], params[1], params[2])
        }
        "sphere" => {
            want(params, 1, name)?;
            sphere(params[0])
        }
        "torus" => {
            want(params, 2, name)?;
            torus(params[0], params[1])
        }
        "paper_cubic" => {
            want(params, 0, name)?;
            paper_cubic_with(0.0)
        }
        "paper_cubic_perturbed" => {
            want(params, 1, name)?;
            paper_cubic_with(params[0])
        }
        other => Err(Error::Scenario(format!("unknown scenario '{other}'"))),
    }
}

/// Parses `name` or `name:p1,p2,...`.
pub fn parse_scenario_spec(spec: &str) -> Result<Scenario> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n.trim(), r.trim()),
        None => (spec.trim(), ""),
    };
    let params = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Scenario(format!("bad parameter '{t}': {e}"))))
            .collect::<Result<Vec<_>>>()?
    };
    builtin(name, &params)
}

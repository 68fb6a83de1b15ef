//! JSON scenario files.
//!
//! ```json
//! {"name": "wobbly", "m": 1, "D": 2,
//!  "charts": [{"domain": {"lo": [0], "hi": [6.283185307179586], "periodic": [true]},
//!              "kind": "polynomial_trig",
//!              "terms": [[{"c": 2.0, "w": 1.0}],
//!                        [{"c": 1.0, "w": 1.0, "phi": -1.5707963267948966}]]}],
//!  "reach": null, "diameter": 4.0}
//! ```
//!
//! A `polynomial_trig` chart lists, per ambient coordinate, terms
//! `c · Π_a u_a^p_a · cos(w_a u_a + phi_a)`. `p`, `w` and `phi` accept a scalar
//! (applied to the first parameter; the second then contributes a factor 1)
//! or one entry per parameter. A `builtin` chart names a registry scenario
//! and picks one of its charts.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Chart, ChartFn, Domain, Scenario, ScenarioMeta};
use crate::error::{Error, Result};
use crate::jet::Jet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerParam {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerParam {
    fn get(&self, a: usize, default: f64) -> f64 {
        match self {
            PerParam::Scalar(v) => {
                if a == 0 {
                    *v
                } else {
                    default
                }
            }
            PerParam::List(v) => v.get(a).copied().unwrap_or(default),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub c: f64,
    #[serde(default)]
    pub p: Option<PerParam>,
    #[serde(default)]
    pub w: Option<PerParam>,
    #[serde(default)]
    pub phi: Option<PerParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub periodic: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub domain: DomainSpec,
    pub kind: String,
    #[serde(default)]
    pub terms: Vec<Vec<Term>>,
    /// Registry name for `builtin` charts.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: Vec<f64>,
    /// Chart index inside the builtin scenario.
    #[serde(default)]
    pub chart: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub m: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub charts: Vec<ChartSpec>,
    #[serde(default, deserialize_with = "reach_or_unknown")]
    pub reach: Option<f64>,
    pub diameter: f64,
}

fn reach_or_unknown<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum R {
        Num(f64),
        Text(String),
    }
    match Option::<R>::deserialize(de)? {
        None => Ok(None),
        Some(R::Num(v)) => Ok(Some(v)),
        Some(R::Text(t)) if t == "unknown" => Ok(None),
        Some(R::Text(t)) => Err(serde::de::Error::custom(format!("reach must be a number or \"unknown\", got '{t}'"))),
    }
}

fn term_jet(t: &Term, u: &[Jet; 2], m: usize) -> Jet {
    let mut acc = Jet::constant(t.c);
    for (a, ua) in u.iter().enumerate().take(m) {
        let p = t.p.as_ref().map_or(0.0, |v| v.get(a, 0.0));
        let w = t.w.as_ref().map_or(0.0, |v| v.get(a, 0.0));
        let phi = t.phi.as_ref().map_or(0.0, |v| v.get(a, 0.0));
        if p != 0.0 {
            acc = acc * ua.powi(p.round() as i32);
        }
        if w != 0.0 || phi != 0.0 {
            acc = acc * (*ua * w + phi).cos();
        }
    }
    acc
}

fn validate_terms(terms: &[Vec<Term>]) -> Result<()> {
    for coord in terms {
        for t in coord {
            if let Some(p) = &t.p {
                let ps = match p {
                    PerParam::Scalar(v) => vec![*v],
                    PerParam::List(v) => v.clone(),
                };
                if ps.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::Scenario("term powers must be nonnegative integers".into()));
                }
            }
        }
    }
    Ok(())
}

fn build_chart(spec: &ChartSpec, m: usize, d: usize) -> Result<Chart> {
    let dom = &spec.domain;
    if dom.lo.len() != m || dom.hi.len() != m {
        return Err(Error::Scenario(format!("domain must have {m} bounds")));
    }
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    let mut per = [false; 2];
    for a in 0..m {
        lo[a] = dom.lo[a];
        hi[a] = dom.hi[a];
        per[a] = dom.periodic.get(a).copied().unwrap_or(false);
        if !(hi[a] > lo[a]) {
            return Err(Error::Scenario("empty chart domain".into()));
        }
    }
    let domain = Domain::rect(lo, hi, per);
    match spec.kind.as_str() {
        "polynomial_trig" => {
            if spec.terms.len() != d {
                return Err(Error::Scenario(format!("need {d} coordinate term lists, got {}", spec.terms.len())));
            }
            validate_terms(&spec.terms)?;
            let terms = spec.terms.clone();
            let map: ChartFn = Arc::new(move |u: [Jet; 2]| {
                let mut out = [Jet::constant(0.0); 3];
                for (i, coord) in terms.iter().enumerate() {
                    for t in coord {
                        out[i] = out[i] + term_jet(t, &u, m);
                    }
                }
                out
            });
            Ok(Chart::new(m, d, domain, "polynomial_trig", map))
        }
        "builtin" => {
            let name = spec.builtin.as_deref().ok_or_else(|| Error::Scenario("builtin chart needs a 'builtin' name".into()))?;
            let sc = super::builtin(name, &spec.params)?;
            let ch = sc
                .charts
                .get(spec.chart)
                .ok_or_else(|| Error::Scenario(format!("{name} has no chart {}", spec.chart)))?;
            if ch.m != m || ch.dim != d {
                return Err(Error::Scenario(format!("{name} chart dimensions do not match m={m}, D={d}")));
            }
            Ok(Chart::new(m, d, domain, ch.label.clone(), ch.map().clone()))
        }
        other => Err(Error::Scenario(format!("unknown chart kind '{other}'"))),
    }
}

/// Builds a scenario from its JSON description.
pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| Error::Scenario(format!("invalid scenario JSON: {e}")))?;
    if !(1..=2).contains(&spec.m) || !(2..=3).contains(&spec.d) || spec.m >= spec.d {
        return Err(Error::Scenario(format!("unsupported dimensions m={}, D={}", spec.m, spec.d)));
    }
    if spec.charts.is_empty() {
        return Err(Error::Scenario("scenario has no charts".into()));
    }
    if let Some(r) = spec.reach {
        if !(r > 0.0) {
            return Err(Error::Scenario("reach must be positive".into()));
        }
    }
    let charts = spec.charts.iter().map(|c| build_chart(c, spec.m, spec.d)).collect::<Result<Vec<_>>>()?;
    let meta = ScenarioMeta {
        intrinsic_dim: spec.m,
        ambient_dim: spec.d,
        reach: spec.reach,
        diameter: spec.diameter,
        expected_critical: None,
        notes: vec!["loaded from JSON".into()],
    };
    Ok(Scenario::new(spec.name, charts, meta))
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    scenario_from_json(&text)
}

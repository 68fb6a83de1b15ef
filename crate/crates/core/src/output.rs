//! JSON, CSV and SVG emitters for experiment results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{CounterexampleReport, OffsetTopologyScan, PerturbationStudy, SamplingStudy};

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io(path, e))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct SamplingCsvRow {
    pub eps: f64,
    pub n_sample: usize,
    pub delta: f64,
    pub covering_radius: f64,
    pub n_critical: usize,
    pub n_near: usize,
    pub n_far: usize,
    pub n_unclassified: usize,
    pub max_near_d_m: Option<f64>,
    pub max_far_distance: Option<f64>,
    pub near_slope: Option<f64>,
    pub far_slope: Option<f64>,
    pub c1_hat: Option<f64>,
    pub c4_hat: Option<f64>,
    pub c5_hat: Option<f64>,
    pub mu_bound_violations: usize,
    pub one_per_ball: bool,
    pub count_bound: bool,
}

pub fn sampling_rows(st: &SamplingStudy) -> Vec<SamplingCsvRow> {
    st.runs
        .iter()
        .map(|r| SamplingCsvRow {
            eps: r.eps,
            n_sample: r.n_sample,
            delta: r.delta,
            covering_radius: r.covering_radius,
            n_critical: r.za.len(),
            n_near: r.near_manifold.len(),
            n_far: r.far_matched.len(),
            n_unclassified: r.unclassified.len(),
            max_near_d_m: r.max_near_d_m,
            max_far_distance: r.max_far_distance,
            near_slope: st.near_fit.as_ref().map(|f| f.slope),
            far_slope: st.far_fit.as_ref().map(|f| f.slope),
            c1_hat: st.constants.c1_hat,
            c4_hat: st.constants.c4_hat,
            c5_hat: st.constants.c5_hat,
            mu_bound_violations: r.mu_bound_violations,
            one_per_ball: r.ball_checks.iter().all(|b| b.disjoint && b.all_nonempty),
            count_bound: r.ball_checks.iter().all(|b| b.count_bound_holds),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleCsvRow {
    pub x: f64,
    pub px: f64,
    pub projection_error: f64,
    pub gradient_norm: f64,
    pub gradient_ratio: Option<f64>,
    pub distance_ratio: Option<f64>,
    pub in_band: Option<bool>,
}

pub fn counterexample_rows(r: &CounterexampleReport) -> Vec<CounterexampleCsvRow> {
    r.rows
        .iter()
        .map(|w| CounterexampleCsvRow {
            x: w.x,
            px: w.p[0],
            projection_error: w.projection_error,
            gradient_norm: w.gradient_norm,
            gradient_ratio: w.gradient_ratio,
            distance_ratio: w.distance_ratio,
            in_band: w.in_band,
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationCsvRow {
    pub amplitude: f64,
    pub n_base: usize,
    pub n_perturbed: usize,
    pub bijection: bool,
    pub max_displacement: Option<f64>,
    pub conditions_overall: bool,
    pub failed_conditions: String,
    pub vanished: Option<bool>,
}

pub fn perturbation_rows(st: &PerturbationStudy) -> Vec<PerturbationCsvRow> {
    st.runs
        .iter()
        .map(|r| PerturbationCsvRow {
            amplitude: r.amplitude,
            n_base: r.n_base,
            n_perturbed: r.n_perturbed,
            bijection: r.bijection,
            max_displacement: r.max_displacement,
            conditions_overall: r.conditions_overall,
            failed_conditions: r.failed_conditions.join(";"),
            vanished: r.probe.as_ref().map(|p| p.vanished),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct OffsetCsvRow {
    pub offset: f64,
    pub betti0: usize,
    pub betti1: usize,
}

pub fn offset_rows(sc: &OffsetTopologyScan) -> Vec<OffsetCsvRow> {
    sc.offsets.iter().zip(&sc.betti0).zip(&sc.betti1).map(|((o, b0), b1)| OffsetCsvRow { offset: *o, betti0: *b0, betti1: *b1 }).collect()
}

// ---------------------------------------------------------------------------
// SVG

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Markers,
    Line,
    /// Piecewise constant, jumping at each new x.
    Steps,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Vertical reference lines.
    pub marks: Vec<f64>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(vals: impl Iterator<Item = f64>, log: bool) -> Axis {
        let vs: Vec<f64> = vals.filter(|v| v.is_finite() && (!log || *v > 0.0)).map(|v| if log { v.log10() } else { v }).collect();
        let (mut lo, mut hi) = vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        } else {
            let pad = 0.05 * (hi - lo);
            (lo, hi) = (lo - pad, hi + pad);
        }
        Axis { log, lo, hi }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        let t = if self.log {
            if v > 0.0 {
                v.log10()
            } else {
                return None;
            }
        } else {
            v
        };
        Some((t - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i64..=self.hi as i64).map(|e| (10f64.powi(e as i32), format!("1e{e}"))).collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let dec = (-step.log10().floor()).max(0.0) as usize;
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last)
                .map(|k| {
                    let v = k as f64 * step;
                    (v, format!("{v:.dec$}"))
                })
                .collect()
        }
    }
}

/// SVG 1.1 document for the plot.
pub fn render_svg(plot: &Plot) -> String {
    let ax = Axis::new(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(plot.marks.iter().copied()), plot.log_x);
    let ay = Axis::new(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), plot.log_y);
    let (pw, ph) = (W - ML - MR, H - MT - MB);
    let px = |v: f64| ax.frac(v).map(|f| ML + f * pw);
    let py = |v: f64| ay.frac(v).map(|f| MT + (1.0 - f) * ph);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(&plot.title));
    let _ = writeln!(s, r#"<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, label) in ax.ticks() {
        if let Some(x) = px(v) {
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{MT}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##, MT + ph);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MT + ph + 16.0, esc(&label));
        }
    }
    for (v, label) in ay.ticks() {
        if let Some(y) = py(v) {
            let _ = writeln!(s, r##"<line x1="{ML}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, ML + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, ML - 6.0, y + 4.0, esc(&label));
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ML + pw / 2.0, H - 12.0, esc(&plot.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        MT + ph / 2.0,
        esc(&plot.y_label)
    );
    for m in &plot.marks {
        if let Some(x) = px(*m) {
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{MT}" x2="{x:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##, MT + ph);
        }
    }
    for (k, ser) in plot.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = ser.points.iter().filter_map(|(x, y)| Some((px(*x)?, py(*y)?))).collect();
        match ser.style {
            Style::Markers => {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
            Style::Line | Style::Steps => {
                let mut d = String::new();
                for (i, (x, y)) in pts.iter().enumerate() {
                    if i == 0 {
                        let _ = write!(d, "M{x:.2},{y:.2}");
                    } else if ser.style == Style::Steps {
                        let _ = write!(d, " H{x:.2} V{y:.2}");
                    } else {
                        let _ = write!(d, " L{x:.2},{y:.2}");
                    }
                }
                let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            }
        }
        let ly = MT + 14.0 + 16.0 * k as f64;
        let lx = ML + pw - 170.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.2}">{}</text>"#, lx + 14.0, esc(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fit_line(fit: &crate::fit::ScalingFit, label: &str) -> Series {
    let lo = fit.xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fit.xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Series { label: format!("{label} fit, slope {:.3}", fit.slope), points: vec![(lo, fit.predict(lo)), (hi, fit.predict(hi))], style: Style::Line }
}

pub fn sampling_plot(st: &SamplingStudy) -> Plot {
    let mut series = vec![
        Series {
            label: "max d_M (near)".into(),
            points: st.runs.iter().filter_map(|r| r.max_near_d_m.map(|d| (r.eps, d))).collect(),
            style: Style::Markers,
        },
        Series {
            label: "max d_Z (far)".into(),
            points: st.runs.iter().filter_map(|r| r.max_far_distance.map(|d| (r.eps, d))).collect(),
            style: Style::Markers,
        },
    ];
    if let Some(f) = &st.near_fit {
        series.push(fit_line(f, "near"));
    }
    if let Some(f) = &st.far_fit {
        series.push(fit_line(f, "far"));
    }
    Plot {
        title: format!("Sampling study: {}", st.scenario),
        x_label: "eps".into(),
        y_label: "distance".into(),
        log_x: true,
        log_y: true,
        series,
        marks: Vec::new(),
    }
}

pub fn counterexample_plot(r: &CounterexampleReport) -> Plot {
    let pts: Vec<(f64, f64)> = r.rows.iter().filter(|w| w.x > 0.0).map(|w| (w.x, w.gradient_norm)).collect();
    let mut series = vec![
        Series { label: "|grad d_M(p(x))|".into(), points: pts.clone(), style: Style::Markers },
        Series { label: "3x^2".into(), points: pts.iter().map(|(x, _)| (*x, 3.0 * x * x)).collect(), style: Style::Line },
    ];
    if let Some(f) = r.mu_scan.as_ref().and_then(|m| m.fit.as_ref()) {
        series.push(Series {
            label: format!("core-axis scan, slope {:.3}", f.slope),
            points: f.xs.iter().copied().zip(f.ys.iter().copied()).collect(),
            style: Style::Markers,
        });
    }
    Plot {
        title: format!("Gradient decay near z0: {}", r.scenario),
        x_label: "x / distance to z0".into(),
        y_label: "gradient norm".into(),
        log_x: true,
        log_y: true,
        series,
        marks: Vec::new(),
    }
}

pub fn perturbation_plot(st: &PerturbationStudy) -> Plot {
    Plot {
        title: format!("Perturbation study: {}", st.scenario),
        x_label: "amplitude".into(),
        y_label: "max displacement".into(),
        log_x: false,
        log_y: false,
        series: vec![Series {
            label: "matched displacement".into(),
            points: st.runs.iter().filter_map(|r| r.max_displacement.map(|d| (r.amplitude, d))).collect(),
            style: Style::Markers,
        }],
        marks: Vec::new(),
    }
}

pub fn offsets_plot(sc: &OffsetTopologyScan) -> Plot {
    let series = |label: &str, ys: &[usize]| Series {
        label: label.into(),
        points: sc.offsets.iter().zip(ys).map(|(o, b)| (*o, *b as f64)).collect(),
        style: Style::Steps,
    };
    Plot {
        title: format!("Offset Betti numbers: {}", sc.scenario),
        x_label: "offset".into(),
        y_label: "Betti number".into(),
        log_x: false,
        log_y: false,
        series: vec![series("betti0", &sc.betti0), series("betti1", &sc.betti1)],
        marks: sc.critical_values.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let p = Plot {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series { label: "s".into(), points: vec![(0.1, 0.01), (0.01, 0.0001), (0.0, 1.0)], style: Style::Markers },
                Series { label: "t".into(), points: vec![(0.1, 0.01), (0.01, 0.0001)], style: Style::Line },
            ],
            marks: vec![0.05],
        };
        let s = render_svg(&p);
        assert!(s.starts_with("<?xml"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("1e-2"));
    }

    #[test]
    fn linear_ticks_are_round() {
        let a = Axis::new([0.0, 1.0].into_iter(), false);
        let t = a.ticks();
        assert!(t.iter().any(|(v, l)| *v == 0.0 && l == "0.0"));
        assert!(t.iter().any(|(_, l)| l == "0.5"));
        assert!(t.iter().all(|(v, _)| (v * 2.0).fract() == 0.0));
    }
}

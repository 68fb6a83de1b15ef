use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use critfield::conditions::{evaluate_conditions, ConditionOptions};
use critfield::critical::{manifold_critical_points, CriticalSet};
use critfield::experiments::{
    offset_betti_scan, reproduce_counterexample_p4, run_perturbation_study, run_sampling_study, PerturbationOptions,
    SamplingOptions,
};
use critfield::manifold::{load_scenario_file, parse_scenario_spec, Scenario, BUILTIN_NAMES};
use critfield::output::{self, render_svg, write_csv, write_json, write_text};
use critfield::{Error, Result};

const SCENARIO_HELP: &str = "Scenario shorthand `name[:p1,p2,...]` or a path to a JSON scenario file. \
Built-ins: circle:r, ellipse:a,b, ellipsoid:a,b,c, sphere:r, torus:R,r, paper_cubic, paper_cubic_perturbed:amp";

/// Critical points of distance functions, genericity checks and experiments.
///
/// Exit codes: 0 success, 1 error, 2 a checked property failed.
/// CRITFIELD_THREADS caps the worker thread count.
#[derive(Parser, Debug)]
#[command(name = "critfield", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Recorded in run.json; every computation is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical points and conditions P1-P4 of a scenario.
    Analyze(AnalyzeArgs),
    /// Farthest point samples at several eps and their critical points.
    SampleStudy(SampleArgs),
    /// Gradient decay and vanishing B-form at the origin of paper_cubic.
    Counterexample,
    /// Critical points under bump perturbations of given amplitudes.
    Perturb(PerturbArgs),
    /// Betti numbers of offsets of a closed planar curve.
    Offsets(OffsetArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, help = SCENARIO_HELP)]
    scenario: String,
    /// Skip the core-axis scans.
    #[arg(long)]
    no_mu_scan: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, help = SCENARIO_HELP, default_value = "ellipse:2,1")]
    scenario: String,
    /// Strictly decreasing eps values.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
    eps: Vec<f64>,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long, help = SCENARIO_HELP, default_value = "ellipse:2,1")]
    scenario: String,
    /// Bump amplitudes; for paper_cubic the linear-term amplitude.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    amp: Vec<f64>,
}

#[derive(Args, Debug)]
struct OffsetArgs {
    #[arg(long, help = SCENARIO_HELP, default_value = "ellipse:2,1")]
    scenario: String,
    /// Grid step.
    #[arg(long, default_value_t = 0.01)]
    grid: f64,
    /// Offsets to scan; default from 2·grid to 1.2 times the largest critical value.
    #[arg(long, value_delimiter = ',')]
    offsets: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct CriticalPointsFile<'a> {
    schema_version: &'a str,
    scenario: &'a str,
    #[serde(flatten)]
    set: &'a CriticalSet,
}

#[derive(Serialize)]
struct RunConfig<'a> {
    schema_version: &'a str,
    command: &'a str,
    scenario: Option<&'a str>,
    seed: u64,
    eps: Option<&'a [f64]>,
    amp: Option<&'a [f64]>,
    grid: Option<f64>,
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if spec.ends_with(".json") || path.is_file() {
        load_scenario_file(path)
    } else {
        parse_scenario_spec(spec).map_err(|e| match e {
            Error::Scenario(m) => Error::Scenario(format!("{m} (built-ins: {})", BUILTIN_NAMES.join(", "))),
            other => other,
        })
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CRITFIELD_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("CRITFIELD_THREADS = '{v}' is not a count")))?;
        if n == 0 {
            return Err(Error::InvalidArgument("CRITFIELD_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn check_positive(name: &str, vals: &[f64]) -> Result<()> {
    if vals.is_empty() {
        return Err(Error::InvalidArgument(format!("--{name} needs at least one value")));
    }
    if let Some(v) = vals.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("--{name} values must be positive, got {v}")));
    }
    Ok(())
}

fn status(ok: bool) -> u8 {
    if ok {
        0
    } else {
        2
    }
}

fn run(cli: &Cli) -> Result<u8> {
    configure_threads()?;
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let mut cfg = RunConfig {
        schema_version: critfield::conditions::SCHEMA_VERSION,
        command: "",
        scenario: None,
        seed: cli.seed,
        eps: None,
        amp: None,
        grid: None,
    };
    let code = match &cli.command {
        Command::Analyze(a) => {
            cfg.command = "analyze";
            cfg.scenario = Some(&a.scenario);
            let sc = load_scenario(&a.scenario)?;
            let cs = manifold_critical_points(&sc)?;
            let opts = ConditionOptions { mu_scan: !a.no_mu_scan, ..ConditionOptions::default() };
            let rep = evaluate_conditions(&sc, &cs, &opts);
            let file = CriticalPointsFile { schema_version: critfield::conditions::SCHEMA_VERSION, scenario: &sc.name, set: &cs };
            write_json(&out.join("critical_points.json"), &file)?;
            write_json(&out.join("conditions.json"), &rep)?;
            println!("{}: {} critical point(s), {} suspect(s), overall={}", sc.name, cs.len(), cs.suspects.len(), rep.overall);
            if !rep.overall {
                println!("failed: {}", rep.failed().join(","));
            }
            status(rep.overall)
        }
        Command::SampleStudy(a) => {
            cfg.command = "sample-study";
            cfg.scenario = Some(&a.scenario);
            cfg.eps = Some(&a.eps);
            check_positive("eps", &a.eps)?;
            let sc = load_scenario(&a.scenario)?;
            let st = run_sampling_study(&sc, &a.eps, &SamplingOptions::default())?;
            write_json(&out.join("sampling.json"), &st)?;
            write_csv(&out.join("sampling.csv"), &output::sampling_rows(&st))?;
            write_text(&out.join("sampling.svg"), &render_svg(&output::sampling_plot(&st)))?;
            println!(
                "{}: near slope {:?}, far slope {:?}, unclassified {}, pass={}",
                st.scenario,
                st.near_fit.as_ref().map(|f| f.slope),
                st.far_fit.as_ref().map(|f| f.slope),
                st.unclassified_total,
                st.pass
            );
            status(st.pass)
        }
        Command::Counterexample => {
            cfg.command = "counterexample";
            let r = reproduce_counterexample_p4()?;
            write_json(&out.join("counterexample.json"), &r)?;
            write_csv(&out.join("counterexample.csv"), &output::counterexample_rows(&r))?;
            write_text(&out.join("counterexample.svg"), &render_svg(&output::counterexample_plot(&r)))?;
            println!("x, |grad|/(3x^2)");
            for row in &r.rows {
                if let Some(q) = row.gradient_ratio {
                    println!("{:e}, {q:.6}", row.x);
                }
            }
            println!("B-form max |entry| {:?}, scan slope {:?}, pass={}", r.b_max_abs, r.mu_slope, r.pass);
            status(r.pass)
        }
        Command::Perturb(a) => {
            cfg.command = "perturb";
            cfg.scenario = Some(&a.scenario);
            cfg.amp = Some(&a.amp);
            if a.amp.is_empty() || a.amp.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("--amp needs finite values".into()));
            }
            let sc = load_scenario(&a.scenario)?;
            let st = run_perturbation_study(&sc, &a.amp, &PerturbationOptions::default())?;
            write_json(&out.join("perturbation.json"), &st)?;
            write_csv(&out.join("perturbation.csv"), &output::perturbation_rows(&st))?;
            write_text(&out.join("perturbation.svg"), &render_svg(&output::perturbation_plot(&st)))?;
            for r in &st.runs {
                println!(
                    "amp {}: {} -> {} critical point(s), bijection={}, max displacement {:?}",
                    r.amplitude, r.n_base, r.n_perturbed, r.bijection, r.max_displacement
                );
                if let Some(w) = &r.witness {
                    println!("  {w}");
                }
            }
            println!("stable={}", st.stable);
            status(st.stable)
        }
        Command::Offsets(a) => {
            cfg.command = "offsets";
            cfg.scenario = Some(&a.scenario);
            cfg.grid = Some(a.grid);
            check_positive("grid", &[a.grid])?;
            let sc = load_scenario(&a.scenario)?;
            let scan = offset_betti_scan(&sc, a.grid, a.offsets.as_deref())?;
            write_json(&out.join("offsets.json"), &scan)?;
            write_csv(&out.join("offsets.csv"), &output::offset_rows(&scan))?;
            write_text(&out.join("offsets.svg"), &render_svg(&output::offsets_plot(&scan)))?;
            for c in &scan.changes {
                println!("change at {:.4}: betti0 {:?}, betti1 {:?}", c.radius, c.betti0, c.betti1);
            }
            for w in &scan.warnings {
                eprintln!("warning: {w}");
            }
            status(scan.changes_at_critical_values)
        }
    };
    write_json(&out.join("run.json"), &cfg)?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

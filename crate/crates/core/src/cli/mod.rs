//! The `cpolymer` command line.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 configuration
//! error, 3 undetermined region under `--strict`.

pub mod config;
pub mod diagram;
pub mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::mc::{self, ExperimentPlan, ExperimentRow, Functional, McError};
use crate::phase::{
    classify, classify_indep_closed_form, critical_set, CriticalOptions, PhaseReport, Region, EPS_ANALYTIC, EPS_GRID,
};
use crate::rng::Stream;
use crate::sim::{self, EvalOptions, SimError};
use config::{ConfigError, FunctionalName, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNDETERMINED: i32 = 3;

const DEFAULT_GRID: &str = "0:2:200,0:2:200";

#[derive(Parser, Debug)]
#[command(name = "cpolymer", version, about = "Directed polymers on trees with complex weights")]
#[command(allow_negative_numbers = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify one parameter point and print its predicted free energy.
    PhasePoint(CommonArgs),
    /// Classify a (beta, gamma) grid; writes CSV and a PPM raster.
    Diagram(DiagramArgs),
    /// Run a Monte Carlo experiment and write one CSV row.
    Simulate(SimulateArgs),
    /// Run the self-check suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gaussian | lognormal-uniform | rademacher-phase | constant
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Mean of the two-point phase (rademacher-phase).
    #[arg(long)]
    pub t: Option<f64>,
    /// Constant weight as RE,IM (constant).
    #[arg(long, value_name = "RE,IM")]
    pub c: Option<String>,
    #[arg(long)]
    pub b: Option<u32>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "budget-nodes")]
    pub budget_nodes: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with code 3 when the region is undetermined.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct DiagramArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// BLO:BHI:BSTEPS,GLO:GHI:GSTEPS
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// free-energy | w-free-energy | abs-moment | ratio4
    #[arg(long)]
    pub functional: Option<String>,
    /// Exponent for abs-moment.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Phase resamples per radius field for ratio4.
    #[arg(long = "phase-resamples")]
    pub phase_resamples: Option<usize>,
    /// Per-depth trace of the first replica, as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated subset of: oracle, moments, one-step, critical, pz, ratio4
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: bool,
}

fn common_overrides(a: &CommonArgs) -> Result<Map<String, Value>, ConfigError> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    if let Some(v) = &a.model {
        put("model", json!(v));
    }
    if let Some(v) = a.beta {
        put("beta", json!(v));
    }
    if let Some(v) = a.gamma {
        put("gamma", json!(v));
    }
    if let Some(v) = a.t {
        put("t", json!(v));
    }
    if let Some(c) = &a.c {
        let (re, im) = c.split_once(',').unwrap_or((c.as_str(), "0"));
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError::Invalid(format!("bad constant '{c}'")))
        };
        put("re", json!(parse(re)?));
        put("im", json!(parse(im)?));
    }
    if let Some(v) = a.b {
        put("b", json!(v));
    }
    if let Some(v) = a.n {
        put("n", json!(v));
    }
    if let Some(v) = a.replicas {
        put("replicas", json!(v));
    }
    if let Some(v) = a.seed {
        put("seed", json!(v));
    }
    if let Some(v) = a.budget_nodes {
        put("budget-nodes", json!(v));
    }
    if let Some(v) = &a.out {
        put("out", json!(v));
    }
    if a.strict {
        put("strict", json!(true));
    }
    Ok(m)
}

fn load(common: &CommonArgs, extra: Map<String, Value>) -> Result<RunConfig, ConfigError> {
    let mut m = common_overrides(common)?;
    m.extend(extra);
    RunConfig::load(common.config.as_deref(), m)
}

/// JSON number, or a string for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Generic and closed-form classification of the configured point.
pub fn phase_point_json(cfg: &RunConfig) -> Result<(PhaseReport, Value), String> {
    let env = cfg.environment().map_err(|e| e.to_string())?;
    let report = classify(&env, EPS_ANALYTIC).map_err(|e| e.to_string())?;
    let mut out = json!({
        "model": cfg.model,
        "b": cfg.b,
        "generic": report,
    });
    if let Some(f) = env.factorization() {
        let crit = critical_set(f.radius, f.phase, cfg.b, CriticalOptions::default());
        let cf = classify_indep_closed_form(f.beta, f.gamma, &crit, f.radius, f.phase, cfg.b, EPS_ANALYTIC);
        out["critical"] = serde_json::to_value(crit).expect("serializable");
        out["closed_form"] = json!({
            "region": cf.region,
            "predicted_f": num(cf.predicted_f),
            "residual": num(cf.residual),
        });
        out["agree"] = json!(report.region.same_phase(cf.region));
    }
    Ok((report, out))
}

fn cmd_phase_point(cfg: &RunConfig) -> i32 {
    let (report, value) = match phase_point_json(cfg) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let closed = value.get("closed_form").and_then(|c| c["region"].as_str()).unwrap_or("n/a");
    eprintln!(
        "region {} (closed form {}), predicted f = {:.6}",
        report.region, closed, report.predicted_f
    );
    eprintln!(
        "alpha_min = {}, condition: {} [{} vs {}]",
        report.alpha_min, report.condition_trace.condition, report.condition_trace.lhs, report.condition_trace.rhs
    );
    if value.get("agree") == Some(&json!(false)) {
        eprintln!("warning: the two classifiers disagree");
    }
    let text = serde_json::to_string(&value).expect("serializable");
    println!("{text}");
    if let Some(path) = &cfg.out {
        if let Err(e) = create(path).and_then(|mut w| writeln!(w, "{text}").and_then(|_| w.flush())) {
            eprintln!("error: {e}");
            return EXIT_CHECK_FAILED;
        }
    }
    if cfg.strict && report.region == Region::Undetermined {
        return EXIT_UNDETERMINED;
    }
    EXIT_OK
}

fn cmd_diagram(cfg: &RunConfig) -> i32 {
    let grid = cfg.grid.unwrap_or_else(|| DEFAULT_GRID.parse().expect("default grid"));
    let d = match diagram::compute(&cfg.model, grid, cfg.b, EPS_GRID) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let csv_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("diagram.csv"));
    let ppm_path = csv_path.with_extension("ppm");
    let written = create(&csv_path)
        .and_then(|mut w| diagram::write_csv(&mut w, &d).and_then(|_| w.flush()))
        .and_then(|_| create(&ppm_path))
        .and_then(|mut w| diagram::write_ppm(&mut w, &d).and_then(|_| w.flush()));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_CHECK_FAILED;
    }
    let c = &d.critical;
    eprintln!(
        "beta_0 = {:.6}, beta_c = {:.6}, gamma_0 = {:.6}, gamma_c = {:.6}",
        c.beta_0, c.beta_c, c.gamma_0, c.gamma_c
    );
    eprintln!(
        "{} cells, {} classifier disagreements; wrote {} and {}",
        d.cells.len(),
        d.disagreements().count(),
        csv_path.display(),
        ppm_path.display()
    );
    if d.cells.len() == 1 {
        let cell = &d.cells[0];
        let point = RunConfig {
            model: cfg.model.at(cell.beta, cell.gamma).expect("family"),
            out: None,
            ..cfg.clone()
        };
        return cmd_phase_point(&point);
    }
    EXIT_OK
}

fn exit_for(e: &McError) -> i32 {
    match e {
        McError::InvalidPlan(_) | McError::Sim(SimError::BudgetExceeded { .. }) => EXIT_CONFIG,
        McError::Sim(SimError::CoupledLaw) => EXIT_CONFIG,
        _ => EXIT_CHECK_FAILED,
    }
}

fn write_trace(cfg: &RunConfig, path: &Path) -> Result<(), String> {
    let env = cfg.environment().map_err(|e| e.to_string())?;
    let opts = EvalOptions {
        node_budget: cfg.budget_nodes,
        ..EvalOptions::default()
    };
    let tr = sim::trace_depths(&env, cfg.n, &Stream::new(cfg.seed, 0), &opts).map_err(|e| e.to_string())?;
    let mut w = csv::Writer::from_writer(create(path).map_err(|e| e.to_string())?);
    let res: Result<(), csv::Error> = (|| {
        w.write_record(["n", "ln_abs_z_over_n", "ln_z_abs_over_n", "ln_z_abs2_over_n", "ln_w_cond_over_2n"])?;
        for fs in &tr {
            let n = f64::from(fs.depth());
            w.write_record([
                fs.depth().to_string(),
                (fs.ln_abs_z() / n).to_string(),
                (fs.ln_z_abs() / n).to_string(),
                (fs.ln_z_abs2() / n).to_string(),
                fs.ln_w_cond().map_or_else(|| "nan".to_string(), |w| (w / (2.0 * n)).to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| e.to_string())
}

fn cmd_simulate(cfg: &RunConfig) -> i32 {
    let env = match cfg.environment() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let functional = match cfg.functional {
        FunctionalName::FreeEnergy => Functional::FreeEnergy,
        FunctionalName::WFreeEnergy => Functional::ConditionalFreeEnergy,
        FunctionalName::AbsMoment => Functional::AbsMoment(cfg.alpha),
        FunctionalName::Ratio4 => Functional::Ratio4 {
            phase_resamples: cfg.phase_resamples,
        },
    };
    let mut plan = ExperimentPlan::new(env.clone(), cfg.n, cfg.replicas, cfg.seed, functional);
    plan.node_budget = cfg.budget_nodes;
    if let Err(e) = plan.validate() {
        eprintln!("error: {e}");
        return exit_for(&e);
    }
    let est = match mc::run(&plan) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let report = classify(&env, EPS_ANALYTIC).ok();
    let row = ExperimentRow::new(&plan, &est, report.as_ref());
    eprintln!(
        "{} = {:.6} +- {:.6} (median {:.6}), predicted {:.6}",
        row.functional,
        row.mean,
        row.se,
        est.median(),
        row.predicted
    );
    let written = match &cfg.out {
        Some(p) => create(p).and_then(|w| mc::write_rows(w, &[row])),
        None => mc::write_rows(io::stdout().lock(), &[row]),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_CHECK_FAILED;
    }
    if let Some(path) = &cfg.trace {
        if let Err(e) = write_trace(cfg, path) {
            eprintln!("error: {e}");
            return EXIT_CHECK_FAILED;
        }
    }
    EXIT_OK
}

fn cmd_verify(cfg: &RunConfig, inject_fault: bool) -> i32 {
    let opts = verify::VerifyOptions {
        seed: cfg.seed,
        node_budget: cfg.budget_nodes,
        corrupt_pair_term: inject_fault,
    };
    let results = match verify::run_suite(&cfg.only, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if let Some(path) = &cfg.out {
        let written = create(path).map_err(csv::Error::from).and_then(|f| {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(["check", "pass", "detail"])?;
            for r in &results {
                w.write_record([r.name, if r.pass { "true" } else { "false" }, r.detail.as_str()])?;
            }
            w.flush()?;
            Ok(())
        });
        if let Err(e) = written {
            eprintln!("error: {e}");
            return EXIT_CHECK_FAILED;
        }
    }
    if results.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let loaded = match &cli.command {
        Command::PhasePoint(a) => load(a, Map::new()),
        Command::Diagram(a) => {
            let mut m = Map::new();
            if let Some(g) = &a.grid {
                m.insert("grid".into(), json!(g));
            }
            load(&a.common, m)
        }
        Command::Simulate(a) => {
            let mut m = Map::new();
            if let Some(f) = &a.functional {
                m.insert("functional".into(), json!(f));
            }
            if let Some(v) = a.alpha {
                m.insert("alpha".into(), json!(v));
            }
            if let Some(v) = a.phase_resamples {
                m.insert("phase-resamples".into(), json!(v));
            }
            if let Some(v) = &a.trace {
                m.insert("trace".into(), json!(v));
            }
            load(&a.common, m)
        }
        Command::Verify(a) => {
            let mut m = Map::new();
            if !a.only.is_empty() {
                m.insert("only".into(), json!(a.only));
            }
            load(&a.common, m)
        }
    };
    let cfg = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    match &cli.command {
        Command::PhasePoint(_) => cmd_phase_point(&cfg),
        Command::Diagram(_) => cmd_diagram(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Verify(a) => cmd_verify(&cfg, a.inject_fault),
    }
}

/// Parses `args` (program name first) and runs; clap usage errors map to [`EXIT_CONFIG`].
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

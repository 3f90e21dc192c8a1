//! Command-line front end: `solve`, `check`, `simulate`, `sweep`, `list-kernels`.
//!
//! Exit codes: 0 ok, 1 a check failed, 2 usage or configuration error,
//! 3 numerical failure. `SELLOPT_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::{Error, Result};
use crate::ic::{self, CheckOutcome, ICReport, IcContext, Status};
use crate::kernels::{self, Kernel};
use crate::output::{self, fmt_f64, Provenance};
use crate::revenue::{self, MyopicReport, SweepAxis, TransferRule};
use crate::solver::{self, ExpectationRule, Mode, SolveResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const THREADS_ENV: &str = "SELLOPT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sellopt",
    version,
    about = "Optimal timing for selling one object to a buyer with Markovian valuations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the optimal policy; writes the policy table, thresholds and diagnostics.
    Solve(SolveArgs),
    /// Solve, then run the incentive-compatibility diagnostics.
    Check(CheckArgs),
    /// Solve, then simulate the mechanism under truthful reporting.
    Simulate(SimulateArgs),
    /// Re-solve along a parameter axis.
    Sweep(SweepArgs),
    /// Print the built-in kernels and their parameters.
    ListKernels(ListArgs),
}

/// Options shared by every solving subcommand. Flags override the config file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<String>,
    /// Kernel parameter, `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Horizon T.
    #[arg(long = "T", visible_alias = "horizon")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// one_object or repeated_sales.
    #[arg(long, value_parser = parse_enum::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[arg(long)]
    pub n_distortion: Option<usize>,
    #[arg(long)]
    pub n_quadrature: Option<usize>,
    /// quadrature or discrete_cells.
    #[arg(long, value_parser = parse_enum::<ExpectationRule>)]
    pub expectation: Option<ExpectationRule>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated output formats (csv, json).
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<Format>)]
    pub format: Vec<Format>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Points per axis for the (report, type) pairs.
    #[arg(long)]
    pub points: Option<usize>,
    /// Discrete types for the best-response oracle.
    #[arg(long)]
    pub oracle_types: Option<usize>,
    /// Also evaluate the myopic-rule inequality.
    #[arg(long)]
    pub myopic: bool,
    /// Checks to skip: integral_monotonicity, sufficient_conditions,
    /// two_period, expost_ir, best_response.
    #[arg(long, value_delimiter = ',')]
    pub skip: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transcripts written to CSV (the first this many paths).
    #[arg(long)]
    pub keep: Option<usize>,
    /// virtual_value or envelope.
    #[arg(long, value_parser = parse_enum::<TransferRule>)]
    pub transfer_rule: Option<TransferRule>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// delta, gamma or hazard_scale.
    #[arg(long, value_parser = parse_enum::<SweepAxis>)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("parameter `{k}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

impl Common {
    /// Load the config file (if any) and apply flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(k) = &self.kernel {
            cfg.kernel.name = Some(k.clone());
        }
        for (k, v) in &self.params {
            cfg.kernel.params.insert(k.clone(), *v);
        }
        let s = &mut cfg.solve;
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.delta {
            s.delta = v;
        }
        if let Some(v) = self.mode {
            s.mode = v;
        }
        if let Some(v) = self.n_theta {
            s.n_theta = v;
        }
        if let Some(v) = self.n_distortion {
            s.n_distortion = v;
        }
        if let Some(v) = self.n_quadrature {
            s.n_quadrature = v;
        }
        if let Some(v) = self.expectation {
            s.expectation = v;
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if !self.format.is_empty() {
            cfg.output.formats = self.format.clone();
        }
        Ok(cfg)
    }
}

/// Files written, and whether a check failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub check_failed: bool,
}

struct Run {
    cfg: RunConfig,
    kernel: Arc<dyn Kernel>,
    provenance: Provenance,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(cfg: RunConfig) -> Result<Self> {
        let kernel = cfg.validate()?;
        std::fs::create_dir_all(&cfg.output.dir)?;
        let provenance = Provenance::new(cfg.hash());
        let mut run = Self {
            cfg,
            kernel,
            provenance,
            files: Vec::new(),
        };
        let text = format!("{}\n{}", run.provenance.comment(), run.cfg.to_toml_string()?);
        let path = run.path("config.toml");
        std::fs::write(&path, text)?;
        run.files.push(path);
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        if self.cfg.output.wants(Format::Json) {
            let p = self.path(name);
            output::write_json(&p, &self.provenance, data)?;
            self.files.push(p);
        }
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        if self.cfg.output.wants(Format::Csv) {
            let p = self.path(name);
            output::write_csv(&p, &self.provenance, rows)?;
            self.files.push(p);
        }
        Ok(())
    }

    fn solve(&self) -> Result<SolveResult> {
        solver::solve(self.kernel.clone(), &self.cfg.solve)
    }

    fn finish(self, check_failed: bool) -> Outcome {
        Outcome {
            files: self.files,
            check_failed,
        }
    }
}

#[derive(Serialize)]
struct SolveSummary {
    kernel: String,
    horizon: usize,
    delta: f64,
    mode: Mode,
    expected_revenue: f64,
    diagnostics: solver::Diagnostics,
}

pub fn cmd_solve(cfg: RunConfig) -> Result<Outcome> {
    let mut run = Run::new(cfg)?;
    let result = run.solve()?;
    let thresholds = solver::extract_thresholds(&result)?;
    if let Some(k1) = thresholds.first().and_then(|t| t.threshold) {
        println!("k1 = {}", fmt_f64(k1));
    }
    run.csv("policy.csv", &result.rows()?)?;
    run.json("thresholds.json", &thresholds)?;
    let summary = SolveSummary {
        kernel: result.kernel.name().to_string(),
        horizon: result.horizon(),
        delta: result.delta(),
        mode: result.mode(),
        expected_revenue: revenue::expected_value_revenue(&result, result.config.n_quadrature)?,
        diagnostics: result.diagnostics(200)?,
    };
    run.json("diagnostics.json", &summary)?;
    Ok(run.finish(false))
}

#[derive(Serialize)]
struct CheckFile {
    report: ICReport,
    myopic: Option<MyopicReport>,
}

pub fn cmd_check(cfg: RunConfig) -> Result<Outcome> {
    let mut run = Run::new(cfg)?;
    let result = run.solve()?;
    let kernel = run.kernel.clone();
    let toggles = run.cfg.checks.clone();
    let ctx = IcContext::new(&result, kernel.as_ref(), result.delta(), result.config.n_quadrature);
    let mut checks: Vec<CheckOutcome> = Vec::new();
    if toggles.integral_monotonicity {
        checks.push(ic::integral_monotonicity_check(&ctx, &toggles.plan));
    }
    if toggles.sufficient_conditions {
        checks.push(ic::sufficient_conditions_check(&ctx, &toggles.plan));
    }
    if toggles.two_period && result.horizon() == 2 {
        checks.push(ic::two_period_ic_check(&ctx, &toggles.plan));
    }
    if toggles.expost_ir {
        checks.push(ic::expost_ir_check(
            &result,
            kernel.as_ref(),
            toggles.expost_quantiles,
            100_000,
        ));
    }
    if toggles.best_response {
        let n = toggles.oracle_types;
        let (lo, hi) = kernel.support();
        let tolerance = 2.0 * (hi - lo) / n as f64;
        let transfer = |reports: &[f64]| revenue::envelope_transfer(&ctx, reports);
        checks.push(ic::best_response_oracle(
            &result,
            &transfer,
            kernel.as_ref(),
            result.delta(),
            n,
            tolerance,
        ));
    }
    let myopic = if toggles.myopic {
        Some(revenue::myopic_check(
            kernel.as_ref(),
            result.delta(),
            result.horizon(),
            &toggles.myopic_options,
        )?)
    } else {
        None
    };
    for c in &checks {
        println!("{:<24} {:?} (worst {})", c.name, c.status, fmt_f64(c.worst));
    }
    if let Some(m) = &myopic {
        println!("{:<24} {:?} (min margin {})", "myopic", m.status, fmt_f64(m.min_margin));
    }
    let report = ICReport { checks };
    let failed = report.any_failed() || myopic.as_ref().is_some_and(|m| m.status == Status::Fail);
    run.json("ic_report.json", &CheckFile { report, myopic })?;
    Ok(run.finish(failed))
}

pub fn cmd_simulate(cfg: RunConfig) -> Result<Outcome> {
    let mut run = Run::new(cfg)?;
    let result = run.solve()?;
    let sim = revenue::simulate(&result, run.kernel.as_ref(), result.delta(), &run.cfg.simulation);
    let horizon = result.horizon();
    if run.cfg.output.wants(Format::Csv) {
        let mut header: Vec<String> = ["path", "sale_period", "price", "buyer_payoff", "seller_revenue"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=horizon).map(|t| format!("theta_{t}")));
        header.extend((1..=horizon).map(|t| format!("report_{t}")));
        let rows: Vec<Vec<String>> = sim
            .transcripts
            .iter()
            .map(|tr| {
                let mut row = vec![
                    tr.path.to_string(),
                    tr.sale_period.map_or(String::new(), |s| s.to_string()),
                    fmt_f64(tr.price),
                    fmt_f64(tr.buyer_payoff),
                    fmt_f64(tr.seller_revenue),
                ];
                row.extend(tr.types.iter().map(|&x| fmt_f64(x)));
                row.extend(tr.reports.iter().map(|&x| fmt_f64(x)));
                row
            })
            .collect();
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let p = run.path("transcripts.csv");
        output::write_csv_records(&p, &run.provenance, &refs, &rows)?;
        run.files.push(p);
    }
    let s = &sim.summary;
    println!(
        "paths {}  mean revenue {} (se {})",
        s.n_paths,
        fmt_f64(s.mean_revenue),
        fmt_f64(s.revenue_standard_error)
    );
    run.json("summary.json", &sim.summary)?;
    Ok(run.finish(false))
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    revenue: f64,
    k1: Option<f64>,
    p_sale_first: f64,
    p_no_sale: f64,
}

pub fn cmd_sweep(cfg: RunConfig) -> Result<Outcome> {
    let mut run = Run::new(cfg)?;
    let name = run.cfg.kernel.name.clone().unwrap_or_default();
    let spec = run.cfg.sweep.clone();
    let res = revenue::sweep(&name, &run.cfg.kernel.params, spec.axis, &spec.values, &run.cfg.solve)?;
    let rows: Vec<SweepRow> = res
        .points
        .iter()
        .map(|p| SweepRow {
            value: p.value,
            revenue: p.revenue,
            k1: p.k1,
            p_sale_first: p.sale_period_distribution.first().copied().unwrap_or(0.0),
            p_no_sale: 1.0 - p.sale_by_period.last().copied().unwrap_or(0.0),
        })
        .collect();
    println!("{:>12} {:>22} {:>22} {:>22}", "value", "revenue", "k1", "p_sale_first");
    for r in &rows {
        println!(
            "{:>12} {:>22} {:>22} {:>22}",
            fmt_f64(r.value),
            fmt_f64(r.revenue),
            r.k1.map_or("-".to_string(), fmt_f64),
            fmt_f64(r.p_sale_first)
        );
    }
    run.csv("sweep.csv", &rows)?;
    run.json("sweep.json", &res)?;
    let axis = serde_json::to_value(spec.axis)?.as_str().unwrap_or("value").to_string();
    let curves: [(&str, Vec<(f64, f64)>); 3] = [
        ("revenue", rows.iter().map(|r| (r.value, r.revenue)).collect()),
        ("p_sale_first", rows.iter().map(|r| (r.value, r.p_sale_first)).collect()),
        ("k1", rows.iter().filter_map(|r| r.k1.map(|k| (r.value, k))).collect()),
    ];
    for (col, pts) in &curves {
        let p = run.path(&format!("sweep_{col}.dat"));
        output::write_plot(&p, &run.provenance, (&axis, col), pts)?;
        run.files.push(p);
    }
    let failed = res.assertions.iter().any(|a| !a.1);
    for (name, ok) in &res.assertions {
        println!("{name}: {}", if *ok { "ok" } else { "VIOLATED" });
    }
    Ok(run.finish(failed))
}

pub fn cmd_list_kernels(json: bool) -> Result<String> {
    let cat = kernels::catalog();
    if json {
        return Ok(serde_json::to_string_pretty(&cat)?);
    }
    let mut s = String::new();
    for k in cat {
        s.push_str(&format!("{}\n    {}\n", k.name, k.description));
        for (p, doc) in k.parameters {
            s.push_str(&format!("    --param {p}=<value>   {doc}\n"));
        }
    }
    Ok(s)
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownKernel(_) | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
        Error::Domain { .. } | Error::Singularity { .. } | Error::NonFinite { .. } => EXIT_NUMERIC,
    }
}

fn apply_threads() {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                crate::par::configure_threads(n);
            }
            _ => eprintln!("warning: ignoring {THREADS_ENV}={v}"),
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Solve(a) => cmd_solve(a.common.resolve()?),
        Command::Check(a) => {
            let mut cfg = a.common.resolve()?;
            let t = &mut cfg.checks;
            if let Some(p) = a.points {
                t.plan.points = p;
            }
            if let Some(n) = a.oracle_types {
                t.oracle_types = n;
            }
            t.myopic |= a.myopic;
            for name in &a.skip {
                match name.as_str() {
                    "integral_monotonicity" => t.integral_monotonicity = false,
                    "sufficient_conditions" => t.sufficient_conditions = false,
                    "two_period" => t.two_period = false,
                    "expost_ir" => t.expost_ir = false,
                    "best_response" => t.best_response = false,
                    other => return Err(Error::config("skip", format!("unknown check `{other}`"))),
                }
            }
            cmd_check(cfg)
        }
        Command::Simulate(a) => {
            let mut cfg = a.common.resolve()?;
            let s = &mut cfg.simulation;
            if let Some(v) = a.paths {
                s.n_paths = v;
            }
            if let Some(v) = a.seed {
                s.seed = v;
            }
            if let Some(v) = a.keep {
                s.keep = v;
            }
            if let Some(v) = a.transfer_rule {
                s.transfer_rule = v;
            }
            cmd_simulate(cfg)
        }
        Command::Sweep(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(axis) = a.axis {
                cfg.sweep.axis = axis;
            }
            if !a.values.is_empty() {
                cfg.sweep.values = a.values.clone();
            }
            cmd_sweep(cfg)
        }
        Command::ListKernels(a) => {
            print!("{}", cmd_list_kernels(a.json)?);
            Ok(Outcome::default())
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    apply_threads();
    match dispatch(cli.command) {
        Ok(o) if o.check_failed => EXIT_CHECK_FAILED,
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

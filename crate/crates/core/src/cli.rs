//! Command-line front end: `fit`, `simulate` and `reconstruct`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::data::{fmt_f64, load_csv, to_regular_grid, CurveDataset};
use crate::error::Error;
use crate::experiment::{parse_methods, run_comparison, ComparisonSpec, Method};
use crate::fpca::{interpolate_eigenfunction, reconstruct, scores};
use crate::pipeline::{
    fit_dataset, rescaled_grid, Fit, FitConfig, KMode, Rho1Mode, Rho2Mode, DEFAULT_OUTPUT_POINTS,
};
use crate::sim::{make_eigenfunctions, simulate_with, Scenario, SimSpec};
use crate::tuning::TraceRow;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

const REPORT_FILE: &str = "report.json";
const EIGENFUNCTION_FILE: &str = "eigenfunctions.csv";
const TRACE_FILE: &str = "trace.csv";
const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Parser)]
#[command(name = "lfpca", version, about = "Localized functional principal component analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit localized eigenfunctions to a curve CSV.
    Fit(FitArgs),
    /// Simulate curves and optionally compare methods over replicates.
    Simulate(SimulateArgs),
    /// Score and reconstruct curves against a previous fit.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// ADMM step parameter; defaults to trace(S).
    #[arg(long)]
    pub tau: Option<f64>,
    /// ADMM stopping tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `cv` or a nonnegative value.
    #[arg(long)]
    pub rho1: Option<String>,
    /// `cv`, `rfve:A` or a nonnegative value.
    #[arg(long)]
    pub rho2: Option<String>,
    /// `fve:T` or a component count.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Points of the eigenfunction output grid.
    #[arg(long)]
    pub output_points: Option<usize>,
    /// Points of the regular grid used for irregular or incomplete input.
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `I` (localized) or `II` (Fourier).
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated subset of `raw,smooth,lfpca`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReconstructArgs {
    /// Output directory of a previous `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A number or a string in a config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scalar {
    Num(f64),
    Text(String),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Num(x) => fmt_f64(*x),
            Scalar::Text(s) => s.clone(),
        }
    }
}

/// Keys accepted in `--config` files.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    input: Option<PathBuf>,
    rho1: Option<Scalar>,
    rho2: Option<Scalar>,
    k: Option<Scalar>,
    folds: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    output_points: Option<usize>,
    grid_points: Option<usize>,
    tau: Option<f64>,
    eps: Option<f64>,
    #[serde(alias = "max_iters")]
    max_iters: Option<usize>,
    workers: Option<usize>,
    scenario: Option<Scalar>,
    n: Option<usize>,
    p: Option<usize>,
    sigma: Option<f64>,
    reps: Option<usize>,
    methods: Option<String>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    fn input(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Degenerate { .. } | Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
}

fn parse_mode<T: std::str::FromStr<Err = Error>>(text: &str, key: &str) -> Result<T, Failure> {
    text.parse::<T>().map_err(|e| Failure::config(format!("--{key}: {e}")))
}

fn admm_config(solver: &SolverArgs, file: &FileConfig) -> Result<AdmmConfig, Failure> {
    let base = AdmmConfig::default();
    let cfg = AdmmConfig {
        tau: solver.tau.or(file.tau),
        epsilon: solver.eps.or(file.eps).unwrap_or(base.epsilon),
        max_iters: solver.max_iters.or(file.max_iters).unwrap_or(base.max_iters),
    };
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn set_workers(solver: &SolverArgs, file: &FileConfig) -> Result<(), Failure> {
    if let Some(n) = solver.workers.or(file.workers) {
        if n == 0 {
            return Err(Failure::config("--workers must be positive"));
        }
        // The global pool can only be configured once per process; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

/// Effective settings of a `fit` run, echoed into the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub input: PathBuf,
    pub out: PathBuf,
    pub rho1: String,
    pub rho2: String,
    pub k: String,
    pub folds: usize,
    pub seed: u64,
    pub output_points: usize,
    pub grid_points: Option<usize>,
    pub tau: Option<f64>,
    pub eps: f64,
    pub max_iters: usize,
}

/// Resolves flags over config-file values over defaults.
pub fn resolve_fit(args: &FitArgs) -> Result<(FitSettings, FitConfig), Failure> {
    let file = read_file_config(args.config.as_deref())?;
    let input = args
        .input
        .clone()
        .or(file.input.clone())
        .ok_or_else(|| Failure::config("an --input file is required"))?;
    let out = args.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("lfpca-fit"));
    let pick = |flag: &Option<String>, key: &Option<Scalar>, default: &str| {
        flag.clone().or(key.as_ref().map(Scalar::text)).unwrap_or_else(|| default.to_string())
    };
    let rho1_text = pick(&args.rho1, &file.rho1, "cv");
    let rho2_text = pick(&args.rho2, &file.rho2, "cv");
    let k_text = pick(&args.k, &file.k, "fve:0.85");
    let rho1: Rho1Mode = parse_mode(&rho1_text, "rho1")?;
    let rho2: Rho2Mode = parse_mode(&rho2_text, "rho2")?;
    let k: KMode = parse_mode(&k_text, "k")?;
    let admm = admm_config(&args.solver, &file)?;
    set_workers(&args.solver, &file)?;
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        rho1,
        rho2,
        k,
        folds: args.folds.or(file.folds).unwrap_or(defaults.folds),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        output_points: args.output_points.or(file.output_points).unwrap_or(DEFAULT_OUTPUT_POINTS),
        admm,
        ..defaults
    };
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let grid_points = args.grid_points.or(file.grid_points);
    if matches!(grid_points, Some(g) if g < 3) {
        return Err(Failure::config("--grid-points must be at least 3"));
    }
    let settings = FitSettings {
        input,
        out,
        rho1: rho1.to_string(),
        rho2: rho2.to_string(),
        k: k.to_string(),
        folds: cfg.folds,
        seed: cfg.seed,
        output_points: cfg.output_points,
        grid_points,
        tau: cfg.admm.tau,
        eps: cfg.admm.epsilon,
        max_iters: cfg.admm.max_iters,
    };
    Ok((settings, cfg))
}

/// Loads a curve CSV and moves it onto a complete regular grid when needed.
fn load_regular(path: &Path, grid_points: Option<usize>) -> Result<(CurveDataset, bool), Failure> {
    let raw = load_csv(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let target = grid_points.unwrap_or(raw.p());
    if raw.has_missing() || !raw.is_uniform() || target != raw.p() {
        Ok((to_regular_grid(&raw, target)?, true))
    } else {
        Ok((raw, false))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub rows: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComponentReport {
    pub index: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub fve: f64,
    pub cumulative_fve: f64,
    pub support_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual_sq: f64,
    pub dual_residual_sq: f64,
    /// Unit eigenvector on the data grid.
    pub vector: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub p: usize,
    pub regridded: bool,
    pub grid_assumed: bool,
}

/// Contents of `report.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub version: String,
    pub config: FitSettings,
    pub data: DataSummary,
    pub files: Vec<FileEntry>,
    pub rho1: f64,
    pub fve_terms: usize,
    pub total_variance: f64,
    pub cumulative_fve: f64,
    pub max_cross_inner: f64,
    pub unconverged_fits: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub components: Vec<ComponentReport>,
}

fn trace_columns() -> Vec<String> {
    ["component", "parameter", "rule", "candidate", "value", "iterations", "unconverged", "selected"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn write_trace<W: Write>(rows: &[TraceRow], writer: W) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace_columns())?;
    for r in rows {
        w.write_record([
            r.component.to_string(),
            r.parameter.to_string(),
            r.rule.to_string(),
            fmt_f64(r.candidate),
            fmt_f64(r.value),
            r.iterations.to_string(),
            r.unconverged.to_string(),
            r.selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_columns<W: Write>(writer: W, header: &[String], columns: &[&[f64]]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for l in 0..rows {
        w.write_record(columns.iter().map(|c| fmt_f64(c[l])))?;
    }
    w.flush()?;
    Ok(())
}

fn build_report(settings: &FitSettings, dataset: &CurveDataset, regridded: bool, fit: &Fit) -> FitReport {
    let comps = &fit.components.components;
    let mut cumulative = 0.0;
    let components = comps
        .iter()
        .map(|c| {
            cumulative += c.fve;
            ComponentReport {
                index: c.index,
                rho1: c.rho1,
                rho2: c.rho2_used,
                fve: c.fve,
                cumulative_fve: cumulative,
                support_fraction: c.support_fraction,
                iterations: c.admm.iterations,
                converged: c.admm.converged,
                primal_residual_sq: c.admm.primal_residual_sq,
                dual_residual_sq: c.admm.dual_residual_sq,
                vector: c.vector.clone(),
            }
        })
        .collect();
    let mut eig_cols = vec!["t".to_string()];
    eig_cols.extend((1..=comps.len()).map(|j| format!("phi{j}")));
    let files = vec![
        FileEntry {
            path: EIGENFUNCTION_FILE.to_string(),
            rows: fit.components.out_grid.len(),
            columns: eig_cols,
        },
        FileEntry {
            path: TRACE_FILE.to_string(),
            rows: fit.traces.len(),
            columns: trace_columns(),
        },
    ];
    FitReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: settings.clone(),
        data: DataSummary {
            n: dataset.n(),
            p: dataset.p(),
            regridded,
            grid_assumed: dataset.grid_assumed,
        },
        files,
        rho1: fit.rho1,
        fve_terms: fit.fve_terms,
        total_variance: fit.total_variance,
        cumulative_fve: fit.cumulative_fve(),
        max_cross_inner: fit.components.max_cross_inner(),
        unconverged_fits: fit.traces.iter().map(|r| r.unconverged).sum::<usize>()
            + comps.iter().filter(|c| !c.admm.converged).count(),
        grid: dataset.grid().to_vec(),
        mean: fit.mean.clone(),
        components,
    }
}

#[derive(Serialize)]
struct Diagnostics<'a, C: Serialize> {
    command: &'a str,
    error: String,
    config: &'a C,
}

fn numerical_failure<C: Serialize>(out: &Path, command: &str, config: &C, err: Error) -> Failure {
    let failure = Failure::from(err);
    if failure.code == EXIT_NUMERICAL && fs::create_dir_all(out).is_ok() {
        let diag = Diagnostics {
            command,
            error: failure.message.clone(),
            config,
        };
        let _ = write_json(&out.join(DIAGNOSTICS_FILE), &diag);
    }
    failure
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let (settings, cfg) = resolve_fit(args)?;
    let (dataset, regridded) = load_regular(&settings.input, settings.grid_points)?;
    let fit = fit_dataset(&dataset, &cfg).map_err(|e| numerical_failure(&settings.out, "fit", &settings, e))?;
    let out = &settings.out;
    create_dir(out)?;

    let report = build_report(&settings, &dataset, regridded, &fit);
    let set = &fit.components;
    let header = &report.files[0].columns;
    let mut cols: Vec<&[f64]> = vec![&set.out_grid];
    cols.extend(set.components.iter().map(|c| c.eigenfunction.as_slice()));
    write_columns(create_file(&out.join(EIGENFUNCTION_FILE))?, header, &cols)?;
    write_trace(&fit.traces, create_file(&out.join(TRACE_FILE))?)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(())
}

/// Effective settings of a `simulate` run.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateSettings {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub out: PathBuf,
    pub folds: usize,
    pub tau: Option<f64>,
    pub eps: f64,
    pub max_iters: usize,
}

pub fn resolve_simulate(args: &SimulateArgs) -> Result<(SimulateSettings, SimSpec, FitConfig), Failure> {
    let file = read_file_config(args.config.as_deref())?;
    let scenario_text = args
        .scenario
        .clone()
        .or(file.scenario.as_ref().map(Scalar::text))
        .unwrap_or_else(|| "I".to_string());
    let scenario: Scenario = parse_mode(&scenario_text, "scenario")?;
    let n = args.n.or(file.n).unwrap_or(100);
    let p = args.p.or(file.p).unwrap_or(100);
    let sigma = args.sigma.or(file.sigma).unwrap_or(1.0);
    let reps = args.reps.or(file.reps).unwrap_or(1);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let methods = match args.methods.clone().or(file.methods.clone()) {
        Some(list) => parse_methods(&list).map_err(|e| Failure::config(format!("--methods: {e}")))?,
        None => Vec::new(),
    };
    if reps == 0 {
        return Err(Failure::config("--reps must be at least 1"));
    }
    let spec = SimSpec::new(scenario, n, p, sigma, seed);
    spec.validate().map_err(|e| Failure::config(e.to_string()))?;
    let admm = admm_config(&args.solver, &file)?;
    set_workers(&args.solver, &file)?;
    let fit = FitConfig {
        folds: args.folds.or(file.folds).unwrap_or(FitConfig::default().folds),
        admm,
        seed,
        ..FitConfig::default()
    };
    fit.validate().map_err(|e| Failure::config(e.to_string()))?;
    let settings = SimulateSettings {
        scenario: format!("{scenario:?}"),
        n,
        p,
        sigma,
        reps,
        methods,
        seed,
        out: args.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("lfpca-sim")),
        folds: fit.folds,
        tau: admm.tau,
        eps: admm.epsilon,
        max_iters: admm.max_iters,
    };
    Ok((settings, spec, fit))
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a SimulateSettings,
    files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a [crate::experiment::MethodSummary]>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (settings, spec, fit_cfg) = resolve_simulate(args)?;
    let out = &settings.out;
    let truth = make_eigenfunctions(spec.scenario);
    let (dataset, _) = simulate_with(&spec, &truth)?;
    create_dir(out)?;
    dataset.write_to(create_file(&out.join("curves.csv"))?)?;

    let k = spec.eigenvalues.len();
    let samples: Vec<Vec<f64>> = (0..k)
        .map(|j| dataset.grid().iter().map(|&t| truth.eval(j, t)).collect())
        .collect();
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("phi{j}")));
    let mut cols: Vec<&[f64]> = vec![dataset.grid()];
    cols.extend(samples.iter().map(|s| s.as_slice()));
    write_columns(create_file(&out.join("truth.csv"))?, &header, &cols)?;

    let mut files = vec![
        FileEntry {
            path: "curves.csv".to_string(),
            rows: dataset.n() + 1,
            columns: Vec::new(),
        },
        FileEntry {
            path: "truth.csv".to_string(),
            rows: dataset.p(),
            columns: header,
        },
    ];
    let mut table = None;
    if !settings.methods.is_empty() {
        let cmp = ComparisonSpec {
            fit: fit_cfg,
            ..ComparisonSpec::new(spec.clone(), settings.reps, settings.methods.clone())
        };
        let result = run_comparison(&cmp).map_err(|e| numerical_failure(out, "simulate", &settings, e))?;
        result.write_table(create_file(&out.join("table.csv"))?)?;
        result.write_replicates(create_file(&out.join("replicates.csv"))?, cmp.components)?;
        files.push(FileEntry {
            path: "table.csv".to_string(),
            rows: result.rows.len(),
            columns: ["method", "penalty", "component", "median", "mad", "replicates", "cell"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        });
        files.push(FileEntry {
            path: "replicates.csv".to_string(),
            rows: settings.reps * settings.methods.len(),
            columns: Vec::new(),
        });
        table = Some(result);
    }
    let report = SimulateReport {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &settings,
        files,
        summary: table.as_ref().map(|t| t.methods.as_slice()),
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(())
}

pub fn cmd_reconstruct(args: &ReconstructArgs) -> Result<(), Failure> {
    let report_path = args.fit.join(REPORT_FILE);
    let text = fs::read_to_string(&report_path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", report_path.display())))?;
    let report: FitReport =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("invalid {}: {e}", report_path.display())))?;
    let p = report.grid.len();
    if p < 2 || report.mean.len() != p || report.components.iter().any(|c| c.vector.len() != p) {
        return Err(Failure::input(format!("{} is inconsistent", report_path.display())));
    }
    let (dataset, _) = load_regular(&args.input, None)?;
    let span = (report.grid[p - 1] - report.grid[0]).abs().max(1.0);
    if dataset.p() != p
        || dataset
            .grid()
            .iter()
            .zip(&report.grid)
            .any(|(a, b)| (a - b).abs() > 1e-9 * span)
    {
        return Err(Failure::input(format!(
            "grid mismatch: {} does not share the grid of the fit",
            args.input.display()
        )));
    }
    let unit = rescaled_grid(&report.grid);
    let phis = report
        .components
        .iter()
        .map(|c| interpolate_eigenfunction(&DVector::from_column_slice(&c.vector), &unit, &unit))
        .collect::<crate::Result<Vec<_>>>()?;
    let xi = scores(&dataset, &report.mean, &phis)?;
    let fitted = reconstruct(&report.mean, &phis, &xi)?;

    let out = &args.out;
    create_dir(out)?;
    write_columns(
        create_file(&out.join("mean.csv"))?,
        &["t".to_string(), "mean".to_string()],
        &[&report.grid, &report.mean],
    )?;
    let mut w = csv::Writer::from_writer(create_file(&out.join("scores.csv"))?);
    let mut header = vec!["curve".to_string()];
    header.extend((1..=phis.len()).map(|j| format!("score{j}")));
    w.write_record(&header).map_err(Error::from)?;
    for (i, label) in dataset.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(xi.row(i).iter().map(|x| fmt_f64(*x)));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let fitted = CurveDataset::with_labels(report.grid.clone(), fitted, dataset.labels().to_vec())?;
    fitted.write_to(create_file(&out.join("fitted.csv"))?)?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

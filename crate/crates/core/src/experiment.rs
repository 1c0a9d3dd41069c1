//! Replicated simulation studies comparing unpenalized, smoothed and localized fits.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::fpca::interpolate_eigenfunction;
use crate::pipeline::{fit_dataset, rescaled_grid, FitConfig, KMode, Rho1Mode, Rho2Mode};
use crate::sim::{make_eigenfunctions, simulate_with, SimSpec, TrueEigenfunctions};

/// Penalty settings being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// `(0, 0)`: ordinary PCA of the sample covariance.
    Raw,
    /// `(ρ̂₁, 0)`: roughness penalty only.
    Smooth,
    /// `(ρ̂₁, ρ̂₂)`: roughness and sparsity penalties.
    Lfpca,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Raw, Method::Smooth, Method::Lfpca];

    pub fn label(self) -> &'static str {
        match self {
            Method::Raw => "(0,0)",
            Method::Smooth => "(rho1,0)",
            Method::Lfpca => "(rho1,rho2)",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Smooth => "smooth",
            Method::Lfpca => "lfpca",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "").as_str() {
            "raw" | "pca" | "(0,0)" => Ok(Method::Raw),
            "smooth" | "(rho1,0)" => Ok(Method::Smooth),
            "lfpca" | "local" | "(rho1,rho2)" => Ok(Method::Lfpca),
            "nonseq" => Err(Error::input("the non-sequential comparator is not available")),
            other => Err(Error::input(format!(
                "unknown method {other:?}; use raw, smooth or lfpca"
            ))),
        }
    }
}

/// Parses a comma-separated method list, keeping the order given and dropping repeats.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for item in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: Method = item.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::input("empty method list"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSpec {
    /// `sim.seed` is the base seed; replicate `r` uses `sim.seed + r`.
    pub sim: SimSpec,
    pub reps: usize,
    pub methods: Vec<Method>,
    /// Eigenfunctions scored per replicate.
    pub components: usize,
    /// Tuning and solver settings; penalty and component modes are set per method.
    pub fit: FitConfig,
}

impl ComparisonSpec {
    pub fn new(sim: SimSpec, reps: usize, methods: Vec<Method>) -> Self {
        ComparisonSpec {
            sim,
            reps,
            methods,
            components: 3,
            fit: FitConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.reps == 0 {
            return Err(Error::input("at least one replicate is needed"));
        }
        if self.methods.is_empty() {
            return Err(Error::input("no methods to compare"));
        }
        if self.components == 0 || self.components > self.sim.eigenvalues.len() {
            return Err(Error::input(format!(
                "can score between 1 and {} components",
                self.sim.eigenvalues.len()
            )));
        }
        self.fit.validate()
    }
}

/// One method's result on one replicate.
#[derive(Debug, Clone, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// Sign-aligned L2 errors for components `1..=components`.
    pub errors: Vec<f64>,
    /// Components needed to reach the FVE threshold.
    pub selected_k: usize,
    pub rho1: f64,
    pub rho2: Vec<f64>,
    pub fve: Vec<f64>,
    pub max_cross_inner: f64,
    /// Whether the chosen ρ₁ lies strictly inside its candidate grid.
    pub rho1_interior: Option<bool>,
    pub unconverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    /// In the order of [`ComparisonSpec::methods`]; `Err` text for failed fits.
    pub outcomes: Vec<std::result::Result<MethodOutcome, String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub component: usize,
    pub median: f64,
    pub mad: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_selected_k: f64,
    pub failures: usize,
    pub replicates_with_unconverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<SummaryRow>,
    pub methods: Vec<MethodSummary>,
    pub replicates: Vec<Replicate>,
}

impl ComparisonTable {
    pub fn row(&self, method: Method, component: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.component == component)
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Every successful outcome of `method`.
    pub fn outcomes(&self, method: Method) -> impl Iterator<Item = &MethodOutcome> {
        self.replicates
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter_map(|o| o.as_ref().ok())
            .filter(move |o| o.method == method)
    }
}

/// `min_± ‖f̂ ± f‖₂` under the given quadrature weights.
pub fn sign_aligned_error(estimate: &[f64], truth: &[f64], weights: &[f64]) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for ((a, b), w) in estimate.iter().zip(truth).zip(weights) {
        minus += w * (a - b) * (a - b);
        plus += w * (a + b) * (a + b);
    }
    minus.min(plus).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median absolute deviation from the median, without a consistency factor.
pub fn mad(values: &[f64]) -> f64 {
    let c = median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - c).abs()).collect();
    median(&dev)
}

/// Fits `dataset` with `method` and scores it against `truth`.
fn run_method(
    method: Method,
    dataset: &crate::data::CurveDataset,
    truth: &TrueEigenfunctions,
    spec: &ComparisonSpec,
    shared_rho1: Option<f64>,
) -> Result<(MethodOutcome, f64)> {
    let threshold = match spec.fit.k {
        KMode::Fve(t) => t,
        KMode::Fixed(_) => crate::pipeline::DEFAULT_FVE_THRESHOLD,
    };
    let rho1 = match (method, shared_rho1) {
        (Method::Raw, _) => Rho1Mode::Fixed(0.0),
        (_, Some(r)) => Rho1Mode::Fixed(r),
        (_, None) => Rho1Mode::Cv,
    };
    let rho2 = match method {
        Method::Lfpca => spec.fit.rho2,
        _ => Rho2Mode::Fixed(0.0),
    };
    let cfg = FitConfig {
        rho1,
        rho2,
        k: KMode::Fve(threshold),
        min_components: spec.components.max(spec.fit.min_components),
        ..spec.fit.clone()
    };
    let fit = fit_dataset(dataset, &cfg)?;
    let set = &fit.components;
    let grid = rescaled_grid(dataset.grid());
    let weights = truth.weights();
    let mut errors = Vec::with_capacity(spec.components);
    for (j, c) in set.components.iter().take(spec.components).enumerate() {
        let est = interpolate_eigenfunction(&c.vector(), &grid, &truth.fine_grid)?;
        let tru = truth.sample(j);
        errors.push(sign_aligned_error(&est, tru.as_slice(), &weights));
    }
    let mut cumulative = 0.0;
    let mut selected_k = set.k();
    for (j, c) in set.components.iter().enumerate() {
        cumulative += c.fve;
        if cumulative >= threshold {
            selected_k = j + 1;
            break;
        }
    }
    let rho1_trace: Vec<_> = fit.traces.iter().filter(|r| r.parameter == "rho1").collect();
    let rho1_interior = (!rho1_trace.is_empty()).then(|| {
        let idx = rho1_trace.iter().position(|r| r.selected).unwrap_or(0);
        idx > 0 && idx + 1 < rho1_trace.len()
    });
    let unconverged = fit.traces.iter().map(|r| r.unconverged).sum::<usize>()
        + set.components.iter().filter(|c| !c.admm.converged).count();
    Ok((
        MethodOutcome {
            method,
            errors,
            selected_k,
            rho1: fit.rho1,
            rho2: set.components.iter().map(|c| c.rho2_used).collect(),
            fve: set.components.iter().map(|c| c.fve).collect(),
            max_cross_inner: set.max_cross_inner(),
            rho1_interior,
            unconverged,
        },
        fit.rho1,
    ))
}

fn run_replicate(index: usize, spec: &ComparisonSpec, truth: &TrueEigenfunctions) -> Replicate {
    let seed = spec.sim.seed.wrapping_add(index as u64);
    let sim = SimSpec {
        seed,
        ..spec.sim.clone()
    };
    let data = simulate_with(&sim, truth);
    let mut outcomes = vec![None; spec.methods.len()];
    match data {
        Err(e) => {
            for slot in outcomes.iter_mut() {
                *slot = Some(Err(e.to_string()));
            }
        }
        Ok((dataset, _)) => {
            // ρ̂₁ is shared: the localized fit tunes it first when both penalized methods run.
            let mut order: Vec<usize> = (0..spec.methods.len()).collect();
            order.sort_by_key(|&k| match spec.methods[k] {
                Method::Lfpca => 0,
                Method::Smooth => 1,
                Method::Raw => 2,
            });
            let mut shared = match spec.fit.rho1 {
                Rho1Mode::Fixed(r) => Some(r),
                Rho1Mode::Cv => None,
            };
            for k in order {
                let result = run_method(spec.methods[k], &dataset, truth, spec, shared);
                outcomes[k] = Some(match result {
                    Ok((outcome, rho1)) => {
                        if spec.methods[k] != Method::Raw {
                            shared = Some(rho1);
                        }
                        Ok(outcome)
                    }
                    Err(e) => Err(e.to_string()),
                });
            }
        }
    }
    Replicate {
        index,
        seed,
        outcomes: outcomes.into_iter().map(|o| o.expect("every method ran")).collect(),
    }
}

/// Runs `spec.reps` replicates in parallel and summarizes per method and component.
pub fn run_comparison(spec: &ComparisonSpec) -> Result<ComparisonTable> {
    spec.validate()?;
    let truth = make_eigenfunctions(spec.sim.scenario);
    let replicates: Vec<Replicate> = (0..spec.reps)
        .into_par_iter()
        .map(|r| run_replicate(r, spec, &truth))
        .collect();
    Ok(summarize(spec, replicates))
}

fn summarize(spec: &ComparisonSpec, replicates: Vec<Replicate>) -> ComparisonTable {
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for (k, &method) in spec.methods.iter().enumerate() {
        let ok: Vec<&MethodOutcome> = replicates.iter().filter_map(|r| r.outcomes[k].as_ref().ok()).collect();
        for j in 0..spec.components {
            let errs: Vec<f64> = ok.iter().filter_map(|o| o.errors.get(j).copied()).collect();
            rows.push(SummaryRow {
                method,
                component: j + 1,
                median: median(&errs),
                mad: mad(&errs),
                replicates: errs.len(),
            });
        }
        let ks: Vec<f64> = ok.iter().map(|o| o.selected_k as f64).collect();
        methods.push(MethodSummary {
            method,
            mean_selected_k: if ks.is_empty() { f64::NAN } else { ks.iter().sum::<f64>() / ks.len() as f64 },
            failures: replicates.len() - ok.len(),
            replicates_with_unconverged: ok.iter().filter(|o| o.unconverged > 0).count(),
        });
    }
    ComparisonTable {
        rows,
        methods,
        replicates,
    }
}

impl ComparisonTable {
    /// One row per method and component with the median and MAD, plus a `median (mad)` cell.
    pub fn write_table<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "penalty", "component", "median", "mad", "replicates", "cell"])?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.method.label().to_string(),
                r.component.to_string(),
                fmt_f64(r.median),
                fmt_f64(r.mad),
                r.replicates.to_string(),
                format!("{:.2} ({:.2})", r.median, r.mad),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per replicate and method.
    pub fn write_replicates<W: std::io::Write>(&self, writer: W, components: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["replicate", "seed", "method", "status", "selected_k", "rho1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=components).map(|j| format!("error{j}")));
        header.extend((1..=components).map(|j| format!("rho2_{j}")));
        w.write_record(&header)?;
        for rep in &self.replicates {
            for (k, o) in rep.outcomes.iter().enumerate() {
                let mut row = vec![rep.index.to_string(), rep.seed.to_string(), self.methods[k].method.name().to_string()];
                match o {
                    Ok(o) => {
                        row.extend([
                            "ok".to_string(),
                            o.selected_k.to_string(),
                            fmt_f64(o.rho1),
                        ]);
                        row.extend((0..components).map(|j| o.errors.get(j).map_or(String::new(), |x| fmt_f64(*x))));
                        row.extend((0..components).map(|j| o.rho2.get(j).map_or(String::new(), |x| fmt_f64(*x))));
                    }
                    Err(msg) => {
                        row.extend([format!("failed: {msg}"), String::new(), String::new()]);
                        row.extend(std::iter::repeat(String::new()).take(2 * components));
                    }
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

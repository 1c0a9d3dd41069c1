//! Penalty selection: candidate grids, V-fold cross-validation and the relative-FVE rule.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::admm::AdmmConfig;
use crate::data::{covariance_of_rows, CurveDataset};
use crate::error::{Error, Result};
use crate::fpca::{extract_candidate_from, DeflationState, Extraction, WarmStart};
use crate::linalg::{second_diff_penalty, sym_eig, SymMatrix};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_RHO1_COUNT: usize = 10;
pub const DEFAULT_RHO2_COUNT: usize = 10;
pub const RHO2_QUANTILE: f64 = 0.95;
const RHO1_FLOOR: f64 = 1e-4;

/// Random partition of `n` curves into `V` nonempty folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Shuffles `0..n` with `seed` and deals the permutation round-robin into `folds` folds.
    pub fn new(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::input(format!("cross-validation needs at least 2 folds, got {folds}")));
        }
        if n < folds {
            return Err(Error::input(format!("{n} curves cannot fill {folds} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        Ok(FoldPlan { folds, assignment, seed })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Sorted, deduplicated nonnegative penalty candidates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    candidates: Vec<f64>,
}

impl Grid {
    pub fn new(mut candidates: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::input("empty candidate grid"));
        }
        if candidates.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::input("grid candidates must be finite and nonnegative"));
        }
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        Ok(Grid { candidates })
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains_zero(&self) -> bool {
        self.candidates[0] == 0.0
    }
}

/// `{0}` followed by `count − 1` geometrically spaced points from `λ_max·10⁻⁴` to `p·λ_max`.
pub fn grid_rho1(s: &SymMatrix, count: usize) -> Result<Grid> {
    if count < 2 {
        return Err(Error::input(format!("rho1 grid needs at least 2 points, got {count}")));
    }
    let lmax = sym_eig(s)?.values[0];
    if !(lmax > 0.0) {
        return Grid::new(vec![0.0]);
    }
    let hi = s.dim() as f64 * lmax;
    let lo = (lmax * RHO1_FLOOR).min(hi);
    let steps = count - 1;
    let mut candidates = vec![0.0];
    for k in 0..steps {
        let x = if steps == 1 {
            hi
        } else if k == steps - 1 {
            hi
        } else {
            lo * (hi / lo).powf(k as f64 / (steps - 1) as f64)
        };
        candidates.push(x);
    }
    Grid::new(candidates)
}

/// Linear-interpolation (type 7) sample quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::input("quantile needs data and a level in [0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Upper end of the ρ₂ grid: the 0.95 quantile of `|S_j(l, l′)|`, `l ≠ l′`.
pub fn rho2_upper(s: &SymMatrix, state: &DeflationState) -> Result<f64> {
    let p = s.dim();
    if p < 2 {
        return Err(Error::input("rho2 grid needs p >= 2"));
    }
    if state.dim() != p {
        return Err(Error::input("deflation state and covariance differ in dimension"));
    }
    let sj = state.projection().deflate(s);
    let mut off = Vec::with_capacity(p * (p - 1));
    for i in 0..p {
        for j in 0..p {
            if i != j {
                off.push(sj.get(i, j).abs());
            }
        }
    }
    quantile(&off, RHO2_QUANTILE)
}

/// `count` equally spaced points from 0 to [`rho2_upper`].
pub fn grid_rho2(s: &SymMatrix, state: &DeflationState, count: usize) -> Result<Grid> {
    if count < 2 {
        return Err(Error::input(format!("rho2 grid needs at least 2 points, got {count}")));
    }
    let hi = rho2_upper(s, state)?;
    let candidates = (0..count)
        .map(|k| if k == count - 1 { hi } else { hi * k as f64 / (count - 1) as f64 })
        .collect();
    Grid::new(candidates)
}

/// First index of the maximum; NaN never wins.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

/// One candidate's entry in a tuning trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    /// Component the penalty was tuned for (1-based).
    pub component: usize,
    /// `"rho1"` or `"rho2"`.
    pub parameter: &'static str,
    /// `"cv"` or `"rfve"`.
    pub rule: &'static str,
    pub candidate: f64,
    /// Summed cross-validated inner product, or the relative FVE.
    pub value: f64,
    /// ADMM iterations spent on this candidate, summed over folds.
    pub iterations: usize,
    /// ADMM solves for this candidate that hit the iteration cap.
    pub unconverged: usize,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: f64,
    pub trace: Vec<TraceRow>,
}

struct SweepTotals {
    criterion: Vec<f64>,
    iterations: Vec<usize>,
    unconverged: Vec<usize>,
}

struct Fold {
    train: SymMatrix,
    held: SymMatrix,
    state: DeflationState,
    /// Fold fits at each candidate of the latest ρ₂ sweep.
    last_sweep: Vec<Extraction>,
}

/// Per-fold covariances and deflation states for sequential cross-validation.
///
/// Each training fold carries its own components `1..j−1`; after a ρ₂ sweep for component `j`
/// the fold keeps the fit at the selected candidate, so the next component is tuned against
/// a fold-specific deflation.
pub struct CvSession {
    folds: Vec<Fold>,
    penalty: SymMatrix,
    cfg: AdmmConfig,
    component: usize,
}

impl CvSession {
    pub fn new(dataset: &CurveDataset, plan: &FoldPlan, cfg: &AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.has_missing() {
            return Err(Error::input("cross-validation needs complete curves; regrid first"));
        }
        if plan.assignment().len() != dataset.n() {
            return Err(Error::input("fold plan and dataset differ in curve count"));
        }
        let p = dataset.p();
        let mut folds = Vec::with_capacity(plan.folds());
        for v in 0..plan.folds() {
            let held_rows = plan.held_out(v);
            if held_rows.len() < 2 {
                return Err(Error::input(format!(
                    "fold {} holds {} curve(s); held-out covariance needs at least 2",
                    v + 1,
                    held_rows.len()
                )));
            }
            let train = covariance_of_rows(&dataset.values().select_rows(&plan.training(v)))?;
            let held = covariance_of_rows(&dataset.values().select_rows(&held_rows))?;
            folds.push(Fold {
                train,
                held,
                state: DeflationState::new(p),
                last_sweep: Vec::new(),
            });
        }
        Ok(CvSession {
            folds,
            penalty: second_diff_penalty(p)?,
            cfg: cfg.clone(),
            component: 1,
        })
    }

    /// Component the next ρ₂ sweep tunes (1-based).
    pub fn component(&self) -> usize {
        self.component
    }

    /// Sweeps each fold over `rho1 × rho2s`, warm-starting along the sweep.
    fn sweep(&mut self, rho1s: &[f64], rho2s: &[f64]) -> Result<SweepTotals> {
        let penalty = &self.penalty;
        let cfg = &self.cfg;
        let per_fold: Vec<Result<Vec<Extraction>>> = self
            .folds
            .par_iter()
            .map(|fold| {
                let mut warm = WarmStart::new(penalty.dim());
                rho1s
                    .iter()
                    .zip(rho2s)
                    .map(|(&r1, &r2)| extract_candidate_from(&fold.train, penalty, &fold.state, r1, r2, cfg, &mut warm))
                    .collect()
            })
            .collect();
        let m = rho1s.len();
        let mut totals = vec![0.0; m];
        let mut unconverged = vec![0; m];
        let mut iterations = vec![0; m];
        for (fold, fits) in self.folds.iter_mut().zip(per_fold) {
            let fits = fits?;
            for (k, fit) in fits.iter().enumerate() {
                totals[k] += fit.h().inner(&fold.held);
                iterations[k] += fit.admm.iterations;
                if !fit.admm.converged {
                    unconverged[k] += 1;
                }
            }
            fold.last_sweep = fits;
        }
        if let Some(k) = totals.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                iteration: 0,
                message: format!("cross-validation criterion is not finite at candidate {}", k + 1),
            });
        }
        Ok(SweepTotals {
            criterion: totals,
            iterations,
            unconverged,
        })
    }

    fn trace(&self, parameter: &'static str, grid: &Grid, sweep: &SweepTotals, best: usize) -> Vec<TraceRow> {
        grid.candidates()
            .iter()
            .enumerate()
            .map(|(k, &c)| TraceRow {
                component: self.component,
                parameter,
                rule: "cv",
                candidate: c,
                value: sweep.criterion[k],
                iterations: sweep.iterations[k],
                unconverged: sweep.unconverged[k],
                selected: k == best,
            })
            .collect()
    }

    /// Maximizes `Σ_v ⟨H₁^{(−v)}(ρ, 0), S^v⟩` over `grid`; ties go to the smaller ρ.
    pub fn select_rho1(&mut self, grid: &Grid) -> Result<Selection> {
        if self.component != 1 {
            return Err(Error::input("rho1 is tuned on the first component only"));
        }
        let zeros = vec![0.0; grid.len()];
        let sweep = self.sweep(grid.candidates(), &zeros)?;
        let best = argmax_first(&sweep.criterion);
        for fold in &mut self.folds {
            fold.last_sweep.clear();
        }
        Ok(Selection {
            chosen: grid.candidates()[best],
            trace: self.trace("rho1", grid, &sweep, best),
        })
    }

    /// Maximizes `Σ_v ⟨H_j^{(−v)}(ρ₁, ρ), S^v⟩` for the current component, then advances
    /// every fold by its fit at the chosen candidate.
    pub fn select_rho2(&mut self, rho1: f64, grid: &Grid) -> Result<Selection> {
        let r1 = vec![rho1; grid.len()];
        let sweep = self.sweep(&r1, grid.candidates())?;
        let best = argmax_first(&sweep.criterion);
        let trace = self.trace("rho2", grid, &sweep, best);
        for fold in &mut self.folds {
            let fit = fold.last_sweep.swap_remove(best);
            fold.last_sweep.clear();
            fold.state.push(fit.vector)?;
        }
        self.component += 1;
        Ok(Selection {
            chosen: grid.candidates()[best],
            trace,
        })
    }
}

/// Cross-validated ρ₁ for the first component.
pub fn cv_rho1(dataset: &CurveDataset, plan: &FoldPlan, grid: &Grid, cfg: &AdmmConfig) -> Result<Selection> {
    CvSession::new(dataset, plan, cfg)?.select_rho1(grid)
}

/// Cross-validated ρ₂ for component `j`, refitting components `1..j−1` on every training fold
/// with `rho1` and the penalties in `earlier_rho2`.
pub fn cv_rho2(
    dataset: &CurveDataset,
    plan: &FoldPlan,
    grid: &Grid,
    rho1: f64,
    earlier_rho2: &[f64],
    cfg: &AdmmConfig,
) -> Result<Selection> {
    let mut session = CvSession::new(dataset, plan, cfg)?;
    for &r2 in earlier_rho2 {
        session.select_rho2(rho1, &Grid::new(vec![r2])?)?;
    }
    session.select_rho2(rho1, grid)
}

/// Outcome of the relative-FVE rule, carrying the fit at the chosen penalty.
#[derive(Debug, Clone)]
pub struct RfveSelection {
    pub chosen: f64,
    pub rfve: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub extraction: Extraction,
}

/// Largest candidate whose `v̂(ρ)ᵀSv̂(ρ) / v̂(0)ᵀSv̂(0)` is at least `1 − a`.
pub fn rfve_rho2(
    s: &SymMatrix,
    state: &DeflationState,
    rho1: f64,
    grid: &Grid,
    sacrifice: f64,
    cfg: &AdmmConfig,
) -> Result<RfveSelection> {
    if !(0.0..1.0).contains(&sacrifice) {
        return Err(Error::input(format!("rFVE sacrifice must lie in [0, 1), got {sacrifice}")));
    }
    if !grid.contains_zero() {
        return Err(Error::input("rFVE rule needs 0 among the candidates"));
    }
    let penalty = second_diff_penalty(s.dim())?;
    let mut warm = WarmStart::new(s.dim());
    let mut fits = grid
        .candidates()
        .iter()
        .map(|&r2| extract_candidate_from(s, &penalty, state, rho1, r2, cfg, &mut warm))
        .collect::<Result<Vec<_>>>()?;
    let explained: Vec<f64> = fits.iter().map(|f| s.quadratic_form(&f.vector)).collect();
    let base = explained[0];
    if !(base > 0.0) {
        return Err(Error::domain(format!(
            "unpenalized component {} explains no variance",
            state.len() + 1
        )));
    }
    let rfve: Vec<f64> = explained.iter().map(|x| x / base).collect();
    let best = select_rfve(&rfve, sacrifice);
    let trace = grid
        .candidates()
        .iter()
        .enumerate()
        .map(|(k, &c)| TraceRow {
            component: state.len() + 1,
            parameter: "rho2",
            rule: "rfve",
            candidate: c,
            value: rfve[k],
            iterations: fits[k].admm.iterations,
            unconverged: usize::from(!fits[k].admm.converged),
            selected: k == best,
        })
        .collect();
    Ok(RfveSelection {
        chosen: grid.candidates()[best],
        rfve,
        trace,
        extraction: fits.swap_remove(best),
    })
}

/// Index of the largest candidate with `rfve ≥ 1 − a`; the first candidate always qualifies.
pub fn select_rfve(rfve: &[f64], sacrifice: f64) -> usize {
    let floor = 1.0 - sacrifice;
    (0..rfve.len()).rev().find(|&k| k == 0 || rfve[k] >= floor).unwrap_or(0)
}

/// Relative FVE of `v` against the unpenalized `v0`.
pub fn relative_fve(s: &SymMatrix, v: &DVector<f64>, v0: &DVector<f64>) -> f64 {
    s.quadratic_form(v) / s.quadratic_form(v0)
}

//! Sequential extraction of localized components over deflated Fantopes.
//!
//! Component `j` solves the penalized problem on `D_Π̂` with `Π̂` spanned by the components
//! already found, takes the leading eigenvector of the solution, sweeps it once against
//! the earlier vectors and appends it. Vectors live on the sampling grid with the
//! discretization `v ≈ p^{-1/2} φ(t_l)`; eigenfunctions are recovered by scaling and linear
//! interpolation and normalized with uniform quadrature on the rescaled unit interval.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::admm::{AdmmConfig, AdmmResult, AdmmSolver, AdmmState};
use crate::data::{lerp, CurveDataset};
use crate::error::{Error, Result};
use crate::fantope::ProjectionMatrix;
use crate::linalg::{second_diff_penalty, sym_eig, SymMatrix};

/// Leading eigenvalues of `Z` below this are treated as a failed extraction.
const DEGENERATE_EIGENVALUE: f64 = 1e-8;
/// Entries of `v̂` below this are reported as outside the support.
pub const SUPPORT_CUTOFF: f64 = 1e-6;

/// Components extracted so far and the projector onto their span.
#[derive(Debug, Clone)]
pub struct DeflationState {
    vectors: Vec<DVector<f64>>,
    projection: ProjectionMatrix,
}

impl DeflationState {
    pub fn new(p: usize) -> Self {
        DeflationState {
            vectors: Vec::new(),
            projection: ProjectionMatrix::empty(p),
        }
    }

    /// Rebuilds a state from orthonormal vectors.
    pub fn from_vectors(p: usize, vectors: Vec<DVector<f64>>) -> Result<Self> {
        let projection = ProjectionMatrix::new(p, vectors.clone())?;
        Ok(DeflationState { vectors, projection })
    }

    pub fn dim(&self) -> usize {
        self.projection.dim()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    /// Orthogonalizes `v` against the stored vectors (one sweep) and renormalizes it.
    pub fn reorthogonalize(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = v.clone();
        for q in &self.vectors {
            let c = r.dot(q);
            r.axpy(-c, q, 1.0);
        }
        let norm = r.norm();
        if !(norm > 1e-10) {
            return Err(Error::Degenerate {
                index: self.vectors.len(),
            });
        }
        Ok(r / norm)
    }

    pub fn push(&mut self, v: DVector<f64>) -> Result<()> {
        let mut vectors = self.vectors.clone();
        vectors.push(v);
        *self = DeflationState::from_vectors(self.dim(), vectors)?;
        Ok(())
    }
}

/// Output of one penalized extraction before it is accepted into a [`DeflationState`].
#[derive(Debug, Clone)]
pub struct Extraction {
    pub vector: DVector<f64>,
    pub admm: AdmmResult,
}

impl Extraction {
    /// The penalized solution `H_j`.
    pub fn h(&self) -> &SymMatrix {
        &self.admm.z_final
    }
}

/// Solves for the next component without modifying `state`.
///
/// With `rho2 > 0` the solver first runs the unpenalized problem and continues from its
/// solution; reported iterations cover both runs.
pub fn extract_candidate(
    s: &SymMatrix,
    state: &DeflationState,
    rho1: f64,
    rho2: f64,
    cfg: &AdmmConfig,
) -> Result<Extraction> {
    let penalty = second_diff_penalty(s.dim())?;
    let mut warm = WarmStart::new(s.dim());
    extract_candidate_from(s, &penalty, state, rho1, rho2, cfg, &mut warm)
}

/// ADMM iterates carried between neighbouring penalties.
pub(crate) struct WarmStart {
    state: AdmmState,
    rho2: Option<f64>,
}

impl WarmStart {
    pub(crate) fn new(p: usize) -> Self {
        WarmStart {
            state: AdmmState::new(p),
            rho2: None,
        }
    }
}

pub(crate) fn extract_candidate_from(
    s: &SymMatrix,
    penalty: &SymMatrix,
    state: &DeflationState,
    rho1: f64,
    rho2: f64,
    cfg: &AdmmConfig,
    warm: &mut WarmStart,
) -> Result<Extraction> {
    let mut spent = 0;
    if rho2 > 0.0 && warm.rho2.is_none() {
        let solver = AdmmSolver::new(s, state.projection(), penalty, rho1, 0.0, cfg)?;
        spent += solver.run_from(&mut warm.state)?.iterations;
        warm.rho2 = Some(0.0);
    }
    let solver = AdmmSolver::new(s, state.projection(), penalty, rho1, rho2, cfg)?;
    if let Some(from) = warm.rho2 {
        warm.state.retarget_rho2(from, rho2, solver.tau());
    }
    let mut admm = solver.run_from(&mut warm.state)?;
    warm.rho2 = Some(rho2);
    admm.iterations += spent;
    finish_extraction(state, admm)
}

fn finish_extraction(state: &DeflationState, admm: AdmmResult) -> Result<Extraction> {
    let eig = sym_eig(&admm.z_final)?;
    if !(eig.values[0] >= DEGENERATE_EIGENVALUE) {
        return Err(Error::domain(format!(
            "component {}: penalized solution has leading eigenvalue {:.3e}",
            state.len() + 1,
            eig.values[0]
        )));
    }
    let vector = state.reorthogonalize(&eig.vector(0))?;
    Ok(Extraction { vector, admm })
}

/// Extracts the next component and appends it to `state`.
pub fn extract_next(
    s: &SymMatrix,
    state: &mut DeflationState,
    rho1: f64,
    rho2: f64,
    cfg: &AdmmConfig,
) -> Result<Extraction> {
    let ex = extract_candidate(s, state, rho1, rho2, cfg)?;
    state.push(ex.vector.clone())?;
    Ok(ex)
}

/// Scales `v` by `√p`, interpolates linearly onto `out_grid` and normalizes to unit L2 norm
/// under uniform weights `1/m`.
pub fn interpolate_eigenfunction(v: &DVector<f64>, grid: &[f64], out_grid: &[f64]) -> Result<Vec<f64>> {
    if v.len() != grid.len() {
        return Err(Error::input(format!(
            "vector has {} entries for a grid of {} points",
            v.len(),
            grid.len()
        )));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("grid must be strictly increasing with at least 2 points"));
    }
    if out_grid.is_empty() {
        return Err(Error::input("empty output grid"));
    }
    let scale = (grid.len() as f64).sqrt();
    let ys: Vec<f64> = v.iter().map(|x| x * scale).collect();
    let mut phi: Vec<f64> = out_grid.iter().map(|&t| lerp(grid, &ys, t)).collect();
    let norm = (phi.iter().map(|x| x * x).sum::<f64>() / phi.len() as f64).sqrt();
    if !(norm > 0.0) {
        return Err(Error::domain("eigenfunction vanishes on the output grid"));
    }
    phi.iter_mut().for_each(|x| *x /= norm);
    Ok(phi)
}

/// `M = min(20, p − 2)`.
pub fn default_fve_terms(p: usize) -> usize {
    p.saturating_sub(2).clamp(1, 20)
}

/// Sum of the top `m` positive eigenvalues of `s`.
pub fn total_variance(s: &SymMatrix, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::input("FVE needs at least one eigenvalue term"));
    }
    let eig = sym_eig(s)?;
    let tot: f64 = eig.values.iter().take(m).filter(|&&x| x > 0.0).sum();
    if !(tot > 0.0) {
        return Err(Error::domain("covariance has no positive eigenvalue"));
    }
    Ok(tot)
}

/// `vᵀSv` over the sum of the top `m` positive eigenvalues.
pub fn fve(v: &DVector<f64>, s: &SymMatrix, m: usize) -> Result<f64> {
    Ok(s.quadratic_form(v) / total_variance(s, m)?)
}

/// Whether another component is needed to reach `threshold` cumulative FVE.
pub fn choose_k(components: &[Component], threshold: f64) -> bool {
    let cumulative: f64 = components.iter().map(|c| c.fve).sum();
    cumulative < threshold
}

/// One fitted component.
#[derive(Debug, Clone, Serialize)]
pub struct Component {
    /// 1-based position in the sequence.
    pub index: usize,
    pub vector: Vec<f64>,
    /// `φ̂_j` on the output grid of the owning [`ComponentSet`].
    pub eigenfunction: Vec<f64>,
    pub rho1: f64,
    pub rho2_used: f64,
    pub fve: f64,
    /// `‖v̂_j‖₁` with entries below [`SUPPORT_CUTOFF`] dropped.
    pub support_mass: f64,
    /// Fraction of grid points with `|v̂_l| ≥` [`SUPPORT_CUTOFF`].
    pub support_fraction: f64,
    pub admm: AdmmResult,
}

impl Component {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.vector)
    }
}

/// Ordered components with the grids they were fitted and reported on.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentSet {
    pub grid: Vec<f64>,
    pub out_grid: Vec<f64>,
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn new(grid: Vec<f64>, out_grid: Vec<f64>) -> Self {
        ComponentSet {
            grid,
            out_grid,
            components: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn total_fve(&self) -> f64 {
        self.components.iter().map(|c| c.fve).sum()
    }

    /// Appends an accepted extraction.
    pub fn push(&mut self, ex: Extraction, rho1: f64, rho2: f64, fve: f64) -> Result<()> {
        let eigenfunction = interpolate_eigenfunction(&ex.vector, &self.grid, &self.out_grid)?;
        let kept: Vec<f64> = ex.vector.iter().filter(|x| x.abs() >= SUPPORT_CUTOFF).map(|x| x.abs()).collect();
        self.components.push(Component {
            index: self.components.len() + 1,
            vector: ex.vector.iter().copied().collect(),
            eigenfunction,
            rho1,
            rho2_used: rho2,
            fve,
            support_mass: kept.iter().sum(),
            support_fraction: kept.len() as f64 / ex.vector.len() as f64,
            admm: ex.admm,
        });
        Ok(())
    }

    /// Largest `|⟨v̂_i, v̂_j⟩|` over distinct pairs.
    pub fn max_cross_inner(&self) -> f64 {
        let vs: Vec<DVector<f64>> = self.components.iter().map(|c| c.vector()).collect();
        let mut worst = 0.0f64;
        for i in 0..vs.len() {
            for j in 0..i {
                worst = worst.max(vs[i].dot(&vs[j]).abs());
            }
        }
        worst
    }

    /// Eigenfunctions sampled on the fitting grid, one per component.
    pub fn eigenfunctions_on_grid(&self) -> Result<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|c| interpolate_eigenfunction(&c.vector(), &self.grid, &self.grid))
            .collect()
    }
}

/// `ξ̂_ij = Σ_l (Y_il − μ̂_l) φ̂_j(t_l) / p`.
pub fn scores(dataset: &CurveDataset, mu: &[f64], eigenfunctions: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = dataset.p();
    if mu.len() != p || eigenfunctions.iter().any(|f| f.len() != p) {
        return Err(Error::input(format!(
            "grid mismatch: dataset has {p} points, mean or eigenfunctions do not"
        )));
    }
    if dataset.has_missing() {
        return Err(Error::input("scores need complete curves; regrid first"));
    }
    let y = dataset.values();
    let dt = 1.0 / p as f64;
    Ok(DMatrix::from_fn(dataset.n(), eigenfunctions.len(), |i, j| {
        (0..p)
            .map(|l| (y[(i, l)] - mu[l]) * eigenfunctions[j][l])
            .sum::<f64>()
            * dt
    }))
}

/// `X̂_i = μ̂ + Σ_j ξ̂_ij φ̂_j` on the grid.
pub fn reconstruct(mu: &[f64], eigenfunctions: &[Vec<f64>], scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = mu.len();
    if scores.ncols() != eigenfunctions.len() || eigenfunctions.iter().any(|f| f.len() != p) {
        return Err(Error::input("scores, eigenfunctions and mean have inconsistent sizes"));
    }
    Ok(DMatrix::from_fn(scores.nrows(), p, |i, l| {
        mu[l] + (0..eigenfunctions.len()).map(|j| scores[(i, j)] * eigenfunctions[j][l]).sum::<f64>()
    }))
}

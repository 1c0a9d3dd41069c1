//! Euclidean projection onto the deflated Fantope
//! `D_Π = {H : 0 ⪯ H ⪯ I, trace(H) = 1, ⟨H, Π⟩ = 0}`.
//!
//! The projection restricts `A` to the orthogonal complement of `Π`, diagonalizes it there,
//! and clips the eigenvalues to `min(max(γ − θ, 0), 1)` with the shift `θ` picked so that
//! the clipped values sum to one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gram_schmidt, sym_eig_matrix, SymMatrix};
use crate::spectrum::TopSpectrum;

const ORTHONORMAL_TOL: f64 = 1e-10;
/// Below this size the full decomposition is cheaper than the partial one.
const FAST_MIN_DIM: usize = 16;
const FAST_MAX_TERMS: usize = 24;
const RESIDUAL_RTOL: f64 = 1e-10;

/// Orthogonal projector `Π = V Vᵀ` onto the span of `d < p` orthonormal vectors.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    dim: usize,
    basis: Vec<DVector<f64>>,
}

impl ProjectionMatrix {
    /// `Π = 0` in dimension `p`.
    pub fn empty(dim: usize) -> Self {
        ProjectionMatrix {
            dim,
            basis: Vec::new(),
        }
    }

    pub fn new(dim: usize, basis: Vec<DVector<f64>>) -> Result<Self> {
        if basis.len() >= dim {
            return Err(Error::domain(format!(
                "projection rank {} leaves an empty complement in dimension {dim}",
                basis.len()
            )));
        }
        for (i, u) in basis.iter().enumerate() {
            if u.len() != dim {
                return Err(Error::input(format!(
                    "basis vector {i} has length {}, expected {dim}",
                    u.len()
                )));
            }
            for (j, w) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if (u.dot(w) - target).abs() > ORTHONORMAL_TOL {
                    return Err(Error::input(format!(
                        "basis vectors {j} and {i} are not orthonormal"
                    )));
                }
            }
        }
        Ok(ProjectionMatrix { dim, basis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// Dense `V Vᵀ`.
    pub fn matrix(&self) -> SymMatrix {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for v in &self.basis {
            m.ger(1.0, v, v, 1.0);
        }
        SymMatrix::from_symmetric_unchecked(m)
    }

    /// `(I − Π) A (I − Π)`.
    pub fn deflate(&self, a: &SymMatrix) -> SymMatrix {
        let mut q = DMatrix::identity(self.dim, self.dim);
        q -= self.matrix().as_matrix();
        let m = &q * a.as_matrix() * &q;
        SymMatrix::from_symmetric_unchecked(0.5 * (&m + m.transpose()))
    }
}

/// A point of the deflated Fantope produced by [`project_deflated_fantope`].
#[derive(Debug, Clone)]
pub struct FantopePoint {
    pub h: SymMatrix,
}

impl FantopePoint {
    /// Checks trace, spectrum and orthogonality to `Π` at tolerance `tol`.
    pub fn is_feasible(&self, projection: &ProjectionMatrix, tol: f64) -> bool {
        let Ok(eig) = sym_eig_matrix(self.h.as_matrix()) else {
            return false;
        };
        let spectrum_ok = eig.values.iter().all(|&x| x >= -tol && x <= 1.0 + tol);
        let trace_ok = (self.h.trace() - 1.0).abs() <= tol;
        let orth_ok = self.h.inner(&projection.matrix()).abs() <= tol;
        spectrum_ok && trace_ok && orth_ok
    }
}

/// Orthonormal basis `U` (`p × (p−d)`) of the complement of `span(V)`.
pub fn complement_basis(projection: &ProjectionMatrix) -> Result<DMatrix<f64>> {
    let p = projection.dim();
    let d = projection.rank();
    if d >= p {
        return Err(Error::domain(format!(
            "no complement: rank {d} in dimension {p}"
        )));
    }
    if d == 0 {
        return Ok(DMatrix::identity(p, p));
    }
    let mut q = DMatrix::identity(p, p);
    q -= projection.matrix().as_matrix();
    let eig = sym_eig_matrix(&q)?;
    let cols: Vec<DVector<f64>> = (0..p - d).map(|k| eig.vector(k)).collect();
    let cols = gram_schmidt(&cols, &vec![1.0; p])?;
    Ok(DMatrix::from_columns(&cols))
}

/// Shift `θ` with `Σ min(max(γ_i − θ, 0), 1) = 1`.
///
/// The sum is a continuous nonincreasing piecewise-linear function of `θ` with kinks at
/// `γ_i` and `γ_i − 1`. The kinks are scanned from the right until the sum reaches one and
/// `θ` is then solved in closed form on that segment. When the sum equals one on a whole
/// interval the right end of the interval is returned.
pub fn water_fill_theta(gammas: &[f64]) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::input("water-filling needs at least one eigenvalue"));
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::input("water-filling input contains non-finite values"));
    }
    let mut kinks: Vec<f64> = gammas.iter().flat_map(|&g| [g, g - 1.0]).collect();
    kinks.sort_by(|a, b| b.total_cmp(a));
    kinks.dedup();

    let mut upper = kinks[0];
    let last = kinks.len() - 1;
    for (idx, &b) in kinks.iter().enumerate() {
        let total = clipped_sum(gammas, b);
        // At the lowest kink every value is saturated, so the sum is the count up to rounding.
        if total >= 1.0 || idx == last {
            if total == 1.0 {
                return Ok(b);
            }
            // On (b, upper] each γ_i is saturated (γ_i − 1 ≥ upper), free, or inactive.
            let mut saturated = 0.0;
            let mut free_sum = 0.0;
            let mut free_count = 0usize;
            for &g in gammas {
                if g - 1.0 >= upper {
                    saturated += 1.0;
                } else if g > b {
                    free_sum += g;
                    free_count += 1;
                }
            }
            if free_count == 0 {
                return Ok(upper);
            }
            let theta = (free_sum + saturated - 1.0) / free_count as f64;
            return Ok(theta.clamp(b, upper));
        }
        upper = b;
    }
    unreachable!("the lowest kink always terminates the scan")
}

/// `Σ min(max(γ − θ, 0), 1)`.
pub fn clipped_sum(gammas: &[f64], theta: f64) -> f64 {
    gammas.iter().map(|&g| clip(g, theta)).sum()
}

#[inline]
pub fn clip(gamma: f64, theta: f64) -> f64 {
    (gamma - theta).clamp(0.0, 1.0)
}

/// Frobenius projection of `a` onto `D_Π`.
pub fn project_deflated_fantope(a: &SymMatrix, projection: &ProjectionMatrix) -> Result<FantopePoint> {
    if a.dim() != projection.dim() {
        return Err(Error::input(format!(
            "matrix dimension {} does not match projection dimension {}",
            a.dim(),
            projection.dim()
        )));
    }
    let projector = DeflatedProjector::new(projection)?;
    let h = projector.project(a.as_matrix())?;
    Ok(FantopePoint {
        h: SymMatrix::from_symmetric_unchecked(h),
    })
}

/// Projection onto a fixed `D_Π`.
///
/// Instead of changing to complement coordinates, the directions of `Π` are pushed below
/// the spectrum: `B = (I − Π)A(I − Π) − cΠ` with `c > ‖A‖ + 1` has the restricted spectrum
/// of `A` plus `d` copies of `−c`, and every admissible `θ` exceeds `−c`, so those copies
/// are clipped to zero.
#[derive(Debug, Clone)]
pub(crate) struct DeflatedProjector {
    /// `p × d` orthonormal basis of `Π`; `None` when `Π = 0`.
    basis: Option<DMatrix<f64>>,
}

impl DeflatedProjector {
    pub(crate) fn new(projection: &ProjectionMatrix) -> Result<Self> {
        let (p, d) = (projection.dim(), projection.rank());
        if d >= p {
            return Err(Error::domain(format!("no complement: rank {d} in dimension {p}")));
        }
        let basis = (d > 0).then(|| DMatrix::from_columns(projection.basis()));
        Ok(DeflatedProjector { basis })
    }

    pub(crate) fn project(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("projection of a matrix with non-finite entries"));
        }
        let b = match &self.basis {
            None => a.clone(),
            Some(v) => {
                let av = a * v;
                let vav = v.transpose() * &av;
                let c = a.norm() + 2.0;
                let mut inner = vav;
                for i in 0..inner.nrows() {
                    inner[(i, i)] -= c;
                }
                // A − V(AV)ᵀ − (AV)Vᵀ + V(VᵀAV − cI)Vᵀ
                let mut b = a.clone();
                b.gemm(-1.0, v, &av.transpose(), 1.0);
                b.gemm(-1.0, &av, &v.transpose(), 1.0);
                let vi = v * inner;
                b.gemm(1.0, &vi, &v.transpose(), 1.0);
                0.5 * (&b + b.transpose())
            }
        };
        let terms = match leading_terms(&b) {
            Some(terms) => terms,
            None => all_terms(&b)?,
        };
        let p = a.nrows();
        let mut h = DMatrix::zeros(p, p);
        for (w, mut eta) in terms {
            if let Some(v) = &self.basis {
                let coef = v.transpose() * &eta;
                eta.gemv(-1.0, v, &coef, 1.0);
            }
            h.ger(w, &eta, &eta, 1.0);
        }
        Ok(0.5 * (&h + h.transpose()))
    }
}

/// Clipped weights and eigenvectors from the full decomposition.
fn all_terms(a: &DMatrix<f64>) -> Result<Vec<(f64, DVector<f64>)>> {
    let eig = sym_eig_matrix(a)?;
    let theta = water_fill_theta(eig.values.as_slice())?;
    Ok(eig
        .values
        .iter()
        .enumerate()
        .filter_map(|(k, &g)| {
            let w = clip(g, theta);
            (w > 0.0).then(|| (w, eig.vector(k)))
        })
        .collect())
}

/// Clipped weights and eigenvectors computed from the top of the spectrum only.
///
/// Eigenvalues are added until the shift found from them has no further eigenvalue above it,
/// at which point the remaining ones would be clipped to zero. Returns `None` when too many
/// eigenvalues are active or an eigenvector fails its residual check.
fn leading_terms(a: &DMatrix<f64>) -> Option<Vec<(f64, DVector<f64>)>> {
    let m = a.nrows();
    if m < FAST_MIN_DIM {
        return None;
    }
    let mut spectrum = TopSpectrum::new(a);
    let limit = FAST_MAX_TERMS.min(m / 4);
    let mut gammas = vec![spectrum.value(0)];
    loop {
        let theta = water_fill_theta(&gammas).ok()?;
        if spectrum.count_above(theta) <= gammas.len() {
            let weights: Vec<f64> = gammas.iter().map(|&g| clip(g, theta)).take_while(|&w| w > 0.0).collect();
            let vectors = spectrum.vectors(weights.len())?;
            let tol = RESIDUAL_RTOL * a.norm().max(1.0);
            for (g, v) in gammas.iter().zip(&vectors) {
                if !((a * v - v * *g).norm() <= tol) {
                    return None;
                }
            }
            return Some(weights.into_iter().zip(vectors).collect());
        }
        if gammas.len() >= limit {
            return None;
        }
        let next = spectrum.value(gammas.len());
        gammas.push(next);
    }
}

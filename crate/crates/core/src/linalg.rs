//! Dense symmetric linear algebra shared by the solver, the tuning code and the simulator.
//!
//! Everything here works on small dense matrices (a few hundred rows at most). The
//! eigensolver is nalgebra's Householder tridiagonalization followed by implicit QR; this
//! module adds a descending order and a deterministic sign convention on top of it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used to decide that two absolute entries tie for the sign convention.
const SIGN_TIE_RTOL: f64 = 1e-12;

/// A real symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, symmetrizing it as `(A + Aᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::input(format!(
                "matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("matrix contains non-finite entries"));
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from a row-major slice of `p * p` values.
    pub fn from_row_slice(p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * p {
            return Err(Error::input(format!(
                "expected {} values for a {p}x{p} matrix, got {}",
                p * p,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(p, p, values))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    /// Trusted constructor for matrices the caller knows to be symmetric and finite.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(m)
    }

    fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius inner product `⟨A, B⟩ = trace(AᵀB)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Sum of absolute entries, `‖A‖₁,₁`.
    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    /// Linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SymMatrix, b: f64) -> SymMatrix {
        SymMatrix(&self.0 * a + &other.0 * b)
    }
}

/// Full spectral decomposition with eigenvalues in nonincreasing order.
///
/// Eigenvector `k` is column `k` of `vectors`; the entry of largest magnitude in each
/// column is positive, ties going to the lowest index.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.vectors.column(k).into_owned()
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, k| {
            self.vectors[(i, k)] * self.values[k]
        });
        &scaled * self.vectors.transpose()
    }
}

pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    sym_eig_matrix(a.as_matrix())
}

pub(crate) fn sym_eig_matrix(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("eigendecomposition of a matrix with non-finite entries"));
    }
    let p = a.nrows();
    if p == 0 {
        return Ok(EigenDecomposition {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let m = faer::Mat::<f64>::from_fn(p, p, |i, j| a[(i, j)]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical {
            iteration: 0,
            message: format!("symmetric eigendecomposition failed: {e:?}"),
        })?;
    let (s, u) = (eig.S(), eig.U());
    if (0..p).any(|k| !s[k].is_finite()) {
        return Err(Error::Numerical {
            iteration: 0,
            message: "symmetric eigendecomposition produced non-finite eigenvalues".into(),
        });
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let values = DVector::from_iterator(p, order.iter().map(|&k| s[k]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = DVector::from_fn(p, |i, _| u[(i, src)]);
        normalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let max_abs = v.amax();
    if max_abs == 0.0 {
        return;
    }
    let cutoff = max_abs * (1.0 - SIGN_TIE_RTOL);
    if let Some(lead) = v.iter().find(|x| x.abs() >= cutoff) {
        if *lead < 0.0 {
            v.neg_mut();
        }
    }
}

/// Elementwise `sign(x)·max(|x| − a, 0)`.
pub fn soft_threshold(a: &SymMatrix, level: f64) -> Result<SymMatrix> {
    if !(level >= 0.0) {
        return Err(Error::input(format!(
            "soft-threshold level must be nonnegative, got {level}"
        )));
    }
    Ok(SymMatrix(soft_threshold_matrix(a.as_matrix(), level)))
}

pub(crate) fn soft_threshold_matrix(a: &DMatrix<f64>, level: f64) -> DMatrix<f64> {
    a.map(|x| shrink(x, level))
}

#[inline]
pub(crate) fn shrink(x: f64, level: f64) -> f64 {
    if x > level {
        x - level
    } else if x < -level {
        x + level
    } else {
        0.0
    }
}

/// Weighted inner product `Σ u_l v_l w_l`.
pub fn weighted_dot(u: &DVector<f64>, v: &DVector<f64>, weights: &[f64]) -> f64 {
    u.iter()
        .zip(v.iter())
        .zip(weights)
        .map(|((a, b), w)| a * b * w)
        .sum()
}

/// Uniform quadrature weights `1/p`.
pub fn uniform_weights(p: usize) -> Vec<f64> {
    vec![1.0 / p as f64; p]
}

/// Modified Gram-Schmidt under the weighted inner product, processed in input order.
///
/// Each vector is swept twice against its predecessors, so nearly dependent inputs still
/// come out orthonormal to working precision. A residual whose norm falls below `1e-10`
/// times the input norm is reported as [`Error::Degenerate`].
pub fn gram_schmidt(vs: &[DVector<f64>], weights: &[f64]) -> Result<Vec<DVector<f64>>> {
    let Some(first) = vs.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if weights.len() != len {
        return Err(Error::input(format!(
            "expected {len} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::input("quadrature weights must be positive"));
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vs.len());
    for (index, v) in vs.iter().enumerate() {
        if v.len() != len {
            return Err(Error::input(format!(
                "vector {index} has length {}, expected {len}",
                v.len()
            )));
        }
        let norm_in = weighted_dot(v, v, weights).sqrt();
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = weighted_dot(&r, q, weights);
                r.axpy(-c, q, 1.0);
            }
        }
        let norm = weighted_dot(&r, &r, weights).sqrt();
        if !(norm > 1e-10 * norm_in) {
            return Err(Error::Degenerate { index });
        }
        r /= norm;
        out.push(r);
    }
    Ok(out)
}

/// Roughening matrix `D = ΔᵀΔ` for the `(p−2)×p` second-difference operator `Δ`.
pub fn second_diff_penalty(p: usize) -> Result<SymMatrix> {
    if p < 3 {
        return Err(Error::input(format!(
            "second-difference penalty needs p >= 3, got {p}"
        )));
    }
    const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];
    let mut d = DMatrix::zeros(p, p);
    for row in 0..p - 2 {
        for (a, ca) in STENCIL.iter().enumerate() {
            for (b, cb) in STENCIL.iter().enumerate() {
                d[(row + a, row + b)] += ca * cb;
            }
        }
    }
    Ok(SymMatrix(d))
}

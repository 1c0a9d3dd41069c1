//! Leading eigenpairs of a dense symmetric matrix on demand.
//!
//! The matrix is reduced once to tridiagonal form `A = Q T Qᵀ` by Householder reflections,
//! with `Q` kept in factored form. Eigenvalues are located from the top by bisection on Sturm
//! counts, which also gives exact counts of eigenvalues above any threshold. Eigenvectors come
//! from inverse iteration on `T` with a pivoted tridiagonal solve, reorthogonalized within
//! clusters, and are mapped back through the reflectors.

use nalgebra::{DMatrix, DVector};

const BISECTION_STEPS: usize = 128;
const INVERSE_ITERATIONS: usize = 3;
const CLUSTER_RTOL: f64 = 1e-3;

pub(crate) struct TopSpectrum {
    reflectors: Reflectors,
    diag: Vec<f64>,
    off: Vec<f64>,
    lo: f64,
    hi: f64,
    scale: f64,
    values: Vec<f64>,
}

impl TopSpectrum {
    pub(crate) fn new(a: &DMatrix<f64>) -> Self {
        let (reflectors, diag, off) = tridiagonalize(a);
        let m = diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..m {
            let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < m { off[i].abs() } else { 0.0 };
            lo = lo.min(diag[i] - r);
            hi = hi.max(diag[i] + r);
        }
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        TopSpectrum {
            reflectors,
            diag,
            off,
            lo,
            hi,
            scale,
            values: Vec::new(),
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly above `x`.
    pub(crate) fn count_above(&self, x: f64) -> usize {
        let m = self.dim();
        let tiny = f64::MIN_POSITIVE / f64::EPSILON;
        let mut below = 0;
        let mut d = self.diag[0] - x;
        for i in 0..m {
            if i > 0 {
                d = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / d;
            }
            if d == 0.0 {
                d = -tiny;
            }
            if d < 0.0 {
                below += 1;
            }
        }
        m - below
    }

    /// The `k`-th largest eigenvalue (0-based); requires the previous ones to be computed first.
    pub(crate) fn value(&mut self, k: usize) -> f64 {
        while self.values.len() <= k {
            let idx = self.values.len();
            let mut lo = self.lo - self.scale * f64::EPSILON;
            let mut hi = self.values.last().copied().unwrap_or(self.hi) + self.scale * f64::EPSILON;
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_above(mid) > idx {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            self.values.push(0.5 * (lo + hi));
        }
        self.values[k]
    }

    /// Unit eigenvectors of the original matrix for the first `r` computed eigenvalues, or
    /// `None` if inverse iteration overflowed.
    pub(crate) fn vectors(&self, r: usize) -> Option<Vec<DVector<f64>>> {
        let m = self.dim();
        let mut tri_vectors: Vec<Vec<f64>> = Vec::with_capacity(r);
        for k in 0..r {
            let lambda = self.values[k];
            let shift = lambda + self.scale * f64::EPSILON * 4.0;
            let cluster: Vec<usize> = (0..k)
                .filter(|&i| (self.values[i] - lambda).abs() <= CLUSTER_RTOL * self.scale)
                .collect();
            let mut x: Vec<f64> = (0..m).map(|i| start_entry(i, k)).collect();
            for _ in 0..INVERSE_ITERATIONS {
                x = solve_shifted(&self.diag, &self.off, shift, x, self.scale);
                for &i in &cluster {
                    let c: f64 = x.iter().zip(&tri_vectors[i]).map(|(a, b)| a * b).sum();
                    for (xi, yi) in x.iter_mut().zip(&tri_vectors[i]) {
                        *xi -= c * yi;
                    }
                }
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return None;
                }
                x.iter_mut().for_each(|v| *v /= norm);
            }
            tri_vectors.push(x);
        }
        Some(
            tri_vectors
                .into_iter()
                .map(|mut y| {
                    self.reflectors.apply(&mut y);
                    DVector::from_vec(y)
                })
                .collect(),
        )
    }
}

/// `Q = H₀ H₁ ⋯ H_{m−3}` with `H_k = I − τ_k v_k v_kᵀ` acting on entries `k+1..m`.
struct Reflectors {
    m: usize,
    /// Column-major; column `k` holds `v_k[k+1..]` below the diagonal with `v_k[k+1] = 1` implied.
    store: Vec<f64>,
    taus: Vec<f64>,
}

impl Reflectors {
    /// `y ← Q y`.
    fn apply(&self, y: &mut [f64]) {
        let m = self.m;
        for k in (0..self.taus.len()).rev() {
            let tau = self.taus[k];
            if tau == 0.0 {
                continue;
            }
            let col = &self.store[k * m..(k + 1) * m];
            let mut dot = y[k + 1];
            for i in k + 2..m {
                dot += col[i] * y[i];
            }
            let c = tau * dot;
            y[k + 1] -= c;
            for i in k + 2..m {
                y[i] -= c * col[i];
            }
        }
    }
}

/// Householder reduction of the lower triangle of `a`, returning the reflectors, diagonal and
/// subdiagonal of `T`.
fn tridiagonalize(a: &DMatrix<f64>) -> (Reflectors, Vec<f64>, Vec<f64>) {
    let m = a.nrows();
    let mut w: Vec<f64> = a.as_slice().to_vec();
    let mut taus = Vec::with_capacity(m.saturating_sub(2));
    let mut off = vec![0.0; m.saturating_sub(1)];
    let mut v = vec![0.0; m];
    let mut y = vec![0.0; m];
    for k in 0..m.saturating_sub(2) {
        let lo = k + 1;
        let alpha = w[k * m + lo];
        let xnorm = w[k * m + lo + 1..(k + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            taus.push(0.0);
            off[k] = alpha;
            continue;
        }
        let beta = -alpha.signum() * alpha.hypot(xnorm);
        let tau = (beta - alpha) / beta;
        let scale = 1.0 / (alpha - beta);
        v[lo] = 1.0;
        for i in lo + 1..m {
            w[k * m + i] *= scale;
            v[i] = w[k * m + i];
        }
        off[k] = beta;
        taus.push(tau);

        // y = τ A₂₂ v from the lower triangle of the trailing block
        y[lo..].iter_mut().for_each(|x| *x = 0.0);
        for j in lo..m {
            let col = &w[j * m + j + 1..(j + 1) * m];
            let vj = v[j];
            let acc = axpy_dot(&mut y[j + 1..], col, &v[j + 1..], vj);
            y[j] += w[j * m + j] * vj + acc;
        }
        let mut yv = 0.0;
        for (yi, vi) in y[lo..].iter_mut().zip(&v[lo..]) {
            *yi *= tau;
            yv += *yi * vi;
        }
        let half = 0.5 * tau * yv;
        for (yi, vi) in y[lo..].iter_mut().zip(&v[lo..]) {
            *yi -= half * vi;
        }
        for j in lo..m {
            let (vj, yj) = (v[j], y[j]);
            rank2_update(&mut w[j * m + j..(j + 1) * m], &v[j..], &y[j..], yj, vj);
        }
    }
    if m >= 2 {
        off[m - 2] = w[(m - 2) * m + m - 1];
    }
    let diag = (0..m).map(|i| w[i * m + i]).collect();
    (Reflectors { m, store: w, taus }, diag, off)
}

/// `y += s·c` and returns `c·v`, in one pass with four partial sums.
fn axpy_dot(y: &mut [f64], c: &[f64], v: &[f64], s: f64) -> f64 {
    let n = c.len();
    let (y, c, v) = (&mut y[..n], &c[..n], &v[..n]);
    let mut acc = [0.0; 4];
    let split = n - n % 4;
    for ((yc, cc), vc) in y[..split]
        .chunks_exact_mut(4)
        .zip(c[..split].chunks_exact(4))
        .zip(v[..split].chunks_exact(4))
    {
        for l in 0..4 {
            yc[l] += cc[l] * s;
            acc[l] += cc[l] * vc[l];
        }
    }
    let mut tail = 0.0;
    for i in split..n {
        y[i] += c[i] * s;
        tail += c[i] * v[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c −= v·a + y·b`.
fn rank2_update(c: &mut [f64], v: &[f64], y: &[f64], a: f64, b: f64) {
    let n = c.len();
    let (v, y) = (&v[..n], &y[..n]);
    let split = n - n % 4;
    for ((cc, vc), yc) in c[..split]
        .chunks_exact_mut(4)
        .zip(v[..split].chunks_exact(4))
        .zip(y[..split].chunks_exact(4))
    {
        for l in 0..4 {
            cc[l] -= vc[l] * a + yc[l] * b;
        }
    }
    for i in split..n {
        c[i] -= v[i] * a + y[i] * b;
    }
}

/// Deterministic start vector with no special alignment to coordinate or alternating patterns.
fn start_entry(i: usize, k: usize) -> f64 {
    let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    0.5 + (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Solves `(T − σI) x = b` by Gaussian elimination with partial pivoting, replacing zero pivots
/// with a tiny multiple of `scale`.
fn solve_shifted(diag: &[f64], off: &[f64], sigma: f64, mut b: Vec<f64>, scale: f64) -> Vec<f64> {
    let n = diag.len();
    let tiny = scale * f64::EPSILON;
    let mut d: Vec<f64> = diag.iter().map(|x| x - sigma).collect();
    if n == 1 {
        if d[0] == 0.0 {
            d[0] = tiny;
        }
        b[0] /= d[0];
        return b;
    }
    let mut dl = off.to_vec();
    let mut du = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut swapped = vec![false; n - 1];
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let fact = dl[i] / d[i];
            dl[i] = fact;
            d[i + 1] -= fact * du[i];
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = fact;
            let temp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = temp - fact * d[i + 1];
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            swapped[i] = true;
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    for i in 0..n - 1 {
        if swapped[i] {
            let temp = b[i];
            b[i] = b[i + 1];
            b[i + 1] = temp - dl[i] * b[i];
        } else {
            b[i + 1] -= dl[i] * b[i];
        }
    }
    b[n - 1] /= d[n - 1];
    b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
    b
}

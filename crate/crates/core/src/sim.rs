//! Karhunen-Loève curve simulator with localized (B-spline) and global (Fourier) modes.
//!
//! Scenario I orthonormalizes `B₃, B₆, B₉` (cubic B-splines on eight equally spaced interior
//! knots, 1-based indices) followed by five Fourier modes. Scenario II uses eight Fourier
//! modes directly. Curves are `Y_il = Σ_j ξ_ij φ_j(t_l) + ε_il` with `ξ_ij ~ N(0, λ_j)`,
//! `ε_il ~ N(0, σ²)` on an equally spaced grid of `[0, 1]` and zero mean.
//!
//! Random numbers come from ChaCha8 seeded with `seed` and `rand_distr`'s ziggurat
//! `StandardNormal`; all scores are drawn before any noise so both scenarios share streams.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{uniform_grid, CurveDataset};
use crate::error::{Error, Result};
use crate::linalg::weighted_dot;

/// `λ_j` used by both scenarios.
pub const EIGENVALUES: [f64; 8] = [16.0, 9.0, 6.25, 1.5625, 1.0, 0.5625, 0.25, 0.0625];

/// Points of the evaluation grid `t_l = l/m`, `l = 0..m`, used for truth and error metrics.
pub const FINE_GRID_POINTS: usize = 2001;

const INTERIOR_KNOTS: usize = 8;
const DEGREE: usize = 3;
/// 1-based indices of the B-splines that seed the localized modes.
const LOCALIZED_SPLINES: [usize; 3] = [3, 6, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Localized leading eigenfunctions.
    I,
    /// Fourier eigenfunctions.
    II,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "1" => Ok(Scenario::I),
            "II" | "ii" | "2" => Ok(Scenario::II),
            other => Err(Error::input(format!("unknown scenario {other:?}; use I or II"))),
        }
    }
}

/// Clamped knot vector on `[0, 1]`: boundary knots repeated `degree + 1` times.
fn clamped_knots(n_interior: usize, degree: usize) -> Vec<f64> {
    let mut knots = vec![0.0; degree + 1];
    knots.extend((1..=n_interior).map(|k| k as f64 / (n_interior + 1) as f64));
    knots.extend(std::iter::repeat(1.0).take(degree + 1));
    knots
}

/// All `n_interior + degree + 1` B-spline basis values at `t ∈ [0, 1]` (Cox-de Boor).
pub fn bspline_basis(n_interior: usize, degree: usize, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("B-spline argument {t} outside [0, 1]")));
    }
    let knots = clamped_knots(n_interior, degree);
    let nbasis = n_interior + degree + 1;

    // Degree-0 indicator: half-open spans, except the last nonempty span is closed at 1.
    let last_span = knots.len() - degree - 2;
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|j| {
            let inside = if j == last_span {
                knots[j] <= t && t <= knots[j + 1]
            } else {
                knots[j] <= t && t < knots[j + 1]
            };
            if inside && knots[j] < knots[j + 1] {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    for k in 1..=degree {
        b = (0..knots.len() - 1 - k)
            .map(|j| {
                let mut v = 0.0;
                let left = knots[j + k] - knots[j];
                if left > 0.0 {
                    v += (t - knots[j]) / left * b[j];
                }
                let right = knots[j + k + 1] - knots[j + 1];
                if right > 0.0 {
                    v += (knots[j + k + 1] - t) / right * b[j + 1];
                }
                v
            })
            .collect();
    }
    debug_assert_eq!(b.len(), nbasis);
    Ok(b)
}

/// Fourier mode for 1-based index `j`: `√2 cos((j+1)πt)` for odd `j`, `√2 sin(jπt)` for even.
fn fourier_mode(j: usize, t: f64) -> f64 {
    if j % 2 == 1 {
        SQRT_2 * ((j + 1) as f64 * PI * t).cos()
    } else {
        SQRT_2 * (j as f64 * PI * t).sin()
    }
}

/// The eight functions before orthonormalization, evaluated at `t`.
fn raw_functions(scenario: Scenario, t: f64) -> [f64; 8] {
    let mut out = [0.0; 8];
    let splines = match scenario {
        Scenario::I => Some(bspline_basis(INTERIOR_KNOTS, DEGREE, t.clamp(0.0, 1.0)).expect("clamped")),
        Scenario::II => None,
    };
    for (idx, slot) in out.iter_mut().enumerate() {
        let j = idx + 1;
        *slot = match (&splines, LOCALIZED_SPLINES.get(idx)) {
            (Some(b), Some(&b_index)) => b[b_index - 1],
            _ => fourier_mode(j, t),
        };
    }
    out
}

/// Orthonormal true eigenfunctions, kept both as fine-grid samples and as coefficients on
/// the raw functions so they can be evaluated exactly anywhere.
#[derive(Debug, Clone)]
pub struct TrueEigenfunctions {
    pub scenario: Scenario,
    /// `t_l = l/m` for `l = 0..m`.
    pub fine_grid: Vec<f64>,
    /// Column `j` holds `φ_{j+1}` on the fine grid.
    pub samples: DMatrix<f64>,
    /// `φ_j = Σ_k coef[(j, k)] φ̃_k`.
    coef: DMatrix<f64>,
}

impl TrueEigenfunctions {
    pub fn count(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample(&self, j: usize) -> DVector<f64> {
        self.samples.column(j).into_owned()
    }

    /// `φ_{j+1}(t)`.
    pub fn eval(&self, j: usize, t: f64) -> f64 {
        let raw = raw_functions(self.scenario, t);
        (0..raw.len()).map(|k| self.coef[(j, k)] * raw[k]).sum()
    }

    /// Quadrature weights `1/m` on the fine grid.
    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.fine_grid.len() as f64; self.fine_grid.len()]
    }
}

pub fn fine_grid(m: usize) -> Vec<f64> {
    (0..m).map(|l| l as f64 / m as f64).collect()
}

pub fn make_eigenfunctions(scenario: Scenario) -> TrueEigenfunctions {
    let grid = fine_grid(FINE_GRID_POINTS);
    let m = grid.len();
    let weights = vec![1.0 / m as f64; m];
    let raw: Vec<[f64; 8]> = grid.iter().map(|&t| raw_functions(scenario, t)).collect();
    let raw_cols: Vec<DVector<f64>> = (0..8)
        .map(|k| DVector::from_iterator(m, raw.iter().map(|r| r[k])))
        .collect();

    let (samples, coef) = match scenario {
        Scenario::II => (DMatrix::from_columns(&raw_cols), DMatrix::identity(8, 8)),
        Scenario::I => gram_schmidt_tracked(&raw_cols, &weights),
    };
    TrueEigenfunctions {
        scenario,
        fine_grid: grid,
        samples,
        coef,
    }
}

/// Gram-Schmidt in input order that also records each output as a combination of inputs.
fn gram_schmidt_tracked(cols: &[DVector<f64>], weights: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = cols.len();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut coef = DMatrix::<f64>::zeros(k, k);
    for (j, col) in cols.iter().enumerate() {
        let mut r = col.clone();
        let mut c = DVector::<f64>::zeros(k);
        c[j] = 1.0;
        for _ in 0..2 {
            for (i, q) in out.iter().enumerate() {
                let proj = weighted_dot(&r, q, weights);
                r.axpy(-proj, q, 1.0);
                let ci = coef.row(i).transpose();
                c.axpy(-proj, &ci, 1.0);
            }
        }
        let norm = weighted_dot(&r, &r, weights).sqrt();
        r /= norm;
        c /= norm;
        coef.set_row(j, &c.transpose());
        out.push(r);
    }
    (DMatrix::from_columns(&out), coef)
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
    pub eigenvalues: Vec<f64>,
}

impl SimSpec {
    pub fn new(scenario: Scenario, n: usize, p: usize, sigma: f64, seed: u64) -> Self {
        SimSpec {
            scenario,
            n,
            p,
            sigma,
            seed,
            eigenvalues: EIGENVALUES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 3 {
            return Err(Error::input(format!(
                "simulation needs n >= 1 and p >= 3, got n={}, p={}",
                self.n, self.p
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::input(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if self.eigenvalues.is_empty() || self.eigenvalues.len() > 8 {
            return Err(Error::input("between 1 and 8 eigenvalues are supported"));
        }
        if self.eigenvalues.iter().any(|l| !(*l >= 0.0))
            || self.eigenvalues.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::input("eigenvalues must be nonnegative and nonincreasing"));
        }
        Ok(())
    }
}

/// Truth behind one simulated sample.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub eigenfunctions: TrueEigenfunctions,
    /// `n × K` scores `ξ_ij`.
    pub scores: DMatrix<f64>,
    /// Noise-free curves `X_i(t_l)`.
    pub clean: DMatrix<f64>,
}

pub fn simulate(spec: &SimSpec) -> Result<(CurveDataset, GroundTruth)> {
    let truth = make_eigenfunctions(spec.scenario);
    simulate_with(spec, &truth)
}

/// As [`simulate`] with precomputed eigenfunctions for `spec.scenario`.
pub fn simulate_with(spec: &SimSpec, eigenfunctions: &TrueEigenfunctions) -> Result<(CurveDataset, GroundTruth)> {
    spec.validate()?;
    if eigenfunctions.scenario != spec.scenario {
        return Err(Error::input("eigenfunctions belong to a different scenario"));
    }
    let k = spec.eigenvalues.len();
    let grid = uniform_grid(0.0, 1.0, spec.p);
    let phi = DMatrix::from_fn(k, spec.p, |j, l| eigenfunctions.eval(j, grid[l]));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scores = DMatrix::zeros(spec.n, k);
    for i in 0..spec.n {
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            scores[(i, j)] = spec.eigenvalues[j].sqrt() * z;
        }
    }
    let clean = &scores * &phi;
    let mut values = clean.clone();
    for i in 0..spec.n {
        for l in 0..spec.p {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i, l)] += spec.sigma * z;
        }
    }
    let dataset = CurveDataset::new(grid, values)?;
    Ok((
        dataset,
        GroundTruth {
            eigenfunctions: eigenfunctions.clone(),
            scores,
            clean,
        },
    ))
}

/// `Σ_j λ_j φ_j(s) φ_j(t)` on the data grid.
pub fn true_covariance(spec: &SimSpec, eigenfunctions: &TrueEigenfunctions) -> DMatrix<f64> {
    let grid = uniform_grid(0.0, 1.0, spec.p);
    let k = spec.eigenvalues.len();
    let phi = DMatrix::from_fn(k, spec.p, |j, l| eigenfunctions.eval(j, grid[l]));
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&spec.eigenvalues));
    phi.transpose() * lam * phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_covariance;
    use crate::linalg::gram_schmidt;

    #[test]
    fn bspline_count_partition_and_support() {
        let knots = clamped_knots(8, 3);
        for s in 0..=400 {
            let t = s as f64 / 400.0;
            let b = bspline_basis(8, 3, t).unwrap();
            assert_eq!(b.len(), 12);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12, "t={t}");
            for (i, v) in b.iter().enumerate() {
                assert!(*v >= -1e-15);
                // B_i vanishes outside [knots[i], knots[i+4]].
                if t < knots[i] || t > knots[i + 4] {
                    assert_eq!(*v, 0.0, "B{i} at {t}");
                }
            }
        }
        assert!(bspline_basis(8, 3, 1.2).is_err());
        assert!(bspline_basis(8, 3, -0.01).is_err());
    }

    #[test]
    fn fourier_family_is_orthonormal_without_gram_schmidt() {
        let f = make_eigenfunctions(Scenario::II);
        let gram = f.samples.transpose() * &f.samples / f.fine_grid.len() as f64;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-4);
    }

    #[test]
    fn scenario_one_is_orthonormal_and_starts_with_b3() {
        let f = make_eigenfunctions(Scenario::I);
        let m = f.fine_grid.len() as f64;
        let gram = f.samples.transpose() * &f.samples / m;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-6);

        let b3 = DVector::from_iterator(
            f.fine_grid.len(),
            f.fine_grid.iter().map(|&t| bspline_basis(8, 3, t).unwrap()[2]),
        );
        let norm = (b3.norm_squared() / m).sqrt();
        assert!((f.sample(0) - b3 / norm).amax() < 1e-12);
    }

    #[test]
    fn tracked_gram_schmidt_agrees_with_linalg() {
        let f = make_eigenfunctions(Scenario::I);
        let w = f.weights();
        let raw: Vec<DVector<f64>> = (0..8)
            .map(|k| DVector::from_iterator(w.len(), f.fine_grid.iter().map(|&t| raw_functions(Scenario::I, t)[k])))
            .collect();
        let q = gram_schmidt(&raw, &w).unwrap();
        for j in 0..8 {
            assert!((&q[j] - f.sample(j)).amax() < 1e-9);
        }
        // Coefficient evaluation reproduces the samples.
        for &l in &[0usize, 333, 1000, 1999] {
            let t = f.fine_grid[l];
            for j in 0..8 {
                assert!((f.eval(j, t) - f.samples[(l, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn leading_localized_modes_have_restricted_support() {
        let f = make_eigenfunctions(Scenario::I);
        let m = f.fine_grid.len() as f64;
        let frac = |j: usize, cut: f64| f.sample(j).iter().filter(|x| x.abs() > cut).count() as f64 / m;
        // φ₁ ∝ B₃ lives on [0, 1/3].
        assert!(frac(0, 1e-8) < 0.6);
        // φ₂ and φ₃ pick up small Gram-Schmidt leakage from the overlapping earlier splines,
        // so their exact support is wider; their mass is still concentrated.
        for j in 1..3 {
            let mass = f.sample(j).map(|x| x * x);
            let total: f64 = mass.sum();
            let mut sorted: Vec<f64> = mass.iter().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let top: f64 = sorted.iter().take((0.6 * m) as usize).sum();
            assert!(top / total > 0.999, "mode {j}");
            assert!(frac(j, 1e-2) < 0.6, "mode {j}");
        }
    }

    #[test]
    fn simulation_is_deterministic_and_streams_are_shared() {
        let a = simulate(&SimSpec::new(Scenario::I, 20, 30, 1.0, 7)).unwrap();
        let b = simulate(&SimSpec::new(Scenario::I, 20, 30, 1.0, 7)).unwrap();
        assert_eq!(a.0.values(), b.0.values());
        let c = simulate(&SimSpec::new(Scenario::II, 20, 30, 1.0, 7)).unwrap();
        assert_eq!(a.1.scores, c.1.scores);
        let noise_a = a.0.values() - &a.1.clean;
        let noise_c = c.0.values() - &c.1.clean;
        assert!((noise_a - noise_c).amax() < 1e-12);
    }

    #[test]
    fn noiseless_covariance_matches_truth() {
        // Monte Carlo standard error of a covariance entry is sqrt((Γ_ll Γ_l'l' + Γ_ll'²)/n).
        let spec = SimSpec::new(Scenario::I, 4000, 40, 0.0, 3);
        let (d, truth) = simulate(&spec).unwrap();
        let s = sample_covariance(&d).unwrap().s;
        let gamma = true_covariance(&spec, &truth.eigenfunctions);
        let n = spec.n as f64;
        for i in 0..spec.p {
            for j in 0..spec.p {
                let se = ((gamma[(i, i)] * gamma[(j, j)] + gamma[(i, j)].powi(2)) / n).sqrt();
                assert!((s.get(i, j) - gamma[(i, j)]).abs() <= 3.0 * se + 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn process_variance_matches_eigenvalue_sum() {
        let spec = SimSpec::new(Scenario::II, 2000, 50, 1.0, 11);
        let (d, _) = simulate(&spec).unwrap();
        let s = sample_covariance(&d).unwrap().s;
        let avg_var = s.trace() / spec.p as f64 - spec.sigma * spec.sigma;
        let total: f64 = EIGENVALUES.iter().sum();
        // Var of the grid-averaged sample variance: 2Σλ_j²/(n−1) plus the noise term.
        let lam_sq: f64 = EIGENVALUES.iter().map(|l| l * l).sum();
        let se = ((2.0 * lam_sq + 2.0 / spec.p as f64) / (spec.n as f64 - 1.0)).sqrt();
        assert!((avg_var - total).abs() < 3.0 * se, "{avg_var} vs {total} (se {se})");
    }
}

//! ADMM for the penalized eigenproblem over the deflated Fantope:
//!
//! ```text
//! maximize ⟨S − ρ₁D, H⟩ − ρ₂‖H‖₁,₁   subject to H ∈ D_Π
//! ```
//!
//! The problem is split as `H = Z` with the Fantope constraint on `H` and the ℓ₁ penalty
//! on `Z`. Each sweep is a deflated Fantope projection, an elementwise soft threshold and a
//! scaled dual update; the returned solution is the sparse iterate `Z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fantope::{DeflatedProjector, ProjectionMatrix};
use crate::linalg::{shrink, sym_eig, SymMatrix};

/// Solver constants. `tau = None` resolves to `trace(S)` at solve time, which puts `S/τ` on the
/// unit-trace scale of the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            tau: None,
            epsilon: 1e-4,
            max_iters: 20_000,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::input(format!("tau must be positive, got {tau}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::input(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::input("max_iters must be at least 1"));
        }
        Ok(())
    }

    /// Step constant for a given covariance.
    pub fn resolve_tau(&self, s: &SymMatrix) -> f64 {
        match self.tau {
            Some(tau) => tau,
            None => {
                let tau = s.trace();
                if tau > 0.0 && tau.is_finite() {
                    tau
                } else {
                    1.0
                }
            }
        }
    }
}

/// Primal, auxiliary and scaled dual iterates.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub h: SymMatrix,
    pub z: SymMatrix,
    pub w: SymMatrix,
    pub iter: usize,
    pub primal_residual_sq: f64,
    pub dual_residual_sq: f64,
}

impl AdmmState {
    /// `Z = W = 0`.
    pub fn new(p: usize) -> Self {
        AdmmState {
            h: SymMatrix::zeros(p),
            z: SymMatrix::zeros(p),
            w: SymMatrix::zeros(p),
            iter: 0,
            primal_residual_sq: f64::INFINITY,
            dual_residual_sq: f64::INFINITY,
        }
    }

    /// Moves a converged state for sparsity penalty `from` towards the problem with `to`.
    ///
    /// The scaled dual is rescaled by `to / from`, or set to `(to / τ)·sign(Z)` when leaving
    /// `from = 0`, which is where it sits on the support of the new solution.
    pub fn retarget_rho2(&mut self, from: f64, to: f64, tau: f64) {
        if to == from || to == 0.0 {
            return;
        }
        let w = if from > 0.0 {
            self.w.as_matrix() * (to / from)
        } else {
            let level = to / tau;
            self.z.as_matrix().map(|x| if x == 0.0 { 0.0 } else { level * x.signum() })
        };
        self.w = SymMatrix::from_symmetric_unchecked(w);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmmResult {
    #[serde(skip)]
    pub z_final: SymMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual_sq: f64,
    pub dual_residual_sq: f64,
}

/// A configured instance of the splitting; reusable across warm starts.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    /// `(S − ρ₁D) / τ`.
    scaled_target: DMatrix<f64>,
    threshold: f64,
    tau: f64,
    epsilon: f64,
    max_iters: usize,
    projector: DeflatedProjector,
}

impl AdmmSolver {
    pub fn new(
        s: &SymMatrix,
        projection: &ProjectionMatrix,
        penalty: &SymMatrix,
        rho1: f64,
        rho2: f64,
        cfg: &AdmmConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let p = s.dim();
        if penalty.dim() != p || projection.dim() != p {
            return Err(Error::input(format!(
                "dimension mismatch: S is {p}x{p}, D is {0}x{0}, Π is {1}x{1}",
                penalty.dim(),
                projection.dim()
            )));
        }
        if !(rho1 >= 0.0 && rho1.is_finite()) || !(rho2 >= 0.0 && rho2.is_finite()) {
            return Err(Error::input(format!(
                "penalties must be finite and nonnegative, got rho1={rho1}, rho2={rho2}"
            )));
        }
        let tau = cfg.resolve_tau(s);
        let scaled_target = (s.as_matrix() - penalty.as_matrix() * rho1) / tau;
        Ok(AdmmSolver {
            scaled_target,
            threshold: rho2 / tau,
            tau,
            epsilon: cfg.epsilon,
            max_iters: cfg.max_iters,
            projector: DeflatedProjector::new(projection)?,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.scaled_target.nrows()
    }

    /// One sweep: projection, soft threshold, dual update, residuals.
    pub fn step(&self, state: &mut AdmmState) -> Result<()> {
        let iteration = state.iter + 1;
        let arg = state.z.as_matrix() - state.w.as_matrix() + &self.scaled_target;
        if arg.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                iteration,
                message: "non-finite projection argument".into(),
            });
        }
        let h = self.projector.project(&arg).map_err(|e| Error::Numerical {
            iteration,
            message: e.to_string(),
        })?;

        let mut z = h.clone();
        z += state.w.as_matrix();
        let level = self.threshold;
        z.apply(|x| *x = shrink(*x, level));

        let mut w = state.w.as_matrix().clone();
        w += &h;
        w -= &z;

        state.primal_residual_sq = (&h - &z).norm_squared();
        state.dual_residual_sq = self.tau * self.tau * (&z - state.z.as_matrix()).norm_squared();
        if !state.primal_residual_sq.is_finite() || !state.dual_residual_sq.is_finite() {
            return Err(Error::Numerical {
                iteration,
                message: "non-finite residual".into(),
            });
        }
        state.h = SymMatrix::from_symmetric_unchecked(h);
        state.z = SymMatrix::from_symmetric_unchecked(z);
        state.w = SymMatrix::from_symmetric_unchecked(w);
        state.iter = iteration;
        Ok(())
    }

    fn is_converged(&self, state: &AdmmState) -> bool {
        state.primal_residual_sq.max(state.dual_residual_sq) <= self.epsilon * self.epsilon
    }

    /// Iterates from `state` until the stopping rule holds or `max_iters` more sweeps ran.
    /// The state is left at the last iterate so it can seed a nearby problem.
    pub fn run_from(&self, state: &mut AdmmState) -> Result<AdmmResult> {
        if state.z.dim() != self.dim() {
            return Err(Error::input("warm-start state has the wrong dimension"));
        }
        let start = state.iter;
        let mut converged = false;
        for _ in 0..self.max_iters {
            self.step(state)?;
            if self.is_converged(state) {
                converged = true;
                break;
            }
        }
        Ok(AdmmResult {
            z_final: state.z.clone(),
            iterations: state.iter - start,
            converged,
            primal_residual_sq: state.primal_residual_sq,
            dual_residual_sq: state.dual_residual_sq,
        })
    }

    pub fn run(&self) -> Result<AdmmResult> {
        self.run_from(&mut AdmmState::new(self.dim()))
    }
}

/// Solves the deflated penalized problem from a cold start.
pub fn solve_deflated(
    s: &SymMatrix,
    projection: &ProjectionMatrix,
    penalty: &SymMatrix,
    rho1: f64,
    rho2: f64,
    cfg: &AdmmConfig,
) -> Result<AdmmResult> {
    AdmmSolver::new(s, projection, penalty, rho1, rho2, cfg)?.run()
}

/// Top eigenvector of `h`, unit length, sign-normalized.
pub fn leading_eigvec(h: &SymMatrix) -> Result<DVector<f64>> {
    if h.dim() == 0 {
        return Err(Error::input("empty matrix has no eigenvector"));
    }
    Ok(sym_eig(h)?.vector(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fantope::FantopePoint;
    use crate::linalg::second_diff_penalty;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        // Distinct, well separated eigenvalues.
        let m = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        let q = m.qr().q();
        let vals: Vec<f64> = (0..p).map(|k| (p - k) as f64 + rng.gen_range(0.0..0.3)).collect();
        let lam = DMatrix::from_diagonal(&DVector::from_vec(vals));
        SymMatrix::new(&q * lam * q.transpose()).unwrap()
    }

    #[test]
    fn diagonal_unpenalized_recovers_top_projector() {
        let s = SymMatrix::from_diagonal(&[3.0, 1.0, 0.0]).unwrap();
        let d = second_diff_penalty(3).unwrap();
        let res = solve_deflated(&s, &ProjectionMatrix::empty(3), &d, 0.0, 0.0, &AdmmConfig::default()).unwrap();
        assert!(res.converged);
        let target = SymMatrix::from_diagonal(&[1.0, 0.0, 0.0]).unwrap();
        assert!(res.z_final.combine(1.0, &target, -1.0).frobenius_norm() < 1e-4);
    }

    #[test]
    fn deflated_unpenalized_recovers_second_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_spd(6, &mut rng);
        let eig = sym_eig(&s).unwrap();
        let proj = ProjectionMatrix::new(6, vec![eig.vector(0)]).unwrap();
        let d = second_diff_penalty(6).unwrap();
        let res = solve_deflated(&s, &proj, &d, 0.0, 0.0, &AdmmConfig::default()).unwrap();
        assert!(res.converged);
        let target = SymMatrix::outer(&eig.vector(1));
        assert!(res.z_final.combine(1.0, &target, -1.0).frobenius_norm() < 1e-4);
    }

    #[test]
    fn huge_l1_penalty_collapses_to_best_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let p = 5;
            let s = random_spd(p, &mut rng);
            let d = second_diff_penalty(p).unwrap();
            let rho1 = 0.05;
            let rho2 = p as f64 * s.max_abs();
            let res = solve_deflated(&s, &ProjectionMatrix::empty(p), &d, rho1, rho2, &AdmmConfig::default()).unwrap();
            let z = &res.z_final;
            assert!((z.trace() - 1.0).abs() < 1e-3);
            // Oracle: single-coordinate matrices e_l e_lᵀ.
            let target = s.combine(1.0, &d, -rho1);
            let best = (0..p).map(|l| target.get(l, l)).fold(f64::NEG_INFINITY, f64::max);
            assert!((target.inner(z) - best).abs() < 1e-3);
            let off: f64 = (0..p)
                .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| z.get(i, j).abs())
                .sum();
            assert!(off < 1e-3);
        }
    }

    #[test]
    fn iterates_stay_feasible_and_dual_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = 7;
        let s = random_spd(p, &mut rng);
        let eig = sym_eig(&s).unwrap();
        let proj = ProjectionMatrix::new(p, vec![eig.vector(0)]).unwrap();
        let d = second_diff_penalty(p).unwrap();
        let solver = AdmmSolver::new(&s, &proj, &d, 0.1, 0.3, &AdmmConfig::default()).unwrap();
        let mut state = AdmmState::new(p);
        let mut sum = DMatrix::zeros(p, p);
        for _ in 0..60 {
            solver.step(&mut state).unwrap();
            let point = FantopePoint { h: state.h.clone() };
            assert!(point.is_feasible(&proj, 1e-8));
            sum += state.h.as_matrix() - state.z.as_matrix();
            assert!((state.w.as_matrix() - &sum).amax() < 1e-12);
        }
    }

    #[test]
    fn optimum_does_not_depend_on_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = 6;
        let s = random_spd(p, &mut rng);
        let d = second_diff_penalty(p).unwrap();
        let base = AdmmConfig::default();
        let tau = base.resolve_tau(&s);
        let eps = base.epsilon;
        let run = |t: f64| {
            let cfg = AdmmConfig { tau: Some(t), ..base };
            solve_deflated(&s, &ProjectionMatrix::empty(p), &d, 0.0, 0.2, &cfg).unwrap()
        };
        let a = run(tau);
        let b = run(2.0 * tau);
        assert!(a.converged && b.converged);
        let gap = a.z_final.combine(1.0, &b.z_final, -1.0).frobenius_norm();
        assert!(gap <= 10.0 * eps, "gap {gap}");
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_spd(5, &mut rng);
        let d = second_diff_penalty(5).unwrap();
        let cfg = AdmmConfig { max_iters: 2, epsilon: 1e-12, ..Default::default() };
        let res = solve_deflated(&s, &ProjectionMatrix::empty(5), &d, 0.0, 0.5, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn invalid_config_rejected() {
        let s = SymMatrix::identity(3);
        let d = second_diff_penalty(3).unwrap();
        let bad = AdmmConfig { tau: Some(-1.0), ..Default::default() };
        assert!(solve_deflated(&s, &ProjectionMatrix::empty(3), &d, 0.0, 0.0, &bad).is_err());
        assert!(solve_deflated(&s, &ProjectionMatrix::empty(3), &d, -1.0, 0.0, &AdmmConfig::default()).is_err());
    }

    #[test]
    fn leading_eigvec_examples() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let w = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let h = SymMatrix::outer(&u).combine(0.6, &SymMatrix::outer(&w), 0.4);
        assert!((leading_eigvec(&h).unwrap() - &u).norm() < 1e-12);

        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((leading_eigvec(&SymMatrix::outer(&e1)).unwrap() - e1).norm() < 1e-12);
    }

    #[test]
    fn leading_eigvec_of_converged_smoothed_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = 8;
        let s = random_spd(p, &mut rng);
        let d = second_diff_penalty(p).unwrap();
        let rho1 = 0.05;
        let res = solve_deflated(&s, &ProjectionMatrix::empty(p), &d, rho1, 0.0, &AdmmConfig::default()).unwrap();
        let v = leading_eigvec(&res.z_final).unwrap();
        let oracle = sym_eig(&s.combine(1.0, &d, -rho1)).unwrap().vector(0);
        assert!((v - oracle).norm() < 1e-3);
    }
}

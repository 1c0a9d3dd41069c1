//! End-to-end fit: covariance, penalty selection and sequential extraction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::data::{sample_covariance, uniform_grid, CurveDataset};
use crate::error::{Error, Result};
use crate::fpca::{default_fve_terms, extract_candidate, total_variance, ComponentSet, DeflationState};
use crate::linalg::SymMatrix;
use crate::tuning::{
    grid_rho1, grid_rho2, rfve_rho2, CvSession, FoldPlan, TraceRow, DEFAULT_FOLDS, DEFAULT_RHO1_COUNT,
    DEFAULT_RHO2_COUNT,
};

pub const DEFAULT_OUTPUT_POINTS: usize = 501;
pub const DEFAULT_FVE_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rho1Mode {
    Fixed(f64),
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rho2Mode {
    Fixed(f64),
    Cv,
    /// Largest penalty keeping relative FVE at least `1 − a`.
    Rfve(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KMode {
    Fixed(usize),
    /// Stop once cumulative FVE reaches the threshold.
    Fve(f64),
}

fn parse_nonneg(s: &str, what: &str) -> Result<f64> {
    let x: f64 = s
        .parse()
        .map_err(|_| Error::input(format!("invalid {what} value '{s}'")))?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::input(format!("{what} must be finite and nonnegative, got {s}")));
    }
    Ok(x)
}

impl FromStr for Rho1Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cv" => Ok(Rho1Mode::Cv),
            v => Ok(Rho1Mode::Fixed(parse_nonneg(v, "rho1")?)),
        }
    }
}

impl FromStr for Rho2Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "cv" {
            return Ok(Rho2Mode::Cv);
        }
        if let Some(a) = s.strip_prefix("rfve:") {
            let a = parse_nonneg(a, "rfve sacrifice")?;
            if a >= 1.0 {
                return Err(Error::input(format!("rfve sacrifice must be below 1, got {a}")));
            }
            return Ok(Rho2Mode::Rfve(a));
        }
        Ok(Rho2Mode::Fixed(parse_nonneg(s, "rho2")?))
    }
}

impl FromStr for KMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(t) = s.strip_prefix("fve:") {
            let t = parse_nonneg(t, "fve threshold")?;
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::input(format!("fve threshold must lie in (0, 1], got {t}")));
            }
            return Ok(KMode::Fve(t));
        }
        let k: usize = s
            .parse()
            .map_err(|_| Error::input(format!("invalid component count '{s}'")))?;
        if k == 0 {
            return Err(Error::input("component count must be positive"));
        }
        Ok(KMode::Fixed(k))
    }
}

impl fmt::Display for Rho1Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rho1Mode::Cv => write!(f, "cv"),
            Rho1Mode::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl fmt::Display for Rho2Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rho2Mode::Cv => write!(f, "cv"),
            Rho2Mode::Rfve(a) => write!(f, "rfve:{a}"),
            Rho2Mode::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Fve(t) => write!(f, "fve:{t}"),
            KMode::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub rho1: Rho1Mode,
    pub rho2: Rho2Mode,
    pub k: KMode,
    /// Lower bound on the component count under [`KMode::Fve`].
    pub min_components: usize,
    /// Upper bound on the component count under [`KMode::Fve`].
    pub max_components: usize,
    pub folds: usize,
    pub seed: u64,
    pub rho1_count: usize,
    pub rho2_count: usize,
    pub output_points: usize,
    pub admm: AdmmConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rho1: Rho1Mode::Cv,
            rho2: Rho2Mode::Cv,
            k: KMode::Fve(DEFAULT_FVE_THRESHOLD),
            min_components: 1,
            max_components: 20,
            folds: DEFAULT_FOLDS,
            seed: 0,
            rho1_count: DEFAULT_RHO1_COUNT,
            rho2_count: DEFAULT_RHO2_COUNT,
            output_points: DEFAULT_OUTPUT_POINTS,
            admm: AdmmConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.admm.validate()?;
        if self.folds < 2 {
            return Err(Error::input("folds must be at least 2"));
        }
        if self.rho1_count < 2 || self.rho2_count < 2 {
            return Err(Error::input("penalty grids need at least 2 candidates"));
        }
        if self.output_points < 2 {
            return Err(Error::input("output grid needs at least 2 points"));
        }
        if self.min_components == 0 || self.max_components < self.min_components {
            return Err(Error::input("component bounds must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    fn needs_cv(&self) -> bool {
        self.rho1 == Rho1Mode::Cv || self.rho2 == Rho2Mode::Cv
    }
}

/// A fitted model with everything needed to report or reuse it.
#[derive(Debug, Clone, Serialize)]
pub struct Fit {
    pub mean: Vec<f64>,
    #[serde(skip)]
    pub covariance: SymMatrix,
    pub rho1: f64,
    pub fve_terms: usize,
    pub total_variance: f64,
    pub components: ComponentSet,
    pub traces: Vec<TraceRow>,
}

impl Fit {
    pub fn cumulative_fve(&self) -> f64 {
        self.components.total_fve()
    }
}

/// Fits `dataset`, which must be complete.
pub fn fit_dataset(dataset: &CurveDataset, cfg: &FitConfig) -> Result<Fit> {
    cfg.validate()?;
    let p = dataset.p();
    if p < 3 {
        return Err(Error::input(format!("fitting needs at least 3 grid points, got {p}")));
    }
    let cov = sample_covariance(dataset)?;
    let mean = dataset.mean_curve()?;
    let s = cov.s;
    let fve_terms = default_fve_terms(p);
    let total = total_variance(&s, fve_terms)?;

    let mut session = if cfg.needs_cv() {
        let plan = FoldPlan::new(dataset.n(), cfg.folds, cfg.seed)?;
        Some(CvSession::new(dataset, &plan, &cfg.admm)?)
    } else {
        None
    };
    let mut traces = Vec::new();

    let rho1 = match (cfg.rho1, session.as_mut()) {
        (Rho1Mode::Fixed(x), _) => x,
        (Rho1Mode::Cv, Some(cv)) => {
            let sel = cv.select_rho1(&grid_rho1(&s, cfg.rho1_count)?)?;
            traces.extend(sel.trace);
            sel.chosen
        }
        (Rho1Mode::Cv, None) => unreachable!(),
    };

    let out_grid = uniform_grid(0.0, 1.0, cfg.output_points);
    let unit_grid = rescaled_grid(dataset.grid());
    let mut set = ComponentSet::new(unit_grid, out_grid);
    let mut state = DeflationState::new(p);
    let (target, cap) = match cfg.k {
        KMode::Fixed(k) => (Some(k), k),
        KMode::Fve(_) => (None, cfg.max_components.min(p - 1)),
    };
    if cap >= p {
        return Err(Error::input(format!(
            "at most {} components fit on {p} grid points, asked for {cap}",
            p - 1
        )));
    }

    loop {
        let j = state.len();
        let more = match (target, cfg.k) {
            (Some(k), _) => j < k,
            (None, KMode::Fve(t)) => j < cfg.min_components || (j < cap && set.total_fve() < t),
            (None, KMode::Fixed(_)) => unreachable!(),
        };
        if !more {
            break;
        }
        let (rho2, ex) = match cfg.rho2 {
            Rho2Mode::Fixed(x) => (x, extract_candidate(&s, &state, rho1, x, &cfg.admm)?),
            Rho2Mode::Cv => {
                let grid = grid_rho2(&s, &state, cfg.rho2_count)?;
                let sel = session.as_mut().expect("cv session").select_rho2(rho1, &grid)?;
                traces.extend(sel.trace);
                (sel.chosen, extract_candidate(&s, &state, rho1, sel.chosen, &cfg.admm)?)
            }
            Rho2Mode::Rfve(a) => {
                let grid = grid_rho2(&s, &state, cfg.rho2_count)?;
                let sel = rfve_rho2(&s, &state, rho1, &grid, a, &cfg.admm)?;
                traces.extend(sel.trace);
                (sel.chosen, sel.extraction)
            }
        };
        let fve = s.quadratic_form(&ex.vector) / total;
        state.push(ex.vector.clone())?;
        set.push(ex, rho1, rho2, fve)?;
    }

    Ok(Fit {
        mean,
        covariance: s,
        rho1,
        fve_terms,
        total_variance: total,
        components: set,
        traces,
    })
}

/// Maps a strictly increasing grid affinely onto `[0, 1]`.
pub fn rescaled_grid(grid: &[f64]) -> Vec<f64> {
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    grid.iter().map(|t| (t - a) / (b - a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Scenario, SimSpec};

    #[test]
    fn mode_parsing() {
        assert_eq!("cv".parse::<Rho1Mode>().unwrap(), Rho1Mode::Cv);
        assert_eq!("0.5".parse::<Rho1Mode>().unwrap(), Rho1Mode::Fixed(0.5));
        assert!("-1".parse::<Rho1Mode>().is_err());
        assert_eq!("rfve:0.3".parse::<Rho2Mode>().unwrap(), Rho2Mode::Rfve(0.3));
        assert!("rfve:1".parse::<Rho2Mode>().is_err());
        assert_eq!("fve:0.85".parse::<KMode>().unwrap(), KMode::Fve(0.85));
        assert_eq!("3".parse::<KMode>().unwrap(), KMode::Fixed(3));
        assert!("0".parse::<KMode>().is_err());
        assert!("fve:0".parse::<KMode>().is_err());
        for m in ["cv", "rfve:0.3", "1.25"] {
            assert_eq!(m.parse::<Rho2Mode>().unwrap().to_string(), m);
        }
    }

    #[test]
    fn small_simulated_fit_is_orthogonal_and_consistent() {
        let spec = SimSpec::new(Scenario::I, 40, 30, 1.0, 3);
        let (d, _) = simulate(&spec).unwrap();
        let cfg = FitConfig {
            k: KMode::Fixed(3),
            ..Default::default()
        };
        let fit = fit_dataset(&d, &cfg).unwrap();
        assert_eq!(fit.components.k(), 3);
        assert!(fit.components.max_cross_inner() <= 1e-6);
        let sum: f64 = fit.components.components.iter().map(|c| c.fve).sum();
        assert!((sum - fit.cumulative_fve()).abs() < 1e-12);
        assert_eq!(fit.traces.len(), 10 + 3 * 10);
        for c in &fit.components.components {
            assert!((c.vector().norm() - 1.0).abs() < 1e-10);
            let l2 = (c.eigenfunction.iter().map(|x| x * x).sum::<f64>() / c.eigenfunction.len() as f64).sqrt();
            assert!((l2 - 1.0).abs() < 1e-6);
        }
        let again = fit_dataset(&d, &cfg).unwrap();
        assert_eq!(fit.rho1, again.rho1);
        for (a, b) in fit.components.components.iter().zip(&again.components.components) {
            assert_eq!(a.vector, b.vector);
        }
    }

    #[test]
    fn fve_mode_stops_at_threshold() {
        let spec = SimSpec::new(Scenario::II, 60, 20, 0.5, 4);
        let (d, _) = simulate(&spec).unwrap();
        let cfg = FitConfig {
            rho1: Rho1Mode::Fixed(0.0),
            rho2: Rho2Mode::Rfve(0.1),
            k: KMode::Fve(0.85),
            ..Default::default()
        };
        let fit = fit_dataset(&d, &cfg).unwrap();
        let fves: Vec<f64> = fit.components.components.iter().map(|c| c.fve).collect();
        let k = fves.len();
        assert!(fves.iter().sum::<f64>() >= 0.85);
        assert!(fves[..k - 1].iter().sum::<f64>() < 0.85);
        assert!(fit.components.max_cross_inner() <= 1e-6);
    }
}

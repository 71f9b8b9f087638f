//! Euler–Maruyama simulation with per-path functionals.
//!
//! Stochastic integrals are left-point sums on a uniform grid. Brackets of
//! Brownian integrals use the compensator `Σ (integrand)² Δt`, which keeps
//! the exponent algebra behind every identity check exact on the discrete
//! sums; the realised sum of squared increments of `M^S` is recorded next to
//! it.
//!
//! Path `i` draws its normals from a ChaCha stream selected by
//! `(seed, i / 2)` when antithetic pairing is on (path `2j+1` negates the
//! draws of path `2j`), or `(seed, i)` otherwise. Results are therefore the
//! same for any degree of parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::spec::{Candidate, DiffusionSpec};
use crate::error::{Error, Result};

/// Volatility floor checked at every step.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Keep full trajectories and increments (memory grows with paths × steps).
    pub record_paths: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            n_steps,
            seed,
            antithetic: true,
            record_paths: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_paths = true;
        self
    }

    pub fn without_antithetic(mut self) -> Self {
        self.antithetic = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub db: Vec<f64>,
    pub dz: Vec<f64>,
    pub dw: Vec<f64>,
}

/// Running sums accumulated along one path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathFunctionals {
    pub s_terminal: f64,
    pub y_terminal: f64,
    /// `∫ λ dB`.
    pub lambda_db: f64,
    /// `K_T = ∫ λ² dt`.
    pub lambda_sq_dt: f64,
    /// `A^S_T = ∫ μ dt`.
    pub drift: f64,
    /// `M^S_T = ∫ σ dB`.
    pub martingale: f64,
    /// `⟨M^S⟩_T = ∫ σ² dt`.
    pub qv_ms: f64,
    /// `Σ (σ ΔB)²`.
    pub qv_ms_realized: f64,
    /// `λ̄ · A^S_T`.
    pub lbar_drift: f64,
    /// `X_T` for `X = (q−1)(η̄−λ̄)·S`.
    pub x: f64,
    /// `⟨X⟩_T`.
    pub x_qv: f64,
    /// `η̄ · (M^S + q A^S)_T`.
    pub eta_integral: f64,
    /// `η̄² · ⟨M^S⟩_T`.
    pub eta_qv: f64,
    /// `ξ · W_T`.
    pub xi_dw: f64,
    /// `∫ ξ² dt`.
    pub xi_qv: f64,
    pub sum_db_dw: f64,
    pub sum_db_sq: f64,
    pub sum_dw_sq: f64,
}

impl PathFunctionals {
    /// `ln E(X)_T`.
    pub fn log_exp_x(&self) -> f64 {
        self.x - 0.5 * self.x_qv
    }

    /// `ln E(−λ·B)_T`.
    pub fn log_exp_minus_lambda_b(&self) -> f64 {
        -self.lambda_db - 0.5 * self.lambda_sq_dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub functionals: PathFunctionals,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: Vec<f64>,
    pub config: SimConfig,
    pub paths: Vec<PathRecord>,
}

impl PathBundle {
    pub fn functionals(&self) -> impl Iterator<Item = &PathFunctionals> {
        self.paths.iter().map(|p| &p.functionals)
    }

    /// Groups of path indices that form independent samples: antithetic pairs
    /// when pairing is on, single paths otherwise.
    pub fn sample_groups(&self) -> Vec<Vec<usize>> {
        let n = self.paths.len();
        if self.config.antithetic {
            (0..n)
                .step_by(2)
                .map(|i| (i..(i + 2).min(n)).collect())
                .collect()
        } else {
            (0..n).map(|i| vec![i]).collect()
        }
    }
}

/// Simulation with the zero candidate `η ≡ ξ ≡ 0`.
pub fn simulate(spec: &DiffusionSpec, cfg: &SimConfig) -> Result<PathBundle> {
    simulate_with(spec, &Candidate::zero(), cfg)
}

pub fn simulate_with(
    spec: &DiffusionSpec,
    candidate: &Candidate,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    spec.validate()?;
    if cfg.n_steps == 0 || cfg.n_paths == 0 {
        return Err(Error::InvalidSimulation(
            "n_paths and n_steps must both be at least 1".into(),
        ));
    }
    let dt = spec.horizon / cfg.n_steps as f64;
    let grid: Vec<f64> = (0..=cfg.n_steps).map(|i| i as f64 * dt).collect();
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(spec, candidate, cfg, &grid, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathBundle {
        grid,
        config: *cfg,
        paths,
    })
}

pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn simulate_path(
    spec: &DiffusionSpec,
    candidate: &Candidate,
    cfg: &SimConfig,
    grid: &[f64],
    index: usize,
) -> Result<PathRecord> {
    let (stream, sign) = if cfg.antithetic {
        ((index / 2) as u64, if index % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (index as u64, 1.0)
    };
    let mut rng = path_rng(cfg.seed, stream);
    let q = spec.q;
    let n = cfg.n_steps;
    let mut traj = cfg.record_paths.then(|| Trajectory {
        s: Vec::with_capacity(n + 1),
        y: Vec::with_capacity(n + 1),
        db: Vec::with_capacity(n),
        dz: Vec::with_capacity(n),
        dw: Vec::with_capacity(n),
    });

    let mut s = spec.s0;
    let mut y = spec.y0;
    let mut acc = PathFunctionals::default();
    if let Some(tr) = traj.as_mut() {
        tr.s.push(s);
        tr.y.push(y);
    }
    for step in 0..n {
        let t = grid[step];
        let dt = grid[step + 1] - t;
        let sqdt = dt.sqrt();
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let db = sign * z1 * sqdt;
        let dz = sign * z2 * sqdt;

        let mu = spec.mu.eval(s, y, t);
        let sigma = spec.sigma.eval(s, y, t);
        if !(sigma >= SIGMA_FLOOR) {
            return Err(Error::VanishingVolatility {
                path: index,
                step,
                sigma,
            });
        }
        let rho = spec.rho.eval(s, y, t);
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidSimulation(format!(
                "correlation {rho} outside [-1, 1] on path {index}, step {step}"
            )));
        }
        let dw = rho * db + (1.0 - rho * rho).sqrt() * dz;
        let lambda = mu / sigma;
        let lbar = lambda / sigma;
        let eta = candidate.eta.eval(s, y, t);
        let eta_bar = eta / sigma;
        let xi = candidate.xi.eval(s, y, t);

        let d_drift = mu * dt;
        let d_mart = sigma * db;
        let ds = d_drift + d_mart;
        let sig2dt = sigma * sigma * dt;
        let x_int = (q - 1.0) * (eta_bar - lbar);

        acc.lambda_db += lambda * db;
        acc.lambda_sq_dt += lambda * lambda * dt;
        acc.drift += d_drift;
        acc.martingale += d_mart;
        acc.qv_ms += sig2dt;
        acc.qv_ms_realized += d_mart * d_mart;
        acc.lbar_drift += lbar * d_drift;
        acc.x += x_int * ds;
        acc.x_qv += x_int * x_int * sig2dt;
        acc.eta_integral += eta_bar * (d_mart + q * d_drift);
        acc.eta_qv += eta_bar * eta_bar * sig2dt;
        acc.xi_dw += xi * dw;
        acc.xi_qv += xi * xi * dt;
        acc.sum_db_dw += db * dw;
        acc.sum_db_sq += db * db;
        acc.sum_dw_sq += dw * dw;

        let alpha = spec.alpha.eval(s, y, t);
        let beta = spec.beta.eval(s, y, t);
        s += ds;
        y += alpha * dt + beta * dw;
        if !s.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                path: index,
                what: format!("state at step {step}"),
            });
        }
        if let Some(tr) = traj.as_mut() {
            tr.s.push(s);
            tr.y.push(y);
            tr.db.push(db);
            tr.dz.push(dz);
            tr.dw.push(dw);
        }
    }
    acc.s_terminal = s;
    acc.y_terminal = y;
    Ok(PathRecord {
        functionals: acc,
        trajectory: traj,
    })
}

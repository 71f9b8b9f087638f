//! Estimators for the normalising constant `c_H = ln c` and residual checks
//! for the fundamental equation.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::simulate::{path_rng, simulate, simulate_with, PathBundle, SimConfig};
use super::spec::{Candidate, DiffusionSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub closed_form: Option<f64>,
}

impl ChEstimate {
    /// `|value − closed_form| ≤ k · std_error`, when a closed form exists.
    pub fn within(&self, k: f64) -> Option<bool> {
        self.closed_form
            .map(|c| (self.value - c).abs() <= k * self.std_error)
    }
}

/// Mean and standard error from per-path samples, treating each group of
/// paths (an antithetic pair or a single path) as one independent draw.
pub(crate) fn group_mean_se(values: &[f64], groups: &[Vec<usize>]) -> (f64, f64) {
    let draws: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64)
        .collect();
    mean_se(&draws)
}

pub(crate) fn mean_se(draws: &[f64]) -> (f64, f64) {
    let m = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / m;
    if draws.len() < 2 {
        return (mean, 0.0);
    }
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// `c_H = (q/2) ∫_0^T λ²(t) dt` by composite Simpson with `n_quad` panels
/// (rounded up to an even count).
pub fn ch_deterministic(lambda: impl Fn(f64) -> f64, q: f64, horizon: f64, n_quad: usize) -> f64 {
    let n = (n_quad.max(2) + 1) / 2 * 2;
    let h = horizon / n as f64;
    let f = |t: f64| {
        let l = lambda(t);
        l * l
    };
    let mut sum = f(0.0) + f(horizon);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    0.5 * q * sum * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChMonteCarlo {
    /// `−ln E[(E(X)_T)^{p−1}]`.
    pub estimate: ChEstimate,
    /// `−ln E[(E(X)_T)^p]`.
    pub p_power: ChEstimate,
    /// `E[(E(X)_T)^p] − E[(E(X)_T)^{p−1}]`, which vanishes at the optimum.
    pub moment_difference: f64,
    pub moment_difference_se: f64,
}

/// Closed form for the spec when `λ` is deterministic and the candidate is
/// the zero pair.
pub fn closed_form_ch(spec: &DiffusionSpec, candidate: &Candidate) -> Option<f64> {
    if !candidate.eta.is_zero() {
        return None;
    }
    spec.deterministic_lambda()
        .map(|lam| ch_deterministic(lam, spec.q, spec.horizon, 2000))
}

pub fn ch_monte_carlo(
    spec: &DiffusionSpec,
    candidate: &Candidate,
    cfg: &SimConfig,
) -> Result<ChMonteCarlo> {
    let bundle = simulate_with(spec, candidate, cfg)?;
    ch_from_bundle(spec, candidate, &bundle)
}

pub fn ch_from_bundle(
    spec: &DiffusionSpec,
    candidate: &Candidate,
    bundle: &PathBundle,
) -> Result<ChMonteCarlo> {
    let p = spec.p();
    let mut low = Vec::with_capacity(bundle.paths.len());
    let mut high = Vec::with_capacity(bundle.paths.len());
    for (i, f) in bundle.functionals().enumerate() {
        let l = f.log_exp_x();
        let a = ((p - 1.0) * l).exp();
        let b = (p * l).exp();
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite {
                path: i,
                what: "stochastic exponential power".into(),
            });
        }
        low.push(a);
        high.push(b);
    }
    let groups = bundle.sample_groups();
    let closed_form = closed_form_ch(spec, candidate);
    let (m_low, se_low) = group_mean_se(&low, &groups);
    let (m_high, se_high) = group_mean_se(&high, &groups);
    let diff: Vec<f64> = high.iter().zip(&low).map(|(h, l)| h - l).collect();
    let (m_diff, se_diff) = group_mean_se(&diff, &groups);
    let n_paths = bundle.paths.len();
    Ok(ChMonteCarlo {
        estimate: ChEstimate {
            value: -m_low.ln(),
            std_error: se_low / m_low,
            n_paths,
            closed_form,
        },
        p_power: ChEstimate {
            value: -m_high.ln(),
            std_error: se_high / m_high,
            n_paths,
            closed_form,
        },
        moment_difference: m_diff,
        moment_difference_se: se_diff,
    })
}

/// `c_H = −ln E[exp(−(q/2) K_T)]` from simulations of `Y` alone. Requires
/// `ρ ≡ 0` and a price of risk `λ(Y, t)` free of `S`. Draws come from ChaCha
/// streams disjoint from those used by [`simulate`].
pub fn ch_volatility_only(spec: &DiffusionSpec, cfg: &SimConfig) -> Result<ChEstimate> {
    spec.validate()?;
    if !spec.rho_is_zero() {
        return Err(Error::InvalidSimulation(
            "the volatility-only estimator needs rho ≡ 0".into(),
        ));
    }
    if !spec.lambda_ignores_s() || spec.alpha.times_s || spec.beta.times_s {
        return Err(Error::InvalidSimulation(
            "the volatility-only estimator needs λ, α and β free of S".into(),
        ));
    }
    if cfg.n_steps == 0 || cfg.n_paths == 0 {
        return Err(Error::InvalidSimulation(
            "n_paths and n_steps must both be at least 1".into(),
        ));
    }
    let dt = spec.horizon / cfg.n_steps as f64;
    let sqdt = dt.sqrt();
    let q = spec.q;
    const OFFSET: u64 = 1 << 63;
    let values = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = if cfg.antithetic {
                ((i / 2) as u64, if i % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                (i as u64, 1.0)
            };
            let mut rng = path_rng(cfg.seed, OFFSET | stream);
            let mut y = spec.y0;
            let mut k = 0.0;
            for step in 0..cfg.n_steps {
                let t = step as f64 * dt;
                let z: f64 = StandardNormal.sample(&mut rng);
                let dw = sign * z * sqdt;
                let lam = spec.lambda_y(y, t).expect("checked above");
                k += lam * lam * dt;
                y += spec.alpha.eval(1.0, y, t) * dt + spec.beta.eval(1.0, y, t) * dw;
            }
            let v = (-0.5 * q * k).exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    path: i,
                    what: "exp(-q/2 K_T)".into(),
                })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let groups: Vec<Vec<usize>> = if cfg.antithetic {
        (0..cfg.n_paths)
            .step_by(2)
            .map(|i| (i..(i + 2).min(cfg.n_paths)).collect())
            .collect()
    } else {
        (0..cfg.n_paths).map(|i| vec![i]).collect()
    };
    let (m, se) = group_mean_se(&values, &groups);
    Ok(ChEstimate {
        value: -m.ln(),
        std_error: se / m,
        n_paths: cfg.n_paths,
        closed_form: None,
    })
}

/// `(q/2) Σ λ(t_i)² Δt` on the left-point simulation grid, for deterministic `λ`.
pub fn ch_on_grid(spec: &DiffusionSpec, n_steps: usize) -> Option<f64> {
    let lam = spec.deterministic_lambda()?;
    let dt = spec.horizon / n_steps as f64;
    let k: f64 = (0..n_steps)
        .map(|i| {
            let l = lam(i as f64 * dt);
            l * l * dt
        })
        .sum();
    Some(0.5 * spec.q * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwiseCheck {
    pub max_abs_error: f64,
    /// Normalising constant `exp((q/2) Σ λ² Δt)` on the simulation grid.
    pub c: f64,
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Per path, compares `E(−λ·B)_T` with `c (E(−(q−1)λ̄·S)_T)^{p−1}` on the same
/// discrete increments. The two agree to rounding for deterministic `λ`.
pub fn pathwise_identity_check(spec: &DiffusionSpec, cfg: &SimConfig) -> Result<PathwiseCheck> {
    if spec.deterministic_lambda().is_none() {
        return Err(Error::InvalidSimulation(
            "pathwise identity requires a deterministic price of risk".into(),
        ));
    }
    let bundle = simulate(spec, cfg)?;
    Ok(pathwise_from_bundle(spec, &bundle))
}

/// [`pathwise_identity_check`] on an existing bundle simulated with `η ≡ 0`.
pub fn pathwise_from_bundle(spec: &DiffusionSpec, bundle: &PathBundle) -> PathwiseCheck {
    let p = spec.p();
    let q = spec.q;
    let mut worst = 0.0_f64;
    let mut c = f64::NAN;
    for f in bundle.functionals() {
        c = (0.5 * q * f.lambda_sq_dt).exp();
        let lhs = f.log_exp_minus_lambda_b().exp();
        let rhs = c * ((p - 1.0) * f.log_exp_x()).exp();
        worst = worst.max((lhs - rhs).abs());
    }
    PathwiseCheck {
        max_abs_error: worst,
        c,
        n_paths: bundle.paths.len(),
        n_steps: bundle.config.n_steps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub n_paths: usize,
}

/// Pathwise `ln LHS − ln RHS` of
/// `exp((q/2) λ̄·A^S_T) E(M^Y)_T = c E(η̄·(M^S + qA^S))_T exp(−(q−2)/2 η̄²·[M^S]_T)`
/// with `M^Y = ξ·W`.
pub fn fundamental_eq_residual(
    spec: &DiffusionSpec,
    candidate: &Candidate,
    c: f64,
    cfg: &SimConfig,
) -> Result<ResidualStats> {
    if !(c > 0.0) {
        return Err(Error::InvalidSimulation(format!(
            "constant c = {c} must be positive"
        )));
    }
    let bundle = simulate_with(spec, candidate, cfg)?;
    Ok(fundamental_from_bundle(spec, c, &bundle))
}

pub fn fundamental_from_bundle(spec: &DiffusionSpec, c: f64, bundle: &PathBundle) -> ResidualStats {
    let q = spec.q;
    let ln_c = c.ln();
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut max_abs = 0.0_f64;
    for f in bundle.functionals() {
        let log_lhs = 0.5 * q * f.lbar_drift + (f.xi_dw - 0.5 * f.xi_qv);
        let log_rhs = ln_c + (f.eta_integral - 0.5 * f.eta_qv) - 0.5 * (q - 2.0) * f.eta_qv;
        let r = log_lhs - log_rhs;
        sum += r;
        sum_abs += r.abs();
        max_abs = max_abs.max(r.abs());
    }
    let n = bundle.paths.len();
    ResidualStats {
        mean: sum / n as f64,
        mean_abs: sum_abs / n as f64,
        max_abs,
        n_paths: n,
    }
}

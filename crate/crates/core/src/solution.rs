//! Assembly of the q-optimal density from the dual minimiser, and the
//! structural identities it must satisfy.

use std::fmt;

use crate::error::{Error, Result};
use crate::market::{lp_norm, DensityVector};
use crate::projection::{check_exponent, ProjectionResult};

/// Classification threshold relative to `max |density|`.
pub const POS_TOL: f64 = 1e-10;

/// Default tolerance for the identity checks.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Strictly positive density.
    Equivalent,
    /// Non-negative density with at least one zero.
    AbsolutelyContinuous,
    /// Some negative weight.
    Signed,
}

impl Classification {
    pub fn of(density: &[f64]) -> Self {
        let scale = density.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let tol = POS_TOL * scale;
        let min = density.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > tol {
            Classification::Equivalent
        } else if min >= -tol {
            Classification::AbsolutelyContinuous
        } else {
            Classification::Signed
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Equivalent => "equivalent",
            Classification::AbsolutelyContinuous => "absolutely-continuous",
            Classification::Signed => "signed",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct QOptimalSolution {
    pub q: f64,
    pub p: f64,
    /// `g* = sgn(g)|g|^{p−1}`.
    pub g_star: Vec<f64>,
    /// `E[g*]`.
    pub mu: f64,
    pub density: DensityVector,
    pub q_norm: f64,
    pub classification: Classification,
    /// `|E[g*(1−f)] − ||g||_p^p|`.
    pub pairing_residual: f64,
    /// `|q_norm − 1/||g||_p|`.
    pub norm_residual: f64,
}

pub fn assemble(dual: &ProjectionResult, q: f64) -> Result<QOptimalSolution> {
    check_exponent(q)?;
    if (dual.q - q).abs() > 1e-12 * q {
        return Err(Error::Incompatible(format!(
            "projection solved for q = {}, assembly requested for q = {}",
            dual.q, q
        )));
    }
    let p = dual.p;
    let probs = &dual.probs;
    let g_star = dual.g_star.clone();
    let mu: f64 = g_star.iter().zip(probs).map(|(v, w)| v * w).sum();
    if !(mu > 0.0) {
        return Err(Error::DegenerateCandidate(format!(
            "E[g*] = {mu:.3e} is not positive; the projection did not converge"
        )));
    }
    let mut values: Vec<f64> = g_star.iter().map(|v| v / mu).collect();
    let mass: f64 = values.iter().zip(probs).map(|(v, w)| v * w).sum();
    for v in values.iter_mut() {
        *v /= mass;
    }
    let density = DensityVector::new(values, probs.clone())?;
    let q_norm = density.lq_norm(q);
    let classification = Classification::of(&density.values);
    let pairing: f64 = g_star
        .iter()
        .zip(&dual.f)
        .zip(probs)
        .map(|((gs, f), w)| w * gs * (1.0 - f))
        .sum();
    let pairing_residual = (pairing - dual.p_norm.powf(p)).abs();
    let norm_residual = (q_norm - 1.0 / dual.p_norm).abs();
    Ok(QOptimalSolution {
        q,
        p,
        g_star,
        mu,
        density,
        q_norm,
        classification,
        pairing_residual,
        norm_residual,
    })
}

/// Two-sided identity check with the tolerance it was judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub residuals: [f64; 2],
    pub tol: f64,
    pub pass: bool,
}

/// `|E[g*] − E[|g*|^q]|` and the relative residual
/// `|E[|dQ*/dP|^q] − μ^{−q/p}| / μ^{−q/p}` (the moment grows like `μ^{−q/p}`,
/// which is large when `μ` is small).
pub fn mu_consistency(sol: &QOptimalSolution, q: f64, tol: f64) -> Result<IdentityCheck> {
    check_exponent(q)?;
    let p = q / (q - 1.0);
    let probs = &sol.density.reference;
    let e_gs: f64 = sol.g_star.iter().zip(probs).map(|(v, w)| v * w).sum();
    let e_gs_q = lp_norm(&sol.g_star, probs, q).powf(q);
    let e_dq = sol.density.lq_norm(q).powf(q);
    let r1 = (e_gs - e_gs_q).abs();
    let target = sol.mu.powf(-q / p);
    let r2 = (e_dq - target).abs() / target;
    Ok(IdentityCheck {
        residuals: [r1, r2],
        tol,
        pass: r1 < tol && r2 < tol,
    })
}

/// `|E[|g|^p] − E[sgn(g)|g|^{p−1}]|`, which vanishes because `E[g* f] = 0`.
pub fn g_power_identity(dual: &ProjectionResult, q: f64, tol: f64) -> Result<IdentityCheck> {
    check_exponent(q)?;
    let p = q / (q - 1.0);
    let lhs = lp_norm(&dual.g, &dual.probs, p).powf(p);
    let rhs: f64 = dual
        .g_star
        .iter()
        .zip(&dual.probs)
        .map(|(v, w)| v * w)
        .sum();
    let r = (lhs - rhs).abs();
    Ok(IdentityCheck {
        residuals: [r, 0.0],
        tol,
        pass: r < tol,
    })
}

//! Necessary-and-sufficient optimality test for a candidate density, plus a
//! brute-force minimiser used as an independent oracle.
//!
//! A candidate `g*` with density `u = g*/E[g*]` is q-optimal iff
//! `E_Q[w] = 1` for every signed martingale measure `Q`, where
//! `w = sgn(g*)|g*|^{q−1}`. On a finite tree the signed martingale densities
//! form the affine set `{u0 + V z}`, so the quantifier collapses to two exact
//! conditions: `w` lies in `span{1, h_1, .., h_m}` and `E_u[w] = 1`. The
//! report carries that subspace test together with a seeded sampling test
//! over random directions `V z`, which serves as an independent witness.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::market::{
    lp_norm, martingale_affine_set, signed_pow, DensityVector, GainBasis, MartingaleSet,
    ScenarioMarket,
};
use crate::projection::check_exponent;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMeasure {
    pub g_star: Vec<f64>,
    pub q: f64,
}

impl CandidateMeasure {
    /// Candidate whose `g*` is a given density multiplied by `scale`.
    pub fn from_density(density: &[f64], scale: f64, q: f64) -> Self {
        CandidateMeasure {
            g_star: density.iter().map(|v| v * scale).collect(),
            q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Optimal,
    NotOptimal,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Optimal => "OPTIMAL",
            Verdict::NotOptimal => "NOT-OPTIMAL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }

    fn from_residual(r: f64, opts: &VerifyOptions) -> Verdict {
        if r < opts.optimal_tol {
            Verdict::Optimal
        } else if r > opts.reject_tol {
            Verdict::NotOptimal
        } else {
            Verdict::Inconclusive
        }
    }

    fn combine(a: Verdict, b: Verdict) -> Verdict {
        match (a, b) {
            (Verdict::Optimal, Verdict::Optimal) => Verdict::Optimal,
            (Verdict::NotOptimal, _) | (_, Verdict::NotOptimal) => Verdict::NotOptimal,
            _ => Verdict::Inconclusive,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Residuals below this certify optimality.
    pub optimal_tol: f64,
    /// Residuals above this reject the candidate.
    pub reject_tol: f64,
    /// Tolerance on `max_j |E[u h_j]|` for membership in the signed measures.
    pub martingale_tol: f64,
    pub n_samples: usize,
    /// Sampled directions are rescaled to this sup-norm.
    pub sample_scale: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            optimal_tol: 1e-8,
            reject_tol: 1e-4,
            martingale_tol: 1e-8,
            n_samples: 64,
            sample_scale: 10.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub q: f64,
    /// `max_j |E[u h_j]|` and `|E[u] − 1|` of the claimed density.
    pub martingale_residual: f64,
    /// `L²(P)` distance of `w` from `span{1, h_1, .., h_m}`.
    pub membership_residual: f64,
    /// `|E_u[w] − 1|`.
    pub normalization_residual: f64,
    /// `max |E_Q[w] − 1|` over the sampled measures; NaN when sampling was
    /// skipped because the candidate is not in `M^s`.
    pub sampled_max_residual: f64,
    pub n_samples: usize,
    pub subspace_verdict: Verdict,
    pub sampling_verdict: Verdict,
    pub verdict: Verdict,
    pub reason: Option<String>,
    pub optimal_tol: f64,
    pub reject_tol: f64,
}

/// `w = sgn(g*)|g*|^{q−1}`.
pub fn dual_weight(g_star: &[f64], q: f64) -> Vec<f64> {
    g_star.iter().map(|&v| signed_pow(v, q - 1.0)).collect()
}

pub fn verify(
    candidate: &CandidateMeasure,
    market: &ScenarioMarket,
    basis: &GainBasis,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let q = candidate.q;
    check_exponent(q)?;
    let n = market.n_states();
    if candidate.g_star.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "candidate has {} values, market has {} states",
            candidate.g_star.len(),
            n
        )));
    }
    if candidate.g_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCandidate("non-finite g* value".into()));
    }
    let probs = market.probs();
    let mu = market.expect(&candidate.g_star);
    if !(mu > 0.0) {
        return Err(Error::DegenerateCandidate(format!(
            "E[g*] = {mu:.3e} is not positive"
        )));
    }
    let u: Vec<f64> = candidate.g_star.iter().map(|v| v / mu).collect();
    let w = dual_weight(&candidate.g_star, q);

    let mut martingale_residual = (market.expect(&u) - 1.0).abs();
    for j in 0..basis.n_columns() {
        let e: f64 = (0..n).map(|i| probs[i] * u[i] * basis.matrix[(i, j)]).sum();
        martingale_residual = martingale_residual.max(e.abs());
    }

    let membership_residual = span_distance(&w, probs, basis);
    let normalization_residual =
        (market.expect(&u.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>()) - 1.0).abs();

    let mut report = VerificationReport {
        q,
        martingale_residual,
        membership_residual,
        normalization_residual,
        sampled_max_residual: f64::NAN,
        n_samples: 0,
        subspace_verdict: Verdict::NotOptimal,
        sampling_verdict: Verdict::NotOptimal,
        verdict: Verdict::NotOptimal,
        reason: None,
        optimal_tol: opts.optimal_tol,
        reject_tol: opts.reject_tol,
    };

    if martingale_residual > opts.martingale_tol {
        report.reason = Some(format!(
            "not in M^s: max |E[u h]|, |E[u]−1| = {martingale_residual:.3e}"
        ));
        return Ok(report);
    }

    let set = martingale_affine_set(market, basis)?;
    let (sampled, count) = sampled_residual(&u, &w, probs, &set, opts);
    report.sampled_max_residual = sampled;
    report.n_samples = count;

    report.subspace_verdict =
        Verdict::from_residual(membership_residual.max(normalization_residual), opts);
    report.sampling_verdict = Verdict::from_residual(sampled, opts);
    report.verdict = Verdict::combine(report.subspace_verdict, report.sampling_verdict);
    report.reason = match report.verdict {
        Verdict::Optimal => None,
        Verdict::NotOptimal => {
            Some("E_Q[sgn(g*)|g*|^(q-1)] differs from 1 for some Q in M^s".into())
        }
        Verdict::Inconclusive => Some("residual inside the guard band".into()),
    };
    Ok(report)
}

/// Weighted least-squares distance of `w` from `span{1, columns of basis}`.
fn span_distance(w: &[f64], probs: &[f64], basis: &GainBasis) -> f64 {
    let n = w.len();
    let m = basis.n_columns();
    let sqrt_p: Vec<f64> = probs.iter().map(|p| p.sqrt()).collect();
    let a = DMatrix::from_fn(n, m + 1, |i, j| {
        if j == 0 {
            sqrt_p[i]
        } else {
            sqrt_p[i] * basis.matrix[(i, j - 1)]
        }
    });
    let b = DVector::from_iterator(n, w.iter().zip(&sqrt_p).map(|(v, s)| v * s));
    let c = linalg::pinv_solve(&a, &b);
    (a * c - b).norm()
}

fn sampled_residual(
    u: &[f64],
    w: &[f64],
    probs: &[f64],
    set: &MartingaleSet,
    opts: &VerifyOptions,
) -> (f64, usize) {
    let n = u.len();
    let pair = |x: &[f64]| -> f64 { (0..n).map(|i| probs[i] * x[i] * w[i]).sum() };
    let base = pair(u);
    let mut worst = (base - 1.0).abs();
    let k = set.dim();
    if k == 0 {
        return (worst, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.n_samples {
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let v = &set.directions * z;
        let sup = v.amax();
        if sup == 0.0 {
            continue;
        }
        let v = v * (opts.sample_scale / sup);
        let q_density: Vec<f64> = (0..n).map(|i| u[i] + v[i]).collect();
        worst = worst.max((pair(&q_density) - 1.0).abs());
    }
    (worst, opts.n_samples)
}

/// Settings for [`brute_force_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub points_per_dim: usize,
    /// Half-width of the search box in `z`. `None` uses a bound that provably
    /// contains the minimiser.
    pub radius: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            points_per_dim: 41,
            radius: None,
        }
    }
}

pub const ORACLE_MAX_DIM: usize = 3;

/// Minimises `||u0 + V z||_q` by a dense grid over `z`, refined by nested
/// exact minimisation over one coordinate at a time.
pub fn brute_force_oracle(
    market: &ScenarioMarket,
    basis: &GainBasis,
    q: f64,
    grid: &GridOptions,
) -> Result<DensityVector> {
    check_exponent(q)?;
    let set = martingale_affine_set(market, basis)?;
    let k = set.dim();
    if k > ORACLE_MAX_DIM {
        return Err(Error::TooManyDimensions {
            k,
            max: ORACLE_MAX_DIM,
        });
    }
    let probs = market.probs();
    let n = market.n_states();
    let u0: Vec<f64> = set.u0.iter().cloned().collect();
    if k == 0 {
        return DensityVector::new(u0, probs.to_vec());
    }
    let dirs: Vec<Vec<f64>> = (0..k)
        .map(|j| set.directions.column(j).iter().cloned().collect())
        .collect();
    let point = |z: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| u0[i] + (0..k).map(|j| dirs[j][i] * z[j]).sum::<f64>())
            .collect()
    };
    let objective = |z: &[f64]| -> f64 {
        point(z)
            .iter()
            .zip(probs)
            .map(|(v, p)| p * v.abs().powf(q))
            .sum()
    };

    // u0 is orthogonal to every direction and V has orthonormal columns, so
    // |z*| ≤ ||u*||_2 ≤ √n ||u*||_∞ ≤ √n p_min^{−1/q} ||u0||_q.
    let p_min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
    let radius = grid
        .radius
        .unwrap_or_else(|| (n as f64).sqrt() * p_min.powf(-1.0 / q) * lp_norm(&u0, probs, q));

    let pts = grid.points_per_dim.max(2);
    let axis: Vec<f64> = (0..pts)
        .map(|i| -radius + 2.0 * radius * i as f64 / (pts - 1) as f64)
        .collect();
    let mut best_z = vec![0.0; k];
    let mut best_f = objective(&best_z);
    let mut idx = vec![0usize; k];
    loop {
        let z: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let f = objective(&z);
        if f < best_f {
            best_f = f;
            best_z = z;
        }
        // odometer increment
        let mut d = 0;
        while d < k {
            idx[d] += 1;
            if idx[d] < pts {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == k {
            break;
        }
    }

    let spacing = 2.0 * radius / (pts - 1) as f64;
    let partial = |z: &[f64], j: usize| -> f64 {
        point(z)
            .iter()
            .zip(probs)
            .zip(&dirs[j])
            .map(|((v, p), d)| q * p * signed_pow(*v, q - 1.0) * d)
            .sum()
    };
    let mut z = best_z;
    nested_minimize(&partial, &mut z, 0, spacing);
    DensityVector::new(point(&z), probs.to_vec())
}

/// Minimises over `z[level..]` with `z[..level]` fixed, starting from the
/// current values. The partial minimum is convex in `z[level]` and, by the
/// envelope theorem, its derivative is `∂F/∂z_level` at the inner minimiser,
/// so each level is a one-dimensional root search. Unlike cyclic coordinate
/// descent this cannot stall where `|u|^q` is nearly non-smooth (`q` near 1).
fn nested_minimize(
    partial: &dyn Fn(&[f64], usize) -> f64,
    z: &mut Vec<f64>,
    level: usize,
    step: f64,
) {
    if level == z.len() {
        return;
    }
    let deriv = |t: f64| -> f64 {
        let mut zz = z.clone();
        zz[level] = t;
        nested_minimize(partial, &mut zz, level + 1, step);
        partial(&zz, level)
    };
    let t = minimize_convex_1d(deriv, z[level], step);
    z[level] = t;
    nested_minimize(partial, z, level + 1, step);
}

/// Minimiser of a convex function given its (monotone) derivative: bracket
/// the sign change, then bisect to machine precision.
fn minimize_convex_1d(deriv: impl Fn(f64) -> f64, start: f64, step: f64) -> f64 {
    let d0 = deriv(start);
    if d0 == 0.0 {
        return start;
    }
    let dir = if d0 > 0.0 { -1.0 } else { 1.0 };
    let mut h = step.max(1e-12);
    let mut near = start;
    let mut far = start + dir * h;
    let mut guard = 0;
    while deriv(far) * dir < 0.0 {
        near = far;
        h *= 2.0;
        far = start + dir * h;
        guard += 1;
        if guard > 200 {
            return far;
        }
    }
    let (mut lo, mut hi) = if near < far { (near, far) } else { (far, near) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

//! Dual projection `min_{h ∈ K_0} ||1 − h||_p` and primal minimisation of
//! `||u||_q` over the signed martingale densities.
//!
//! Both problems have the form `min_x Σ w_i |a_i + (M x)_i|^r` and share one
//! damped Newton solver. The Hessian `r(r−1) Mᵀ diag(w |y|^{r−2}) M` is
//! evaluated with `|y_i|` floored at [`HESSIAN_FLOOR`] so that steps stay
//! finite for `r < 2`; when the Newton direction is unusable the solver takes
//! a gradient step instead. Linear systems are solved with the minimum-norm
//! pseudo-inverse, so redundant basis columns are harmless.
//!
//! For `r < 2` the map `y ↦ sgn(y)|y|^{r−1}` has unbounded slope at zero and
//! Newton steps in `x` crawl when a minimiser puts some `y_i` near zero. The
//! solver then also carries the conjugate variable `s = sgn(y)|y|^{r−1}`, whose
//! inverse `y = sgn(s)|s|^{r'−1}` (`r' = r/(r−1) > 2`) is C¹, and takes Newton
//! steps on the stationarity system
//!
//! ```text
//! sgn(s)|s|^{r'−1} − (a + M x) = 0,    Mᵀ diag(w) s = 0
//! ```
//!
//! whenever they reduce its residual without raising the objective. The
//! returned `s` is accurate even where `y_i ≈ 0`, unlike `sgn(y)|y|^{r−1}`
//! evaluated from a rounded `y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::market::{
    distance_of_one_from_gains, lp_norm, martingale_affine_set, signed_pow, DensityVector,
    GainBasis, MartingaleSet, ScenarioMarket,
};

/// Lower bound on `|y_i|` inside Hessian weights.
pub const HESSIAN_FLOOR: f64 = 1e-8;

const MAX_DOUBLINGS: usize = 60;
const BISECTIONS: usize = 200;
const MAX_HALVINGS: usize = 60;
/// Conjugate-variable steps shorter than `2^-KKT_HALVINGS` are left to the
/// line searches in `x`.
const KKT_HALVINGS: usize = 6;
const POLISH_STEPS: usize = 8;
/// Exponents below this get a second attempt by continuation when the direct
/// solve stalls.
const CONTINUATION_BELOW: f64 = 1.5;
/// Number of exponents on the continuation path from 2 down to the target.
const CONTINUATION_STAGES: usize = 8;
/// Multiple of the rounding bound on `F` allowed when a step is accepted on
/// gradient decrease alone.
pub const OBJECTIVE_NOISE_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stopping tolerance on the relative gradient norm: `||∇F||` divided by
    /// the size `r Σ w_i |y_i|^{r−1} ||b_i||` of the terms it sums. For
    /// exponents below 2 the larger of the two relative residuals of the
    /// stationarity system in `(s, x)` is used instead.
    pub tol: f64,
    pub max_iter: usize,
    /// `||g||_p` below this is read as `1 ∈ span K_0`.
    pub degenerate_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 500,
            degenerate_tol: 1e-8,
        }
    }
}

/// Conjugate exponent `p = q/(q−1)`.
pub fn conjugate(q: f64) -> f64 {
    q / (q - 1.0)
}

pub(crate) fn check_exponent(q: f64) -> Result<()> {
    if q.is_finite() && q > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(q))
    }
}

/// `min_x Σ w_i |offset_i + (matrix x)_i|^exponent`.
struct PowerSum<'a> {
    weights: &'a [f64],
    offset: &'a DVector<f64>,
    matrix: &'a DMatrix<f64>,
    exponent: f64,
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    /// `sgn(y)|y|^{r−1}`, carried separately for `r < 2`.
    s: DVector<f64>,
    f: f64,
}

struct Minimum {
    x: DVector<f64>,
    /// `sgn(y)|y|^{r−1}` at the minimiser.
    conjugate: DVector<f64>,
    grad_norm: f64,
    iterations: usize,
    trace: Vec<f64>,
    slack: f64,
    resolution_limited: bool,
}

impl PowerSum<'_> {
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.offset + self.matrix * x
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        y.iter()
            .zip(self.weights)
            .map(|(v, w)| w * v.abs().powf(self.exponent))
            .sum()
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let r = self.exponent;
        let inner = DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(self.weights)
                .map(|(v, w)| r * w * signed_pow(*v, r - 1.0)),
        );
        self.matrix.transpose() * inner
    }

    /// First-order rounding bound on `F(x)`: `y_i = o_i + (Mx)_i` carries an
    /// absolute error of about `ε (|o_i| + Σ_j |M_ij x_j|)`, which can be far
    /// larger than `ε |y_i|` when the sum cancels.
    pub(crate) fn value_noise(&self, x: &DVector<f64>) -> f64 {
        let r = self.exponent;
        let y = self.residual(x);
        let mut noise = f64::EPSILON * self.value(&y);
        for (i, w) in self.weights.iter().enumerate() {
            let mut mag = self.offset[i].abs();
            for j in 0..x.len() {
                mag += (self.matrix[(i, j)] * x[j]).abs();
            }
            noise += r * w * y[i].abs().powf(r - 1.0) * f64::EPSILON * mag;
        }
        noise
    }

    /// `r Σ w_i |y_i|^{r−1} ||b_i||`: the size of the terms that cancel in the
    /// gradient at the optimum.
    fn gradient_scale(&self, y: &DVector<f64>) -> f64 {
        let r = self.exponent;
        y.iter()
            .zip(self.weights)
            .enumerate()
            .map(|(i, (v, w))| r * w * v.abs().powf(r - 1.0) * self.matrix.row(i).norm())
            .sum()
    }

    /// Gradient norm relative to [`Self::gradient_scale`], so the stopping
    /// rule does not depend on the overall size of `y`.
    fn relative_gradient(&self, y: &DVector<f64>) -> f64 {
        let g = self.gradient(y).norm();
        let scale = self.gradient_scale(y);
        if scale > 0.0 {
            g / scale
        } else {
            g
        }
    }

    fn to_conjugate(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| signed_pow(v, self.exponent - 1.0))
    }

    /// Relative residuals of the stationarity system in `(s, x)`: consistency
    /// `max_i |sgn(s_i)|s_i|^{r'−1} − y_i| / (|a_i| + Σ_j |M_ij x_j|)` and
    /// balance `||Mᵀ W s|| / Σ_i w_i |s_i| ||b_i||`.
    fn kkt_residual(&self, s: &DVector<f64>, x: &DVector<f64>) -> (f64, f64) {
        let rc = self.exponent / (self.exponent - 1.0);
        let y = self.residual(x);
        let mut consistency = 0.0_f64;
        let mut scale = 0.0;
        for i in 0..y.len() {
            let mut mag = self.offset[i].abs();
            for j in 0..x.len() {
                mag += (self.matrix[(i, j)] * x[j]).abs();
            }
            let d = (signed_pow(s[i], rc - 1.0) - y[i]).abs();
            consistency = consistency.max(if mag > 0.0 { d / mag } else { d });
            scale += self.weights[i] * s[i].abs() * self.matrix.row(i).norm();
        }
        let ws = DVector::from_iterator(s.len(), s.iter().zip(self.weights).map(|(v, w)| v * w));
        let balance = (self.matrix.transpose() * ws).norm();
        let balance = if scale > 0.0 {
            balance / scale
        } else {
            balance
        };
        (consistency, balance)
    }

    /// Newton step on the stationarity system in `(s, x)`, backtracked until
    /// its residual falls by a fixed fraction while `F` stays within its
    /// rounding bound.
    fn kkt_step(
        &self,
        s: &DVector<f64>,
        x: &DVector<f64>,
        f0: f64,
    ) -> Option<(DVector<f64>, DVector<f64>, f64, f64)> {
        let rc = self.exponent / (self.exponent - 1.0);
        let (n, k) = self.matrix.shape();
        let y = self.residual(x);
        let mut jac = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        for i in 0..n {
            jac[(i, i)] = (rc - 1.0) * s[i].abs().powf(rc - 2.0);
            rhs[i] = y[i] - signed_pow(s[i], rc - 1.0);
            for j in 0..k {
                jac[(i, n + j)] = -self.matrix[(i, j)];
                jac[(n + j, i)] = self.weights[i] * self.matrix[(i, j)];
                rhs[n + j] -= self.weights[i] * self.matrix[(i, j)] * s[i];
            }
        }
        let delta = linalg::pinv_solve(&jac, &rhs);
        if !delta.iter().all(|v| v.is_finite()) {
            return None;
        }
        let ds = delta.rows(0, n).into_owned();
        let dx = delta.rows(n, k).into_owned();
        let (c0, b0) = self.kkt_residual(s, x);
        let merit0 = c0.max(b0);
        let allowance = OBJECTIVE_NOISE_FACTOR * self.value_noise(x);
        let mut t = 1.0;
        for _ in 0..KKT_HALVINGS {
            let sc = s + &ds * t;
            let xc = x + &dx * t;
            let fc = self.value(&self.residual(&xc));
            let (c, b) = self.kkt_residual(&sc, &xc);
            if fc.is_finite() && fc <= f0 + allowance && c.max(b) <= (1.0 - 0.5 * t) * merit0 {
                return Some((sc, xc, fc, (fc - f0).max(0.0)));
            }
            t *= 0.5;
        }
        None
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let r = self.exponent;
        let k = self.matrix.ncols();
        let mut h = DMatrix::zeros(k, k);
        for (i, (v, w)) in y.iter().zip(self.weights).enumerate() {
            let a = v.abs().max(HESSIAN_FLOOR);
            let weight = r * (r - 1.0) * w * a.powf(r - 2.0);
            let row = self.matrix.row(i);
            h += weight * row.transpose() * row;
        }
        h
    }

    /// Exact line search: bisection on the directional derivative, which is
    /// non-decreasing in `t` because `F` is convex and C¹. Unlike backtracking
    /// from the Newton step this copes with minimisers next to a kink of
    /// `|y|^r` (`r < 2`), where Newton iterates oscillate.
    fn line_search(
        &self,
        x: &DVector<f64>,
        f0: f64,
        grad: &DVector<f64>,
        dir: &DVector<f64>,
    ) -> Option<(DVector<f64>, f64)> {
        let slope = grad.dot(dir);
        if !(slope < 0.0) || !dir.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dslope = |t: f64| -> f64 { self.gradient(&self.residual(&(x + dir * t))).dot(dir) };
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut bracketed = false;
        for _ in 0..MAX_DOUBLINGS {
            let d = dslope(hi);
            if !d.is_finite() {
                break;
            }
            if d >= 0.0 {
                bracketed = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if bracketed {
            for _ in 0..BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if dslope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let mut best: Option<(DVector<f64>, f64)> = None;
        for t in [lo, hi] {
            if t == 0.0 {
                continue;
            }
            let cand = x + dir * t;
            let fc = self.value(&self.residual(&cand));
            if fc.is_finite() && fc < f0 && best.as_ref().map_or(true, |b| fc < b.1) {
                best = Some((cand, fc));
            }
        }
        best
    }

    /// Near the optimum the decrease of a Newton step falls below the
    /// resolution of the objective while the gradient is still resolvable.
    /// Accept a (damped) step that shrinks the gradient and leaves `f` within
    /// its rounding bound ([`Self::value_noise`]).
    fn gradient_step(
        &self,
        x: &DVector<f64>,
        f0: f64,
        grad_norm: f64,
        dir: &DVector<f64>,
    ) -> Option<(DVector<f64>, f64, f64)> {
        if !dir.iter().all(|v| v.is_finite()) {
            return None;
        }
        let allowance = OBJECTIVE_NOISE_FACTOR * self.value_noise(x);
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let cand = x + dir * t;
            let y = self.residual(&cand);
            let fc = self.value(&y);
            if fc.is_finite() && fc <= f0 + allowance && self.relative_gradient(&y) < grad_norm {
                return Some((cand, fc, (fc - f0).max(0.0)));
            }
            t *= 0.5;
        }
        None
    }

    /// Residual used by the stopping rule (see [`SolverOptions::tol`]).
    fn stationarity(&self, it: &Iterate) -> f64 {
        if self.exponent < 2.0 {
            let (c, b) = self.kkt_residual(&it.s, &it.x);
            c.max(b)
        } else {
            self.relative_gradient(&it.y)
        }
    }

    /// One accepted step from `it`, or `None` when no step is representable.
    fn step(&self, it: &Iterate) -> Option<(Iterate, f64)> {
        if self.exponent < 2.0 {
            if let Some((s, x, f, used)) = self.kkt_step(&it.s, &it.x, it.f) {
                let y = self.residual(&x);
                return Some((Iterate { x, y, s, f }, used));
            }
        }
        let grad = self.gradient(&it.y);
        let newton = linalg::pinv_solve(&self.hessian(&it.y), &(-&grad));
        let (x, f, used) = self
            .line_search(&it.x, it.f, &grad, &newton)
            .or_else(|| self.line_search(&it.x, it.f, &grad, &(-&grad)))
            .map(|(nx, nf)| (nx, nf, 0.0))
            .or_else(|| self.gradient_step(&it.x, it.f, self.relative_gradient(&it.y), &newton))?;
        let y = self.residual(&x);
        let s = self.to_conjugate(&y);
        Some((Iterate { x, y, s, f }, used))
    }

    /// Damped Newton iterations until the stopping residual meets `opts.tol`,
    /// followed by a few polishing steps kept only while each at least halves
    /// that residual. Polishing matters on near-degenerate problems, where
    /// the martingale residual of the assembled density is the stopping
    /// residual magnified by roughly `1/||y||`.
    ///
    /// For exponents close to 1 the objective is nearly non-smooth and the
    /// direct solve from `x = 0` can stall far from the minimiser. It is then
    /// retried by continuation: minimise along exponents from 2 down to the
    /// target, each stage starting from the previous minimiser. The returned
    /// trace and iteration count describe the final stage only.
    fn minimize(&self, opts: &SolverOptions, solver: &'static str) -> Result<Minimum> {
        let start = DVector::zeros(self.matrix.ncols());
        match self.minimize_from(start.clone(), opts, solver) {
            Err(Error::NonConvergence { .. }) if self.exponent < CONTINUATION_BELOW => {
                let mut x = start;
                for stage in 1..CONTINUATION_STAGES {
                    let frac = stage as f64 / CONTINUATION_STAGES as f64;
                    let relaxed = PowerSum {
                        exponent: 2.0 + (self.exponent - 2.0) * frac,
                        ..*self
                    };
                    match relaxed.minimize_from(x.clone(), opts, solver) {
                        Ok(m) => x = m.x,
                        Err(Error::NonConvergence { best, .. }) => x = DVector::from_vec(best),
                        Err(e) => return Err(e),
                    }
                }
                self.minimize_from(x, opts, solver)
            }
            other => other,
        }
    }

    fn minimize_from(
        &self,
        x: DVector<f64>,
        opts: &SolverOptions,
        solver: &'static str,
    ) -> Result<Minimum> {
        let k = self.matrix.ncols();
        let y = self.residual(&x);
        let mut it = Iterate {
            s: self.to_conjugate(&y),
            f: self.value(&y),
            x,
            y,
        };
        let mut trace = vec![it.f];
        let mut slack = 0.0_f64;
        let finish = |it: Iterate, grad_norm, iterations, trace, slack, limited| Minimum {
            x: it.x,
            conjugate: it.s,
            grad_norm,
            iterations,
            trace,
            slack,
            resolution_limited: limited,
        };
        if k == 0 {
            return Ok(finish(it, 0.0, 0, trace, slack, false));
        }
        let mut iterations = 0;
        let mut grad_norm = self.stationarity(&it);
        while grad_norm > opts.tol {
            if iterations == opts.max_iter {
                return Err(Error::NonConvergence {
                    solver,
                    iterations,
                    grad_norm,
                    best: it.x.iter().cloned().collect(),
                });
            }
            let Some((next, used)) = self.step(&it) else {
                if self.at_resolution(&it.x) {
                    return Ok(finish(it, grad_norm, iterations, trace, slack, true));
                }
                // No decrease is representable any more.
                return Err(Error::NonConvergence {
                    solver,
                    iterations,
                    grad_norm,
                    best: it.x.iter().cloned().collect(),
                });
            };
            it = next;
            trace.push(it.f);
            slack = slack.max(used);
            iterations += 1;
            grad_norm = self.stationarity(&it);
        }
        for _ in 0..POLISH_STEPS {
            if grad_norm == 0.0 || iterations == opts.max_iter {
                break;
            }
            let Some((next, used)) = self.step(&it) else {
                break;
            };
            let g = self.stationarity(&next);
            if !(g <= 0.5 * grad_norm) {
                break;
            }
            it = next;
            trace.push(it.f);
            slack = slack.max(used);
            iterations += 1;
            grad_norm = g;
        }
        Ok(finish(it, grad_norm, iterations, trace, slack, false))
    }

    /// True for a one-dimensional problem whose derivative changes sign
    /// within a few ulps of `x`: the minimiser is then bracketed to the
    /// resolution of `f64`, which happens when it sits next to a kink of
    /// `|y|^r` (`r < 2`) and the relative gradient cannot fall below the
    /// tolerance at any representable point. In more dimensions a sign change
    /// along every coordinate does not imply stationarity, because the
    /// derivative of `|y|^r` is nearly discontinuous at zero for `r` close to 1.
    fn at_resolution(&self, x: &DVector<f64>) -> bool {
        const ULPS: f64 = 4.0;
        if x.len() != 1 {
            return false;
        }
        (0..x.len()).all(|j| {
            let delta = ULPS * f64::EPSILON * x[j].abs().max(f64::MIN_POSITIVE);
            let partial = |t: f64| {
                let mut z = x.clone();
                z[j] += t;
                self.gradient(&self.residual(&z))[j]
            };
            let (lo, hi) = (partial(-delta), partial(delta));
            lo <= 0.0 && hi >= 0.0
        })
    }
}

/// Minimiser of the dual projection problem.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub q: f64,
    pub p: f64,
    /// Coefficients of `f = Σ θ_j h_j` over the basis columns.
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    /// `g = 1 − f`.
    pub g: Vec<f64>,
    /// `g* = sgn(g)|g|^{p−1}` as carried by the solver; for `p < 2` it stays
    /// accurate where `g_i` is within rounding of zero.
    pub g_star: Vec<f64>,
    pub p_norm: f64,
    /// Relative gradient norm at termination (see [`SolverOptions::tol`]).
    pub grad_norm: f64,
    /// Stopped at the resolution of `f64` with `grad_norm` above the tolerance.
    pub resolution_limited: bool,
    pub iterations: usize,
    /// Objective `Σ p_i |g_i|^p` after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Largest rise of the objective accepted within its rounding bound
    /// (zero when every step decreased it strictly).
    pub objective_slack: f64,
    /// Reference probabilities of the market the result belongs to.
    pub probs: Vec<f64>,
}

impl ProjectionResult {
    /// `max_j |E[sgn(g)|g|^{p−1} h_j]|`.
    pub fn stationarity(&self, basis: &GainBasis) -> f64 {
        (0..basis.n_columns())
            .map(|j| {
                self.g_star
                    .iter()
                    .zip(&self.probs)
                    .enumerate()
                    .map(|(i, (v, p))| p * v * basis.matrix[(i, j)])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn dual_project(
    market: &ScenarioMarket,
    basis: &GainBasis,
    q: f64,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    check_exponent(q)?;
    if basis.matrix.nrows() != market.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows, market has {} states",
            basis.matrix.nrows(),
            market.n_states()
        )));
    }
    let dist = distance_of_one_from_gains(market, basis);
    if dist < opts.degenerate_tol {
        return Err(Error::Infeasible { residual: dist });
    }
    let p = conjugate(q);
    let n = market.n_states();
    let ones = DVector::from_element(n, 1.0);
    let neg_basis = -&basis.matrix;
    let problem = PowerSum {
        weights: market.probs(),
        offset: &ones,
        matrix: &neg_basis,
        exponent: p,
    };
    let min = problem.minimize(opts, "dual projection")?;
    let f_vec = &basis.matrix * &min.x;
    let g: Vec<f64> = f_vec.iter().map(|v| 1.0 - v).collect();
    let p_norm = lp_norm(&g, market.probs(), p);
    if p_norm < opts.degenerate_tol {
        return Err(Error::Infeasible { residual: p_norm });
    }
    Ok(ProjectionResult {
        q,
        p,
        theta: min.x.iter().cloned().collect(),
        f: f_vec.iter().cloned().collect(),
        g,
        g_star: min.conjugate.iter().cloned().collect(),
        p_norm,
        grad_norm: min.grad_norm,
        resolution_limited: min.resolution_limited,
        iterations: min.iterations,
        objective_trace: min.trace,
        objective_slack: min.slack,
        probs: market.probs().to_vec(),
    })
}

/// Minimal `L^q(P)` density over the signed martingale measures.
#[derive(Debug, Clone)]
pub struct PrimalResult {
    pub q: f64,
    pub u: DensityVector,
    pub q_norm: f64,
    /// Coordinates in the affine parametrisation `u0 + V z`.
    pub z: Vec<f64>,
    /// Relative gradient norm at termination (see [`SolverOptions::tol`]).
    pub grad_norm: f64,
    /// See [`ProjectionResult::resolution_limited`].
    pub resolution_limited: bool,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    /// See [`ProjectionResult::objective_slack`].
    pub objective_slack: f64,
}

pub fn primal_minimize(
    market: &ScenarioMarket,
    basis: &GainBasis,
    q: f64,
    opts: &SolverOptions,
) -> Result<PrimalResult> {
    check_exponent(q)?;
    let set = martingale_affine_set(market, basis)?;
    primal_minimize_on(market, &set, q, opts)
}

/// Same as [`primal_minimize`] on a precomputed affine set.
pub fn primal_minimize_on(
    market: &ScenarioMarket,
    set: &MartingaleSet,
    q: f64,
    opts: &SolverOptions,
) -> Result<PrimalResult> {
    check_exponent(q)?;
    let problem = PowerSum {
        weights: market.probs(),
        offset: &set.u0,
        matrix: &set.directions,
        exponent: q,
    };
    let min = problem.minimize(opts, "primal minimisation")?;
    let u = set.point(&min.x);
    let u = DensityVector::new(u.iter().cloned().collect(), market.probs().to_vec())?;
    let q_norm = u.lq_norm(q);
    Ok(PrimalResult {
        q,
        u,
        q_norm,
        z: min.x.iter().cloned().collect(),
        grad_norm: min.grad_norm,
        resolution_limited: min.resolution_limited,
        iterations: min.iterations,
        objective_trace: min.trace,
        objective_slack: min.slack,
    })
}

/// Strong-duality check `||u*||_q = 1/||g||_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityCertificate {
    pub q: f64,
    /// `|q_norm − 1/p_norm|`.
    pub gap: f64,
    /// `|q_norm · p_norm − 1|`.
    pub product_gap: f64,
    pub tol: f64,
    pub pass: bool,
}

pub const DUALITY_TOL: f64 = 1e-8;

pub fn duality_certificate(
    dual: &ProjectionResult,
    primal: &PrimalResult,
    tol: f64,
) -> Result<DualityCertificate> {
    if (dual.q - primal.q).abs() > 1e-12 * dual.q.abs().max(1.0) {
        return Err(Error::Incompatible(format!(
            "dual solved for q = {}, primal for q = {}",
            dual.q, primal.q
        )));
    }
    if dual.g.len() != primal.u.values.len() {
        return Err(Error::Incompatible(format!(
            "dual has {} states, primal has {}",
            dual.g.len(),
            primal.u.values.len()
        )));
    }
    let gap = (primal.q_norm - 1.0 / dual.p_norm).abs();
    Ok(DualityCertificate {
        q: dual.q,
        gap,
        product_gap: (primal.q_norm * dual.p_norm - 1.0).abs(),
        tol,
        pass: gap < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{build_one_period, gain_basis};

    fn trinomial() -> ScenarioMarket {
        build_one_period(&[1.0], &[vec![2.0], vec![1.0], vec![0.5]], &[1.0 / 3.0; 3]).unwrap()
    }

    fn zero_drift() -> ScenarioMarket {
        build_one_period(&[1.0], &[vec![1.5], vec![0.5]], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn zero_drift_dual_is_trivial() {
        let m = zero_drift();
        let b = gain_basis(&m);
        let r = dual_project(&m, &b, 2.0, &SolverOptions::default()).unwrap();
        assert_eq!(r.theta, vec![0.0]);
        assert_eq!(r.g, vec![1.0, 1.0]);
        assert_eq!(r.p_norm, 1.0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn zero_drift_primal_is_constant_density() {
        let m = zero_drift();
        let b = gain_basis(&m);
        let r = primal_minimize(&m, &b, 3.0, &SolverOptions::default()).unwrap();
        for v in &r.u.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!((r.q_norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn binomial_primal_is_the_single_point() {
        let m = build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[0.5, 0.5]).unwrap();
        let b = gain_basis(&m);
        let r = primal_minimize(&m, &b, 2.5, &SolverOptions::default()).unwrap();
        assert!(r.z.is_empty());
        assert!((r.u.values[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.q_norm - r.u.lq_norm(2.5)).abs() < 1e-15);
    }

    #[test]
    fn stationarity_after_solve() {
        let m = trinomial();
        let b = gain_basis(&m);
        for q in [1.2, 1.5, 2.0, 3.0, 5.0] {
            let opts = SolverOptions::default();
            let r = dual_project(&m, &b, q, &opts).unwrap();
            assert!(r.grad_norm <= opts.tol);
            assert!(r.stationarity(&b) <= 10.0 * opts.tol, "q={q}");
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let m = trinomial();
        let b = gain_basis(&m).scaled(7.0);
        for q in [1.2, 3.0, 5.0] {
            let r = dual_project(&m, &b, q, &SolverOptions::default()).unwrap();
            assert!(r.objective_slack <= 1e-12 * r.objective_trace[0]);
            for w in r.objective_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + r.objective_slack,
                    "q={q}: {} > {}",
                    w[1],
                    w[0]
                );
            }
        }
    }

    #[test]
    fn infeasible_market_is_reported() {
        let m = build_one_period(&[1.0], &[vec![2.0], vec![2.0]], &[0.5, 0.5]).unwrap();
        let b = gain_basis(&m);
        assert!(matches!(
            dual_project(&m, &b, 2.0, &SolverOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let m = trinomial();
        let b = gain_basis(&m);
        let opts = SolverOptions {
            max_iter: 0,
            ..SolverOptions::default()
        };
        match dual_project(&m, &b, 3.0, &opts) {
            Err(Error::NonConvergence {
                best, grad_norm, ..
            }) => {
                assert_eq!(best.len(), 1);
                assert!(grad_norm > opts.tol);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_exponent() {
        let m = trinomial();
        let b = gain_basis(&m);
        assert!(matches!(
            dual_project(&m, &b, 1.0, &SolverOptions::default()),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn certificate_rejects_mismatched_q() {
        let m = trinomial();
        let b = gain_basis(&m);
        let opts = SolverOptions::default();
        let d = dual_project(&m, &b, 2.0, &opts).unwrap();
        let p = primal_minimize(&m, &b, 3.0, &opts).unwrap();
        assert!(matches!(
            duality_certificate(&d, &p, DUALITY_TOL),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn zero_drift_certificate_is_exact() {
        let m = zero_drift();
        let b = gain_basis(&m);
        let opts = SolverOptions::default();
        let d = dual_project(&m, &b, 2.0, &opts).unwrap();
        let p = primal_minimize(&m, &b, 2.0, &opts).unwrap();
        let c = duality_certificate(&d, &p, DUALITY_TOL).unwrap();
        assert!(c.pass);
        assert!(c.gap < 1e-15);
    }
}

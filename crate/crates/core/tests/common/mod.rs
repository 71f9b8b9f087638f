//! Shared fixtures and independent oracles. Nothing here calls the solver
//! code under test; the oracles use plain loops over `Vec<f64>`.

#![allow(dead_code)]

use qoptimal::market::{gain_basis, GainBasis, NodeInput, ScenarioMarket};
use qoptimal::projection::{
    dual_project, primal_minimize, PrimalResult, ProjectionResult, SolverOptions,
};
use qoptimal::solution::{assemble, QOptimalSolution};

pub const QS: [f64; 5] = [1.2, 1.5, 2.0, 3.0, 5.0];

pub struct Pipeline {
    pub basis: GainBasis,
    pub dual: ProjectionResult,
    pub primal: PrimalResult,
    pub sol: QOptimalSolution,
}

pub fn pipeline(market: &ScenarioMarket, q: f64) -> Pipeline {
    let basis = gain_basis(market);
    let opts = SolverOptions::default();
    let dual = dual_project(market, &basis, q, &opts).expect("dual converges");
    let primal = primal_minimize(market, &basis, q, &opts).expect("primal converges");
    let sol = assemble(&dual, q).expect("assembly succeeds");
    Pipeline {
        basis,
        dual,
        primal,
        sol,
    }
}

pub fn columns(basis: &GainBasis) -> Vec<Vec<f64>> {
    (0..basis.n_columns())
        .map(|j| basis.matrix.column(j).iter().cloned().collect())
        .collect()
}

pub fn expect(probs: &[f64], x: &[f64]) -> f64 {
    probs.iter().zip(x).map(|(p, v)| p * v).sum()
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Rank by Gaussian elimination with partial pivoting; pivots below
/// `rel_tol × max|entry|` count as zero.
pub fn gauss_rank(rows: &[Vec<f64>], rel_tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    if a.is_empty() {
        return 0;
    }
    let ncols = a[0].len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut rank = 0;
    for col in 0..ncols {
        if rank == a.len() {
            break;
        }
        let (piv, val) =
            (rank..a.len())
                .map(|r| (r, a[r][col].abs()))
                .fold(
                    (rank, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if val <= tol {
            continue;
        }
        a.swap(rank, piv);
        for r in (rank + 1)..a.len() {
            let factor = a[r][col] / a[rank][col];
            for c in col..ncols {
                a[r][c] -= factor * a[rank][c];
            }
        }
        rank += 1;
    }
    rank
}

/// `L²(P)` orthogonal projection of `target` onto the span of `cols` by
/// modified Gram–Schmidt; near-dependent columns are dropped.
pub fn weighted_projection(cols: &[Vec<f64>], probs: &[f64], target: &[f64]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..a.len()).map(|i| probs[i] * a[i] * b[i]).sum() };
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        let orig = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for e in &ortho {
                let k = dot(&v, e);
                for i in 0..v.len() {
                    v[i] -= k * e[i];
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-10 * orig.max(1e-300) {
            ortho.push(v.iter().map(|x| x / n).collect());
        }
    }
    let mut out = vec![0.0; target.len()];
    for e in &ortho {
        let k = dot(target, e);
        for i in 0..out.len() {
            out[i] += k * e[i];
        }
    }
    out
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Root of an increasing function by bisection on `[a, b]`.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if f(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

/// The same tree with every node's children listed in reverse order, and the
/// permutation `perm[i]` = position in the new leaf order of original leaf `i`.
pub fn reversed_enumeration(market: &ScenarioMarket) -> (ScenarioMarket, Vec<usize>) {
    let nodes = market.nodes();
    let leaf_pos: std::collections::HashMap<usize, usize> = market
        .leaves()
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();
    let root = nodes.iter().position(|n| n.parent.is_none()).unwrap();
    let mut inputs = Vec::new();
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        let n = &nodes[i];
        inputs.push(NodeInput {
            name: n.name.clone(),
            parent: n.parent.map(|p| nodes[p].name.clone()),
            prices: n.prices.clone(),
            prob: leaf_pos.get(&i).map(|&k| market.probs()[k]),
        });
        // pushing in order pops in reverse
        stack.extend(n.children.iter().copied());
    }
    let rebuilt = ScenarioMarket::from_nodes(market.n_assets(), inputs).unwrap();
    let new_names = rebuilt.state_names();
    let perm = market
        .state_names()
        .iter()
        .map(|name| new_names.iter().position(|n| n == name).unwrap())
        .collect();
    (rebuilt, perm)
}

/// A random corpus tree whose shape varies with `pick` (the corpus cycles
/// through its shapes, so the first tree of every seed would be a binomial).
pub fn corpus_tree(seed: u64, pick: usize) -> qoptimal::corpus::CorpusInstance {
    qoptimal::corpus::random_corpus(seed, pick + 1, false)
        .pop()
        .expect("non-empty corpus")
}

/// `dS = 0.2 Y S dt + 0.2 S dB`, `dY = (0.3 − Y) dt + 0.3 dW` with `B ⟂ W`:
/// the price of risk is `λ = Y`, a function of the volatility factor alone.
pub fn stochastic_lambda_spec(q: f64) -> qoptimal::diffusion::DiffusionSpec {
    use qoptimal::diffusion::{Coefficient, DiffusionSpec};
    DiffusionSpec {
        mu: Coefficient::zero().with_y_slope(0.2).times_s(),
        sigma: Coefficient::constant(0.2).times_s(),
        alpha: Coefficient::constant(0.3).with_y_slope(-1.0),
        beta: Coefficient::constant(0.3),
        rho: Coefficient::zero(),
        s0: 1.0,
        y0: 0.3,
        horizon: 1.0,
        q,
    }
}

/// Mean and standard error of independent draws.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

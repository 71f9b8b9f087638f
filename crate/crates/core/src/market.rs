//! Finite scenario markets on a tree, the gain space they generate and the
//! affine set of signed martingale densities.
//!
//! A market is a rooted tree. Every node carries a price vector for the `d`
//! traded assets, every non-terminal node has at least two children and the
//! leaves are the terminal states, each with a strictly positive reference
//! probability. Trading gains are enumerated one node at a time: holding one
//! unit of asset `a` from node `v` to its successor. On a finite tree these
//! one-step gains span every simple stopped gain.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on `Σ p_i = 1` when a market is constructed.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Consistency threshold on the least-squares residual of the martingale
/// constraints. Above it the system `{E[u]=1, E[u h]=0}` has no solution.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub prices: Vec<f64>,
    pub depth: usize,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }
}

/// Input record for [`ScenarioMarket::from_nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInput {
    pub name: String,
    pub parent: Option<String>,
    pub prices: Vec<f64>,
    /// Reference probability; required on leaves, forbidden elsewhere.
    pub prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMarket {
    nodes: Vec<Node>,
    leaves: Vec<usize>,
    probs: Vec<f64>,
    n_assets: usize,
    horizon: usize,
}

impl ScenarioMarket {
    /// Builds a market from node records. Parents must be declared before
    /// their children; exactly one node has no parent.
    pub fn from_nodes(n_assets: usize, inputs: Vec<NodeInput>) -> Result<Self> {
        if n_assets == 0 {
            return Err(Error::InvalidMarket(
                "at least one asset is required".into(),
            ));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidMarket("no nodes".into()));
        }
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut nodes: Vec<Node> = Vec::with_capacity(inputs.len());
        let mut raw_probs: Vec<Option<f64>> = Vec::with_capacity(inputs.len());
        let mut root_seen = false;

        for input in inputs {
            if index.contains_key(&input.name) {
                return Err(Error::InvalidMarket(format!(
                    "duplicate node '{}'",
                    input.name
                )));
            }
            if input.prices.len() != n_assets {
                return Err(Error::DimensionMismatch(format!(
                    "node '{}' has {} prices, expected {}",
                    input.name,
                    input.prices.len(),
                    n_assets
                )));
            }
            if let Some(bad) = input.prices.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidMarket(format!(
                    "node '{}' has non-finite price {}",
                    input.name, bad
                )));
            }
            let (parent, depth) = match &input.parent {
                None => {
                    if root_seen {
                        return Err(Error::InvalidMarket(format!(
                            "second root '{}': only one node may omit its parent",
                            input.name
                        )));
                    }
                    root_seen = true;
                    (None, 0)
                }
                Some(pname) => {
                    let &pidx = index.get(pname).ok_or_else(|| {
                        Error::InvalidMarket(format!(
                            "node '{}' references unknown or later parent '{}'",
                            input.name, pname
                        ))
                    })?;
                    (Some(pidx), nodes[pidx].depth + 1)
                }
            };
            let idx = nodes.len();
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            index.insert(input.name.clone(), idx);
            nodes.push(Node {
                name: input.name,
                parent,
                children: Vec::new(),
                prices: input.prices,
                depth,
            });
            raw_probs.push(input.prob);
        }
        if !root_seen {
            return Err(Error::InvalidMarket("no root node".into()));
        }

        let mut leaves = Vec::new();
        let mut probs = Vec::new();
        for (idx, node) in nodes.iter().enumerate() {
            match (node.is_terminal(), raw_probs[idx]) {
                (true, Some(p)) => {
                    if !(p > 0.0) || !p.is_finite() {
                        return Err(Error::InvalidMarket(format!(
                            "state '{}' has non-positive probability {}",
                            node.name, p
                        )));
                    }
                    leaves.push(idx);
                    probs.push(p);
                }
                (true, None) => {
                    return Err(Error::InvalidMarket(format!(
                        "terminal node '{}' has no probability",
                        node.name
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::InvalidMarket(format!(
                        "non-terminal node '{}' carries a probability",
                        node.name
                    )))
                }
                (false, None) => {
                    if node.children.len() < 2 {
                        return Err(Error::InvalidMarket(format!(
                            "non-terminal node '{}' has a single child",
                            node.name
                        )));
                    }
                }
            }
        }
        if leaves.len() < 2 {
            return Err(Error::InvalidMarket(
                "at least two states are required".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidMarket(format!(
                "probability sum {total:.17} differs from 1"
            )));
        }
        let horizon = leaves.iter().map(|&l| nodes[l].depth).max().unwrap_or(0);
        Ok(ScenarioMarket {
            nodes,
            leaves,
            probs,
            n_assets,
            horizon,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Node indices of the terminal states, in state order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.leaves.len()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .map(|&l| self.nodes[l].name.as_str())
            .collect()
    }

    /// P-expectation of a per-state vector.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// Node indices from the root down to (and including) `node`.
    fn lineage(&self, node: usize) -> Vec<usize> {
        let mut chain = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }
}

/// One-period market: a root with price `prices_now` and one child per row of
/// `prices_next`.
pub fn build_one_period(
    prices_now: &[f64],
    prices_next: &[Vec<f64>],
    probs: &[f64],
) -> Result<ScenarioMarket> {
    if prices_next.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} next-states but {} probabilities",
            prices_next.len(),
            probs.len()
        )));
    }
    if prices_next.len() < 2 {
        return Err(Error::InvalidMarket(
            "at least two next-states are required".into(),
        ));
    }
    let mut nodes = vec![NodeInput {
        name: "root".into(),
        parent: None,
        prices: prices_now.to_vec(),
        prob: None,
    }];
    for (i, (row, &p)) in prices_next.iter().zip(probs).enumerate() {
        nodes.push(NodeInput {
            name: format!("s{i}"),
            parent: Some("root".into()),
            prices: row.clone(),
            prob: Some(p),
        });
    }
    ScenarioMarket::from_nodes(prices_now.len(), nodes)
}

/// Audit record for one gain column.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDescriptor {
    /// Node at which the position is opened.
    pub node: usize,
    pub asset: usize,
    pub holding: f64,
}

/// Terminal values of the one-step trading gains, one column per
/// (non-terminal node, asset) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBasis {
    pub matrix: DMatrix<f64>,
    pub descriptors: Vec<GainDescriptor>,
}

impl GainBasis {
    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Same basis with an extra column appended.
    pub fn with_column(&self, column: &DVector<f64>, descriptor: GainDescriptor) -> GainBasis {
        let mut m = self.matrix.clone().insert_column(self.matrix.ncols(), 0.0);
        m.set_column(self.matrix.ncols(), column);
        let mut descriptors = self.descriptors.clone();
        descriptors.push(descriptor);
        GainBasis {
            matrix: m,
            descriptors,
        }
    }

    /// Same basis with every column multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> GainBasis {
        GainBasis {
            matrix: &self.matrix * factor,
            descriptors: self
                .descriptors
                .iter()
                .map(|d| GainDescriptor {
                    holding: d.holding * factor,
                    ..d.clone()
                })
                .collect(),
        }
    }
}

pub fn gain_basis(market: &ScenarioMarket) -> GainBasis {
    let n = market.n_states();
    let d = market.n_assets();
    let lineages: Vec<Vec<usize>> = market.leaves.iter().map(|&l| market.lineage(l)).collect();

    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut descriptors = Vec::new();
    for (v, node) in market.nodes.iter().enumerate() {
        if node.is_terminal() {
            continue;
        }
        for a in 0..d {
            let mut col = DVector::zeros(n);
            for (i, chain) in lineages.iter().enumerate() {
                // The successor of v along this leaf's path, if v is an ancestor.
                if let Some(pos) = chain.iter().position(|&x| x == v) {
                    let next = chain[pos + 1];
                    col[i] = market.nodes[next].prices[a] - node.prices[a];
                }
            }
            columns.push(col);
            descriptors.push(GainDescriptor {
                node: v,
                asset: a,
                holding: 1.0,
            });
        }
    }
    let matrix = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    GainBasis {
        matrix,
        descriptors,
    }
}

/// Candidate Radon–Nikodym density `dQ/dP` together with the reference
/// probabilities it is taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    pub values: Vec<f64>,
    pub reference: Vec<f64>,
}

impl DensityVector {
    pub fn new(values: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        if values.len() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "density has {} values, reference has {}",
                values.len(),
                reference.len()
            )));
        }
        Ok(DensityVector { values, reference })
    }

    /// `E_P[u]`.
    pub fn mass(&self) -> f64 {
        self.reference
            .iter()
            .zip(&self.values)
            .map(|(p, u)| p * u)
            .sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() < tol
    }

    /// `||u||_q` under the reference measure.
    pub fn lq_norm(&self, q: f64) -> f64 {
        lp_norm(&self.values, &self.reference, q)
    }

    /// Measure weights `p_i u_i`.
    pub fn weights(&self) -> Vec<f64> {
        self.reference
            .iter()
            .zip(&self.values)
            .map(|(p, u)| p * u)
            .collect()
    }

    pub fn sup_distance(&self, other: &DensityVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `(Σ p_i |x_i|^r)^{1/r}`.
pub fn lp_norm(x: &[f64], probs: &[f64], r: f64) -> f64 {
    let s: f64 = x.iter().zip(probs).map(|(v, p)| p * v.abs().powf(r)).sum();
    s.powf(1.0 / r)
}

/// `sgn(x)|x|^r`, with `sgn(0) = 0`.
pub fn signed_pow(x: f64, r: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(r)
    }
}

/// Affine parametrisation `{u0 + V z}` of the signed martingale densities.
#[derive(Debug, Clone)]
pub struct MartingaleSet {
    /// Particular solution (minimum Euclidean norm).
    pub u0: DVector<f64>,
    /// Orthonormal basis of the homogeneous directions, one per column.
    pub directions: DMatrix<f64>,
    /// Consistency residual of the constraint system.
    pub residual: f64,
    /// Rank of the stacked constraint matrix `[1; h_1..h_m]`.
    pub constraint_rank: usize,
}

impl MartingaleSet {
    /// Affine dimension `k`.
    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.u0 + &self.directions * z
    }
}

/// Rows `p ∘ 1` and `p ∘ h_j`, each scaled to unit Euclidean norm, with the
/// matching right-hand side `e_0` (scaled alike). Zero gain columns are dropped.
pub(crate) fn constraint_system(probs: &[f64], basis: &GainBasis) -> (DMatrix<f64>, DVector<f64>) {
    let n = probs.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let norm1 = probs.iter().map(|p| p * p).sum::<f64>().sqrt();
    rows.push(probs.iter().map(|p| p / norm1).collect());
    rhs.push(1.0 / norm1);
    for j in 0..basis.n_columns() {
        let row: Vec<f64> = (0..n).map(|i| probs[i] * basis.matrix[(i, j)]).collect();
        let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            rows.push(row.iter().map(|x| x / nrm).collect());
            rhs.push(0.0);
        }
    }
    let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    (a, DVector::from_vec(rhs))
}

pub fn martingale_affine_set(market: &ScenarioMarket, basis: &GainBasis) -> Result<MartingaleSet> {
    if basis.matrix.nrows() != market.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows, market has {} states",
            basis.matrix.nrows(),
            market.n_states()
        )));
    }
    let (a, b) = constraint_system(market.probs(), basis);
    let u0 = linalg::pinv_solve(&a, &b);
    let residual = (&a * &u0 - &b).norm();
    if residual > FEASIBILITY_TOL {
        return Err(Error::Infeasible { residual });
    }
    let directions = linalg::null_space(&a);
    let constraint_rank = market.n_states() - directions.ncols();
    Ok(MartingaleSet {
        u0,
        directions,
        residual,
        constraint_rank,
    })
}

/// Least-squares residual of `1` against the span of the gains. Zero (to
/// rounding) exactly when `1 ∈ span K_0`.
pub fn distance_of_one_from_gains(market: &ScenarioMarket, basis: &GainBasis) -> f64 {
    let n = market.n_states();
    let sqrt_p: Vec<f64> = market.probs().iter().map(|p| p.sqrt()).collect();
    let weighted = DMatrix::from_fn(n, basis.n_columns(), |i, j| {
        sqrt_p[i] * basis.matrix[(i, j)]
    });
    let target = DVector::from_vec(sqrt_p.clone());
    let theta = linalg::pinv_solve(&weighted, &target);
    (&weighted * theta - target).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trinomial() -> ScenarioMarket {
        build_one_period(&[1.0], &[vec![2.0], vec![1.0], vec![0.5]], &[1.0 / 3.0; 3]).unwrap()
    }

    fn binomial() -> ScenarioMarket {
        build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn builds_trinomial_and_binomial() {
        let t = trinomial();
        assert_eq!(t.n_states(), 3);
        assert_eq!(t.n_assets(), 1);
        assert_eq!(t.horizon(), 1);
        let b = binomial();
        assert_eq!(b.n_states(), 2);
    }

    #[test]
    fn rejects_probability_sum() {
        let err = build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::InvalidMarket(ref m) if m.contains("probability sum")));
    }

    #[test]
    fn rejects_nonpositive_probability_and_mismatch() {
        assert!(build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[0.0, 1.0]).is_err());
        assert!(matches!(
            build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[1.0]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            build_one_period(&[1.0], &[vec![2.0, 1.0], vec![0.5]], &[0.5, 0.5]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(build_one_period(&[1.0], &[vec![f64::NAN], vec![0.5]], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rejects_single_child_nodes() {
        let nodes = vec![
            NodeInput {
                name: "r".into(),
                parent: None,
                prices: vec![1.0],
                prob: None,
            },
            NodeInput {
                name: "a".into(),
                parent: Some("r".into()),
                prices: vec![1.0],
                prob: None,
            },
            NodeInput {
                name: "b".into(),
                parent: Some("a".into()),
                prices: vec![2.0],
                prob: Some(0.5),
            },
            NodeInput {
                name: "c".into(),
                parent: Some("a".into()),
                prices: vec![0.5],
                prob: Some(0.5),
            },
        ];
        assert!(ScenarioMarket::from_nodes(1, nodes).is_err());
    }

    #[test]
    fn one_period_gain_columns() {
        let b = gain_basis(&binomial());
        assert_eq!(b.n_columns(), 1);
        assert_eq!(b.matrix.column(0).as_slice(), &[1.0, -0.5]);
        let t = gain_basis(&trinomial());
        assert_eq!(t.matrix.column(0).as_slice(), &[1.0, 0.0, -0.5]);
    }

    #[test]
    fn binomial_has_unique_density() {
        let m = binomial();
        let set = martingale_affine_set(&m, &gain_basis(&m)).unwrap();
        assert_eq!(set.dim(), 0);
        assert!((set.u0[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((set.u0[1] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn trinomial_has_one_parameter_family() {
        let m = trinomial();
        let set = martingale_affine_set(&m, &gain_basis(&m)).unwrap();
        assert_eq!(set.dim(), 1);
    }

    #[test]
    fn constant_gain_is_infeasible() {
        let m = build_one_period(&[1.0], &[vec![2.0], vec![2.0]], &[0.5, 0.5]).unwrap();
        let basis = gain_basis(&m);
        assert!(matches!(
            martingale_affine_set(&m, &basis),
            Err(Error::Infeasible { .. })
        ));
        assert!(distance_of_one_from_gains(&m, &basis) < 1e-12);
    }

    #[test]
    fn signed_pow_handles_zero_and_sign() {
        assert_eq!(signed_pow(0.0, 0.5), 0.0);
        assert!((signed_pow(-4.0, 0.5) + 2.0).abs() < 1e-15);
        assert!((signed_pow(9.0, 0.5) - 3.0).abs() < 1e-15);
    }
}

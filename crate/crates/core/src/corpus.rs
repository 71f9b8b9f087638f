//! Seeded generators for test markets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::market::{
    build_one_period, distance_of_one_from_gains, gain_basis, NodeInput, ScenarioMarket,
};

#[derive(Debug, Clone)]
pub struct CorpusInstance {
    pub name: String,
    pub market: ScenarioMarket,
}

/// Three-state market with `S_0 = 1` and next prices `{2, 1, 0.5}`.
pub fn trinomial() -> ScenarioMarket {
    build_one_period(&[1.0], &[vec![2.0], vec![1.0], vec![0.5]], &[1.0 / 3.0; 3])
        .expect("valid market")
}

/// Complete binomial market with next prices `{2, 0.5}`.
pub fn binomial() -> ScenarioMarket {
    build_one_period(&[1.0], &[vec![2.0], vec![0.5]], &[0.5, 0.5]).expect("valid market")
}

/// Binomial market under which `P` is already a martingale measure.
pub fn zero_drift_binomial() -> ScenarioMarket {
    build_one_period(&[1.0], &[vec![1.5], vec![0.5]], &[0.5, 0.5]).expect("valid market")
}

/// Two-period binary tree with recombining prices `1 → {1.2, 0.9} → {1.44, 1.08, 0.81}`
/// and unequal branch probabilities.
pub fn two_period_binary() -> ScenarioMarket {
    let node = |name: &str, parent: Option<&str>, price: f64, prob: Option<f64>| NodeInput {
        name: name.into(),
        parent: parent.map(Into::into),
        prices: vec![price],
        prob,
    };
    ScenarioMarket::from_nodes(
        1,
        vec![
            node("root", None, 1.0, None),
            node("u", Some("root"), 1.2, None),
            node("d", Some("root"), 0.9, None),
            node("uu", Some("u"), 1.44, Some(0.6 * 0.3)),
            node("ud", Some("u"), 1.08, Some(0.6 * 0.7)),
            node("du", Some("d"), 1.08, Some(0.4 * 0.5)),
            node("dd", Some("d"), 0.81, Some(0.4 * 0.5)),
        ],
    )
    .expect("valid market")
}

/// Random tree with `periods` trading dates, `branches` children per node and
/// `assets` assets. With `zero_drift` every asset is a martingale under `P`.
pub fn random_tree(
    rng: &mut impl Rng,
    periods: usize,
    branches: usize,
    assets: usize,
    zero_drift: bool,
) -> ScenarioMarket {
    struct Pending {
        name: String,
        prices: Vec<f64>,
        prob: f64,
        depth: usize,
    }
    let mut inputs = Vec::new();
    let root_prices: Vec<f64> = (0..assets).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut stack = vec![Pending {
        name: "n".into(),
        prices: root_prices,
        prob: 1.0,
        depth: 0,
    }];
    inputs.push(NodeInput {
        name: "n".into(),
        parent: None,
        prices: stack[0].prices.clone(),
        prob: (periods == 0).then_some(1.0),
    });
    let mut leaf_probs = Vec::new();
    while let Some(node) = stack.pop() {
        if node.depth == periods {
            continue;
        }
        let raw: Vec<f64> = (0..branches).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let cond: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut moves = vec![vec![0.0; assets]; branches];
        for a in 0..assets {
            let shocks: Vec<f64> = (0..branches)
                .map(|_| {
                    0.25 * Distribution::<f64>::sample(&StandardNormal, rng)
                        + if zero_drift { 0.0 } else { 0.05 }
                })
                .collect();
            let mean: f64 = if zero_drift {
                shocks.iter().zip(&cond).map(|(s, c)| s * c).sum()
            } else {
                0.0
            };
            for b in 0..branches {
                moves[b][a] = node.prices[a] * (shocks[b] - mean);
            }
        }
        for b in 0..branches {
            let name = format!("{}.{}", node.name, b);
            let prices: Vec<f64> = (0..assets).map(|a| node.prices[a] + moves[b][a]).collect();
            let prob = node.prob * cond[b];
            let is_leaf = node.depth + 1 == periods;
            inputs.push(NodeInput {
                name: name.clone(),
                parent: Some(node.name.clone()),
                prices: prices.clone(),
                prob: is_leaf.then_some(prob),
            });
            if is_leaf {
                leaf_probs.push(inputs.len() - 1);
            }
            stack.push(Pending {
                name,
                prices,
                prob,
                depth: node.depth + 1,
            });
        }
    }
    // Products of conditional probabilities sum to 1 only up to rounding.
    let total: f64 = leaf_probs.iter().map(|&i| inputs[i].prob.unwrap()).sum();
    for &i in &leaf_probs {
        if let Some(p) = inputs[i].prob.as_mut() {
            *p /= total;
        }
    }
    ScenarioMarket::from_nodes(assets, inputs).expect("generator builds valid trees")
}

/// Tree shapes used by the corpus: (periods, branches, assets).
pub fn shapes() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for periods in 1..=3 {
        for branches in 2..=4 {
            for assets in 1..=2 {
                // two assets on two branches would span the constants
                if assets < branches {
                    out.push((periods, branches, assets));
                }
            }
        }
    }
    out
}

/// Smallest `L²(P)` distance of `1` from the gains accepted into the corpus.
/// Closer to degeneracy the assembled density loses accuracy: `g = 1 − f`
/// carries an absolute rounding error near `ε`, and the martingale residual
/// of `g*/E[g*]` grows like `ε/dist²`.
pub const MIN_DISTANCE: f64 = 1e-3;

/// `count` random feasible trees cycling through [`shapes`], plus none of the
/// fixed markets. Trees closer to degeneracy than [`MIN_DISTANCE`] are
/// redrawn. Deterministic in `seed`.
pub fn random_corpus(seed: u64, count: usize, zero_drift: bool) -> Vec<CorpusInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = shapes();
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count {
        let (periods, branches, assets) = shapes[i % shapes.len()];
        i += 1;
        let market = random_tree(&mut rng, periods, branches, assets, zero_drift);
        let basis = gain_basis(&market);
        if distance_of_one_from_gains(&market, &basis) < MIN_DISTANCE {
            continue;
        }
        out.push(CorpusInstance {
            name: format!("tree{}-T{periods}-b{branches}-d{assets}", out.len()),
            market,
        });
    }
    out
}

/// Fixed markets followed by `count` random trees.
pub fn standard_corpus(seed: u64, count: usize) -> Vec<CorpusInstance> {
    let mut out = vec![
        CorpusInstance {
            name: "trinomial".into(),
            market: trinomial(),
        },
        CorpusInstance {
            name: "binomial".into(),
            market: binomial(),
        },
        CorpusInstance {
            name: "two-period-binary".into(),
            market: two_period_binary(),
        },
    ];
    out.extend(random_corpus(seed, count, false));
    out
}

mod common;

use common::{bisect_increasing, corpus_tree, expect, pipeline, sup, QS};
use proptest::prelude::*;
use qoptimal::corpus::{random_corpus, standard_corpus, trinomial, zero_drift_binomial};
use qoptimal::market::{gain_basis, martingale_affine_set, ScenarioMarket};
use qoptimal::projection::{primal_minimize, SolverOptions};
use qoptimal::verify::{
    brute_force_oracle, verify, CandidateMeasure, GridOptions, Verdict, VerifyOptions,
};
use qoptimal::Error;

fn check(
    market: &ScenarioMarket,
    g_star: Vec<f64>,
    q: f64,
) -> qoptimal::verify::VerificationReport {
    verify(
        &CandidateMeasure { g_star, q },
        market,
        &gain_basis(market),
        &VerifyOptions::default(),
    )
    .unwrap()
}

/// Signed martingale density `u0 + V z`.
fn measure_at(market: &ScenarioMarket, z: &[f64]) -> Vec<f64> {
    let set = martingale_affine_set(market, &gain_basis(market)).unwrap();
    let z = nalgebra::DVector::from_column_slice(z);
    set.point(&z).iter().cloned().collect()
}

/// Rescale `u` so that `E[u · sgn(c u)|c u|^{q−1}] = c` i.e. the candidate
/// `c u` is self-consistent: `E_Q[sgn(g*)|g*|^{q−1}] = 1` for its own `Q`.
fn self_consistent_scale(probs: &[f64], u: &[f64], q: f64) -> f64 {
    let h = |c: f64| -> f64 {
        let w: Vec<f64> = u
            .iter()
            .map(|v| (c * v).signum() * (c * v).abs().powf(q - 1.0) * v)
            .collect();
        expect(probs, &w) - 1.0
    };
    let mut hi = 1.0;
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    bisect_increasing(h, 0.0, hi)
}

#[test]
fn soundness_on_corpus() {
    let mut inconclusive = 0;
    for inst in standard_corpus(2, 30) {
        for q in QS {
            let pl = pipeline(&inst.market, q);
            let r = check(&inst.market, pl.sol.g_star.clone(), q);
            if r.verdict == Verdict::Inconclusive {
                inconclusive += 1;
                continue;
            }
            assert_eq!(r.verdict, Verdict::Optimal, "{} q={q}: {r:?}", inst.name);
            assert!(r.membership_residual < 1e-8);
            assert!(r.sampled_max_residual < 1e-8);
            assert_eq!(r.subspace_verdict, r.sampling_verdict);
        }
    }
    assert_eq!(
        inconclusive, 0,
        "guard-band verdicts on well-conditioned trees"
    );
}

#[test]
fn trinomial_q2_certificate() {
    let pl = pipeline(&trinomial(), 2.0);
    let r = check(&trinomial(), pl.sol.g_star, 2.0);
    assert_eq!(r.verdict, Verdict::Optimal);
    assert!(r.membership_residual < 1e-9);
    assert_eq!(r.n_samples, 64);
}

#[test]
fn reference_measure_is_rejected_under_drift() {
    let r = check(&trinomial(), vec![1.0; 3], 2.0);
    assert_eq!(r.verdict, Verdict::NotOptimal);
    assert!(r.reason.as_deref().unwrap().contains("not in M^s"));
    assert!(r.martingale_residual > 0.1);
}

#[test]
fn self_consistent_impostors_are_rejected() {
    let m = trinomial();
    for q in [1.5, 2.0, 3.0] {
        let opt = pipeline(&m, q);
        let z_star = opt.primal.z[0];
        for dz in [-0.3, 0.05, 0.4] {
            let u = measure_at(&m, &[z_star + dz]);
            let c = self_consistent_scale(m.probs(), &u, q);
            // closed form: c^{q−1} E|u|^q = 1
            let e_uq = expect(
                m.probs(),
                &u.iter().map(|v| v.abs().powf(q)).collect::<Vec<_>>(),
            );
            assert!((c - e_uq.powf(-1.0 / (q - 1.0))).abs() < 1e-12 * c);
            let r = check(&m, u.iter().map(|v| c * v).collect(), q);
            assert!(
                r.normalization_residual < 1e-10,
                "impostor is self-consistent"
            );
            assert_eq!(r.verdict, Verdict::NotOptimal, "q={q} dz={dz}");
            assert!(r.sampled_max_residual > 1e-3);
            assert!(r.membership_residual > 1e-4);
        }
    }
}

#[test]
fn subspace_and_sampling_tests_agree() {
    for inst in random_corpus(4, 24, false) {
        let b = gain_basis(&inst.market);
        let set = martingale_affine_set(&inst.market, &b).unwrap();
        for q in QS {
            let pl = pipeline(&inst.market, q);
            let mut candidates = vec![pl.sol.g_star.clone()];
            if set.dim() > 0 {
                let z: Vec<f64> = pl.primal.z.iter().map(|v| v + 0.25).collect();
                candidates.push(measure_at(&inst.market, &z));
            }
            for g in candidates {
                let r = check(&inst.market, g, q);
                assert_eq!(
                    r.subspace_verdict, r.sampling_verdict,
                    "{} q={q}: {r:?}",
                    inst.name
                );
                assert_eq!(r.membership_residual < 1e-8, r.sampled_max_residual < 1e-8);
            }
        }
    }
}

#[test]
fn input_errors() {
    let m = trinomial();
    let b = gain_basis(&m);
    let o = VerifyOptions::default();
    let cand = |g: Vec<f64>, q| CandidateMeasure { g_star: g, q };
    assert!(matches!(
        verify(&cand(vec![1.0; 3], 1.0), &m, &b, &o),
        Err(Error::InvalidExponent(_))
    ));
    assert!(matches!(
        verify(&cand(vec![-1.0, 0.5, 0.2], 2.0), &m, &b, &o),
        Err(Error::DegenerateCandidate(_))
    ));
    assert!(verify(&cand(vec![1.0; 2], 2.0), &m, &b, &o).is_err());
}

#[test]
fn oracle_matches_primal_solver() {
    let opts = SolverOptions::default();
    let m = zero_drift_binomial();
    let u = brute_force_oracle(&m, &gain_basis(&m), 2.0, &GridOptions::default()).unwrap();
    assert!(sup(&u.values, &[1.0, 1.0]) < 1e-14);

    let m = trinomial();
    let b = gain_basis(&m);
    for q in [2.0, 1.5] {
        let oracle = brute_force_oracle(&m, &b, q, &GridOptions::default()).unwrap();
        let primal = primal_minimize(&m, &b, q, &opts).unwrap();
        assert!(sup(&oracle.values, &primal.u.values) < 1e-6, "q={q}");
    }
    for inst in random_corpus(13, 12, false) {
        let b = gain_basis(&inst.market);
        if martingale_affine_set(&inst.market, &b).unwrap().dim() > 3 {
            continue;
        }
        for q in QS {
            let oracle = brute_force_oracle(&inst.market, &b, q, &GridOptions::default()).unwrap();
            let primal = primal_minimize(&inst.market, &b, q, &opts).unwrap();
            assert!(
                sup(&oracle.values, &primal.u.values) < 1e-6,
                "{} q={q}",
                inst.name
            );
        }
    }
}

#[test]
fn oracle_refuses_large_dimensions() {
    let inst = random_corpus(1, 40, false)
        .into_iter()
        .find(|i| {
            martingale_affine_set(&i.market, &gain_basis(&i.market))
                .unwrap()
                .dim()
                > 3
        })
        .expect("corpus has a high-dimensional tree");
    let b = gain_basis(&inst.market);
    assert!(matches!(
        brute_force_oracle(&inst.market, &b, 2.0, &GridOptions::default()),
        Err(Error::TooManyDimensions { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Any signed martingale measure with a strictly larger norm is rejected.
    #[test]
    fn non_optimal_measures_are_rejected(seed in any::<u64>(), pick in 0usize..15, qi in 0usize..5, shift in prop::collection::vec(-2.0f64..2.0, 1..40)) {
        let inst = &corpus_tree(seed, pick);
        let q = QS[qi];
        let pl = pipeline(&inst.market, q);
        let k = pl.primal.z.len();
        prop_assume!(k > 0);
        let z: Vec<f64> = (0..k).map(|j| pl.primal.z[j] + shift[j % shift.len()]).collect();
        let u = measure_at(&inst.market, &z);
        let norm = expect(inst.market.probs(), &u.iter().map(|v| v.abs().powf(q)).collect::<Vec<_>>()).powf(1.0 / q);
        prop_assume!(norm > pl.primal.q_norm + 1e-6);
        prop_assume!(expect(inst.market.probs(), &u) > 0.0);
        let r = check(&inst.market, u, q);
        prop_assert_eq!(r.verdict, Verdict::NotOptimal);
    }
}

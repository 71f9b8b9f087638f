//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! one-line verdict of every criterion is always printed; exits non-zero if
//! any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{expect, pipeline, stochastic_lambda_spec, sup, QS};
use qoptimal::cli::{run, strip_wall_clock};
use qoptimal::corpus::{
    random_corpus, random_tree, standard_corpus, trinomial, zero_drift_binomial, CorpusInstance,
};
use qoptimal::diffusion::{
    ch_monte_carlo, ch_volatility_only, pathwise_identity_check, Candidate, Coefficient,
    DiffusionSpec, SimConfig,
};
use qoptimal::market::{gain_basis, martingale_affine_set, ScenarioMarket};
use qoptimal::projection::{primal_minimize, SolverOptions};
use qoptimal::solution::{g_power_identity, mu_consistency};
use qoptimal::verify::{
    brute_force_oracle, verify, CandidateMeasure, GridOptions, Verdict, VerifyOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// 33 trees: the fixed markets plus 30 random ones over 1–3 periods,
/// 2–4 branches and one or two assets.
fn corpus() -> Vec<CorpusInstance> {
    standard_corpus(2024, 30)
}

fn strong_duality() -> Outcome {
    let corpus = corpus();
    let mut worst: f64 = 0.0;
    for inst in &corpus {
        for q in QS {
            let pl = pipeline(&inst.market, q);
            let gap = (pl.sol.q_norm * pl.dual.p_norm - 1.0).abs();
            let primal_gap = (pl.primal.q_norm * pl.dual.p_norm - 1.0).abs();
            worst = worst.max(gap).max(primal_gap);
            ensure(gap < 1e-7 && primal_gap < 1e-7, || {
                format!("{} q={q}: gap {gap:e} / {primal_gap:e}", inst.name)
            })?;
        }
    }
    Ok(format!(
        "{} trees x {} exponents, max |q_norm p_norm - 1| = {worst:.2e}",
        corpus.len(),
        QS.len()
    ))
}

fn oracle_equivalence() -> Outcome {
    let opts = SolverOptions::default();
    let (mut cases, mut worst) = (0, 0.0_f64);
    let mut by_dim = [0usize; 4];
    // The corpus shapes give k <= 2 in one period and k >= 4 in two, so more
    // trees are drawn, and one-period five-branch trees supply k = 3.
    let mut instances = corpus();
    instances.extend(random_corpus(13, 60, false));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    instances.extend((0..4).map(|i| CorpusInstance {
        name: format!("five-branch-{i}"),
        market: random_tree(&mut rng, 1, 5, 1, false),
    }));
    for inst in instances {
        let b = gain_basis(&inst.market);
        let k = martingale_affine_set(&inst.market, &b)
            .map_err(|e| e.to_string())?
            .dim();
        if k > 3 {
            continue;
        }
        by_dim[k] += 1;
        for q in QS {
            let oracle = brute_force_oracle(&inst.market, &b, q, &GridOptions::default())
                .map_err(|e| e.to_string())?;
            let primal = primal_minimize(&inst.market, &b, q, &opts).map_err(|e| e.to_string())?;
            let d = sup(&oracle.values, &primal.u.values);
            worst = worst.max(d);
            cases += 1;
            ensure(d < 1e-6, || {
                format!("{} q={q}: sup distance {d:e}", inst.name)
            })?;
        }
    }
    ensure(by_dim.iter().all(|&n| n > 0), || {
        format!("trees per k = 0..3: {by_dim:?}")
    })?;
    Ok(format!(
        "{cases} cases (trees per k = 0..3: {by_dim:?}), max sup distance = {worst:.2e}"
    ))
}

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

fn measure_at(market: &ScenarioMarket, z: &[f64]) -> Vec<f64> {
    let set = martingale_affine_set(market, &gain_basis(market)).unwrap();
    set.point(&nalgebra::DVector::from_column_slice(z))
        .iter()
        .cloned()
        .collect()
}

fn verifier_soundness() -> Outcome {
    let mut optimal = 0;
    for inst in corpus() {
        for q in QS {
            let pl = pipeline(&inst.market, q);
            let r = check(&inst.market, pl.sol.g_star.clone(), q);
            ensure(r.verdict == Verdict::Optimal, || {
                format!("{} q={q}: {:?}", inst.name, r.verdict)
            })?;
            optimal += 1;
        }
    }

    let (mut rejected, mut impostors, mut min_sampled) = (0, 0, f64::INFINITY);
    // the reference measure under drift lies outside M^s
    for q in QS {
        let r = check(&trinomial(), vec![1.0; 3], q);
        ensure(r.verdict == Verdict::NotOptimal, || {
            format!("P accepted at q={q}")
        })?;
        rejected += 1;
    }
    // signed martingale measures off the optimum, rescaled to be self-consistent:
    // c u with c^{q-1} E|u|^q = 1 satisfies E_Q[sgn(g*)|g*|^{q-1}] = 1
    for inst in corpus().into_iter().take(12) {
        let q = QS[impostors % QS.len()];
        let pl = pipeline(&inst.market, q);
        if pl.primal.z.is_empty() {
            continue;
        }
        let z: Vec<f64> = pl.primal.z.iter().map(|v| v + 0.3).collect();
        let u = measure_at(&inst.market, &z);
        let e_uq = expect(
            inst.market.probs(),
            &u.iter().map(|v| v.abs().powf(q)).collect::<Vec<_>>(),
        );
        let c = e_uq.powf(-1.0 / (q - 1.0));
        let r = check(&inst.market, u.iter().map(|v| c * v).collect(), q);
        ensure(r.normalization_residual < 1e-10, || {
            format!("{}: impostor not self-consistent", inst.name)
        })?;
        ensure(
            r.verdict == Verdict::NotOptimal && r.sampled_max_residual > 1e-3,
            || {
                format!(
                    "{} q={q}: impostor {:?}, sampled {:e}",
                    inst.name, r.verdict, r.sampled_max_residual
                )
            },
        )?;
        min_sampled = min_sampled.min(r.sampled_max_residual);
        impostors += 1;
        rejected += 1;
    }
    // plain perturbations of the optimum, left unnormalised
    for inst in corpus().into_iter().skip(3).take(12) {
        let pl = pipeline(&inst.market, 2.0);
        let mut g = pl.sol.g_star.clone();
        g[0] *= 1.5;
        let r = check(&inst.market, g, 2.0);
        ensure(r.verdict == Verdict::NotOptimal, || {
            format!("{}: perturbed optimum accepted", inst.name)
        })?;
        rejected += 1;
    }
    ensure(impostors >= 5 && rejected >= 20, || {
        format!("only {rejected} rejections, {impostors} impostors")
    })?;
    Ok(format!(
        "{optimal} optimal accepted; {rejected} non-optimal rejected incl. {impostors} impostors (min sampled residual {min_sampled:.2e})"
    ))
}

fn proof_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    let corpus = corpus();
    for inst in &corpus {
        for q in QS {
            let pl = pipeline(&inst.market, q);
            let first = mu_consistency(&pl.sol, q, 1e-8)
                .map_err(|e| e.to_string())?
                .residuals[0];
            let second = g_power_identity(&pl.dual, q, 1e-8)
                .map_err(|e| e.to_string())?
                .residuals[0];
            worst = worst.max(first).max(second);
            ensure(first < 1e-8 && second < 1e-8, || {
                format!("{} q={q}: {first:e}, {second:e}", inst.name)
            })?;
        }
    }
    Ok(format!(
        "{} trees x {} exponents, max residual = {worst:.2e}",
        corpus.len(),
        QS.len()
    ))
}

fn trivial_fixed_point() -> Outcome {
    let mut markets = vec![zero_drift_binomial()];
    markets.extend(random_corpus(99, 15, true).into_iter().map(|i| i.market));
    let mut worst: f64 = 0.0;
    for m in &markets {
        for q in QS {
            let pl = pipeline(m, q);
            let d = sup(&pl.sol.density.values, &vec![1.0; m.n_states()]);
            let n = (pl.sol.q_norm - 1.0).abs();
            worst = worst.max(d).max(n);
            ensure(d < 1e-12 && n < 1e-12, || {
                format!("q={q}: density off by {d:e}, norm off by {n:e}")
            })?;
        }
    }
    Ok(format!(
        "{} driftless markets x {} exponents, max deviation = {worst:.2e}",
        markets.len(),
        QS.len()
    ))
}

fn closed_form_ch() -> Outcome {
    let spec = DiffusionSpec::constant_lambda(0.2, 2.0, 1.0);
    let r = ch_monte_carlo(&spec, &Candidate::zero(), &SimConfig::new(100_000, 200, 42))
        .map_err(|e| e.to_string())?;
    let e = r.estimate;
    let dist = (e.value - 0.04).abs();
    let detail = format!(
        "estimate {:.6} ± {:.2e} vs 0.04 ({:.2} se)",
        e.value,
        e.std_error,
        dist / e.std_error
    );
    ensure(dist <= 3.0 * e.std_error && e.std_error < 0.002, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn pathwise_identity() -> Outcome {
    let mut linear = DiffusionSpec::constant_lambda(0.0, 3.0, 1.0);
    linear.mu = Coefficient::linear(0.1, 0.1);
    let presets = [
        ("constant", DiffusionSpec::constant_lambda(0.2, 2.0, 1.0)),
        ("linear", linear),
        ("zero", DiffusionSpec::constant_lambda(0.0, 1.5, 1.0)),
    ];
    let mut parts = Vec::new();
    for (name, spec) in &presets {
        let mut errors = Vec::new();
        for steps in [10, 100, 1000] {
            let r = pathwise_identity_check(spec, &SimConfig::new(1000, steps, 7))
                .map_err(|e| e.to_string())?;
            ensure(r.max_abs_error < 1e-10, || {
                format!("{name} at {steps} steps: {:e}", r.max_abs_error)
            })?;
            errors.push(r.max_abs_error);
        }
        parts.push(format!(
            "{name} {:.1e}",
            errors.iter().cloned().fold(0.0, f64::max)
        ));
    }
    Ok(format!(
        "1000 paths at 10/100/1000 steps, max error: {}",
        parts.join(", ")
    ))
}

fn volatility_cross_check() -> Outcome {
    let spec = stochastic_lambda_spec(2.0);
    let cfg = SimConfig::new(100_000, 200, 42);
    let full = ch_monte_carlo(&spec, &Candidate::zero(), &cfg)
        .map_err(|e| e.to_string())?
        .estimate;
    let factor = ch_volatility_only(&spec, &cfg).map_err(|e| e.to_string())?;
    let se = full.std_error.hypot(factor.std_error);
    let dist = (full.value - factor.value).abs();
    let detail = format!(
        "full {:.6} ± {:.1e}, factor-only {:.6} ± {:.1e} ({:.2} combined se)",
        full.value,
        full.std_error,
        factor.value,
        factor.std_error,
        dist / se
    );
    ensure(dist <= 3.0 * se, || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let samples = concat!(env!("CARGO_MANIFEST_DIR"), "/../../samples");
    let commands: Vec<Vec<String>> = [
        "solve --market trinomial.market --q 3 --seed 5",
        "verify --market trinomial.market --candidate uniform.candidate",
        "sweep --market two_period.market --q 1.2,2,5",
        "simulate --spec stochastic_volatility.diffusion --paths 20000 --steps 100",
        "simulate --spec linear_lambda.diffusion --paths 20000",
    ]
    .iter()
    .map(|c| {
        std::iter::once("qoptimal".to_string())
            .chain(c.split(' ').map(|a| {
                if a.ends_with(".market") || a.ends_with(".candidate") || a.ends_with(".diffusion")
                {
                    format!("{samples}/{a}")
                } else {
                    a.to_string()
                }
            }))
            .collect()
    })
    .collect();
    for args in &commands {
        let a = run(args.clone());
        let b = run(args.clone());
        ensure(a.exit_code == b.exit_code, || {
            format!("{}: exit codes differ", args[1])
        })?;
        ensure(
            strip_wall_clock(&a.stdout) == strip_wall_clock(&b.stdout) && !a.stdout.is_empty(),
            || format!("{}: reports differ", args[1]),
        )?;
    }
    Ok(format!(
        "{} commands, reports byte-identical",
        commands.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("strong duality", strong_duality),
        ("oracle equivalence", oracle_equivalence),
        ("verifier soundness and necessity", verifier_soundness),
        ("proof identities", proof_identities),
        ("trivial fixed point", trivial_fixed_point),
        ("closed-form c_H", closed_form_ch),
        ("pathwise identity", pathwise_identity),
        ("volatility-only cross-check", volatility_cross_check),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

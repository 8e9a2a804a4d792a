mod common;

use std::sync::Arc;

use common::random_data;
use ssmr::bf::{model_bf, AlphaVector, ModelEvaluator, DEFAULT_BUDGET};
use ssmr::mle::Residualized;
use ssmr::prior::{ModelConfig, ModelPrior, PriorSpec};
use ssmr::search::{
    build_proposal, convergence_diagnostic, enumerate_posterior, enumerate_with, regional_probs, run_mcmc,
    run_mcmc_with, single_covariate_scan, Chain, McmcConfig, MoveKind, Region, RbPolicy, TopModel,
    DEFAULT_P_SEQ,
};

fn evaluator(seed: u64, s: usize, r: usize, p: usize, n: usize, effects: &[f64], pi0: f64) -> ModelEvaluator {
    let data = random_data(seed, s, r, p, n, effects);
    let mut spec = PriorSpec::default_for(s, r).unwrap();
    spec.model_prior = ModelPrior::uniform_nonnull(s * r, pi0).unwrap();
    let res = Arc::new(Residualized::new(&data).unwrap());
    ModelEvaluator::new(res, spec, AlphaVector::uniform(s, 0.5).unwrap()).unwrap()
}

#[test]
fn single_covariate_enumeration_is_bayes_rule() {
    let ev = evaluator(3, 1, 2, 1, 60, &[0.3], 0.8);
    let post = enumerate_with(&ev, 100, &[]).unwrap();
    let space = ev.space();
    // Posterior of each configuration from prior times an independently computed Bayes factor.
    let res = Arc::new(Residualized::new(&random_data(3, 1, 2, 1, 60, &[0.3])).unwrap());
    let raw: Vec<f64> = space
        .configs
        .iter()
        .zip(&space.log_probs)
        .map(|(&g, lp)| {
            let model = ModelConfig::new(vec![g], 1, 2).unwrap();
            let bf = model_bf(res.clone(), &model, ev.spec(), ev.alpha(), DEFAULT_BUDGET).unwrap();
            (lp + bf.ln_bf()).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    for (c, w) in raw.iter().enumerate() {
        assert!((post.pip[0][c] - w / total).abs() < 1e-12, "config {c}");
    }
    let scan = single_covariate_scan(&ev, &[]).unwrap();
    for c in 0..space.len() {
        assert!((scan.posterior[0][c] - post.pip[0][c]).abs() < 1e-12);
    }
}

#[test]
fn null_data_favors_the_null_model() {
    let ev = evaluator(11, 1, 2, 5, 200, &[0.0; 5], 0.9);
    let post = enumerate_with(&ev, 1 << 12, &[]).unwrap();
    assert!(post.top_models[0].key.is_empty());
    for j in 0..5 {
        assert!(post.inclusion(j) < 0.1, "covariate {j}: {}", post.inclusion(j));
    }
}

#[test]
fn enumeration_refuses_huge_spaces() {
    let ev = evaluator(1, 1, 3, 8, 40, &[], 0.9);
    let err = enumerate_with(&ev, 1000, &[]).unwrap_err();
    assert_eq!(err.exit_code(), ssmr::Error::Limit(String::new()).exit_code());
}

#[test]
fn mcmc_matches_enumeration() {
    for seed in 0..3u64 {
        let ev = evaluator(100 + seed, 1, 2, 4, 80, &[0.35, 0.0, 0.15, 0.0], 0.7);
        let exact = enumerate_with(&ev, 1 << 12, &[]).unwrap();
        let cfg = McmcConfig { burn_in: 5_000, samples: 20_000, seed, ..Default::default() };
        let mc = run_mcmc(&ev, &cfg).unwrap();
        for j in 0..4 {
            for c in 0..exact.configs.len() {
                let d = (mc.pip[j][c] - exact.pip[j][c]).abs();
                assert!(d < 0.02, "seed {seed} covariate {j} config {c}: {d}");
            }
        }
    }
}

#[test]
fn enumerate_posterior_matches_evaluator_path() {
    let data = random_data(5, 2, 1, 3, 50, &[0.4, 0.0, 0.0]);
    let res = Arc::new(Residualized::new(&data).unwrap());
    let spec = PriorSpec::default_for(2, 1).unwrap();
    let alpha = AlphaVector::uniform(2, 0.5).unwrap();
    let a = enumerate_posterior(res.clone(), &spec, &alpha, 1 << 10).unwrap();
    let ev = ModelEvaluator::new(res, spec, alpha).unwrap();
    let b = enumerate_with(&ev, 1 << 10, &[]).unwrap();
    assert_eq!(a.pip, b.pip);
    assert_eq!(a.diagnostics.distinct_models, 64);
}

#[test]
fn same_seed_gives_identical_chains() {
    let run = |seed| {
        let ev = evaluator(21, 1, 3, 12, 70, &[0.5, 0.0, 0.0, 0.3], 0.95);
        let cfg = McmcConfig { burn_in: 500, samples: 2_000, seed, ..Default::default() };
        run_mcmc(&ev, &cfg).unwrap()
    };
    let (a, b, c) = (run(4), run(4), run(5));
    assert_eq!(a.pip, b.pip);
    assert_eq!(a.top_models, b.top_models);
    assert_eq!(a.diagnostics.acceptance_rate, b.diagnostics.acceptance_rate);
    assert_ne!(a.pip_raw, c.pip_raw);
}

#[test]
fn step_scores_replay_against_fresh_evaluations() {
    let ev = evaluator(8, 2, 2, 6, 60, &[0.4, 0.2], 0.8);
    let fresh = evaluator(8, 2, 2, 6, 60, &[0.4, 0.2], 0.8);
    let weights = build_proposal(&ev, 4, &DEFAULT_P_SEQ, None).unwrap();
    let mut chain = Chain::new(&ev, &weights, 0.85, 9).unwrap();
    let mut kinds = [0usize; 3];
    for _ in 0..300 {
        let from_score = chain.score();
        let rec = chain.step().unwrap();
        let expect = fresh.log_prior(&rec.proposed).unwrap() + fresh.ln_bf(&rec.proposed).unwrap();
        assert!((rec.proposed_score - expect).abs() < 1e-9);
        let now = if rec.accepted { rec.proposed_score } else { from_score };
        assert_eq!(chain.score(), now);
        assert_eq!(chain.key(), if rec.accepted { &rec.proposed } else { &rec.from });
        kinds[match rec.kind {
            MoveKind::ConfigChange => 0,
            MoveKind::Swap => 1,
            MoveKind::Stay => 2,
        }] += 1;
    }
    assert!(kinds[0] > kinds[1] + kinds[2], "{kinds:?}");
}

#[test]
fn proposal_weights_follow_signal() {
    let ev = evaluator(13, 1, 2, 8, 100, &[0.0, 0.0, 0.6, 0.0, 0.0, 0.3], 0.9);
    let w = build_proposal(&ev, 4, &DEFAULT_P_SEQ, None).unwrap();
    let probs = w.probabilities();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let best = (0..8).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    assert_eq!(best, 2);
    assert_eq!(w.controls.first().map(|c| c.0), Some(2));
    assert!(w.w.iter().all(|&x| x >= DEFAULT_P_SEQ[3]));
    assert_eq!(w.rounds.len(), 3);

    assert!(build_proposal(&ev, 2, &[0.5, 0.6], None).is_err());
    assert!(build_proposal(&ev, 3, &[0.5, 0.4], None).is_err());
}

#[test]
fn region_probabilities_from_weighted_models() {
    let ev = evaluator(1, 1, 2, 4, 30, &[], 0.9);
    let space = ev.space().clone();
    let (g10, g01) = (space.configs[1], space.configs[2]);
    let mass = vec![
        (vec![], 0.5),
        (vec![(0u32, g10)], 0.2),
        (vec![(1u32, g01), (3u32, g10)], 0.3),
    ];
    let regions = vec![
        Region::new("front", vec![0, 1]).unwrap(),
        Region::new("back", vec![2, 3]).unwrap(),
    ];
    let out = regional_probs(&mass, &regions, &space).unwrap();
    let front = &out["front"];
    assert!((front.any - 0.5).abs() < 1e-12);
    assert!((front.per_config[0] - 0.2).abs() < 1e-12);
    assert!((front.per_config[1] - 0.3).abs() < 1e-12);
    assert!((out["back"].any - 0.3).abs() < 1e-12);
    assert!(Region::new("empty", vec![]).is_err());

    // With enumeration the region mass equals one minus the mass of models avoiding it.
    let ev = evaluator(2, 1, 2, 3, 50, &[0.3, 0.2, 0.0], 0.6);
    let regions = vec![Region::new("pair", vec![0, 1]).unwrap()];
    let post = enumerate_with(&ev, 1 << 10, &regions).unwrap();
    let avoid: f64 = post
        .top_models
        .iter()
        .filter(|m| m.key.iter().all(|&(j, _)| j >= 2))
        .map(|m| m.posterior)
        .sum();
    assert!((post.region_probs["pair"].any - (1.0 - avoid)).abs() < 1e-10);
}

#[test]
fn diagnostics_are_reported() {
    let ev = evaluator(31, 1, 2, 6, 80, &[0.4, 0.0, 0.2], 0.8);
    let cfg = McmcConfig { burn_in: 1_000, samples: 5_000, seed: 2, ..Default::default() };
    let mc = run_mcmc(&ev, &cfg).unwrap();
    let d = &mc.diagnostics;
    assert_eq!(d.method, "mcmc");
    assert_eq!((d.burn_in, d.samples, d.seed), (1_000, 5_000, Some(2)));
    let acc = d.acceptance_rate.unwrap();
    assert!(acc > 0.0 && acc < 1.0);
    assert!(d.rank_correlation.unwrap() > 0.5, "{:?}", d.rank_correlation);
    assert!(!d.interrupted);

    let stopped = run_mcmc_with(&ev, &cfg, None, |step| step < 2_000).unwrap();
    assert!(stopped.diagnostics.interrupted);

    let off = run_mcmc(&ev, &McmcConfig { rb: RbPolicy::Off, ..cfg.clone() }).unwrap();
    assert_eq!(Some(&off.pip), off.pip_raw.as_ref());

    let perfect: Vec<TopModel> = (0..5u64)
        .map(|i| TopModel { key: vec![(i as u32, 1)], visits: 10 * i, log10_score: i as f64, posterior: 0.0 })
        .collect();
    assert_eq!(convergence_diagnostic(&perfect, 50), Some(1.0));
    assert_eq!(convergence_diagnostic(&perfect[..1], 50), None);
}

#[test]
fn focused_rao_blackwell_leaves_other_covariates_to_frequencies() {
    let mut effects = vec![0.0; 300];
    effects[7] = 0.6;
    let ev = evaluator(91, 1, 3, 300, 60, &effects, 0.99);
    let cfg = McmcConfig { burn_in: 500, samples: 1_000, seed: 3, ..Default::default() };
    let auto = run_mcmc(&ev, &cfg).unwrap();
    assert!(auto.diagnostics.rb_policy.starts_with("focused:"), "{}", auto.diagnostics.rb_policy);
    assert_eq!(auto, run_mcmc(&ev, &cfg).unwrap());

    let focused = run_mcmc(&ev, &McmcConfig { rb: RbPolicy::Focused { covariates: 3, sweeps: 10 }, ..cfg.clone() }).unwrap();
    assert_eq!(focused.diagnostics.rb_policy, "focused:3x10");
    assert_eq!(focused.diagnostics.rb_samples, 10);
    let raw = focused.pip_raw.as_ref().unwrap();
    let smoothed: Vec<usize> = (0..300).filter(|&j| focused.pip[j] != raw[j]).collect();
    assert!(!smoothed.is_empty() && smoothed.len() <= 3, "{smoothed:?}");
    assert!(smoothed.contains(&7));
    for j in 0..300 {
        assert!((focused.pip[j].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

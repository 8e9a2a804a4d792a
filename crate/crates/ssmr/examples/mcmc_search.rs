//! Stochastic model search on a wider system, checked against the single-covariate scan.

use std::sync::Arc;

use ssmr::bf::{AlphaVector, ModelEvaluator};
use ssmr::mle::Residualized;
use ssmr::prior::PriorSpec;
use ssmr::search::{build_proposal, run_mcmc_with, McmcConfig, DEFAULT_P_SEQ};
use ssmr::sim::{simulate, SimScenario};

fn main() -> ssmr::Result<()> {
    let (data, truth) = simulate(&SimScenario { n: 100, p: 200, seed: 21, ..SimScenario::default() })?;
    let spec = PriorSpec::default_for(data.s(), data.r())?;
    let ev = ModelEvaluator::new(Arc::new(Residualized::new(&data)?), spec, AlphaVector::uniform(1, 0.5)?)?;

    let weights = build_proposal(&ev, 4, &DEFAULT_P_SEQ, None)?;
    let controls: Vec<_> = weights.controls.iter().map(|c| data.covariate_ids[c.0].clone()).collect();
    println!("proposal conditioned on {controls:?}");

    let cfg = McmcConfig { burn_in: 2_000, samples: 8_000, seed: 4, ..McmcConfig::default() };
    let post = run_mcmc_with(&ev, &cfg, Some(weights), |_| true)?;
    let d = &post.diagnostics;
    println!("acceptance {:.3} distinct models {} rank correlation {:?}", d.acceptance_rate.unwrap_or(0.0), d.distinct_models, d.rank_correlation);

    let mut ranked: Vec<usize> = (0..post.p()).collect();
    ranked.sort_by(|&a, &b| post.inclusion(b).total_cmp(&post.inclusion(a)));
    let causal = truth.causal();
    for &j in ranked.iter().take(8) {
        println!("{}\tinclusion {:.3}\tcausal {}", data.covariate_ids[j], post.inclusion(j), causal.contains(&j));
    }
    Ok(())
}

use std::sync::Arc;

use super::{rank_models, Diagnostics, PosteriorSummary, Region, RegionAccumulator, LEDGER_CAP};
use crate::bf::{AlphaVector, ModelEvaluator, ModelKey};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::mle::Residualized;
use crate::prior::PriorSpec;

/// Exact posterior by scoring every model in the space.
pub fn enumerate_posterior(
    res: Arc<Residualized>,
    spec: &PriorSpec,
    alpha: &AlphaVector,
    max_models: usize,
) -> Result<PosteriorSummary> {
    let ev = ModelEvaluator::new(res, spec.clone(), alpha.clone())?;
    enumerate_with(&ev, max_models, &[])
}

/// Exact posterior using an existing evaluator, with optional region summaries.
pub fn enumerate_with(ev: &ModelEvaluator, max_models: usize, regions: &[Region]) -> Result<PosteriorSummary> {
    let space = ev.space().clone();
    let p = ev.p();
    let c = space.len();
    let total = (c as u128).checked_pow(p as u32).filter(|&t| t <= max_models as u128).ok_or_else(|| {
        Error::Limit(format!("{c}^{p} models exceed the enumeration limit of {max_models}; run MCMC instead"))
    })? as usize;

    let mut keys: Vec<ModelKey> = Vec::with_capacity(total);
    let mut idx = vec![0usize; p];
    for _ in 0..total {
        keys.push(
            idx.iter()
                .enumerate()
                .filter(|(_, &ci)| ci != 0)
                .map(|(j, &ci)| (j as u32, space.configs[ci]))
                .collect(),
        );
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < c {
                break;
            }
            *slot = 0;
        }
    }
    let bfs = ev.ln_bf_batch(&keys)?;
    let scores: Vec<f64> = keys
        .iter()
        .zip(&bfs)
        .map(|(k, b)| ev.log_prior(k).map(|lp| lp + b))
        .collect::<Result<_>>()?;
    let norm = log_sum_exp(&scores);
    let mut pip = vec![vec![0.0; c]; p];
    let mut regions_acc = RegionAccumulator::new(regions, &space, p)?;
    for (key, &s) in keys.iter().zip(&scores) {
        let w = (s - norm).exp();
        for &(j, g) in key {
            pip[j as usize][space.position(g).expect("config in space")] += w;
        }
        regions_acc.add(key, w);
    }
    for row in pip.iter_mut() {
        let active: f64 = row[1..].iter().sum();
        row[0] = (1.0 - active).max(0.0);
    }
    let region_probs = regions_acc.finish(1.0);
    let scored: Vec<(ModelKey, u64, f64)> = keys.into_iter().zip(scores).map(|(k, s)| (k, 0, s)).collect();
    let top_models = rank_models(scored, LEDGER_CAP);
    Ok(PosteriorSummary {
        cells: space.cells,
        configs: space.configs.clone(),
        pip,
        pip_raw: None,
        top_models,
        region_probs,
        diagnostics: Diagnostics {
            method: "enumeration".into(),
            distinct_models: total,
            bf_evaluations: ev.evaluations(),
            rb_policy: "exact".into(),
            ..Default::default()
        },
    })
}

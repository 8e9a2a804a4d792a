//! True/false positive curves of joint model search and the one-at-a-time scan over replicates.

use std::sync::Arc;

use ssmr::bf::{AlphaVector, ModelEvaluator};
use ssmr::mle::Residualized;
use ssmr::prior::PriorSpec;
use ssmr::search::{run_mcmc, single_covariate_scan, McmcConfig};
use ssmr::sim::{dominance_fraction, evaluate, simulate, EvalMode, SimScenario};

fn main() -> ssmr::Result<()> {
    let mut joint = Vec::new();
    let mut scan = Vec::new();
    for rep in 0..4 {
        let (data, truth) = simulate(&SimScenario { n: 100, p: 80, seed: 100 + rep, ..SimScenario::default() })?;
        let spec = PriorSpec::default_for(data.s(), data.r())?;
        let ev = ModelEvaluator::new(Arc::new(Residualized::new(&data)?), spec, AlphaVector::uniform(1, 0.5)?)?;
        let cfg = McmcConfig { burn_in: 1_000, samples: 4_000, seed: rep, ..McmcConfig::default() };
        joint.push((run_mcmc(&ev, &cfg)?, truth.clone()));
        scan.push((single_covariate_scan(&ev, &[])?.to_summary(), truth));
    }
    let a = evaluate(&joint, &EvalMode::Configuration)?;
    let b = evaluate(&scan, &EvalMode::Configuration)?;
    for fp in [0, 1, 2, 5, 10] {
        println!("false positives {fp:>2}: joint {:>2} scan {:>2} true positives", a.tp_at(fp), b.tp_at(fp));
    }
    println!("fraction of false-positive levels where joint search is at least as good: {:.2}", dominance_fraction(&a, &b));
    Ok(())
}

//! Grid-averaged model Bayes factors through the caching evaluator.

use std::sync::Arc;

use ssmr::bf::{AlphaVector, ModelEvaluator};
use ssmr::mle::Residualized;
use ssmr::prior::{parse_model, PriorSpec};
use ssmr::sim::{simulate, SimScenario};

fn main() -> ssmr::Result<()> {
    let (data, truth) = simulate(&SimScenario { n: 120, p: 6, causal_rate: 0.4, seed: 11, ..SimScenario::default() })?;
    let spec = PriorSpec::default_for(data.s(), data.r())?;
    let res = Arc::new(Residualized::new(&data)?);
    let ev = ModelEvaluator::new(res, spec, AlphaVector::uniform(data.s(), 0.5)?)?;

    let true_model = truth.model()?;
    println!("true model {:?}", true_model.gamma_strings());
    let bf = ev.model_bf(&true_model)?;
    println!("log10 BF of the true model {:.3}", bf.log10_bf);
    if let Some(grid) = &bf.grid {
        println!("grid details: {}", serde_json::to_string(grid).unwrap_or_default());
    }

    // Sparse form: covariate id followed by its configuration.
    let first = &data.covariate_ids[0];
    for text in [format!("{first}:111"), format!("{first}:100"), "null".to_string()] {
        let m = parse_model(&text, data.s(), data.r(), &data.covariate_ids)?;
        println!("{text:>12}: log10 BF {:.3}", ev.model_bf(&m)?.log10_bf);
    }
    println!("evaluations so far {}", ev.evaluations());
    Ok(())
}

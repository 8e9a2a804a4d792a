//! Exact posterior by enumerating every model of a small system, with region summaries.

use std::sync::Arc;

use ssmr::bf::{AlphaVector, ModelEvaluator};
use ssmr::mle::Residualized;
use ssmr::prior::{ModelPrior, PriorSpec};
use ssmr::search::{enumerate_with, Region};
use ssmr::sim::{simulate, SimScenario};

fn main() -> ssmr::Result<()> {
    let scenario = SimScenario {
        n: 150,
        p: 5,
        r: 2,
        causal_rate: 0.4,
        sigma_truth: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
        seed: 5,
        ..SimScenario::default()
    };
    let (data, truth) = simulate(&scenario)?;
    let mut spec = PriorSpec::default_for(data.s(), data.r())?;
    spec.model_prior = ModelPrior::uniform_nonnull(data.s() * data.r(), 0.8)?;
    let ev = ModelEvaluator::new(Arc::new(Residualized::new(&data)?), spec, AlphaVector::uniform(1, 0.5)?)?;
    let regions = vec![Region::new("left", vec![0, 1, 2])?, Region::new("right", vec![3, 4])?];

    let post = enumerate_with(&ev, 1 << 12, &regions)?;
    println!("covariate\ttruth\t{}", post.config_labels().join("\t"));
    for j in 0..post.p() {
        let row: Vec<String> = post.pip[j].iter().map(|v| format!("{v:.3}")).collect();
        println!("{}\t{}\t{}", data.covariate_ids[j], truth.configs[j], row.join("\t"));
    }
    for (name, rp) in &post.region_probs {
        println!("region {name}: {}", serde_json::to_string(rp).unwrap_or_default());
    }
    for m in post.top_models.iter().take(3) {
        println!("model {:?} posterior {:.4}", m.key, m.posterior);
    }
    Ok(())
}

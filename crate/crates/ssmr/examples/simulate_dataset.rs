//! Simulates a small multi-response data set, writes it to disk and reads it back.

use ssmr::io::{load_dataset, save_dataset};
use ssmr::sim::{simulate, SimScenario};

fn main() -> ssmr::Result<()> {
    let scenario = SimScenario { n: 80, p: 40, causal_rate: 0.05, seed: 7, ..SimScenario::default() };
    let (data, truth) = simulate(&scenario)?;
    println!("subgroups {} responses {} covariates {}", data.s(), data.r(), data.p());
    for j in truth.causal() {
        println!("causal {} with configuration {}", truth.covariate_ids[j], truth.configs[j]);
    }

    let dir = std::env::temp_dir().join(format!("ssmr-example-{}", std::process::id()));
    let manifest = save_dataset(&data, &dir)?;
    let back = load_dataset(&manifest)?;
    let same = data.subgroups[0].y == back.subgroups[0].y && data.subgroups[0].xg == back.subgroups[0].xg;
    println!("round trip through {} exact: {same}", manifest.display());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

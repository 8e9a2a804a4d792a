//! Drives the command-line front end in process: simulate, score one model, search and evaluate.

use std::path::Path;

use ssmr::cli::main_with_args;

fn run(args: &[&str]) {
    let code = main_with_args(std::iter::once("ssmr").chain(args.iter().copied()));
    assert_eq!(code, 0, "ssmr {}", args.join(" "));
}

fn main() {
    let root = std::env::temp_dir().join(format!("ssmr-cli-example-{}", std::process::id()));
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    std::fs::create_dir_all(&root).expect("temporary directory");
    std::fs::write(root.join("scenario.json"), r#"{"n": 90, "p": 30, "causal_rate": 0.1, "seed": 2}"#).expect("scenario");

    run(&["simulate", "--scenario", &dir("scenario.json"), "--out", &dir("data")]);
    let dataset = dir("data/dataset.json");
    run(&["bf", "--data", &dataset, "--model", "null", "--out", &dir("bf.json")]);
    run(&["mcmc", "--data", &dataset, "--burn-in", "500", "--samples", "2000", "--out", &dir("mcmc")]);
    run(&["scan", "--data", &dataset, "--out", &dir("scan")]);
    std::fs::write(root.join("pairs.tsv"), "data/truth.json\tmcmc\n").expect("pairs");
    std::fs::write(root.join("scan_pairs.tsv"), "data/truth.json\tscan\n").expect("pairs");
    run(&["eval", "--pairs", &dir("pairs.tsv"), "--against", &dir("scan_pairs.tsv"), "--out", &dir("curve.tsv")]);

    for file in ["mcmc/pip.tsv", "mcmc/diagnostics.json", "curve.tsv", "curve.dominance.json"] {
        let text = std::fs::read_to_string(Path::new(&root).join(file)).unwrap_or_default();
        println!("== {file}\n{}", text.lines().take(6).collect::<Vec<_>>().join("\n"));
    }
    std::fs::remove_dir_all(&root).ok();
}

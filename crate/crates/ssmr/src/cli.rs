//! Command-line front end: argument parsing, subcommand dispatch and output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bf::{model_bf_known_sigma, AlphaVector, ModelEvaluator, DEFAULT_BUDGET};
use crate::data::SsmrData;
use crate::error::{Error, Result};
use crate::io::{self, load_dataset, load_matrices, load_regions, read_json, write_json, write_text};
use crate::mle::Residualized;
use crate::prior::{format_config, parse_config, parse_model, PriorFile, PriorSpec};
use crate::search::{
    enumerate_with, run_mcmc, single_covariate_scan, McmcConfig, PosteriorSummary, Region, RegionProb,
};
use crate::sim::{dominance_fraction, evaluate, simulate, EvalCurve, EvalMode, SimScenario, Truth};

#[derive(Debug, Parser, Serialize)]
#[command(name = "ssmr", version, about = "Bayesian model selection for simultaneous multivariate regressions")]
pub struct Cli {
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Simulate a data set and its generating truth.
    Simulate(SimulateArgs),
    /// Bayes factor of one model against the null.
    Bf(BfArgs),
    /// Posterior inference by sampling (or exact enumeration with --exact).
    Mcmc(McmcArgs),
    /// One-covariate-at-a-time analysis.
    Scan(ScanArgs),
    /// Compare approximate Bayes factors with the quadrature reference.
    Validate(ValidateArgs),
    /// True/false positive curves from simulated truths and analysis outputs.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    pub data: PathBuf,
    /// Prior configuration JSON (defaults apply when absent).
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Covariance weight: one value for all subgroups or a comma-separated list.
    #[arg(long, default_value = "0.5")]
    pub alpha: String,
    /// Grid assignments per model before switching to quasi-random sampling.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON; the default multi-tissue scenario when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BfArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model as a concatenated bitstring, comma list, or sparse `id:config` pairs.
    #[arg(long)]
    pub model: String,
    /// JSON list of known residual covariances; switches to the exact computation.
    #[arg(long)]
    pub known_sigma: Option<PathBuf>,
    /// Output JSON (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct McmcArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 25_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 50_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Region definitions JSON (`{"name": ["id", ...]}`).
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Enumerate every model instead of sampling.
    #[arg(long)]
    pub exact: bool,
    /// Largest model space accepted by --exact.
    #[arg(long, default_value_t = 1 << 20)]
    pub max_models: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Preset {
    /// Three single-response subgroups, every covariate active, modest effects.
    AppendixE,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value = "appendix-e")]
    pub preset: Preset,
    #[arg(long, default_value_t = 75)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 500)]
    pub replicates: u64,
    /// Comma-separated covariance weights to report.
    #[arg(long, default_value = "0,0.5,1")]
    pub alpha: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output TSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Mode {
    Covariate,
    Configuration,
    Region,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// TSV of `truth_json<TAB>result_dir` lines, one per replicate.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value = "configuration")]
    pub mode: Mode,
    /// Region definitions (required for region mode).
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Second TSV of pairs; reports how often the first curve dominates it.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Output curve TSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second initialization in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let start = std::time::Instant::now();
    let (outputs, seeds) = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Bf(a) => cmd_bf(a)?,
        Command::Mcmc(a) => cmd_mcmc(a)?,
        Command::Scan(a) => cmd_scan(a)?,
        Command::Validate(a) => cmd_validate(a)?,
        Command::Eval(a) => cmd_eval(a)?,
    };
    if let Some(first) = outputs.first() {
        let target = if first.is_dir() { first.join("manifest.json") } else { sibling(first, "manifest.json") };
        let manifest = serde_json::json!({
            "tool": "ssmr",
            "version": env!("CARGO_PKG_VERSION"),
            "arguments": cli,
            "seeds": seeds,
            "outputs": outputs,
            "elapsed_seconds": start.elapsed().as_secs_f64(),
            "peak_rss_kb": peak_rss_kb(),
        });
        write_json(&target, &manifest)?;
    }
    Ok(())
}

/// Peak resident set size of this process, where the platform reports it.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// `dir/stem.name` next to an output file, so several outputs can share a directory.
fn sibling(file: &Path, name: &str) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.{name}"))
}

type Outcome = (Vec<PathBuf>, Vec<u64>);

fn load(a: &DataArgs) -> Result<(SsmrData, PriorSpec, AlphaVector)> {
    let data = load_dataset(&a.data)?;
    let (s, r) = (data.s(), data.r());
    let spec = match &a.prior {
        Some(path) => PriorSpec::from_file(&read_json::<PriorFile>(path)?, s, r)?,
        None => PriorSpec::default_for(s, r)?,
    };
    let alpha = parse_alpha(&a.alpha, s)?;
    Ok((data, spec, alpha))
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Validation(format!("'{v}' is not a number"))))
        .collect()
}

fn parse_alpha(text: &str, s: usize) -> Result<AlphaVector> {
    let v = parse_list(text)?;
    match v.len() {
        1 => AlphaVector::uniform(s, v[0]),
        k if k == s => AlphaVector::new(v),
        k => Err(Error::Dimension(format!("{k} alpha values for {s} subgroups"))),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let mut sc = match &a.scenario {
        Some(path) => read_json::<SimScenario>(path)?,
        None => SimScenario::default(),
    };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let (data, truth) = simulate(&sc)?;
    let manifest = io::save_dataset(&data, &a.out)?;
    write_json(&a.out.join("truth.json"), &truth)?;
    write_json(&a.out.join("scenario.json"), &sc)?;
    Ok((vec![a.out.clone(), manifest], vec![sc.seed]))
}

fn cmd_bf(a: &BfArgs) -> Result<Outcome> {
    let (data, spec, alpha) = load(&a.data)?;
    let model = parse_model(&a.model, data.s(), data.r(), &data.covariate_ids)?;
    let res = Arc::new(Residualized::new(&data)?);
    let result = match &a.known_sigma {
        Some(path) => {
            let sigma = load_matrices(path, data.r())?;
            if sigma.len() != data.s() {
                return Err(Error::Dimension(format!("{} covariances for {} subgroups", sigma.len(), data.s())));
            }
            model_bf_known_sigma(&res, &model, &spec, &sigma, a.data.budget)?
        }
        None => ModelEvaluator::new(res, spec, alpha)?.with_budget(a.data.budget).model_bf(&model)?,
    };
    let mut json = result.to_json();
    json["model"] = serde_json::json!(model.gamma_strings());
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Validation(e.to_string()))? + "\n";
    match &a.out {
        Some(path) => {
            write_text(path, &text)?;
            Ok((vec![path.clone()], vec![]))
        }
        None => {
            print!("{text}");
            Ok((vec![], vec![]))
        }
    }
}

fn regions_for(path: &Option<PathBuf>, data: &SsmrData) -> Result<Vec<Region>> {
    match path {
        Some(p) => load_regions(p, &data.covariate_ids),
        None => Ok(Vec::new()),
    }
}

fn cmd_mcmc(a: &McmcArgs) -> Result<Outcome> {
    let (data, spec, alpha) = load(&a.data)?;
    let regions = regions_for(&a.regions, &data)?;
    let res = Arc::new(Residualized::new(&data)?);
    let ev = ModelEvaluator::new(res, spec, alpha)?.with_budget(a.data.budget).with_seed(a.seed);
    let summary = if a.exact {
        enumerate_with(&ev, a.max_models, &regions)?
    } else {
        let cfg = McmcConfig { burn_in: a.burn_in, samples: a.samples, seed: a.seed, regions, ..Default::default() };
        run_mcmc(&ev, &cfg)?
    };
    write_summary(&a.out, &data, &summary)?;
    Ok((vec![a.out.clone()], if a.exact { vec![] } else { vec![a.seed] }))
}

fn cmd_scan(a: &ScanArgs) -> Result<Outcome> {
    let (data, spec, alpha) = load(&a.data)?;
    let regions = regions_for(&a.regions, &data)?;
    let res = Arc::new(Residualized::new(&data)?);
    let ev = ModelEvaluator::new(res, spec, alpha)?.with_budget(a.data.budget);
    let table = single_covariate_scan(&ev, &regions)?;
    let labels: Vec<String> = table.configs.iter().map(|&g| format_config(g, table.cells)).collect();
    let mut text = format!("covariate\t{}\n", labels.iter().map(|l| format!("log10_bf_{l}")).collect::<Vec<_>>().join("\t"));
    for (j, row) in table.log10_bf.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{}\t{}\n", data.covariate_ids[j], vals.join("\t")));
    }
    write_text(&a.out.join("scan_bf.tsv"), &text)?;
    write_summary(&a.out, &data, &table.to_summary())?;
    Ok((vec![a.out.clone()], vec![]))
}

/// Writes `pip.tsv`, `top_models.jsonl`, `diagnostics.json` and, when present, `regions.tsv`.
pub fn write_summary(dir: &Path, data: &SsmrData, summary: &PosteriorSummary) -> Result<()> {
    let labels = summary.config_labels();
    let mut pip = format!("covariate\t{}\n", labels.join("\t"));
    for (j, row) in summary.pip.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        pip.push_str(&format!("{}\t{}\n", data.covariate_ids[j], vals.join("\t")));
    }
    write_text(&dir.join("pip.tsv"), &pip)?;
    let mut top = String::new();
    for m in &summary.top_models {
        let active: BTreeMap<String, String> = m
            .key
            .iter()
            .map(|&(j, g)| (data.covariate_ids[j as usize].clone(), format_config(g, summary.cells)))
            .collect();
        let line = serde_json::json!({
            "model": active,
            "visits": m.visits,
            "log10_score": m.log10_score,
            "posterior": m.posterior,
        });
        top.push_str(&line.to_string());
        top.push('\n');
    }
    write_text(&dir.join("top_models.jsonl"), &top)?;
    write_json(&dir.join("diagnostics.json"), &summary.diagnostics)?;
    if !summary.region_probs.is_empty() {
        let mut text = format!("region\tany\t{}\n", labels[1..].join("\t"));
        for (name, p) in &summary.region_probs {
            let vals: Vec<String> = p.per_config.iter().map(|v| v.to_string()).collect();
            text.push_str(&format!("{name}\t{}\t{}\n", p.any, vals.join("\t")));
        }
        write_text(&dir.join("regions.tsv"), &text)?;
    }
    Ok(())
}

/// Reads the marginal summaries written by [`write_summary`].
pub fn read_summary(dir: &Path) -> Result<PosteriorSummary> {
    let text = io::read_text(&dir.join("pip.tsv"))?;
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    let labels = &head[1..];
    let cells = labels.first().map(|l| l.len()).unwrap_or(0);
    let configs = labels.iter().map(|l| parse_config(l, cells)).collect::<Result<Vec<_>>>()?;
    let origin = dir.join("pip.tsv").display().to_string();
    let body: String = std::iter::once(labels.join("\t"))
        .chain(lines.map(|l| l.split_once('\t').map(|x| x.1).unwrap_or("").to_string()))
        .collect::<Vec<_>>()
        .join("\n");
    let t = io::parse_table(&body, &origin)?;
    let pip: Vec<Vec<f64>> = (0..t.values.nrows()).map(|j| t.values.row(j).iter().cloned().collect()).collect();
    let mut region_probs = BTreeMap::new();
    let rpath = dir.join("regions.tsv");
    if rpath.exists() {
        let rtext = io::read_text(&rpath)?;
        for line in rtext.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let nums = parse_list(&f[1..].join(","))?;
            region_probs.insert(f[0].to_string(), RegionProb { any: nums[0], per_config: nums[1..].to_vec() });
        }
    }
    Ok(PosteriorSummary {
        cells,
        configs,
        pip,
        pip_raw: None,
        top_models: Vec::new(),
        region_probs,
        diagnostics: Default::default(),
    })
}

#[cfg(feature = "oracle")]
fn cmd_validate(a: &ValidateArgs) -> Result<Outcome> {
    use crate::oracle::{validate_family, validation_tsv};
    use crate::sim::ValidationFamily;
    let alphas = parse_list(&a.alpha)?;
    let family = match a.preset {
        Preset::AppendixE => ValidationFamily::new(a.n, a.p, a.seed),
    };
    let rows = validate_family(&family, 0, a.replicates, &alphas)?;
    write_text(&a.out, &validation_tsv(&rows, &alphas))?;
    Ok((vec![a.out.clone()], vec![a.seed]))
}

#[cfg(not(feature = "oracle"))]
fn cmd_validate(_: &ValidateArgs) -> Result<Outcome> {
    Err(Error::Validation("this build excludes the reference oracles; rebuild with --features oracle".into()))
}

fn read_pairs(path: &Path) -> Result<Vec<(PosteriorSummary, Truth)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = io::read_text(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (t, d) = line
                .split_once('\t')
                .ok_or_else(|| Error::Validation(format!("{}: '{line}' is not truth<TAB>dir", path.display())))?;
            let truth: Truth = read_json(&base.join(t.trim()))?;
            Ok((read_summary(&base.join(d.trim()))?, truth))
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let pairs = read_pairs(&a.pairs)?;
    let mode = match a.mode {
        Mode::Covariate => EvalMode::Covariate,
        Mode::Configuration => EvalMode::Configuration,
        Mode::Region => {
            let path = a.regions.as_ref().ok_or_else(|| Error::Validation("region mode needs --regions".into()))?;
            let ids = &pairs.first().ok_or_else(|| Error::Validation("no pairs listed".into()))?.1.covariate_ids;
            EvalMode::Region(load_regions(path, ids)?)
        }
    };
    let curve: EvalCurve = evaluate(&pairs, &mode)?;
    write_text(&a.out, &curve.to_tsv())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(other) = &a.against {
        let base = evaluate(&read_pairs(other)?, &mode)?;
        let report = serde_json::json!({ "dominance_fraction": dominance_fraction(&curve, &base) });
        let path = sibling(&a.out, "dominance.json");
        write_json(&path, &report)?;
        outputs.push(path);
    }
    Ok((outputs, vec![]))
}

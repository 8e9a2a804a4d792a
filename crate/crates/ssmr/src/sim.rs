//! Synthetic data generation and true/false positive evaluation of selection output.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{SsmrData, SubgroupData};
use crate::error::{Error, Result};
use crate::prior::{build_w, format_config, parse_config, Config, ModelConfig, PriorMatrixW};
use crate::search::{PosteriorSummary, Region};

/// How nonzero coefficients of a causal covariate are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectModel {
    /// Mean effect `b ~ N(0, mean_sd^2)`, then each active cell `N(b, (heterogeneity * b)^2)`.
    Correlated { mean_sd: f64, heterogeneity: f64 },
    /// Mean effect of random sign with magnitude uniform on `[low, high]`, then as above.
    UniformMean { low: f64, high: f64, heterogeneity: f64 },
    /// Every active cell independently `N(0, sd^2)`.
    Independent { sd: f64 },
}

impl Default for EffectModel {
    fn default() -> Self {
        EffectModel::Correlated { mean_sd: 1.0, heterogeneity: 0.1 }
    }
}

/// Source of the candidate covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateModel {
    /// Binomial(2, maf) genotypes with maf uniform on `[maf_min, maf_max]`, standardized.
    IndependentBinomial { maf_min: f64, maf_max: f64 },
    /// A genotype TSV (header of covariate IDs, one row per individual) shared by all subgroups.
    ExternalGenotypeFile { path: PathBuf },
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel::IndependentBinomial { maf_min: 0.05, maf_max: 0.5 }
    }
}

/// Generative parameters of a simulated data set. Missing JSON fields take the default scenario's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub s: usize,
    pub causal_rate: f64,
    /// Configuration string to probability, conditional on being causal.
    pub config_dist: Option<BTreeMap<String, f64>>,
    pub effects: EffectModel,
    pub sigma_truth: Vec<Vec<f64>>,
    pub covariates: CovariateModel,
    pub seed: u64,
}

/// The residual covariance used throughout the multi-tissue simulations.
pub fn default_sigma() -> Vec<Vec<f64>> {
    vec![vec![1.00, 0.24, 1.20], vec![0.24, 1.44, 1.08], vec![1.20, 1.08, 2.25]]
}

/// All-active configuration with probability one half, the rest sharing the remainder.
pub fn default_config_dist(cells: usize) -> BTreeMap<String, f64> {
    let full: Config = (1 << cells) - 1;
    let others = (full - 1) as f64;
    (1..=full)
        .map(|g| (format_config(g, cells), if g == full { 0.5 } else { 0.5 / others }))
        .collect()
}

impl Default for SimScenario {
    /// One hundred individuals, 250 independent covariates, three correlated responses.
    fn default() -> Self {
        SimScenario {
            n: 100,
            p: 250,
            r: 3,
            s: 1,
            causal_rate: 0.03,
            config_dist: None,
            effects: EffectModel::default(),
            sigma_truth: default_sigma(),
            covariates: CovariateModel::default(),
            seed: 1,
        }
    }
}

/// Preset variations on the default scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    SigmaScalar,
    SigmaDiagUnequal,
    SigmaFull,
    IndependentEffects,
    ConsistentOnlyEffects,
}

/// Scenario presets for the error-covariance and effect-structure variations.
///
/// The three covariance settings use independent effects; the consistent-only scheme uses
/// a scalar covariance and always activates every cell.
pub fn simulate_ablation(setting: Ablation) -> SimScenario {
    let base = SimScenario::default();
    let independent = EffectModel::Independent { sd: 1.0 };
    let diag = |v: [f64; 3]| (0..3).map(|a| (0..3).map(|b| if a == b { v[a] } else { 0.0 }).collect()).collect();
    match setting {
        Ablation::SigmaScalar => SimScenario { sigma_truth: diag([1.0; 3]), effects: independent, ..base },
        Ablation::SigmaDiagUnequal => {
            SimScenario { sigma_truth: diag([1.0, 1.44, 2.25]), effects: independent, ..base }
        }
        Ablation::SigmaFull => SimScenario { effects: independent, ..base },
        Ablation::IndependentEffects => SimScenario { effects: independent, ..base },
        Ablation::ConsistentOnlyEffects => SimScenario {
            sigma_truth: diag([1.0; 3]),
            config_dist: Some([("111".to_string(), 1.0)].into_iter().collect()),
            ..base
        },
    }
}

/// Generating truth: per-covariate configuration strings and per-cell effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub s: usize,
    pub r: usize,
    pub covariate_ids: Vec<String>,
    pub configs: Vec<String>,
    /// `effects[j][cell]`, zero outside the configuration.
    pub effects: Vec<Vec<f64>>,
}

impl Truth {
    pub fn model(&self) -> Result<ModelConfig> {
        let cells = self.s * self.r;
        let gammas = self.configs.iter().map(|c| parse_config(c, cells)).collect::<Result<Vec<_>>>()?;
        ModelConfig::new(gammas, self.s, self.r)
    }

    pub fn causal(&self) -> Vec<usize> {
        (0..self.configs.len()).filter(|&j| self.configs[j].contains('1')).collect()
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.r == 0 || self.s == 0 {
            return Err(Error::Validation("n, p, r and s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.causal_rate) {
            return Err(Error::Validation("causal_rate must lie in [0, 1]".into()));
        }
        let dist = self.config_distribution()?;
        let total: f64 = dist.iter().map(|d| d.1).sum();
        if (total - 1.0).abs() > 1e-9 || dist.iter().any(|d| d.1 < 0.0) {
            return Err(Error::Validation(format!("config_dist must be a distribution, sums to {total}")));
        }
        let sigma = crate::prior::matrix_from_rows(&self.sigma_truth, self.r)?;
        if sigma.clone().cholesky().is_none() || (&sigma - sigma.transpose()).abs().max() > 1e-12 {
            return Err(Error::Validation("sigma_truth must be symmetric positive definite".into()));
        }
        match &self.effects {
            EffectModel::Correlated { mean_sd, heterogeneity } if *mean_sd >= 0.0 && *heterogeneity >= 0.0 => {}
            EffectModel::UniformMean { low, high, heterogeneity } if 0.0 <= *low && low <= high && *heterogeneity >= 0.0 => {}
            EffectModel::Independent { sd } if *sd >= 0.0 => {}
            _ => return Err(Error::Validation("effect model parameters out of range".into())),
        }
        if let CovariateModel::IndependentBinomial { maf_min, maf_max } = self.covariates {
            if !(0.0 < maf_min && maf_min <= maf_max && maf_max <= 0.5) {
                return Err(Error::Validation("maf range must satisfy 0 < min <= max <= 0.5".into()));
            }
        }
        Ok(())
    }

    fn config_distribution(&self) -> Result<Vec<(Config, f64)>> {
        let cells = self.s * self.r;
        let map = self.config_dist.clone().unwrap_or_else(|| default_config_dist(cells));
        map.iter()
            .map(|(k, &v)| {
                let g = parse_config(k, cells)?;
                if g == 0 {
                    return Err(Error::Validation("config_dist must not include the null configuration".into()));
                }
                Ok((g, v))
            })
            .collect()
    }
}

fn standardize(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for v in col.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Draws a data set and its generating truth; fully determined by the scenario seed.
pub fn simulate(sc: &SimScenario) -> Result<(SsmrData, Truth)> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let (n, p, r, s) = (sc.n, sc.p, sc.r, sc.s);
    let cells = s * r;

    let mut ids: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let genotypes: Vec<DMatrix<f64>> = match &sc.covariates {
        CovariateModel::IndependentBinomial { maf_min, maf_max } => (0..s)
            .map(|_| {
                let mut x = DMatrix::zeros(n, p);
                for j in 0..p {
                    let maf = rng.random_range(*maf_min..=*maf_max);
                    let b = Binomial::new(2, maf).expect("valid maf");
                    for i in 0..n {
                        x[(i, j)] = b.sample(&mut rng) as f64;
                    }
                }
                standardize(&mut x);
                x
            })
            .collect(),
        CovariateModel::ExternalGenotypeFile { path } => {
            let t = crate::io::read_table(path)?;
            if t.values.shape() != (n, p) {
                return Err(Error::Dimension(format!(
                    "{} is {}x{}, scenario expects {n}x{p}",
                    path.display(),
                    t.values.nrows(),
                    t.values.ncols()
                )));
            }
            ids = t.header;
            let mut x = t.values;
            standardize(&mut x);
            vec![x; s]
        }
    };

    let dist = sc.config_distribution()?;
    let mut configs = vec![0 as Config; p];
    let mut effects = vec![vec![0.0; cells]; p];
    for j in 0..p {
        if rng.random::<f64>() >= sc.causal_rate {
            continue;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut g = dist.last().expect("nonempty distribution").0;
        for &(cand, prob) in &dist {
            acc += prob;
            if u < acc {
                g = cand;
                break;
            }
        }
        configs[j] = g;
        let mean = match sc.effects {
            EffectModel::Correlated { mean_sd, .. } => mean_sd * rng.sample::<f64, _>(StandardNormal),
            EffectModel::UniformMean { low, high, .. } => {
                let m = rng.random_range(low..=high);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
            EffectModel::Independent { .. } => 0.0,
        };
        for c in (0..cells).filter(|c| g >> c & 1 == 1) {
            let z: f64 = rng.sample(StandardNormal);
            effects[j][c] = match sc.effects {
                EffectModel::Correlated { heterogeneity, .. } | EffectModel::UniformMean { heterogeneity, .. } => {
                    mean + heterogeneity * mean.abs() * z
                }
                EffectModel::Independent { sd } => sd * z,
            };
        }
    }

    let sigma = crate::prior::matrix_from_rows(&sc.sigma_truth, r)?;
    let chol = sigma.cholesky().expect("validated").l();
    let mut subgroups = Vec::with_capacity(s);
    for (i, x) in genotypes.into_iter().enumerate() {
        let b = DMatrix::from_fn(p, r, |j, k| effects[j][i * r + k]);
        let z = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * b + z * chol.transpose();
        subgroups.push(SubgroupData::with_intercept(y, x)?);
    }
    let data = SsmrData::new(subgroups)?.with_ids(ids.clone(), (0..r).map(|k| format!("y{k}")).collect())?;
    let truth = Truth { s, r, covariate_ids: ids, configs: configs.iter().map(|&g| format_config(g, cells)).collect(), effects };
    Ok((data, truth))
}

/// Single-response validation family: three subgroups, every covariate active in all of them
/// with modest effects, and one fixed prior grid point.
///
/// Standardized effects are drawn from `[0.1, 0.5]` and then divided by `2 sqrt(p)` and by
/// `sqrt(n / 75)`, which keeps the total signal per subgroup roughly constant across `p` and `n`.
/// Without this rescaling sixteen active covariates put log10 Bayes factors in the tens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationFamily {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub effect_low: f64,
    pub effect_high: f64,
    /// `(phi, omega)` used for every covariate's prior block.
    pub prior_point: (f64, f64),
    pub seed: u64,
}

impl ValidationFamily {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        let k = 0.5 / (p as f64).sqrt() * (75.0 / n as f64).sqrt();
        ValidationFamily { n, p, s: 3, effect_low: 0.1 * k, effect_high: 0.5 * k, prior_point: (0.10, 0.40), seed }
    }

    pub fn scenario(&self, replicate: u64) -> SimScenario {
        let full = format_config((1 << self.s) - 1, self.s);
        SimScenario {
            n: self.n,
            p: self.p,
            r: 1,
            s: self.s,
            causal_rate: 1.0,
            config_dist: Some([(full, 1.0)].into_iter().collect()),
            effects: EffectModel::UniformMean { low: self.effect_low, high: self.effect_high, heterogeneity: 0.1 },
            sigma_truth: vec![vec![1.0]],
            covariates: CovariateModel::default(),
            seed: self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(replicate),
        }
    }

    /// Data, the all-active model and its prior covariance for one replicate.
    pub fn instance(&self, replicate: u64) -> Result<(SsmrData, ModelConfig, PriorMatrixW)> {
        let (data, truth) = simulate(&self.scenario(replicate))?;
        let model = truth.model()?;
        let w = build_w(&model, &vec![self.prior_point; self.p])?;
        Ok((data, model, w))
    }
}

/// What counts as one scored item.
#[derive(Clone, Debug)]
pub enum EvalMode {
    /// One item per covariate, scored by its total inclusion probability.
    Covariate,
    /// One item per (covariate, non-null configuration) pair.
    Configuration,
    /// One item per region, scored by the probability that it holds an active covariate.
    Region(Vec<Region>),
}

/// One point of a true/false positive trade-off curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Cumulative true and false positives as the threshold sweeps every observed score.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
    pub positives: usize,
    pub negatives: usize,
}

impl EvalCurve {
    /// Most true positives reachable with at most `fp` false positives.
    pub fn tp_at(&self, fp: usize) -> usize {
        self.points.iter().filter(|p| p.fp <= fp).map(|p| p.tp).max().unwrap_or(0)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\ttp\tfp\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.tp, p.fp));
        }
        out
    }
}

/// Scored items of one replicate: `(score, is_true)`.
pub fn scored_items(summary: &PosteriorSummary, truth: &Truth, mode: &EvalMode) -> Result<Vec<(f64, bool)>> {
    if truth.configs.len() != summary.p() {
        return Err(Error::Validation(format!(
            "truth lists {} covariates, summary has {}",
            truth.configs.len(),
            summary.p()
        )));
    }
    let cells = summary.cells;
    let true_cfg: Vec<Config> = truth.configs.iter().map(|c| parse_config(c, cells)).collect::<Result<_>>()?;
    let mut items = Vec::new();
    match mode {
        EvalMode::Covariate => {
            for (j, &g) in true_cfg.iter().enumerate() {
                items.push((summary.inclusion(j), g != 0));
            }
        }
        EvalMode::Configuration => {
            for (j, &g) in true_cfg.iter().enumerate() {
                for (c, &cfg) in summary.configs.iter().enumerate().skip(1) {
                    items.push((summary.pip[j][c], cfg == g));
                }
            }
        }
        EvalMode::Region(regions) => {
            for region in regions {
                let prob = summary.region_probs.get(&region.name).ok_or_else(|| {
                    Error::Validation(format!("summary has no probability for region '{}'", region.name))
                })?;
                items.push((prob.any, region.covariates.iter().any(|&j| true_cfg[j] != 0)));
            }
        }
    }
    Ok(items)
}

/// Pools items across replicates and sweeps a common threshold from high to low.
pub fn evaluate(replicates: &[(PosteriorSummary, Truth)], mode: &EvalMode) -> Result<EvalCurve> {
    let mut items = Vec::new();
    for (summary, truth) in replicates {
        items.extend(scored_items(summary, truth, mode)?);
    }
    Ok(curve_from_items(items))
}

pub fn curve_from_items(mut items: Vec<(f64, bool)>) -> EvalCurve {
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = items.iter().filter(|i| i.1).count();
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &(score, label)) in items.iter().enumerate() {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        if items.get(k + 1).is_none_or(|next| next.0 != score) {
            points.push(CurvePoint { threshold: score, tp, fp });
        }
    }
    EvalCurve { points, positives, negatives: items.len() - positives }
}

/// Fraction of integer false-positive counts `0..=max` at which `a` has at least as many
/// true positives as `b`, where `max` is the larger number of negatives.
pub fn dominance_fraction(a: &EvalCurve, b: &EvalCurve) -> f64 {
    let max = a.negatives.max(b.negatives);
    let step = |c: &EvalCurve| {
        let mut best = vec![0usize; max + 1];
        for p in &c.points {
            if p.fp <= max {
                best[p.fp] = best[p.fp].max(p.tp);
            }
        }
        for i in 1..=max {
            best[i] = best[i].max(best[i - 1]);
        }
        best
    };
    let (ta, tb) = (step(a), step(b));
    (0..=max).filter(|&i| ta[i] >= tb[i]).count() as f64 / (max + 1) as f64
}

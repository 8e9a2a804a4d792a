//! Posterior inference over model skeletons.

mod enumerate;
mod mcmc;
mod proposal;
mod scan;

pub use enumerate::{enumerate_posterior, enumerate_with};
pub use mcmc::{run_mcmc, run_mcmc_with, Chain, McmcConfig, MoveKind, RbPolicy, StepRecord};
pub use proposal::{build_proposal, ProposalWeights, DEFAULT_P_SEQ};
pub use scan::{single_covariate_scan, ScanTable};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bf::ModelKey;
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::prior::{format_config, Config, ConfigSpace};

/// Maximum number of distinct models retained in the top-model ledger.
pub const LEDGER_CAP: usize = 10_000;

/// A named set of covariate indices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Region {
    pub name: String,
    pub covariates: Vec<usize>,
}

impl Region {
    pub fn new(name: impl Into<String>, covariates: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if covariates.is_empty() {
            return Err(Error::Validation(format!("region '{name}' is empty")));
        }
        Ok(Region { name, covariates })
    }
}

/// Probability that a region holds at least one active covariate, overall and per configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionProb {
    pub any: f64,
    /// Aligned with the non-null configurations of the space.
    pub per_config: Vec<f64>,
}

/// One retained model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopModel {
    pub key: ModelKey,
    pub visits: u64,
    /// `log10(prior * BF)` up to the common normalizing constant.
    pub log10_score: f64,
    /// Normalized probability within the retained set (exact under enumeration).
    pub posterior: f64,
}

/// Run metadata and convergence checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub method: String,
    pub rank_correlation: Option<f64>,
    pub distinct_models: usize,
    pub acceptance_rate: Option<f64>,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: Option<u64>,
    pub rb_policy: String,
    pub rb_samples: usize,
    pub bf_evaluations: u64,
    pub interrupted: bool,
}

/// Marginal posterior summaries of a search.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub cells: usize,
    pub configs: Vec<Config>,
    /// `pip[j][c]`: posterior probability that covariate `j` takes configuration `configs[c]`.
    pub pip: Vec<Vec<f64>>,
    /// Plain visit-frequency estimate, when produced by sampling.
    pub pip_raw: Option<Vec<Vec<f64>>>,
    pub top_models: Vec<TopModel>,
    pub region_probs: BTreeMap<String, RegionProb>,
    pub diagnostics: Diagnostics,
}

impl PosteriorSummary {
    pub fn p(&self) -> usize {
        self.pip.len()
    }

    /// Probability that covariate `j` is active in any configuration.
    pub fn inclusion(&self, j: usize) -> f64 {
        1.0 - self.pip[j][0]
    }

    pub fn config_labels(&self) -> Vec<String> {
        self.configs.iter().map(|&g| format_config(g, self.cells)).collect()
    }
}

/// Posterior mass of models satisfying the region predicate, from weighted models.
pub fn regional_probs(
    mass: &[(ModelKey, f64)],
    regions: &[Region],
    space: &ConfigSpace,
) -> Result<BTreeMap<String, RegionProb>> {
    let total: f64 = mass.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::Validation("model weights must have positive total".into()));
    }
    let mut acc = RegionAccumulator::new(regions, space, usize::MAX)?;
    for (key, w) in mass {
        acc.add(key, *w);
    }
    Ok(acc.finish(total))
}

pub(crate) struct RegionAccumulator {
    regions: Vec<Region>,
    member: BTreeMap<usize, Vec<usize>>,
    position: BTreeMap<Config, usize>,
    any: Vec<f64>,
    per: Vec<Vec<f64>>,
    hit: Vec<u64>,
}

impl RegionAccumulator {
    pub(crate) fn new(regions: &[Region], space: &ConfigSpace, p: usize) -> Result<Self> {
        let mut member: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ri, reg) in regions.iter().enumerate() {
            if reg.covariates.is_empty() {
                return Err(Error::Validation(format!("region '{}' is empty", reg.name)));
            }
            for &j in &reg.covariates {
                if j >= p {
                    return Err(Error::Dimension(format!("region '{}' names covariate {j} beyond p", reg.name)));
                }
                member.entry(j).or_default().push(ri);
            }
        }
        let nc = space.len() - 1;
        Ok(RegionAccumulator {
            regions: regions.to_vec(),
            member,
            position: space.configs.iter().enumerate().skip(1).map(|(i, &g)| (g, i - 1)).collect(),
            any: vec![0.0; regions.len()],
            per: vec![vec![0.0; nc]; regions.len()],
            hit: vec![0; regions.len() * (nc + 1)],
        })
    }

    pub(crate) fn add(&mut self, key: &[(u32, Config)], w: f64) {
        if self.regions.is_empty() {
            return;
        }
        let nc = self.per.first().map_or(0, |v| v.len());
        let stamp = &mut self.hit;
        stamp.iter_mut().for_each(|h| *h = 0);
        for &(j, g) in key {
            if let Some(rs) = self.member.get(&(j as usize)) {
                let ci = self.position.get(&g).copied();
                for &ri in rs {
                    stamp[ri * (nc + 1) + nc] = 1;
                    if let Some(c) = ci {
                        stamp[ri * (nc + 1) + c] = 1;
                    }
                }
            }
        }
        for ri in 0..self.regions.len() {
            if stamp[ri * (nc + 1) + nc] == 1 {
                self.any[ri] += w;
            }
            for c in 0..nc {
                if stamp[ri * (nc + 1) + c] == 1 {
                    self.per[ri][c] += w;
                }
            }
        }
    }

    pub(crate) fn finish(&self, total: f64) -> BTreeMap<String, RegionProb> {
        self.regions
            .iter()
            .enumerate()
            .map(|(ri, reg)| {
                (
                    reg.name.clone(),
                    RegionProb {
                        any: (self.any[ri] / total).clamp(0.0, 1.0),
                        per_config: self.per[ri].iter().map(|v| (v / total).clamp(0.0, 1.0)).collect(),
                    },
                )
            })
            .collect()
    }
}

/// Spearman correlation between visit counts and scores over the `top_k` most visited
/// models; `None` when fewer than two distinct models or no variation.
pub fn convergence_diagnostic(models: &[TopModel], top_k: usize) -> Option<f64> {
    if models.len() < 2 {
        return None;
    }
    let mut sorted: Vec<&TopModel> = models.iter().collect();
    sorted.sort_by(|a, b| {
        b.visits.cmp(&a.visits).then(b.log10_score.total_cmp(&a.log10_score)).then(a.key.cmp(&b.key))
    });
    sorted.truncate(top_k.max(2));
    let v: Vec<f64> = sorted.iter().map(|m| m.visits as f64).collect();
    let s: Vec<f64> = sorted.iter().map(|m| m.log10_score).collect();
    spearman(&v, &s)
}

pub(crate) fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma).powi(2);
        sbb += (rb[i] - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            out[idx[t]] = r;
        }
        i = j + 1;
    }
    out
}

/// Normalizes `(key, ln score)` pairs into ranked top models.
pub(crate) fn rank_models(mut scored: Vec<(ModelKey, u64, f64)>, cap: usize) -> Vec<TopModel> {
    // Sorting first fixes the summation order, so reruns are bit-identical.
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let norm = log_sum_exp(&scored.iter().map(|m| m.2).collect::<Vec<_>>());
    scored.truncate(cap);
    scored
        .into_iter()
        .map(|(key, visits, s)| TopModel {
            key,
            visits,
            log10_score: s / std::f64::consts::LN_10,
            posterior: (s - norm).exp(),
        })
        .collect()
}

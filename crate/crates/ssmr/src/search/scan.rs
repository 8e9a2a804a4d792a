use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use super::{Diagnostics, PosteriorSummary, Region, RegionProb};
use crate::bf::{ModelEvaluator, ModelKey};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::prior::Config;

/// Per-covariate configuration Bayes factors and posteriors, each covariate analysed alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanTable {
    pub cells: usize,
    pub configs: Vec<Config>,
    /// `log10_bf[j][c]`, zero for the null column.
    pub log10_bf: Vec<Vec<f64>>,
    pub posterior: Vec<Vec<f64>>,
    /// Regional probabilities assuming at most one active covariate per region.
    pub region_probs: BTreeMap<String, RegionProb>,
}

impl ScanTable {
    /// The scan viewed as a posterior summary, for evaluation and output.
    pub fn to_summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            cells: self.cells,
            configs: self.configs.clone(),
            pip: self.posterior.clone(),
            pip_raw: None,
            top_models: Vec::new(),
            region_probs: self.region_probs.clone(),
            diagnostics: Diagnostics { method: "scan".into(), ..Default::default() },
        }
    }

    /// Index of the most probable non-null configuration of covariate `j`.
    pub fn map_config(&self, j: usize) -> usize {
        (1..self.configs.len())
            .max_by(|&a, &b| self.posterior[j][a].total_cmp(&self.posterior[j][b]).then(b.cmp(&a)))
            .expect("at least one non-null configuration")
    }
}

/// Scores each covariate on its own against the null.
pub fn single_covariate_scan(ev: &ModelEvaluator, regions: &[Region]) -> Result<ScanTable> {
    let space = ev.space();
    let (p, c) = (ev.p(), space.len());
    let keys: Vec<ModelKey> =
        (0..p).flat_map(|j| space.configs[1..].iter().map(move |&g| vec![(j as u32, g)])).collect();
    let bfs = ev.ln_bf_batch(&keys)?;
    let mut log10_bf = vec![vec![0.0; c]; p];
    let mut posterior = vec![vec![0.0; c]; p];
    // ln of prior odds times BF for each non-null configuration, relative to the null.
    let mut rel = vec![vec![0.0; c]; p];
    for j in 0..p {
        let mut terms = vec![0.0; c];
        for ci in 1..c {
            let ln = bfs[j * (c - 1) + ci - 1];
            log10_bf[j][ci] = ln / LN_10;
            terms[ci] = space.log_probs[ci] - space.log_probs[0] + ln;
            rel[j][ci] = terms[ci];
        }
        let norm = log_sum_exp(&terms);
        for ci in 0..c {
            posterior[j][ci] = (terms[ci] - norm).exp();
        }
    }
    let mut region_probs = BTreeMap::new();
    for reg in regions {
        if reg.covariates.is_empty() {
            return Err(Error::Validation(format!("region '{}' is empty", reg.name)));
        }
        if reg.covariates.iter().any(|&j| j >= p) {
            return Err(Error::Dimension(format!("region '{}' names a covariate beyond p", reg.name)));
        }
        let mut all = vec![0.0];
        let mut per: Vec<Vec<f64>> = vec![Vec::new(); c - 1];
        for &j in &reg.covariates {
            for ci in 1..c {
                all.push(rel[j][ci]);
                per[ci - 1].push(rel[j][ci]);
            }
        }
        let norm = log_sum_exp(&all);
        region_probs.insert(
            reg.name.clone(),
            RegionProb {
                any: (log_sum_exp(&all[1..]) - norm).exp(),
                per_config: per.iter().map(|v| (log_sum_exp(v) - norm).exp()).collect(),
            },
        );
    }
    Ok(ScanTable { cells: space.cells, configs: space.configs.clone(), log10_bf, posterior, region_probs })
}

use super::scan::{single_covariate_scan, ScanTable};
use crate::bf::{ModelEvaluator, ModelKey};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::prior::Config;

/// Default mixture probabilities for four proposal rounds.
pub const DEFAULT_P_SEQ: [f64; 4] = [0.624, 0.250, 0.125, 0.010];

/// Static covariate proposal weights built from greedy conditional Bayes factors.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalWeights {
    pub w: Vec<f64>,
    /// `rounds[j][i]`: log10 of the averaged conditional Bayes factor of covariate `i` in round `j`.
    pub rounds: Vec<Vec<f64>>,
    pub p_seq: Vec<f64>,
    /// Covariates conditioned on in later rounds, with their configurations.
    pub controls: Vec<(usize, Config)>,
}

impl ProposalWeights {
    /// Weights normalized to a probability vector.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.w.iter().sum();
        self.w.iter().map(|w| w / total).collect()
    }
}

/// Builds `w_i = sum_{j<n} p_j BF_i^[j] + p_n`.
///
/// Round `j` averages, over the non-null configurations of covariate `i`, the Bayes factor of
/// adding `i` to the `j-1` strongest signals found so far (each fixed at its most probable
/// single-covariate configuration). Each round's factors are rescaled to mean one across
/// covariates so that `p_j` act as mixture weights and the floor `p_n` keeps its meaning.
pub fn build_proposal(
    ev: &ModelEvaluator,
    n_rounds: usize,
    p_seq: &[f64],
    scan: Option<&ScanTable>,
) -> Result<ProposalWeights> {
    if n_rounds == 0 || p_seq.len() != n_rounds {
        return Err(Error::Validation("p_seq must have one entry per round".into()));
    }
    if p_seq.iter().any(|&x| !(x > 0.0)) || p_seq.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Validation("p_seq must be positive and nonincreasing".into()));
    }
    let p = ev.p();
    let floor = p_seq[n_rounds - 1];
    let mut w = vec![floor; p];
    let mut rounds = Vec::new();
    let mut controls: Vec<(usize, Config)> = Vec::new();
    if n_rounds == 1 {
        return Ok(ProposalWeights { w, rounds, p_seq: p_seq.to_vec(), controls });
    }
    let owned;
    let scan = match scan {
        Some(s) => s,
        None => {
            owned = single_covariate_scan(ev, &[])?;
            &owned
        }
    };
    let space = ev.space();
    let nonnull = &space.configs[1..];
    let ln_mean_nonnull = (nonnull.len() as f64).ln();
    for round in 0..n_rounds - 1 {
        let mut lbf = vec![f64::NAN; p];
        if round == 0 {
            for i in 0..p {
                let terms: Vec<f64> = scan.log10_bf[i][1..].iter().map(|v| v * std::f64::consts::LN_10).collect();
                lbf[i] = log_sum_exp(&terms) - ln_mean_nonnull;
            }
        } else {
            let mut base: ModelKey = controls.iter().map(|&(j, g)| (j as u32, g)).collect();
            base.sort_unstable();
            let ln_base = ev.ln_bf(&base)?;
            let free: Vec<usize> = (0..p).filter(|i| !controls.iter().any(|c| c.0 == *i)).collect();
            let keys: Vec<ModelKey> = free
                .iter()
                .flat_map(|&i| {
                    let base = &base;
                    nonnull.iter().map(move |&g| {
                        let mut k = base.clone();
                        k.push((i as u32, g));
                        k.sort_unstable();
                        k
                    })
                })
                .collect();
            let bfs = ev.ln_bf_batch(&keys)?;
            let nc = nonnull.len();
            for (t, &i) in free.iter().enumerate() {
                let terms: Vec<f64> = bfs[t * nc..(t + 1) * nc].iter().map(|b| b - ln_base).collect();
                lbf[i] = log_sum_exp(&terms) - ln_mean_nonnull;
            }
        }
        let free_vals: Vec<f64> = lbf.iter().cloned().filter(|v| !v.is_nan()).collect();
        if free_vals.is_empty() {
            break;
        }
        let ln_mean = log_sum_exp(&free_vals) - (free_vals.len() as f64).ln();
        for i in 0..p {
            let normalized = if lbf[i].is_nan() { 1.0 } else { (lbf[i] - ln_mean).exp() };
            w[i] += p_seq[round] * normalized;
        }
        let best = (0..p)
            .filter(|&i| !lbf[i].is_nan())
            .max_by(|&a, &b| lbf[a].total_cmp(&lbf[b]).then(b.cmp(&a)))
            .expect("free covariate");
        rounds.push(lbf.iter().map(|v| if v.is_nan() { 0.0 } else { v / std::f64::consts::LN_10 }).collect());
        controls.push((best, space.configs[scan.map_config(best)]));
    }
    Ok(ProposalWeights { w, rounds, p_seq: p_seq.to_vec(), controls })
}

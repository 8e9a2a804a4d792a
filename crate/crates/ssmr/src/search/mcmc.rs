use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::proposal::{build_proposal, ProposalWeights, DEFAULT_P_SEQ};
use super::{
    convergence_diagnostic, rank_models, Diagnostics, PosteriorSummary, Region, RegionAccumulator, LEDGER_CAP,
};
use crate::bf::{ModelEvaluator, ModelKey};
use crate::error::{Error, Result};

/// When the per-covariate conditional (Rao-Blackwell) probabilities are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbPolicy {
    /// Chosen at the end of burn-in from the cost of the conditionals; see [`run_mcmc_with`].
    Auto,
    EverySample,
    /// This many evenly spaced retained samples.
    Sweeps(usize),
    /// Conditionals for at most `covariates` covariates at this many evenly spaced samples;
    /// the rest keep visit frequencies.
    Focused { covariates: usize, sweeps: usize },
    /// Visit frequencies only.
    Off,
}

/// Conditional evaluations per sweep above which `Auto` restricts the covariates covered.
const RB_EVERY_SAMPLE_MAX: usize = 2048;
/// Grid assignments `Auto` may spend on conditionals in a focused plan.
const RB_ASSIGNMENT_BUDGET: f64 = 1e8;

impl RbPolicy {
    fn label(self) -> String {
        match self {
            RbPolicy::Auto => "auto".into(),
            RbPolicy::EverySample => "every-sample".into(),
            RbPolicy::Sweeps(n) => format!("sweeps:{n}"),
            RbPolicy::Focused { covariates, sweeps } => format!("focused:{covariates}x{sweeps}"),
            RbPolicy::Off => "off".into(),
        }
    }
}

/// Which covariates get conditionals, and at which retained samples.
struct RbPlan {
    covariates: Vec<usize>,
    every: usize,
    label: String,
}

impl RbPlan {
    fn new(policy: RbPolicy, samples: usize, p: usize, ranked: impl FnOnce(usize) -> Vec<usize>) -> Option<Self> {
        let spaced = |n: usize| (samples / n.max(1)).max(1);
        let (covariates, every) = match policy {
            RbPolicy::Off => return None,
            RbPolicy::Auto => unreachable!("resolved before planning"),
            RbPolicy::EverySample => ((0..p).collect(), 1),
            RbPolicy::Sweeps(n) => ((0..p).collect(), spaced(n)),
            RbPolicy::Focused { covariates, sweeps } => (ranked(covariates), spaced(sweeps)),
        };
        Some(RbPlan { covariates, every, label: policy.label() })
    }
}

/// Sampler settings.
#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    /// Probabilities of a configuration change and of a swap.
    pub move_mix: (f64, f64),
    pub n_rounds: usize,
    pub p_seq: Vec<f64>,
    pub rb: RbPolicy,
    pub regions: Vec<Region>,
    /// Number of most-visited models used by the rank-correlation check.
    pub diag_top_k: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burn_in: 25_000,
            samples: 50_000,
            seed: 1,
            move_mix: (0.85, 0.15),
            n_rounds: 4,
            p_seq: DEFAULT_P_SEQ.to_vec(),
            rb: RbPolicy::Auto,
            regions: Vec::new(),
            diag_top_k: 50,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.move_mix;
        if !(a >= 0.0 && b >= 0.0) || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("move probabilities must be nonnegative and sum to 1".into()));
        }
        if self.samples == 0 || self.burn_in == 0 {
            return Err(Error::Validation("burn-in and sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    ConfigChange,
    Swap,
    /// A swap was drawn but every covariate shares the chosen one's configuration.
    Stay,
}

/// What happened in one Metropolis-Hastings step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub kind: MoveKind,
    pub from: ModelKey,
    pub proposed: ModelKey,
    /// `ln q(reverse) - ln q(forward)`.
    pub log_hastings: f64,
    pub proposed_score: f64,
    pub accepted: bool,
}

/// A single Metropolis-Hastings chain over model skeletons.
pub struct Chain<'a> {
    ev: &'a ModelEvaluator,
    q: Vec<f64>,
    cum: Vec<f64>,
    mix: f64,
    /// Configuration index (into the space) of every covariate.
    state: Vec<usize>,
    members: Vec<Vec<usize>>,
    slot: Vec<usize>,
    key: ModelKey,
    score: f64,
    ln_bf: f64,
    rng: ChaCha8Rng,
    log_prior_cfg: Vec<f64>,
}

impl<'a> Chain<'a> {
    /// Starts from the null model.
    pub fn new(ev: &'a ModelEvaluator, weights: &ProposalWeights, config_change_prob: f64, seed: u64) -> Result<Self> {
        let p = ev.p();
        if weights.w.len() != p || weights.w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Validation("proposal weights must be positive, one per covariate".into()));
        }
        let space = ev.space();
        if space.len() < 2 {
            return Err(Error::Validation("the prior allows no non-null configuration".into()));
        }
        let q = weights.probabilities();
        let cum = q
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let mut members = vec![Vec::new(); space.len()];
        members[0] = (0..p).collect();
        let key = Vec::new();
        let score = ev.log_prior(&key)?;
        Ok(Chain {
            ev,
            q,
            cum,
            mix: config_change_prob,
            state: vec![0; p],
            members,
            slot: (0..p).collect(),
            key,
            score,
            ln_bf: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            log_prior_cfg: space.log_probs.clone(),
        })
    }

    pub fn key(&self) -> &ModelKey {
        &self.key
    }
    pub fn score(&self) -> f64 {
        self.score
    }
    pub fn state(&self) -> &[usize] {
        &self.state
    }

    fn pick_covariate(&mut self) -> usize {
        let u: f64 = self.rng.random::<f64>() * self.cum[self.cum.len() - 1];
        self.cum.partition_point(|&c| c <= u).min(self.q.len() - 1)
    }

    fn differing(&self, j: usize) -> usize {
        self.q.len() - self.members[self.state[j]].len()
    }

    fn with_changes(&self, changes: &[(usize, usize)]) -> ModelKey {
        let configs = &self.ev.space().configs;
        let mut key: ModelKey =
            self.key.iter().cloned().filter(|(j, _)| !changes.iter().any(|c| c.0 == *j as usize)).collect();
        for &(j, ci) in changes {
            if ci != 0 {
                key.push((j as u32, configs[ci]));
            }
        }
        key.sort_unstable();
        key
    }

    fn set(&mut self, j: usize, ci: usize) {
        let old = self.state[j];
        let pos = self.slot[j];
        let last = *self.members[old].last().expect("member");
        self.members[old].swap_remove(pos);
        if last != j {
            self.slot[last] = pos;
        }
        self.slot[j] = self.members[ci].len();
        self.members[ci].push(j);
        self.state[j] = ci;
    }

    /// Proposes and accepts or rejects one move.
    pub fn step(&mut self) -> Result<StepRecord> {
        let c = self.ev.space().len();
        let i = self.pick_covariate();
        let change = self.rng.random::<f64>() < self.mix;
        let (kind, changes, log_h) = if change {
            let mut ci = self.rng.random_range(0..c - 1);
            if ci >= self.state[i] {
                ci += 1;
            }
            (MoveKind::ConfigChange, vec![(i, ci)], 0.0)
        } else {
            let mi = self.differing(i);
            if mi == 0 {
                let key = self.key.clone();
                return Ok(StepRecord {
                    kind: MoveKind::Stay,
                    from: key.clone(),
                    proposed: key,
                    log_hastings: 0.0,
                    proposed_score: self.score,
                    accepted: true,
                });
            }
            let mut idx = self.rng.random_range(0..mi);
            let mut l = usize::MAX;
            for (ci, list) in self.members.iter().enumerate() {
                if ci == self.state[i] {
                    continue;
                }
                if idx < list.len() {
                    l = list[idx];
                    break;
                }
                idx -= list.len();
            }
            let ml = self.differing(l);
            let (qi, ql) = (self.q[i], self.q[l]);
            let fwd = qi / mi as f64 + ql / ml as f64;
            let rev = qi / ml as f64 + ql / mi as f64;
            (MoveKind::Swap, vec![(i, self.state[l]), (l, self.state[i])], rev.ln() - fwd.ln())
        };
        let proposed = self.with_changes(&changes);
        let delta_prior: f64 =
            changes.iter().map(|&(j, ci)| self.log_prior_cfg[ci] - self.log_prior_cfg[self.state[j]]).sum();
        let proposed_bf = self.ev.ln_bf(&proposed)?;
        let proposed_score = self.score - self.ln_bf + delta_prior + proposed_bf;
        let log_ratio = proposed_score - self.score + log_h;
        let accepted = log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio;
        let from = std::mem::take(&mut self.key);
        if accepted {
            for &(j, ci) in &changes {
                self.set(j, ci);
            }
            self.key = proposed.clone();
            self.score = proposed_score;
            self.ln_bf = proposed_bf;
        } else {
            self.key = from.clone();
        }
        Ok(StepRecord { kind, from, proposed, log_hastings: log_h, proposed_score, accepted })
    }

    /// Conditional configuration probabilities of every covariate given all others.
    pub fn conditionals(&self) -> Result<Vec<Vec<f64>>> {
        self.conditionals_of(&(0..self.q.len()).collect::<Vec<_>>())
    }

    /// Conditional configuration probabilities of the listed covariates, in order.
    pub fn conditionals_of(&self, covariates: &[usize]) -> Result<Vec<Vec<f64>>> {
        let space = self.ev.space();
        let c = space.len();
        let mut keys = Vec::with_capacity(covariates.len() * (c - 1));
        let mut slots = Vec::with_capacity(covariates.len() * (c - 1));
        for (t, &j) in covariates.iter().enumerate() {
            for ci in 0..c {
                if ci != self.state[j] {
                    keys.push(self.with_changes(&[(j, ci)]));
                    slots.push((t, ci));
                }
            }
        }
        let bfs = self.ev.ln_bf_batch(&keys)?;
        let here = self.ln_bf;
        let mut logs = vec![vec![f64::NEG_INFINITY; c]; covariates.len()];
        for (t, &j) in covariates.iter().enumerate() {
            logs[t][self.state[j]] = here + self.log_prior_cfg[self.state[j]];
        }
        for (&(t, ci), b) in slots.iter().zip(&bfs) {
            logs[t][ci] = b + self.log_prior_cfg[ci];
        }
        Ok(logs
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = row.iter().map(|v| (v - m).exp()).sum();
                row.iter().map(|v| (v - m).exp() / total).collect()
            })
            .collect())
    }
}

/// Resolves `Auto` once the chain has finished burning in.
///
/// Conditionals cover every covariate when there are few enough, otherwise the ones that
/// matter most. They are recomputed only when the chain moves, so the expected cost of
/// computing them at every sample is the number of moves (extrapolated from burn-in) times
/// the grid assignments of one sweep, and never more than scoring the whole model space.
/// When that exceeds a fixed budget, evenly spaced sweeps are used instead. Every input is
/// part of the chain's deterministic state, so reruns with one seed agree exactly.
fn resolve_auto(ev: &ModelEvaluator, chain: &Chain, samples: usize, burn_in: usize, moves: usize) -> RbPolicy {
    let (p, c) = (ev.p(), ev.space().len());
    let nl = ev.spec().grid.points.len() as f64;
    let budget = ev.budget() as f64;
    let assignments = nl.powi(chain.key().len() as i32 + 1).min(budget);
    let all = p * (c - 1) <= RB_EVERY_SAMPLE_MAX;
    let covariates = if all { p } else { (RB_EVERY_SAMPLE_MAX / (c - 1)).max(1) };
    let per_sweep = (covariates * (c - 1)) as f64 * assignments;
    let expected_moves = (moves.max(1) as f64 * samples as f64 / burn_in as f64).min(samples as f64);
    let space = (c as f64).powi(p.min(1000) as i32) * nl.powi(p.min(1000) as i32).min(budget);
    if (expected_moves * per_sweep).min(space) <= RB_ASSIGNMENT_BUDGET {
        return if all { RbPolicy::EverySample } else { RbPolicy::Focused { covariates, sweeps: samples } };
    }
    let sweeps = ((RB_ASSIGNMENT_BUDGET / per_sweep) as usize).clamp(10, 200).min(samples);
    if all {
        RbPolicy::Sweeps(sweeps)
    } else {
        RbPolicy::Focused { covariates, sweeps }
    }
}

/// Up to `k` covariates: those active during burn-in first, then the highest proposal weights.
fn focus(seen: &[usize], weights: &ProposalWeights, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = seen.iter().copied().take(k).collect();
    let mut rest: Vec<usize> = (0..weights.w.len()).filter(|j| !out.contains(j)).collect();
    rest.sort_by(|&a, &b| weights.w[b].total_cmp(&weights.w[a]).then(a.cmp(&b)));
    out.extend(rest.into_iter().take(k.saturating_sub(out.len())));
    out.sort_unstable();
    out
}

/// Builds proposal weights and runs the sampler with the evaluator's data and prior.
pub fn run_mcmc(ev: &ModelEvaluator, cfg: &McmcConfig) -> Result<PosteriorSummary> {
    run_mcmc_with(ev, cfg, None, |_| true)
}

/// Runs the sampler; `keep_going(step)` is polled every 1000 steps and a `false` return stops
/// the run early with a summary of the samples collected so far.
pub fn run_mcmc_with(
    ev: &ModelEvaluator,
    cfg: &McmcConfig,
    weights: Option<ProposalWeights>,
    mut keep_going: impl FnMut(usize) -> bool,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    let space = ev.space().clone();
    let (p, c) = (ev.p(), space.len());
    let weights = match weights {
        Some(w) => w,
        None => build_proposal(ev, cfg.n_rounds, &cfg.p_seq, None)?,
    };
    let mut chain = Chain::new(ev, &weights, cfg.move_mix.0, cfg.seed)?;
    // Covariates ever active during burn-in, in order of first appearance.
    let mut seen = vec![false; p];
    let mut seen_order = Vec::new();
    let mut plan: Option<RbPlan> = None;
    let mut rb_sum = vec![vec![0.0; c]; p];
    let mut rb_count = 0usize;
    let mut rb_last: Option<(ModelKey, Vec<Vec<f64>>)> = None;
    let mut raw_active = vec![vec![0u64; c]; p];
    let mut ledger: HashMap<ModelKey, (u64, f64)> = HashMap::new();
    let mut regions = RegionAccumulator::new(&cfg.regions, &space, p)?;
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    let mut taken = 0usize;
    let mut interrupted = false;

    for step in 0..cfg.burn_in + cfg.samples {
        if step % 1000 == 0 && step > 0 && !keep_going(step) {
            interrupted = true;
            break;
        }
        let rec = chain.step()?;
        if rec.kind != MoveKind::Stay {
            proposals += 1;
            accepted += rec.accepted as usize;
        }
        if step < cfg.burn_in {
            for &(j, _) in chain.key() {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    seen_order.push(j as usize);
                }
            }
            continue;
        }
        let t = step - cfg.burn_in;
        if t == 0 {
            let policy = match cfg.rb {
                RbPolicy::Auto => resolve_auto(ev, &chain, cfg.samples, cfg.burn_in, accepted),
                other => other,
            };
            plan = RbPlan::new(policy, cfg.samples, p, |k| focus(&seen_order, &weights, k));
        }
        taken += 1;
        for &(j, g) in chain.key() {
            raw_active[j as usize][space.position(g).expect("config")] += 1;
        }
        regions.add(chain.key(), 1.0);
        match ledger.get_mut(chain.key()) {
            Some(entry) => entry.0 += 1,
            None => {
                if ledger.len() >= LEDGER_CAP {
                    let worst = ledger
                        .iter()
                        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(a.0)))
                        .map(|(k, v)| (k.clone(), v.1))
                        .expect("nonempty ledger");
                    if worst.1 < chain.score() {
                        ledger.remove(&worst.0);
                        ledger.insert(chain.key().clone(), (1, chain.score()));
                    }
                } else {
                    ledger.insert(chain.key().clone(), (1, chain.score()));
                }
            }
        }
        if let Some(plan) = &plan {
            if t % plan.every == 0 {
                let cond = match &rb_last {
                    Some((k, v)) if k == chain.key() => v.clone(),
                    _ => {
                        let v = chain.conditionals_of(&plan.covariates)?;
                        rb_last = Some((chain.key().clone(), v.clone()));
                        v
                    }
                };
                for (&j, row) in plan.covariates.iter().zip(&cond) {
                    for ci in 0..c {
                        rb_sum[j][ci] += row[ci];
                    }
                }
                rb_count += 1;
            }
        }
    }

    let denom = taken.max(1) as f64;
    let pip_raw: Vec<Vec<f64>> = raw_active
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = row.iter().map(|&v| v as f64 / denom).collect();
            out[0] = (1.0 - out[1..].iter().sum::<f64>()).max(0.0);
            out
        })
        .collect();
    let mut pip = pip_raw.clone();
    if let Some(plan) = plan.as_ref().filter(|_| rb_count > 0) {
        for &j in &plan.covariates {
            pip[j] = rb_sum[j].iter().map(|v| v / rb_count as f64).collect();
        }
    }
    let scored: Vec<(ModelKey, u64, f64)> = ledger.into_iter().map(|(k, (v, s))| (k, v, s)).collect();
    let distinct = scored.len();
    let top_models = rank_models(scored, LEDGER_CAP);
    let rank_correlation = convergence_diagnostic(&top_models, cfg.diag_top_k);
    Ok(PosteriorSummary {
        cells: space.cells,
        configs: space.configs.clone(),
        pip,
        pip_raw: Some(pip_raw),
        top_models,
        region_probs: regions.finish(denom),
        diagnostics: Diagnostics {
            method: "mcmc".into(),
            rank_correlation,
            distinct_models: distinct,
            acceptance_rate: Some(accepted as f64 / proposals.max(1) as f64),
            burn_in: cfg.burn_in,
            samples: taken,
            seed: Some(cfg.seed),
            rb_policy: plan.as_ref().map_or_else(|| RbPolicy::Off.label(), |p| p.label.clone()),
            rb_samples: rb_count,
            bf_evaluations: ev.evaluations(),
            interrupted,
        },
    })
}

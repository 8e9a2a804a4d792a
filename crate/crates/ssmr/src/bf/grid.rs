//! Grid-averaged model Bayes factors.
//!
//! For a model with `k` active covariates each covariate draws its own `(phi, omega)`
//! point, so the exact average has `|L|^k` terms. Everything that does not depend on the
//! joint assignment (covariance estimates, per-point prior factors and the cross blocks
//! `L_t(a)' M_tu L_u(b)`) is computed once; each assignment then costs one small Cholesky.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{invert_all, shrink, AlphaVector, BfMethod, BfResult};
use crate::error::{Error, Result};
use crate::linalg::{chol_flat, chol_quad_flat, psd_range, scaled_psd_factor, scaled_psd_range, LogSum};
use crate::mle::{check_model, Residualized};
use crate::prior::{effect_block, Config, ConfigSpace, ModelConfig, PriorSpec};

/// Default cap on the number of grid assignments evaluated per model.
pub const DEFAULT_BUDGET: usize = 4096;
const CHUNK: usize = 512;

/// Sorted `(covariate, configuration)` pairs of the active covariates.
pub type ModelKey = Vec<(u32, Config)>;

/// How the grid average was formed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridInfo {
    pub assignments: usize,
    pub exhaustive: bool,
    pub qmc_seed: Option<u64>,
}

/// Standardized prior blocks of one configuration at every grid point.
struct UnitBlocks {
    u: Vec<DMatrix<f64>>,
    singular: Vec<bool>,
    /// Index of the first grid point whose block has the same range.
    sig: Vec<usize>,
}

impl UnitBlocks {
    fn new(g: Config, points: &[(f64, f64)]) -> Self {
        let m = g.count_ones() as usize;
        let u: Vec<DMatrix<f64>> = points.iter().map(|&(phi, om)| effect_block(m, phi, om)).collect();
        let ranges: Vec<DMatrix<f64>> = u.iter().map(psd_range).collect();
        let singular: Vec<bool> = ranges.iter().map(|k| k.ncols() < m).collect();
        let mut sig = Vec::with_capacity(u.len());
        for a in 0..u.len() {
            let first = (0..a)
                .find(|&b| {
                    singular[a] == singular[b]
                        && (!singular[a] || {
                            let pa = &ranges[a] * ranges[a].transpose();
                            let pb = &ranges[b] * ranges[b].transpose();
                            (pa - pb).abs().max() < 1e-8
                        })
                })
                .unwrap_or(a);
            sig.push(first);
        }
        UnitBlocks { u, singular, sig }
    }
}

/// Everything that depends on the covariance estimate for one constraint signature.
struct Group {
    sigma: Vec<DMatrix<f64>>,
    restricted: bool,
    /// `factors[t][a]`: prior factor of covariate `t` at grid point `a` (empty if unused).
    ranks: Vec<Vec<usize>>,
    c: Vec<Vec<Vec<f64>>>,
    /// Row-major blocks indexed by `((t * k + u) * nl + a) * nl + b` for `t <= u`.
    cross: Vec<Vec<f64>>,
}

/// Cached evaluator of `ln BF` for models over one dataset and prior.
pub struct ModelEvaluator {
    res: Arc<Residualized>,
    spec: PriorSpec,
    alpha: AlphaVector,
    budget: usize,
    seed: u64,
    space: ConfigSpace,
    units: Mutex<HashMap<Config, Arc<UnitBlocks>>>,
    cache: Mutex<HashMap<ModelKey, f64>>,
    cache_cap: usize,
    evaluations: AtomicU64,
}

impl ModelEvaluator {
    pub fn new(res: Arc<Residualized>, spec: PriorSpec, alpha: AlphaVector) -> Result<Self> {
        if spec.model_prior.cells != res.s() * res.r() {
            return Err(Error::Dimension("prior configurations do not match r*s of the data".into()));
        }
        if alpha.0.len() != res.s() {
            return Err(Error::Dimension("alpha needs one entry per subgroup".into()));
        }
        if !spec.nuisance.use_limit && spec.nuisance.nu.len() != res.s() {
            return Err(Error::Dimension("nuisance prior needs one entry per subgroup".into()));
        }
        let space = spec.model_prior.space();
        Ok(ModelEvaluator {
            res,
            spec,
            alpha,
            budget: DEFAULT_BUDGET,
            seed: 0x5eed,
            space,
            units: Mutex::new(HashMap::new()),
            cache: Mutex::new(HashMap::new()),
            cache_cap: 250_000,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget.max(1);
        self
    }
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
    pub fn with_cache_cap(mut self, cap: usize) -> Self {
        self.cache_cap = cap;
        self
    }

    pub fn residualized(&self) -> &Residualized {
        &self.res
    }
    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }
    pub fn alpha(&self) -> &AlphaVector {
        &self.alpha
    }
    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }
    pub fn p(&self) -> usize {
        self.res.p()
    }
    pub fn budget(&self) -> usize {
        self.budget
    }
    /// Number of uncached model evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Log prior of a model given only its active covariates.
    pub fn log_prior(&self, key: &[(u32, Config)]) -> Result<f64> {
        let mp = &self.spec.model_prior;
        let mut total = (self.p() - key.len()) as f64 * mp.pi0.ln();
        for &(_, g) in key {
            total += mp.log_prob(g)?;
        }
        Ok(total)
    }

    /// Cached natural-log Bayes factor of the model with the given active covariates.
    pub fn ln_bf(&self, key: &[(u32, Config)]) -> Result<f64> {
        if key.is_empty() {
            return Ok(0.0);
        }
        if let Some(&v) = self.cache.lock().expect("cache lock").get(key) {
            return Ok(v);
        }
        let v = self.compute(key)?.0;
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= self.cache_cap {
            cache.clear();
        }
        cache.insert(key.to_vec(), v);
        Ok(v)
    }

    /// Evaluates several models, in parallel, returning results in input order.
    pub fn ln_bf_batch(&self, keys: &[ModelKey]) -> Result<Vec<f64>> {
        if keys.len() < 4 {
            return keys.iter().map(|k| self.ln_bf(k)).collect();
        }
        keys.par_iter().map(|k| self.ln_bf(k)).collect()
    }

    /// Full result for one model, bypassing the cache.
    pub fn model_bf(&self, model: &ModelConfig) -> Result<BfResult> {
        check_model(&self.res.layout, model)?;
        let key: ModelKey = model.active().into_iter().map(|(j, g)| (j as u32, g)).collect();
        if key.is_empty() {
            let sigma = shrink(&self.res, &self.res.sigma_tilde, &self.spec.nuisance, &self.alpha)?;
            let mut out = BfResult::simple(0.0, BfMethod::Abf { alpha: self.alpha.0.clone() }, sigma, false);
            out.grid = Some(GridInfo { assignments: 1, exhaustive: true, qmc_seed: None });
            return Ok(out);
        }
        let (ln, info, sigma, restricted) = self.compute(&key)?;
        let mut out = BfResult::simple(ln, BfMethod::Abf { alpha: self.alpha.0.clone() }, sigma, restricted);
        out.grid = Some(info);
        Ok(out)
    }

    fn unit(&self, g: Config) -> Arc<UnitBlocks> {
        let mut map = self.units.lock().expect("unit lock");
        map.entry(g).or_insert_with(|| Arc::new(UnitBlocks::new(g, &self.spec.grid.points))).clone()
    }

    fn qmc_seed(&self, key: &[(u32, Config)]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &(j, g) in key {
            for b in j.to_le_bytes().iter().chain(g.to_le_bytes().iter()) {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        splitmix(self.seed ^ h)
    }

    fn compute(&self, key: &[(u32, Config)]) -> Result<(f64, GridInfo, Vec<DMatrix<f64>>, bool)> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let res = &*self.res;
        let layout = res.layout;
        let k = key.len();
        let nl = self.spec.grid.points.len();
        for w in key.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Validation("model key must be sorted by covariate".into()));
            }
        }
        if key.iter().any(|&(j, g)| j as usize >= layout.p || g == 0 || g >> layout.cells() != 0) {
            return Err(Error::Validation("model key has an invalid covariate or configuration".into()));
        }
        let units: Vec<Arc<UnitBlocks>> = key.iter().map(|&(_, g)| self.unit(g)).collect();
        let cov_cells: Vec<Vec<usize>> = key
            .iter()
            .map(|&(j, g)| {
                (0..layout.cells()).filter(|&c| g >> c & 1 == 1).map(|c| layout.cell_index(j as usize, c)).collect()
            })
            .collect();
        let all_cells: Vec<usize> = cov_cells.iter().flatten().cloned().collect();
        let offsets: Vec<usize> = cov_cells
            .iter()
            .scan(0, |acc, c| {
                let o = *acc;
                *acc += c.len();
                Some(o)
            })
            .collect();

        // Enumerate or sample the assignments.
        let exhaustive = nl.checked_pow(k as u32).is_some_and(|t| t <= self.budget);
        let (n_assign, seed) = if exhaustive { (nl.pow(k as u32), None) } else { (self.budget, Some(self.qmc_seed(key))) };
        let mut assign = vec![0u8; n_assign * k];
        if exhaustive {
            for m in 0..n_assign {
                let mut x = m;
                for t in 0..k {
                    assign[m * k + t] = (x % nl) as u8;
                    x /= nl;
                }
            }
        } else {
            let seed = seed.expect("seed");
            let alphas = kronecker_alphas(k);
            let cdf: Vec<f64> = self
                .spec
                .grid
                .weights
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect();
            let mut state = seed;
            let shifts: Vec<f64> = (0..k).map(|_| to_unit(next(&mut state))).collect();
            for m in 0..n_assign {
                for t in 0..k {
                    let u = (shifts[t] + (m as f64 + 1.0) * alphas[t]).fract();
                    let a = cdf.iter().position(|&c| u < c).unwrap_or(nl - 1);
                    assign[m * k + t] = a as u8;
                }
            }
        }

        // Group assignments by the constraint signature of singular blocks.
        let multi: Vec<usize> =
            (0..k).filter(|&t| units[t].sig.iter().any(|&s| s != units[t].sig[0])).collect();
        let mut group_of = vec![0u32; if multi.is_empty() { 0 } else { n_assign }];
        let mut sigs: Vec<Vec<usize>> = Vec::new();
        if multi.is_empty() {
            sigs.push((0..k).map(|t| units[t].sig[0]).collect());
        } else {
            let mut index: HashMap<Vec<usize>, u32> = HashMap::new();
            for m in 0..n_assign {
                let s: Vec<usize> = (0..k).map(|t| units[t].sig[assign[m * k + t] as usize]).collect();
                let next_id = index.len() as u32;
                let id = *index.entry(s.clone()).or_insert_with(|| {
                    sigs.push(s);
                    next_id
                });
                group_of[m] = id;
            }
        }

        // Gram blocks among active covariates, per subgroup.
        let js: Vec<usize> = key.iter().map(|&(j, _)| j as usize).collect();
        let grams: Vec<DMatrix<f64>> = (0..res.s())
            .map(|i| {
                let g = &res.g[i];
                let mut m = DMatrix::zeros(k, k);
                for a in 0..k {
                    for b in a..k {
                        let v = g.column(js[a]).dot(&g.column(js[b]));
                        m[(a, b)] = v;
                        m[(b, a)] = v;
                    }
                }
                m
            })
            .collect();

        let groups: Vec<Group> = sigs
            .iter()
            .map(|sig| self.build_group(key, &units, &cov_cells, &all_cells, &offsets, &grams, sig))
            .collect::<Result<_>>()?;

        let ln_w: Vec<f64> = self.spec.grid.weights.iter().map(|w| w.ln()).collect();
        let eval_chunk = |start: usize| -> LogSum {
            let end = (start + CHUNK).min(n_assign);
            let max_r: usize = cov_cells.iter().map(|c| c.len()).sum();
            let mut buf = vec![0.0; max_r * max_r];
            let mut cv = vec![0.0; max_r];
            let mut work = vec![0.0; max_r];
            let mut offs = vec![0usize; k];
            let mut acc = LogSum::default();
            for m in start..end {
                let a = &assign[m * k..(m + 1) * k];
                let grp = &groups[if multi.is_empty() { 0 } else { group_of[m] as usize }];
                let mut d = 0;
                for t in 0..k {
                    offs[t] = d;
                    d += grp.ranks[t][a[t] as usize];
                }
                for t in 0..k {
                    let at = a[t] as usize;
                    let rt = grp.ranks[t][at];
                    let ct = &grp.c[t][at];
                    cv[offs[t]..offs[t] + rt].copy_from_slice(ct);
                    for u in t..k {
                        let au = a[u] as usize;
                        let ru = grp.ranks[u][au];
                        let blk = &grp.cross[((t * k + u) * nl + at) * nl + au];
                        // blk is rt x ru row-major; store into the lower triangle.
                        for x in 0..rt {
                            for y in 0..ru {
                                let (row, col) = (offs[u] + y, offs[t] + x);
                                if row >= col {
                                    buf[row * d + col] = blk[x * ru + y];
                                }
                            }
                        }
                    }
                }
                for i in 0..d {
                    buf[i * d + i] += 1.0;
                }
                let ln_bf = match chol_flat(&mut buf[..d * d], d) {
                    Some(logdet) => -0.5 * logdet + 0.5 * chol_quad_flat(&buf[..d * d], d, &cv[..d], &mut work),
                    None => f64::NAN,
                };
                let lw = if exhaustive { a.iter().map(|&x| ln_w[x as usize]).sum::<f64>() } else { 0.0 };
                acc.add(lw + ln_bf);
            }
            acc
        };
        let starts: Vec<usize> = (0..n_assign).step_by(CHUNK).collect();
        let parts: Vec<LogSum> = if starts.len() > 1 {
            starts.par_iter().map(|&s| eval_chunk(s)).collect()
        } else {
            starts.iter().map(|&s| eval_chunk(s)).collect()
        };
        let mut total = LogSum::default();
        for p in &parts {
            total.merge(p);
        }
        let mut ln = total.value();
        if !exhaustive {
            ln -= (n_assign as f64).ln();
        }
        if !ln.is_finite() {
            return Err(Error::Numerical("grid-averaged Bayes factor is not finite".into()));
        }
        let restricted = groups.iter().any(|g| g.restricted);
        let sigma = groups.into_iter().next().map(|g| g.sigma).unwrap_or_default();
        Ok((ln, GridInfo { assignments: n_assign, exhaustive, qmc_seed: seed }, sigma, restricted))
    }

    #[allow(clippy::too_many_arguments)]
    fn build_group(
        &self,
        key: &[(u32, Config)],
        units: &[Arc<UnitBlocks>],
        cov_cells: &[Vec<usize>],
        all_cells: &[usize],
        offsets: &[usize],
        grams: &[DMatrix<f64>],
        sig: &[usize],
    ) -> Result<Group> {
        let res = &*self.res;
        let layout = res.layout;
        let k = key.len();
        let nl = self.spec.grid.points.len();
        let singular: Vec<bool> = (0..k).map(|t| units[t].singular[sig[t]]).collect();
        let sd_of = |sigma: &[DMatrix<f64>], flat: usize| {
            let (i, _, r) = layout.locate(flat);
            sigma[i][(r, r)].sqrt()
        };
        let restricted = singular.iter().any(|&s| s);
        let sigma_hat = if restricted {
            // Coefficients confined to the (raw-scale) range of each block.
            let mut cols: Vec<DMatrix<f64>> = Vec::with_capacity(k);
            for t in 0..k {
                let m = cov_cells[t].len();
                if !singular[t] {
                    cols.push(DMatrix::identity(m, m));
                    continue;
                }
                let sds: Vec<f64> = cov_cells[t]
                    .iter()
                    .map(|&f| if self.spec.scale_invariant { sd_of(&res.sigma_tilde, f) } else { 1.0 })
                    .collect();
                cols.push(scaled_psd_range(&units[t].u[sig[t]], &sds));
            }
            let rank: usize = cols.iter().map(|c| c.ncols()).sum();
            let mut basis = DMatrix::zeros(all_cells.len(), rank);
            let mut col = 0;
            for t in 0..k {
                basis.view_mut((offsets[t], col), cols[t].shape()).copy_from(&cols[t]);
                col += cols[t].ncols();
            }
            res.restricted_fit(all_cells, &basis)?.1
        } else {
            let active: Vec<(usize, Config)> = key.iter().map(|&(j, g)| (j as usize, g)).collect();
            res.support_sigma(&active)
        };
        let sigma = shrink(res, &sigma_hat, &self.spec.nuisance, &self.alpha)?;
        let sinv = invert_all(&sigma)?;

        // Score and precision over all active cells.
        let loc: Vec<(usize, usize, usize)> = all_cells.iter().map(|&f| layout.locate(f)).collect();
        let owner: Vec<usize> = (0..k).flat_map(|t| std::iter::repeat_n(t, cov_cells[t].len())).collect();
        let dtot = all_cells.len();
        let z = DVector::from_iterator(
            dtot,
            loc.iter().map(|&(i, j, r)| (0..res.r()).map(|l| sinv[i][(r, l)] * res.gty[i][(j, l)]).sum::<f64>()),
        );
        let mut mprec = DMatrix::zeros(dtot, dtot);
        for a in 0..dtot {
            for b in a..dtot {
                let (i, _, r) = loc[a];
                let (i2, _, r2) = loc[b];
                if i != i2 {
                    continue;
                }
                let v = grams[i][(owner[a], owner[b])] * sinv[i][(r, r2)];
                mprec[(a, b)] = v;
                mprec[(b, a)] = v;
            }
        }

        // Prior factors at every grid point compatible with this signature.
        let mut factors: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; nl]; k];
        let mut ranks = vec![vec![0usize; nl]; k];
        let mut cs = vec![vec![Vec::new(); nl]; k];
        for t in 0..k {
            let m = cov_cells[t].len();
            let sds: Vec<f64> = cov_cells[t]
                .iter()
                .map(|&f| if self.spec.scale_invariant { sd_of(&sigma, f) } else { 1.0 })
                .collect();
            let zt = z.rows(offsets[t], m);
            for a in 0..nl {
                if units[t].sig[a] != sig[t] {
                    continue;
                }
                let l = scaled_psd_factor(&units[t].u[a], &sds)?;
                ranks[t][a] = l.ncols();
                cs[t][a] = (l.transpose() * zt).iter().cloned().collect();
                factors[t][a] = Some(l);
            }
        }
        let mut cross = vec![Vec::new(); k * k * nl * nl];
        for t in 0..k {
            for u in t..k {
                let mtu = mprec.view((offsets[t], offsets[u]), (cov_cells[t].len(), cov_cells[u].len()));
                for b in 0..nl {
                    let Some(lu) = &factors[u][b] else { continue };
                    let n = mtu * lu;
                    for a in 0..nl {
                        let Some(lt) = &factors[t][a] else { continue };
                        let blk = lt.transpose() * &n;
                        let mut flat = Vec::with_capacity(blk.len());
                        for x in 0..blk.nrows() {
                            for y in 0..blk.ncols() {
                                flat.push(blk[(x, y)]);
                            }
                        }
                        cross[((t * k + u) * nl + a) * nl + b] = flat;
                    }
                }
            }
        }
        Ok(Group { sigma, restricted, ranks, c: cs, cross })
    }
}

/// Grid-averaged Bayes factor of a single model (no caching across calls).
pub fn model_bf(
    res: Arc<Residualized>,
    model: &ModelConfig,
    spec: &PriorSpec,
    alpha: &AlphaVector,
    budget: usize,
) -> Result<BfResult> {
    ModelEvaluator::new(res, spec.clone(), alpha.clone())?.with_budget(budget).model_bf(model)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn next(state: &mut u64) -> u64 {
    *state = splitmix(*state);
    *state
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Additive recurrence constants of the generalized golden-ratio sequence in `k` dimensions.
fn kronecker_alphas(k: usize) -> Vec<f64> {
    let mut g = 2.0f64;
    for _ in 0..64 {
        let f = g.powi(k as i32 + 1) - g - 1.0;
        let df = (k as f64 + 1.0) * g.powi(k as i32) - 1.0;
        g -= f / df;
    }
    (1..=k).map(|t| (1.0 / g).powi(t as i32).fract()).collect()
}

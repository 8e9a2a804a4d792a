//! Bayes factors against the all-null model: exact under a known covariance, the
//! shrinkage-covariance approximation, its limit for singular priors, grid-averaged
//! model Bayes factors and the links to classical test statistics.

mod grid;
mod stats;

pub use grid::{model_bf, GridInfo, ModelEvaluator, ModelKey, DEFAULT_BUDGET};
pub use stats::{abf_from_statistic, connection_stats, proportional_prior, ConnectionStats};

use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, gaussian_log_ratio, scaled_psd_factor, scaled_psd_range};
use crate::mle::{check_model, Residualized};
use crate::prior::{ModelConfig, NuisancePriors, PriorMatrixW};

/// Per-subgroup weight between target-model and null-model covariance estimates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaVector(pub Vec<f64>);

impl AlphaVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Validation("alpha must lie in [0, 1]".into()));
        }
        Ok(AlphaVector(v))
    }
    pub fn uniform(s: usize, a: f64) -> Result<Self> {
        Self::new(vec![a; s])
    }
}

/// How a Bayes factor was obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BfMethod {
    ExactKnownSigma,
    Abf { alpha: Vec<f64> },
    OracleQuadrature,
    OracleMc,
}

/// A log10 Bayes factor together with the covariances and path used to compute it.
#[derive(Clone, Debug)]
pub struct BfResult {
    pub log10_bf: f64,
    pub method: BfMethod,
    pub sigma_check: Vec<DMatrix<f64>>,
    pub restricted: bool,
    /// Present for grid-averaged model Bayes factors.
    pub grid: Option<GridInfo>,
    /// Monte Carlo standard error of the Bayes factor itself (linear scale).
    pub std_error: Option<f64>,
    /// Estimated relative error of the Bayes factor for quadrature results.
    pub error_estimate: Option<f64>,
}

impl BfResult {
    pub(crate) fn simple(ln_bf: f64, method: BfMethod, sigma: Vec<DMatrix<f64>>, restricted: bool) -> Self {
        BfResult {
            log10_bf: ln_bf / LN_10,
            method,
            sigma_check: sigma,
            restricted,
            grid: None,
            std_error: None,
            error_estimate: None,
        }
    }

    pub fn ln_bf(&self) -> f64 {
        self.log10_bf * LN_10
    }

    /// JSON rendering used by the command-line tools.
    pub fn to_json(&self) -> serde_json::Value {
        let sig: Vec<Vec<Vec<f64>>> = self
            .sigma_check
            .iter()
            .map(|m| (0..m.nrows()).map(|a| m.row(a).iter().cloned().collect()).collect())
            .collect();
        serde_json::json!({
            "log10_bf": self.log10_bf,
            "method": self.method,
            "sigma_check": sig,
            "restricted": self.restricted,
            "grid": self.grid,
            "std_error": self.std_error,
            "error_estimate": self.error_estimate,
        })
    }
}

pub(crate) fn invert_all(sigma: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    sigma
        .iter()
        .enumerate()
        .map(|(i, s)| {
            linalg::spd_inverse(s).ok_or_else(|| Error::SingularSigma {
                subgroup: i,
                detail: "covariance is not positive definite".into(),
            })
        })
        .collect()
}

/// Natural-log Bayes factor for prior `w` and fixed covariances; scale-invariant blocks are
/// mapped to raw scale with `sigma`.
pub(crate) fn ln_bf_fixed(res: &Residualized, w: &PriorMatrixW, sigma: &[DMatrix<f64>]) -> Result<f64> {
    let cells = w.support();
    if cells.is_empty() {
        return Ok(0.0);
    }
    let sinv = invert_all(sigma)?;
    let z = res.score(&sinv, &cells);
    let m = res.precision(&sinv, &cells);
    let l = block_factor(w, &cells, sigma)?;
    gaussian_log_ratio(&z, &m, &l)
}

/// Residual standard deviations of each cell in `block`, or ones for raw-scale priors.
fn block_scale(w: &PriorMatrixW, block: &[usize], sigma: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    if !w.scale_invariant {
        return Ok(vec![1.0; block.len()]);
    }
    if sigma.len() != w.layout.s {
        return Err(Error::Dimension("one covariance per subgroup is required".into()));
    }
    block
        .iter()
        .map(|&f| {
            let (i, _, k) = w.layout.locate(f);
            let v = sigma[i][(k, k)];
            if v > 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::Numerical(format!("nonpositive residual variance in subgroup {i}")))
            }
        })
        .collect()
}

/// Stacks per-block factors `L_b L_b' = W_b` into one matrix over `cells`.
fn block_factor(w: &PriorMatrixW, cells: &[usize], sigma: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let factors: Vec<DMatrix<f64>> = w
        .blocks
        .iter()
        .map(|b| scaled_psd_factor(&b.values, &block_scale(w, &b.cells, sigma)?))
        .collect::<Result<_>>()?;
    let rank: usize = factors.iter().map(|f| f.ncols()).sum();
    let mut l = DMatrix::zeros(cells.len(), rank);
    let mut col = 0;
    for (b, f) in w.blocks.iter().zip(&factors) {
        for (x, flat) in b.cells.iter().enumerate() {
            let row = cells.binary_search(flat).expect("cell in support");
            for c in 0..f.ncols() {
                l[(row, col + c)] = f[(x, c)];
            }
        }
        col += f.ncols();
    }
    Ok(l)
}

fn check_prior(res: &Residualized, model: &ModelConfig, w: &PriorMatrixW) -> Result<()> {
    check_model(&res.layout, model)?;
    if w.layout != res.layout {
        return Err(Error::Dimension("prior covariance does not match the data layout".into()));
    }
    w.validate()?;
    let xi = model.xi();
    if w.support().iter().any(|&c| !xi[c]) {
        return Err(Error::Dimension("prior covariance has mass outside the model's support".into()));
    }
    Ok(())
}

/// Exact Bayes factor with known residual covariances.
pub fn exact_bf(
    res: &Residualized,
    model: &ModelConfig,
    w: &PriorMatrixW,
    sigma_known: &[DMatrix<f64>],
) -> Result<BfResult> {
    check_prior(res, model, w)?;
    if sigma_known.len() != res.s() || sigma_known.iter().any(|s| s.shape() != (res.r(), res.r())) {
        return Err(Error::Dimension("one r x r covariance per subgroup is required".into()));
    }
    let ln = ln_bf_fixed(res, w, sigma_known)?;
    Ok(BfResult::simple(ln, BfMethod::ExactKnownSigma, sigma_known.to_vec(), false))
}

/// Blends target and null covariance estimates with the inverse-Wishart prior.
pub(crate) fn shrink(
    res: &Residualized,
    sigma_hat: &[DMatrix<f64>],
    nuisance: &NuisancePriors,
    alpha: &AlphaVector,
) -> Result<Vec<DMatrix<f64>>> {
    if alpha.0.len() != res.s() {
        return Err(Error::Dimension(format!("alpha has {} entries for {} subgroups", alpha.0.len(), res.s())));
    }
    (0..res.s())
        .map(|i| {
            let a = alpha.0[i];
            let blend = &sigma_hat[i] * a + &res.sigma_tilde[i] * (1.0 - a);
            let out = if nuisance.use_limit {
                blend
            } else {
                let (n, nu) = (res.n[i] as f64, nuisance.nu[i]);
                &nuisance.h[i] * (nu / (n + nu)) + blend * (n / (n + nu))
            };
            let out = linalg::symmetrize(&out);
            if out.clone().cholesky().is_none() {
                return Err(Error::SingularSigma {
                    subgroup: i,
                    detail: "shrinkage covariance estimate is singular".into(),
                });
            }
            Ok(out)
        })
        .collect()
}

/// Shrinkage covariance estimates for `model`.
pub fn sigma_shrink(
    res: &Residualized,
    model: &ModelConfig,
    nuisance: &NuisancePriors,
    alpha: &AlphaVector,
) -> Result<Vec<DMatrix<f64>>> {
    check_model(&res.layout, model)?;
    shrink(res, &res.support_sigma(&model.active()), nuisance, alpha)
}

/// Approximate Bayes factor with the shrinkage covariance plugged in.
pub fn abf(
    res: &Residualized,
    model: &ModelConfig,
    w: &PriorMatrixW,
    nuisance: &NuisancePriors,
    alpha: &AlphaVector,
) -> Result<BfResult> {
    check_prior(res, model, w)?;
    let sigma = sigma_shrink(res, model, nuisance, alpha)?;
    abf_with_sigma(res, w, sigma, alpha, false)
}

/// Approximate Bayes factor with a caller-supplied covariance estimate.
pub fn abf_with_sigma(
    res: &Residualized,
    w: &PriorMatrixW,
    sigma: Vec<DMatrix<f64>>,
    alpha: &AlphaVector,
    restricted: bool,
) -> Result<BfResult> {
    let ln = ln_bf_fixed(res, w, &sigma)?;
    Ok(BfResult::simple(ln, BfMethod::Abf { alpha: alpha.0.clone() }, sigma, restricted))
}

/// Orthonormal basis for the range of `w` over its support, block by block.
///
/// Scale-invariant blocks are mapped to raw scale with `sigma_scale` first.
pub(crate) fn range_basis(w: &PriorMatrixW, sigma_scale: &[DMatrix<f64>]) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let cells = w.support();
    let ranges: Vec<DMatrix<f64>> = w
        .blocks
        .iter()
        .map(|b| Ok(scaled_psd_range(&b.values, &block_scale(w, &b.cells, sigma_scale)?)))
        .collect::<Result<_>>()?;
    let rank: usize = ranges.iter().map(|k| k.ncols()).sum();
    let mut basis = DMatrix::zeros(cells.len(), rank);
    let mut col = 0;
    for (b, k) in w.blocks.iter().zip(&ranges) {
        for (x, flat) in b.cells.iter().enumerate() {
            let row = cells.binary_search(flat).expect("cell in support");
            for c in 0..k.ncols() {
                basis[(row, col + c)] = k[(x, c)];
            }
        }
        col += k.ncols();
    }
    Ok((cells, basis))
}

/// Limit of the approximate Bayes factor for a singular prior covariance.
///
/// The target-model covariance MLE is replaced by the least-squares fit that keeps the
/// coefficients inside the range of `w`. For scale-invariant priors that range is taken
/// on the null-model scale, which keeps the constraint independent of the estimate it feeds.
pub fn abf_singular(
    res: &Residualized,
    model: &ModelConfig,
    w: &PriorMatrixW,
    nuisance: &NuisancePriors,
    alpha: &AlphaVector,
) -> Result<BfResult> {
    check_prior(res, model, w)?;
    if w.is_zero() {
        return Ok(BfResult::simple(
            0.0,
            BfMethod::Abf { alpha: alpha.0.clone() },
            shrink(res, &res.sigma_tilde, nuisance, alpha)?,
            true,
        ));
    }
    let (cells, basis) = range_basis(w, &res.sigma_tilde)?;
    let (_, sigma_r) = res.restricted_fit(&cells, &basis)?;
    let sigma = shrink(res, &sigma_r, nuisance, alpha)?;
    abf_with_sigma(res, w, sigma, alpha, true)
}

/// `z'` and precision used by tests that need the raw ingredients.
pub fn score_and_precision(
    res: &Residualized,
    sigma: &[DMatrix<f64>],
    cells: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sinv = invert_all(sigma)?;
    Ok((res.score(&sinv, cells), res.precision(&sinv, cells)))
}

/// Grid-averaged model Bayes factor with known residual covariances, summing every grid
/// assignment of the active covariates (at most `budget` of them).
pub fn model_bf_known_sigma(
    res: &Residualized,
    model: &ModelConfig,
    spec: &crate::prior::PriorSpec,
    sigma_known: &[DMatrix<f64>],
    budget: usize,
) -> Result<BfResult> {
    check_model(&res.layout, model)?;
    let active: Vec<usize> = model.active().iter().map(|a| a.0).collect();
    let (pts, wts) = (&spec.grid.points, &spec.grid.weights);
    let total = pts.len().checked_pow(active.len() as u32).filter(|&t| t <= budget).ok_or_else(|| {
        Error::Limit(format!("{}^{} grid assignments exceed the budget of {budget}", pts.len(), active.len()))
    })?;
    let mut acc = linalg::LogSum::default();
    let mut digits = vec![0usize; active.len()];
    let mut points = vec![(0.0, 0.0); model.p()];
    for _ in 0..total {
        let mut log_w = 0.0;
        for (&j, &d) in active.iter().zip(&digits) {
            points[j] = pts[d];
            log_w += wts[d].ln();
        }
        let mut w = crate::prior::build_w(model, &points)?;
        w.scale_invariant = spec.scale_invariant;
        acc.add(log_w + exact_bf(res, model, &w, sigma_known)?.ln_bf());
        for d in digits.iter_mut() {
            *d += 1;
            if *d < pts.len() {
                break;
            }
            *d = 0;
        }
    }
    let mut out = BfResult::simple(acc.value(), BfMethod::ExactKnownSigma, sigma_known.to_vec(), false);
    out.grid = Some(GridInfo { assignments: total, exhaustive: true, qmc_seed: None });
    Ok(out)
}

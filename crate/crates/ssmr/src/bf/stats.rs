use std::f64::consts::LN_10;

use nalgebra::DMatrix;
use serde::Serialize;

use super::invert_all;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::mle::{check_model, Residualized};
use crate::prior::{ModelConfig, PriorMatrixW, WBlock};

/// Classical statistics paired with the approximate Bayes factor.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConnectionStats {
    pub t_wald: f64,
    pub t_score: f64,
    pub bic: f64,
    pub log_lik_ratio: f64,
    /// Number of active coefficients.
    pub dim: usize,
    pub c: f64,
}

/// Wald and score statistics, the profile log-likelihood ratio and its BIC penalty.
///
/// The Wald statistic uses the generalized least-squares estimate at the target-model covariance
/// estimate. It equals the per-response least-squares estimate whenever each active covariate
/// enters every response of the subgroups it touches.
pub fn connection_stats(res: &Residualized, model: &ModelConfig, c: f64) -> Result<ConnectionStats> {
    check_model(&res.layout, model)?;
    if !(c > 0.0) {
        return Err(Error::Validation("c must be positive".into()));
    }
    let mle = res.fit(model)?;
    let xi = model.xi();
    let cells: Vec<usize> = (0..xi.len()).filter(|&a| xi[a]).collect();
    let mut llr = 0.0;
    let mut penalty = 0.0;
    for i in 0..res.s() {
        let ld = |m: &DMatrix<f64>| {
            m.clone().cholesky().map(|ch| 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
        };
        let (lt, lh) = match (ld(&res.sigma_tilde[i]), ld(&mle.sigma_hat[i])) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::SingularSigma { subgroup: i, detail: "residual covariance MLE is singular".into() })
            }
        };
        llr += res.n[i] as f64 / 2.0 * (lt - lh);
        let di = cells.iter().filter(|&&f| res.layout.locate(f).0 == i).count();
        penalty += 0.5 * di as f64 * (res.n[i] as f64).ln();
    }
    if cells.is_empty() {
        return Ok(ConnectionStats { t_wald: 0.0, t_score: 0.0, bic: llr, log_lik_ratio: llr, dim: 0, c });
    }
    let hat_inv = invert_all(&mle.sigma_hat)?;
    let m_hat = symmetrize(&res.precision(&hat_inv, &cells))
        .cholesky()
        .ok_or_else(|| Error::Numerical("V is rank-deficient on the model's support".into()))?;
    let z_hat = res.score(&hat_inv, &cells);
    let t_wald = z_hat.dot(&m_hat.solve(&z_hat));

    let til_inv = invert_all(&res.sigma_tilde)?;
    let u = res.score(&til_inv, &cells);
    let info = symmetrize(&res.precision(&til_inv, &cells));
    let ch = info
        .cholesky()
        .ok_or_else(|| Error::Numerical("score information is rank-deficient".into()))?;
    let t_score = u.dot(&ch.solve(&u));
    Ok(ConnectionStats {
        t_wald: t_wald.max(0.0),
        t_score: t_score.max(0.0),
        bic: llr - penalty,
        log_lik_ratio: llr,
        dim: cells.len(),
        c,
    })
}

/// `log10[(1+c)^{-d/2} exp(c T / (2(1+c)))]`.
pub fn abf_from_statistic(c: f64, dim: usize, t: f64) -> f64 {
    (-0.5 * dim as f64 * (1.0 + c).ln() + 0.5 * c / (1.0 + c) * t) / LN_10
}

/// Raw-scale prior `W = c V` on the model's support, with `V` the sampling covariance
/// of the coefficients under the covariances `sigma`.
pub fn proportional_prior(
    res: &Residualized,
    model: &ModelConfig,
    c: f64,
    sigma: &[DMatrix<f64>],
) -> Result<PriorMatrixW> {
    check_model(&res.layout, model)?;
    let xi = model.xi();
    let cells: Vec<usize> = (0..xi.len()).filter(|&a| xi[a]).collect();
    if cells.is_empty() {
        return Ok(PriorMatrixW::zero(res.layout));
    }
    let sinv = invert_all(sigma)?;
    let m = symmetrize(&res.precision(&sinv, &cells));
    let v = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("V is rank-deficient on the model's support".into()))?
        .inverse();
    PriorMatrixW::from_blocks(res.layout, vec![WBlock { cells, values: symmetrize(&v) * c }], false)
}

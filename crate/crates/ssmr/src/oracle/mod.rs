//! Reference computations used to validate the Bayes factor engine and the model search.
//!
//! Everything here is deliberately naive: projections come from a fresh QR of the controls,
//! factorizations from library eigen/Cholesky routines, and integrals from nested adaptive
//! Gauss-Kronrod quadrature. Nothing is shared with [`crate::bf`] beyond matrix products.

pub mod quadrature;

use std::f64::consts::LN_10;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bf::{abf, model_bf, AlphaVector, DEFAULT_BUDGET, BfMethod, BfResult};
use crate::data::SsmrData;
use crate::error::{Error, Result};
use crate::mle::Residualized;
use crate::sim::ValidationFamily;
use crate::prior::{Config, ModelConfig, NuisancePriors, PriorMatrixW, PriorSpec};

use quadrature::{integrate_line, integrate_nested, Integral};

/// Relative accuracy demanded of every marginal-likelihood integral.
pub const QUAD_TOL: f64 = 1e-6;

/// Width of the real-line map in units of the posterior standard deviation. Wide maps pack the
/// Gauss-Kronrod nodes near the mode, which the adaptive bisection then refines.
const MAP_WIDTH: f64 = 5.0;

struct Projected {
    g: Vec<DMatrix<f64>>,
    y: Vec<DMatrix<f64>>,
}

fn project(data: &SsmrData) -> Projected {
    let mut g = Vec::new();
    let mut y = Vec::new();
    for sub in &data.subgroups {
        let q = sub.xc.clone().qr().q();
        let strip = |m: &DMatrix<f64>| m - &q * (q.transpose() * m);
        g.push(strip(&sub.xg));
        y.push(strip(&sub.y));
    }
    Projected { g, y }
}

fn result(ln_bf: f64, method: BfMethod, sigma: Vec<DMatrix<f64>>) -> BfResult {
    BfResult {
        log10_bf: ln_bf / LN_10,
        method,
        sigma_check: sigma,
        restricted: false,
        grid: None,
        std_error: None,
        error_estimate: None,
    }
}

/// Eigen square root `L` with `L L' = w`, dropping directions with negligible eigenvalues.
fn sqrt_factor(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = w.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..w.nrows()).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
    DMatrix::from_fn(w.nrows(), keep.len(), |a, c| eig.eigenvectors[(a, keep[c])] * eig.eigenvalues[keep[c]].sqrt())
}

fn check_inputs(data: &SsmrData, model: &ModelConfig, w: &PriorMatrixW) -> Result<Vec<usize>> {
    if model.layout() != data.layout() || w.layout != data.layout() {
        return Err(Error::Dimension("model, prior and data dimensions disagree".into()));
    }
    let xi = model.xi();
    let support = w.support();
    if support.iter().any(|&c| !xi[c]) {
        return Err(Error::Dimension("prior covariance has mass outside the model's support".into()));
    }
    Ok(support)
}

/// Known-covariance score vector and precision on the given flat cells.
fn score_precision(data: &SsmrData, pr: &Projected, sigma: &[DMatrix<f64>], cells: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let layout = data.layout();
    let mut sinv = Vec::new();
    for (i, s) in sigma.iter().enumerate() {
        sinv.push(s.clone().try_inverse().ok_or_else(|| Error::SingularSigma {
            subgroup: i,
            detail: "known covariance is singular".into(),
        })?);
    }
    let loc: Vec<(usize, usize, usize)> = cells.iter().map(|&c| layout.locate(c)).collect();
    let z = DVector::from_fn(cells.len(), |a, _| {
        let (i, j, k) = loc[a];
        let gy = pr.g[i].column(j).transpose() * &pr.y[i];
        (0..layout.r).map(|m| sinv[i][(k, m)] * gy[m]).sum()
    });
    let m = DMatrix::from_fn(cells.len(), cells.len(), |a, b| {
        let (i, j, k) = loc[a];
        let (i2, j2, k2) = loc[b];
        if i != i2 {
            0.0
        } else {
            pr.g[i].column(j).dot(&pr.g[i].column(j2)) * sinv[i][(k, k2)]
        }
    });
    Ok((z, m))
}

fn raw_w(w: &PriorMatrixW, cells: &[usize], sigma: Option<&[DMatrix<f64>]>) -> DMatrix<f64> {
    let dense = w.to_dense();
    let layout = w.layout;
    let sd = |c: usize| match (sigma, w.scale_invariant) {
        (Some(s), true) => {
            let (i, _, k) = layout.locate(c);
            s[i][(k, k)].sqrt()
        }
        _ => 1.0,
    };
    DMatrix::from_fn(cells.len(), cells.len(), |a, b| dense[(cells[a], cells[b])] * sd(cells[a]) * sd(cells[b]))
}

/// Bayes factor with known covariances, integrating the likelihood ratio over the prior by
/// nested quadrature in whitened coordinates. Practical for prior ranks up to three.
pub fn quadrature_bf_known_sigma(
    data: &SsmrData,
    model: &ModelConfig,
    w: &PriorMatrixW,
    sigma_known: &[DMatrix<f64>],
) -> Result<BfResult> {
    let cells = check_inputs(data, model, w)?;
    if cells.is_empty() || w.is_zero() {
        let mut out = result(0.0, BfMethod::OracleQuadrature, sigma_known.to_vec());
        out.error_estimate = Some(0.0);
        return Ok(out);
    }
    let pr = project(data);
    let (z, m) = score_precision(data, &pr, sigma_known, &cells)?;
    let l = sqrt_factor(&raw_w(w, &cells, Some(sigma_known)));
    let d = l.ncols();
    if d > 3 {
        return Err(Error::Limit(format!("prior rank {d} is too large for nested quadrature")));
    }
    let c = l.transpose() * z;
    let a = DMatrix::identity(d, d) + l.transpose() * m * &l;
    let a_inv = a.clone().try_inverse().ok_or_else(|| Error::Numerical("posterior precision is singular".into()))?;
    let mode = &a_inv * &c;
    let peak = 0.5 * c.dot(&mode);
    let f = |e: &[f64]| {
        let e = DVector::from_column_slice(e);
        (e.dot(&c) - 0.5 * (e.transpose() * &a * &e)[0] - peak).exp()
    };
    let scales: Vec<f64> = (0..d).map(|i| 1.5 * a_inv[(i, i)].sqrt()).collect();
    let it = integrate_nested(&f, mode.as_slice(), &scales, 0.1 * QUAD_TOL);
    let rel = accept(&it)?;
    let ln = peak + it.value.ln() - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut out = result(ln, BfMethod::OracleQuadrature, sigma_known.to_vec());
    out.error_estimate = Some(rel);
    Ok(out)
}

fn accept(it: &Integral) -> Result<f64> {
    let rel = it.error / it.value.abs();
    if !it.converged || !(rel <= QUAD_TOL) || !(it.value > 0.0) {
        return Err(Error::Numerical(format!(
            "quadrature did not converge: achieved relative error {rel:.3e}, target {QUAD_TOL:.0e}"
        )));
    }
    Ok(rel)
}

/// Bayes factor of a single-response model with unknown residual variances, integrating
/// the marginal likelihood over each log precision by nested adaptive quadrature.
pub fn quadrature_bf(
    data: &SsmrData,
    model: &ModelConfig,
    w: &PriorMatrixW,
    nuisance: &NuisancePriors,
) -> Result<BfResult> {
    let s = data.s();
    if data.r() != 1 {
        return Err(Error::Validation("quadrature oracle needs a single response".into()));
    }
    if s > 4 {
        return Err(Error::Limit(format!("quadrature oracle supports at most 4 subgroups, got {s}")));
    }
    let cells = check_inputs(data, model, w)?;
    let pr = project(data);
    // Shape and rate of each precision after the controls are integrated out.
    let mut shape = Vec::new();
    let mut rate = Vec::new();
    for i in 0..s {
        let n = data.subgroups[i].n() as f64;
        let rss = pr.y[i].norm_squared();
        let (nu, h) = if nuisance.use_limit { (0.0, 0.0) } else { (nuisance.nu[i], nuisance.h[i][(0, 0)]) };
        // One extra power for the log-precision Jacobian.
        shape.push((n + nu) / 2.0 + 1.0);
        rate.push((rss + h) / 2.0);
    }
    let null_peak: Vec<f64> = (0..s).map(|i| (shape[i] / rate[i]).ln()).collect();

    // Null marginal: a product of one-dimensional integrals.
    let mut ln_null = 0.0;
    let mut rel_err = 0.0;
    for i in 0..s {
        let c = null_peak[i];
        let top = shape[i] * c - shape[i];
        let mut f = |x: f64| (shape[i] * x - x.exp() * rate[i] - top).exp();
        let it = integrate_line(&mut f, c, 1.5 / shape[i].sqrt(), 0.0, 0.1 * QUAD_TOL);
        rel_err += accept(&it)?;
        ln_null += top + it.value.ln();
    }
    if cells.is_empty() || w.is_zero() {
        let mut out = result(0.0, BfMethod::OracleQuadrature, Vec::new());
        out.error_estimate = Some(0.0);
        return Ok(out);
    }

    let layout = data.layout();
    let subgroup_of: Vec<usize> = cells.iter().map(|&c| layout.locate(c).0).collect();
    let covariate_of: Vec<usize> = cells.iter().map(|&c| layout.locate(c).1).collect();
    let d = cells.len();
    let gram = DMatrix::from_fn(d, d, |a, b| {
        if subgroup_of[a] != subgroup_of[b] {
            0.0
        } else {
            let i = subgroup_of[a];
            pr.g[i].column(covariate_of[a]).dot(&pr.g[i].column(covariate_of[b]))
        }
    });
    let gy = DVector::from_fn(d, |a, _| pr.g[subgroup_of[a]].column(covariate_of[a]).dot(&pr.y[subgroup_of[a]].column(0)));

    let (shape_c, rate_c) = (shape.clone(), rate.clone());
    let base = move |x: &[f64]| -> f64 { (0..s).map(|i| shape_c[i] * x[i] - x[i].exp() * rate_c[i]).sum() };
    let log_f: Box<dyn Fn(&[f64]) -> f64> = if w.scale_invariant {
        // The whitened precision does not depend on the variances; only the score scales.
        let l = sqrt_factor(&raw_w(w, &cells, None));
        let b = DMatrix::identity(l.ncols(), l.ncols()) + l.transpose() * &gram * &l;
        let chol = b.clone().cholesky().ok_or_else(|| Error::Numerical("I + L'ML is not positive definite".into()))?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cs: Vec<DVector<f64>> = (0..s)
            .map(|i| {
                let part = DVector::from_fn(d, |a, _| if subgroup_of[a] == i { gy[a] } else { 0.0 });
                l.transpose() * part
            })
            .collect();
        let q = DMatrix::from_fn(s, s, |i, k| cs[i].dot(&chol.solve(&cs[k])));
        Box::new(move |x: &[f64]| {
            let mut u = [0.0; 4];
            let mut total = -0.5 * logdet;
            for i in 0..s {
                u[i] = (0.5 * x[i]).exp();
                let mut row = 0.5 * q[(i, i)] * u[i] - rate[i] * u[i];
                for k in 0..i {
                    row += q[(i, k)] * u[k];
                }
                total += row * u[i] + shape[i] * x[i];
            }
            total
        })
    } else {
        let l = sqrt_factor(&raw_w(w, &cells, None));
        let subgroup_of = subgroup_of.clone();
        Box::new(move |x: &[f64]| {
            let tau: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let scaled = DMatrix::from_fn(d, d, |a, b| gram[(a, b)] * tau[subgroup_of[a]]);
            let b = DMatrix::identity(l.ncols(), l.ncols()) + l.transpose() * scaled * &l;
            let z = DVector::from_fn(d, |a, _| gy[a] * tau[subgroup_of[a]]);
            let c = l.transpose() * z;
            match b.cholesky() {
                Some(ch) => {
                    let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    0.5 * c.dot(&ch.solve(&c)) - 0.5 * logdet
                }
                None => f64::NEG_INFINITY,
            }
            .max(f64::MIN)
                + base(x)
        })
    };
    let (mode, curv) = maximize(&log_f, &null_peak);
    let top = log_f(&mode);
    let f = |x: &[f64]| finite_exp(log_f(x) - top);
    let scales: Vec<f64> = curv.iter().map(|h| MAP_WIDTH / h.max(1e-8).sqrt()).collect();
    let it = integrate_nested(&f, &mode, &scales, 0.5 * QUAD_TOL);
    rel_err += accept(&it)?;
    let ln_alt = top + it.value.ln();
    let mut out = result(ln_alt - ln_null, BfMethod::OracleQuadrature, Vec::new());
    out.error_estimate = Some(rel_err);
    Ok(out)
}

fn finite_exp(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.exp()
    }
}

/// Damped Newton ascent with finite-difference derivatives; returns the mode and the
/// negated Hessian diagonal there.
fn maximize(f: &dyn Fn(&[f64]) -> f64, start: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = start.len();
    let h = 1e-4;
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let hessian = |x: &[f64], fx: f64| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(d);
        let mut hm = DMatrix::zeros(d, d);
        let mut y = x.to_vec();
        for i in 0..d {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
            hm[(i, i)] = (fp - 2.0 * fx + fm) / (h * h);
            for k in 0..i {
                let mut t = x.to_vec();
                let mut corner = |a: f64, b: f64| {
                    t[i] = x[i] + a;
                    t[k] = x[k] + b;
                    f(&t)
                };
                let v = (corner(h, h) - corner(h, -h) - corner(-h, h) + corner(-h, -h)) / (4.0 * h * h);
                hm[(i, k)] = v;
                hm[(k, i)] = v;
            }
        }
        (g, hm)
    };
    for _ in 0..100 {
        let (g, hm) = hessian(&x, fx);
        let neg = -hm;
        let step = match neg.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.map(|v| v * 0.1),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-6 {
            let y: Vec<f64> = (0..d).map(|i| x[i] + t * step[i]).collect();
            let fy = f(&y);
            if fy > fx {
                x = y;
                fx = fy;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.norm() * t < 1e-10 {
            break;
        }
    }
    let (_, hm) = hessian(&x, fx);
    let curv = (0..d).map(|i| -hm[(i, i)]).collect();
    (x, curv)
}

/// Monte Carlo estimate of a known-covariance Bayes factor: the likelihood ratio averaged
/// over draws of the coefficients from their prior.
pub fn mc_bf(
    data: &SsmrData,
    model: &ModelConfig,
    w: &PriorMatrixW,
    sigma_known: &[DMatrix<f64>],
    draws: usize,
    seed: u64,
) -> Result<BfResult> {
    let cells = check_inputs(data, model, w)?;
    let mut out = result(0.0, BfMethod::OracleMc, sigma_known.to_vec());
    if cells.is_empty() || w.is_zero() {
        out.std_error = Some(0.0);
        return Ok(out);
    }
    let pr = project(data);
    let (z, m) = score_precision(data, &pr, sigma_known, &cells)?;
    let l = sqrt_factor(&raw_w(w, &cells, Some(sigma_known)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logs: Vec<f64> = (0..draws.max(1))
        .map(|_| {
            let e = DVector::from_fn(l.ncols(), |_, _| StandardNormal.sample(&mut rng));
            let beta = &l * e;
            beta.dot(&z) - 0.5 * (beta.transpose() * &m * &beta)[0]
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vals: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    out.log10_bf = (top + mean.ln()) / LN_10;
    out.std_error = Some(top.exp() * (var / n).sqrt());
    Ok(out)
}

/// Exact posterior over every model, computed by a plain loop over all skeletons.
#[derive(Clone, Debug)]
pub struct BruteTable {
    pub configs: Vec<Config>,
    /// `pip[j][c]`: posterior probability that covariate `j` takes `configs[c]`.
    pub pip: Vec<Vec<f64>>,
    /// Every model's per-covariate configurations with its posterior probability.
    pub models: Vec<(Vec<Config>, f64)>,
}

impl BruteTable {
    /// Index of the most probable model.
    pub fn argmax(&self) -> usize {
        (0..self.models.len()).max_by(|&a, &b| self.models[a].1.total_cmp(&self.models[b].1)).unwrap_or(0)
    }
}

/// Exact posterior over every model by direct enumeration (at most 2^16 models).
pub fn brute_posterior(data: &SsmrData, spec: &PriorSpec, alpha: &AlphaVector) -> Result<BruteTable> {
    let (s, r, p) = (data.s(), data.r(), data.p());
    let space = spec.model_prior.space();
    let configs = space.configs.clone();
    let nc = configs.len();
    let total = (nc as f64).powi(p as i32);
    if total > 65536.0 {
        return Err(Error::Limit(format!("{total} models exceed the brute-force limit of 65536")));
    }
    let res = Arc::new(Residualized::new(data)?);
    let mut digits = vec![0usize; p];
    let mut models = Vec::new();
    let mut logs = Vec::new();
    loop {
        let gammas: Vec<Config> = digits.iter().map(|&d| configs[d]).collect();
        let model = ModelConfig::new(gammas.clone(), s, r)?;
        let mut lp = 0.0;
        for &g in &gammas {
            lp += spec.model_prior.log_prob(g)?;
        }
        let bf = model_bf(res.clone(), &model, spec, alpha, DEFAULT_BUDGET)?;
        logs.push(lp + bf.ln_bf());
        models.push(gammas);
        // Odometer increment.
        let mut pos = 0;
        while pos < p {
            digits[pos] += 1;
            if digits[pos] < nc {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == p {
            break;
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|v| (v - top).exp()).sum();
    let probs: Vec<f64> = logs.iter().map(|v| (v - top).exp() / z).collect();
    let mut pip = vec![vec![0.0; nc]; p];
    for (gammas, &pr) in models.iter().zip(&probs) {
        for (j, g) in gammas.iter().enumerate() {
            let c = configs.iter().position(|x| x == g).expect("config in space");
            pip[j][c] += pr;
        }
    }
    Ok(BruteTable { configs, pip, models: models.into_iter().zip(probs).collect() })
}

/// Approximate and reference Bayes factors of one validation replicate.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ValidationRow {
    pub instance: u64,
    /// `log10 ABF` for each requested `alpha`, in order.
    pub log10_abf: Vec<f64>,
    pub log10_oracle: f64,
    pub oracle_error: f64,
}

/// Scores replicates `first..first + count` of a validation family against the quadrature oracle.
pub fn validate_family(family: &ValidationFamily, first: u64, count: u64, alphas: &[f64]) -> Result<Vec<ValidationRow>> {
    use rayon::prelude::*;
    (first..first + count)
        .into_par_iter()
        .map(|rep| {
            let (data, model, w) = family.instance(rep)?;
            let nuisance = NuisancePriors::limit(data.s(), 1);
            let res = Residualized::new(&data)?;
            let log10_abf = alphas
                .iter()
                .map(|&a| abf(&res, &model, &w, &nuisance, &AlphaVector::uniform(data.s(), a)?).map(|b| b.log10_bf))
                .collect::<Result<Vec<_>>>()?;
            let q = quadrature_bf(&data, &model, &w, &nuisance)?;
            Ok(ValidationRow {
                instance: rep,
                log10_abf,
                log10_oracle: q.log10_bf,
                oracle_error: q.error_estimate.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Validation rows rendered as TSV with one ABF column per `alpha`.
pub fn validation_tsv(rows: &[ValidationRow], alphas: &[f64]) -> String {
    let mut out = String::from("instance");
    for a in alphas {
        out.push_str(&format!("\tlog10_abf_alpha_{a}"));
    }
    out.push_str("\tlog10_oracle\toracle_rel_error\n");
    for r in rows {
        out.push_str(&r.instance.to_string());
        for v in &r.log10_abf {
            out.push_str(&format!("\t{v}"));
        }
        out.push_str(&format!("\t{}\t{}\n", r.log10_oracle, r.oracle_error));
    }
    out
}

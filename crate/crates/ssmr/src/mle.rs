//! Residualization against the controls and least-squares fits under a model skeleton.
//!
//! Everything is expressed through `G_i = (I - P_Xc) Xg_i` and `Y~_i = (I - P_Xc) Y_i`,
//! so rank-deficient designs go through truncated SVDs and never through a matrix inverse.

use nalgebra::{DMatrix, DVector};

use crate::data::{CoefficientLayout, SsmrData, SubgroupData};
use crate::error::{Error, Result};
use crate::linalg::{self, column_basis, lstsq, symmetrize};
use crate::prior::{Config, ModelConfig};

/// Projects `xg` onto the orthogonal complement of the column space of `xc`.
pub fn residualize(sub: &SubgroupData) -> Result<DMatrix<f64>> {
    if sub.xg.iter().chain(sub.xc.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite entries in design".into()));
    }
    Ok(project_out(&sub.xc, &sub.xg))
}

fn project_out(xc: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = column_basis(xc, xc.nrows().max(xc.ncols()));
    x - &basis * (basis.transpose() * x)
}

/// Per-dataset cache of residualized quantities and the null-model covariance MLEs.
#[derive(Clone, Debug)]
pub struct Residualized {
    pub layout: CoefficientLayout,
    pub n: Vec<usize>,
    pub q: Vec<usize>,
    pub g: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    /// `G_i' Y~_i`, p x r.
    pub gty: Vec<DMatrix<f64>>,
    pub sigma_tilde: Vec<DMatrix<f64>>,
}

impl Residualized {
    pub fn new(data: &SsmrData) -> Result<Self> {
        let layout = data.layout();
        let mut out = Residualized {
            layout,
            n: vec![],
            q: vec![],
            g: vec![],
            y: vec![],
            gty: vec![],
            sigma_tilde: vec![],
        };
        for (i, sg) in data.subgroups.iter().enumerate() {
            let (n, q) = (sg.n(), sg.q());
            if n < q + 1 {
                return Err(Error::Degenerate {
                    subgroup: i,
                    detail: format!("n={n} is below q+1={}", q + 1),
                });
            }
            let basis = column_basis(&sg.xc, n.max(q));
            let g = &sg.xg - &basis * (basis.transpose() * &sg.xg);
            let y = &sg.y - &basis * (basis.transpose() * &sg.y);
            out.gty.push(g.transpose() * &y);
            out.sigma_tilde.push(symmetrize(&(y.transpose() * &y)) / n as f64);
            out.g.push(g);
            out.y.push(y);
            out.n.push(n);
            out.q.push(q);
        }
        Ok(out)
    }

    pub fn s(&self) -> usize {
        self.layout.s
    }
    pub fn r(&self) -> usize {
        self.layout.r
    }
    pub fn p(&self) -> usize {
        self.layout.p
    }

    /// Covariates entering response `k` of subgroup `i`.
    fn response_set(&self, active: &[(usize, Config)], i: usize, k: usize) -> Vec<usize> {
        let bit = i * self.r() + k;
        active.iter().filter(|(_, g)| g >> bit & 1 == 1).map(|&(j, _)| j).collect()
    }

    fn columns(&self, i: usize, set: &[usize]) -> DMatrix<f64> {
        let g = &self.g[i];
        DMatrix::from_fn(g.nrows(), set.len(), |t, c| g[(t, set[c])])
    }

    /// Residual covariance MLEs when each response is fit on its own active covariates.
    pub fn support_sigma(&self, active: &[(usize, Config)]) -> Vec<DMatrix<f64>> {
        let r = self.r();
        (0..self.s())
            .map(|i| {
                let n = self.n[i];
                let mut resid = self.y[i].clone();
                let sets: Vec<Vec<usize>> = (0..r).map(|k| self.response_set(active, i, k)).collect();
                let mut done = vec![false; r];
                for k in 0..r {
                    if done[k] || sets[k].is_empty() {
                        continue;
                    }
                    let basis = column_basis(&self.columns(i, &sets[k]), n.max(self.p()));
                    for k2 in k..r {
                        if !done[k2] && sets[k2] == sets[k] {
                            let yk = self.y[i].column(k2);
                            let fit = &basis * (basis.transpose() * yk);
                            resid.set_column(k2, &(yk - fit));
                            done[k2] = true;
                        }
                    }
                }
                symmetrize(&(resid.transpose() * &resid)) / n as f64
            })
            .collect()
    }

    /// Least squares with the coefficients on `cells` (flat indices) confined to the column
    /// span of `basis`; every other coefficient is zero.
    ///
    /// Returns the fitted coefficients on `cells` and the per-subgroup residual covariances.
    pub fn restricted_fit(
        &self,
        cells: &[usize],
        basis: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        if basis.nrows() != cells.len() {
            return Err(Error::Dimension("basis rows must match the constrained cells".into()));
        }
        let r = self.r();
        let offsets: Vec<usize> = self
            .n
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n * r;
                Some(o)
            })
            .collect();
        let rows: usize = self.n.iter().map(|n| n * r).sum();
        let rank = basis.ncols();
        let mut d = DMatrix::zeros(rows, rank);
        for (c, &flat) in cells.iter().enumerate() {
            let (i, j, k) = self.layout.locate(flat);
            let n = self.n[i];
            let base = offsets[i] + k * n;
            for tau in 0..rank {
                let kv = basis[(c, tau)];
                if kv == 0.0 {
                    continue;
                }
                for t in 0..n {
                    d[(base + t, tau)] += self.g[i][(t, j)] * kv;
                }
            }
        }
        let mut yv = DMatrix::zeros(rows, 1);
        for i in 0..self.s() {
            for k in 0..r {
                for t in 0..self.n[i] {
                    yv[(offsets[i] + k * self.n[i] + t, 0)] = self.y[i][(t, k)];
                }
            }
        }
        let theta = lstsq(&d, &yv, rows.max(rank));
        let resid = &yv - &d * &theta;
        let sigma = (0..self.s())
            .map(|i| {
                let n = self.n[i];
                let e = DMatrix::from_fn(n, r, |t, k| resid[(offsets[i] + k * n + t, 0)]);
                symmetrize(&(e.transpose() * &e)) / n as f64
            })
            .collect();
        let beta = basis * theta.column(0);
        Ok((beta, sigma))
    }

    /// Full least-squares fit of the model, including the coefficient vector.
    pub fn fit(&self, model: &ModelConfig) -> Result<MleResult> {
        check_model(&self.layout, model)?;
        let active = model.active();
        let mut beta = DVector::zeros(self.layout.len());
        for i in 0..self.s() {
            for k in 0..self.r() {
                let set = self.response_set(&active, i, k);
                if set.is_empty() {
                    continue;
                }
                let yk = DMatrix::from_column_slice(self.n[i], 1, self.y[i].column(k).as_slice());
                let b = lstsq(&self.columns(i, &set), &yk, self.n[i].max(self.p()));
                for (c, &j) in set.iter().enumerate() {
                    beta[self.layout.index(i, j, k)] = b[(c, 0)];
                }
            }
        }
        Ok(MleResult {
            layout: self.layout,
            beta_g_hat: beta,
            sigma_hat: self.support_sigma(&active),
            sigma_tilde: self.sigma_tilde.clone(),
            gram: self.g.iter().map(|g| symmetrize(&(g.transpose() * g))).collect(),
        })
    }

    /// `z = V^{-1} beta_hat` restricted to `cells`, i.e. entries of `vec(Sigma_i^{-1} Y~_i' G_i)`.
    pub(crate) fn score(&self, sigma_inv: &[DMatrix<f64>], cells: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            cells.len(),
            cells.iter().map(|&f| {
                let (i, j, k) = self.layout.locate(f);
                (0..self.r()).map(|l| sigma_inv[i][(k, l)] * self.gty[i][(j, l)]).sum::<f64>()
            }),
        )
    }

    /// Rows and columns of `V^{-1} = (+)_i (G_i'G_i (x) Sigma_i^{-1})` on `cells`.
    pub(crate) fn precision(&self, sigma_inv: &[DMatrix<f64>], cells: &[usize]) -> DMatrix<f64> {
        let loc: Vec<(usize, usize, usize)> = cells.iter().map(|&f| self.layout.locate(f)).collect();
        let d = cells.len();
        let mut m = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let (i, j, k) = loc[a];
                let (i2, j2, k2) = loc[b];
                if i != i2 {
                    continue;
                }
                let gg = self.g[i].column(j).dot(&self.g[i].column(j2));
                let v = gg * sigma_inv[i][(k, k2)];
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }
}

pub(crate) fn check_model(layout: &CoefficientLayout, model: &ModelConfig) -> Result<()> {
    if model.layout() != *layout {
        return Err(Error::Dimension(format!(
            "model has (s={}, p={}, r={}) but data has (s={}, p={}, r={})",
            model.s,
            model.p(),
            model.r,
            layout.s,
            layout.p,
            layout.r
        )));
    }
    Ok(())
}

/// Least-squares estimates under a model skeleton plus the null-model covariance MLEs.
#[derive(Clone, Debug)]
pub struct MleResult {
    pub layout: CoefficientLayout,
    /// Coefficients in flat layout order; exactly zero outside the model's support.
    pub beta_g_hat: DVector<f64>,
    pub sigma_hat: Vec<DMatrix<f64>>,
    pub sigma_tilde: Vec<DMatrix<f64>>,
    /// `G_i' G_i` per subgroup.
    pub gram: Vec<DMatrix<f64>>,
}

/// Residualizes the data and fits `model` by per-response minimum-norm least squares.
pub fn fit_mle(data: &SsmrData, model: &ModelConfig) -> Result<MleResult> {
    Residualized::new(data)?.fit(model)
}

/// Applies `(+)_i (G_i'G_i (x) Sigma_i^{-1})` to `v` one subgroup block at a time.
pub fn vg_inverse_times(mle: &MleResult, sigma: &[DMatrix<f64>], v: &DVector<f64>) -> Result<DVector<f64>> {
    let l = mle.layout;
    if v.len() != l.len() || sigma.len() != l.s {
        return Err(Error::Dimension("vector or covariance list does not match the layout".into()));
    }
    let mut out = DVector::zeros(l.len());
    for i in 0..l.s {
        let sinv = linalg::spd_inverse(&sigma[i]).ok_or_else(|| Error::SingularSigma {
            subgroup: i,
            detail: "not positive definite".into(),
        })?;
        // Block i of v is vec(B'), an r x p matrix stored column-major.
        let off = i * l.p * l.r;
        let bt = DMatrix::from_column_slice(l.r, l.p, &v.as_slice()[off..off + l.p * l.r]);
        let res = sinv * bt * &mle.gram[i];
        out.as_mut_slice()[off..off + l.p * l.r].copy_from_slice(res.as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn centering_and_span_annihilation() {
        let v = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 6.0, 2.0, 2.0, 2.0, 2.0]);
        let sub = SubgroupData::with_intercept(DMatrix::zeros(4, 1), v.clone()).unwrap();
        let g = residualize(&sub).unwrap();
        for t in 0..4 {
            assert!((g[(t, 0)] - (v[(t, 0)] - 3.0)).abs() < 1e-12);
            assert!(g[(t, 1)].abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xc = random(&mut rng, 15, 3);
        xc.column_mut(0).fill(1.0);
        let xg = random(&mut rng, 15, 4);
        let g = residualize(&SubgroupData::new(DMatrix::zeros(15, 1), xc.clone(), xg).unwrap()).unwrap();
        let g2 = residualize(&SubgroupData::new(DMatrix::zeros(15, 1), xc, g.clone()).unwrap()).unwrap();
        assert!((g - g2).abs().max() < 1e-12);
    }

    #[test]
    fn vg_identity_map() {
        let mle = MleResult {
            layout: CoefficientLayout { s: 1, p: 2, r: 2 },
            beta_g_hat: DVector::zeros(4),
            sigma_hat: vec![],
            sigma_tilde: vec![],
            gram: vec![DMatrix::identity(2, 2)],
        };
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let out = vg_inverse_times(&mle, &[DMatrix::identity(2, 2)], &v).unwrap();
        assert_eq!(out, v);
        assert!(matches!(
            vg_inverse_times(&mle, &[DMatrix::zeros(2, 2)], &v),
            Err(Error::SingularSigma { subgroup: 0, .. })
        ));
    }

    #[test]
    fn degenerate_fit_rejected() {
        let sub = SubgroupData::with_intercept(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let data = SsmrData::new(vec![sub]).unwrap();
        assert!(matches!(Residualized::new(&data), Err(Error::Degenerate { .. })));
    }
}

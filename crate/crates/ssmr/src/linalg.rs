//! Small dense linear-algebra helpers shared by the fitting and Bayes-factor code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff multiplier used for every pseudoinverse.
pub const PINV_RTOL: f64 = 1e-10;
/// Relative eigenvalue floor for positive semidefinite checks and rank decisions.
pub const PSD_RTOL: f64 = 1e-10;

/// Returns `(a + a') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Orthonormal basis for the column space of `x`, dropping directions whose singular
/// value falls below `smax * PINV_RTOL * scale`.
pub fn column_basis(x: &DMatrix<f64>, scale: usize) -> DMatrix<f64> {
    let (n, m) = x.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = smax * PINV_RTOL * scale as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > cut)
        .collect();
    DMatrix::from_fn(n, keep.len(), |r, c| u[(r, keep[c])])
}

/// Minimum-norm least-squares solution of `a x = b` through a truncated SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: usize) -> DMatrix<f64> {
    let (n, m) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(m, b.ncols());
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cut = smax * PINV_RTOL * scale as f64;
    let mut utb = u.transpose() * b;
    for i in 0..sv.len() {
        let f = if smax > 0.0 && sv[i] > cut { 1.0 / sv[i] } else { 0.0 };
        utb.row_mut(i).scale_mut(f);
    }
    vt.transpose() * utb
}

/// Factor a symmetric positive semidefinite matrix as `L L'` with `L` of full column rank.
///
/// Fails when an eigenvalue is more negative than the relative floor.
pub fn psd_factor(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(w));
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = PSD_RTOL * norm;
    if eig.eigenvalues.iter().any(|&v| v < -floor) {
        return Err(Error::Validation(format!(
            "prior covariance is not positive semidefinite (min eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| norm > 0.0 && eig.eigenvalues[i] > floor).collect();
    Ok(DMatrix::from_fn(n, keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] * eig.eigenvalues[keep[c]].sqrt()
    }))
}

/// Factor of `D U D` with `D = diag(scale)`, taken on `U` so the rank decision ignores units.
pub fn scaled_psd_factor(u: &DMatrix<f64>, scale: &[f64]) -> Result<DMatrix<f64>> {
    let mut l = psd_factor(u)?;
    for (x, &sd) in scale.iter().enumerate() {
        l.row_mut(x).scale_mut(sd);
    }
    Ok(l)
}

/// Orthonormal basis of the range of `D U D`, found on `U` and then mapped through `D`.
pub fn scaled_psd_range(u: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut k = psd_range(u);
    if k.ncols() == 0 {
        return k;
    }
    for (x, &sd) in scale.iter().enumerate() {
        k.row_mut(x).scale_mut(sd);
    }
    k.qr().q()
}

/// Orthonormal basis of the range of a symmetric PSD matrix (eigenvectors above the floor).
pub fn psd_range(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(w));
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> =
        (0..n).filter(|&i| norm > 0.0 && eig.eigenvalues[i] > PSD_RTOL * norm).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// Inverse of a symmetric positive definite matrix, or `None` when the Cholesky fails.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = symmetrize(a).cholesky()?;
    Some(symmetrize(&ch.inverse()))
}

/// `ln |I + L'ML|^{-1/2} + c'(I + L'ML)^{-1}c / 2` with `c = L'z`.
pub fn gaussian_log_ratio(z: &DVector<f64>, m: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    let d = l.ncols();
    if d == 0 {
        return Ok(0.0);
    }
    let lt = l.transpose();
    let mut b = &lt * m * l;
    for i in 0..d {
        b[(i, i)] += 1.0;
    }
    let c = &lt * z;
    let ch = symmetrize(&b)
        .cholesky()
        .ok_or_else(|| Error::Numerical("I + L'ML is not positive definite".into()))?;
    let logdet: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let sol = ch.solve(&c);
    Ok(-0.5 * logdet + 0.5 * c.dot(&sol))
}

/// In-place Cholesky of a row-major `d x d` buffer (lower triangle used).
///
/// Returns the log-determinant, or `None` if a pivot is not positive.
#[inline]
pub fn chol_flat(a: &mut [f64], d: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        logdet += 2.0 * l.ln();
        let inv = 1.0 / l;
        for i in j + 1..d {
            let mut t = a[i * d + j];
            for k in 0..j {
                t -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = t * inv;
        }
    }
    Some(logdet)
}

/// Given the flat Cholesky factor from [`chol_flat`], returns `c'(LL')^{-1}c`.
#[inline]
pub fn chol_quad_flat(l: &[f64], d: usize, c: &[f64], work: &mut [f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..d {
        let mut t = c[i];
        for k in 0..i {
            t -= l[i * d + k] * work[k];
        }
        let y = t / l[i * d + i];
        work[i] = y;
        q += y * y;
    }
    q
}

/// Numerically stable `ln(sum exp(x_i))`; returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-sum-exp accumulator for streaming reductions.
#[derive(Clone, Copy, Debug)]
pub struct LogSum {
    max: f64,
    sum: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        LogSum { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: &LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssmr::{SsmrData, SubgroupData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random system with intercept-only controls; `effects[j]` scales a shared effect of
/// covariate `j` on every response.
pub fn random_data(seed: u64, s: usize, r: usize, p: usize, n: usize, effects: &[f64]) -> SsmrData {
    let mut g = rng(seed);
    let subgroups = (0..s)
        .map(|_| {
            let xg = normal_matrix(&mut g, n, p);
            let mut y = normal_matrix(&mut g, n, r);
            for (j, &b) in effects.iter().enumerate() {
                for k in 0..r {
                    let coef = b * (1.0 + 0.3 * k as f64);
                    for t in 0..n {
                        y[(t, k)] += coef * xg[(t, j)];
                    }
                }
            }
            for t in 0..n {
                for k in 0..r {
                    y[(t, k)] += 0.7;
                }
            }
            SubgroupData::with_intercept(y, xg).unwrap()
        })
        .collect();
    SsmrData::new(subgroups).unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, r: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, r, r);
    &a * a.transpose() + DMatrix::identity(r, r) * 0.5
}

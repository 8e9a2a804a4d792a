mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use ssmr::bf::{
    abf, abf_from_statistic, abf_singular, abf_with_sigma, connection_stats, exact_bf, model_bf,
    proportional_prior, sigma_shrink, AlphaVector, ModelEvaluator,
};
use ssmr::mle::Residualized;
use ssmr::prior::{build_w, EffectGrid, ModelConfig, NuisancePriors, PriorMatrixW, PriorSpec, WBlock};
use ssmr::{SsmrData, SubgroupData};

fn all_active(p: usize, s: usize, r: usize) -> ModelConfig {
    let full = (1u32 << (s * r)) - 1;
    ModelConfig::new(vec![full; p], s, r).unwrap()
}

#[test]
fn zero_prior_gives_unit_bf() {
    let data = random_data(1, 2, 2, 3, 30, &[0.5]);
    let res = Residualized::new(&data).unwrap();
    let model = all_active(3, 2, 2);
    let w = PriorMatrixW::zero(res.layout);
    let sig = vec![DMatrix::identity(2, 2); 2];
    assert_eq!(exact_bf(&res, &model, &w, &sig).unwrap().log10_bf, 0.0);
    for a in [0.0, 0.5, 1.0] {
        let alpha = AlphaVector::uniform(2, a).unwrap();
        let nuis = NuisancePriors::limit(2, 2);
        assert_eq!(abf(&res, &model, &w, &nuis, &alpha).unwrap().log10_bf, 0.0);
        assert_eq!(abf_singular(&res, &model, &w, &nuis, &alpha).unwrap().log10_bf, 0.0);
    }
}

#[test]
fn orthogonal_responses_give_nonpositive_bf() {
    // Responses orthogonal to the centered covariate.
    let x = DMatrix::from_column_slice(6, 1, &[1.0, -1.0, 2.0, -2.0, 0.0, 0.0]);
    let y = DMatrix::from_column_slice(6, 2, &[1.0, 1.0, 0.0, 0.0, -1.0, -1.0, 2.0, 2.0, -3.0, -3.0, 1.0, 1.0]);
    let data = SsmrData::new(vec![SubgroupData::with_intercept(y, x).unwrap()]).unwrap();
    let res = Residualized::new(&data).unwrap();
    let model = all_active(1, 1, 2);
    let w = build_w(&model, &[(0.3, 0.5)]).unwrap();
    let sig = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0])];
    let out = exact_bf(&res, &model, &w, &sig).unwrap();
    let raw = ssmr::prior::scale_w(&w, &sig).unwrap().to_dense();
    let (_, m) = ssmr::bf::score_and_precision(&res, &sig, &[0, 1]).unwrap();
    let det = (DMatrix::identity(2, 2) + m * raw).determinant();
    assert!((out.ln_bf() + 0.5 * det.ln()).abs() < 1e-12);
    assert!(out.log10_bf <= 0.0);
}

#[test]
fn scalar_conjugate_closed_form() {
    for seed in 0..20 {
        let data = random_data(100 + seed, 1, 1, 1, 25, &[0.3]);
        let res = Residualized::new(&data).unwrap();
        let model = all_active(1, 1, 1);
        let sigma2 = 0.8 + seed as f64 * 0.05;
        let wv = 0.2 + 0.1 * seed as f64;
        let w = PriorMatrixW::from_dense(res.layout, &DMatrix::from_element(1, 1, wv)).unwrap();
        let got = exact_bf(&res, &model, &w, &[DMatrix::from_element(1, 1, sigma2)]).unwrap();
        // Independent evaluation from centered sums.
        let x: Vec<f64> = data.subgroups[0].xg.column(0).iter().cloned().collect();
        let y: Vec<f64> = data.subgroups[0].y.column(0).iter().cloned().collect();
        let (mx, my) = (x.iter().sum::<f64>() / 25.0, y.iter().sum::<f64>() / 25.0);
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let bhat = sxy / sxx;
        let v = sigma2 / sxx;
        let bf = (v / (v + wv)).sqrt() * (0.5 * bhat * bhat * wv / (v * (v + wv))).exp();
        assert!((got.log10_bf - bf.log10()).abs() < 1e-8, "seed {seed}");
    }
}

#[test]
fn shrinkage_examples() {
    let data = random_data(7, 1, 2, 2, 10, &[0.8]);
    let res = Residualized::new(&data).unwrap();
    let model = all_active(2, 1, 2);
    let hat = res.fit(&model).unwrap().sigma_hat;
    let lim = NuisancePriors::limit(1, 2);
    let s0 = sigma_shrink(&res, &model, &lim, &AlphaVector::uniform(1, 0.0).unwrap()).unwrap();
    assert!((&s0[0] - &res.sigma_tilde[0]).abs().max() < 1e-15);
    let s1 = sigma_shrink(&res, &model, &lim, &AlphaVector::uniform(1, 1.0).unwrap()).unwrap();
    assert!((&s1[0] - &hat[0]).abs().max() < 1e-15);
    let inf = NuisancePriors::informative(vec![2.0], vec![DMatrix::identity(2, 2)]).unwrap();
    let s = sigma_shrink(&res, &model, &inf, &AlphaVector::uniform(1, 0.5).unwrap()).unwrap();
    let expect = DMatrix::identity(2, 2) * (2.0 / 12.0) + (&hat[0] + &res.sigma_tilde[0]) * (10.0 / 12.0 / 2.0);
    assert!((&s[0] - expect).abs().max() < 1e-14);
}

#[test]
fn singular_limit_and_known_sigma_paths_agree() {
    let data = random_data(11, 1, 3, 2, 40, &[0.4, 0.0]);
    let res = Residualized::new(&data).unwrap();
    let model = ModelConfig::new(vec![0b111, 0], 1, 3).unwrap();
    let w = build_w(&model, &[(0.0, 0.6), (0.0, 0.0)]).unwrap();
    assert!(w.is_rank_deficient());
    let truth = vec![DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 0.8])];
    let alpha = AlphaVector::uniform(1, 0.5).unwrap();
    let a = exact_bf(&res, &model, &w, &truth).unwrap();
    let b = abf_with_sigma(&res, &w, truth.clone(), &alpha, true).unwrap();
    assert_eq!(a.log10_bf, b.log10_bf);

    // Ridge sequence towards the limit at alpha = 0, where the covariance estimate is fixed.
    let a0 = AlphaVector::uniform(1, 0.0).unwrap();
    let lim = NuisancePriors::limit(1, 3);
    let target = abf_singular(&res, &model, &w, &lim, &a0).unwrap();
    assert!(target.restricted);
    let mut prev = f64::INFINITY;
    for e in 2..=8 {
        let lam = 10f64.powi(-e);
        let d = (abf(&res, &model, &w.ridge(lam), &lim, &a0).unwrap().log10_bf - target.log10_bf).abs();
        assert!(d <= prev + 1e-12);
        prev = d;
    }
    assert!(prev < 1e-6);
}

#[test]
fn model_bf_grid_examples() {
    let data = random_data(21, 1, 2, 3, 50, &[0.3, 0.2]);
    let res = Arc::new(Residualized::new(&data).unwrap());
    let spec = PriorSpec::default_for(1, 2).unwrap();
    let alpha = AlphaVector::uniform(1, 0.5).unwrap();
    let null = ModelConfig::null(3, 1, 2);
    assert_eq!(model_bf(res.clone(), &null, &spec, &alpha, 4096).unwrap().log10_bf, 0.0);

    // One covariate: uniform mixture of four approximate Bayes factors.
    let one = ModelConfig::new(vec![0b11, 0, 0], 1, 2).unwrap();
    let got = model_bf(res.clone(), &one, &spec, &alpha, 4096).unwrap();
    let terms: Vec<f64> = spec
        .grid
        .points
        .iter()
        .map(|&pt| {
            let w = build_w(&one, &[pt, (0.0, 0.0), (0.0, 0.0)]).unwrap();
            abf(&res, &one, &w, &spec.nuisance, &alpha).unwrap().ln_bf()
        })
        .collect();
    let mean = (terms.iter().map(|t| t.exp()).sum::<f64>() / 4.0).log10();
    assert!((got.log10_bf - mean).abs() < 1e-10);
    assert!(got.grid.as_ref().unwrap().exhaustive);

    // Two covariates, two grid points: four explicit terms.
    let mut two_spec = spec.clone();
    two_spec.grid = EffectGrid::uniform(vec![(0.1, 0.4), (0.4, 1.6)]).unwrap();
    let two = ModelConfig::new(vec![0b11, 0b01, 0], 1, 2).unwrap();
    let got = model_bf(res.clone(), &two, &two_spec, &alpha, 4096).unwrap();
    let mut acc = 0.0;
    for &a in &two_spec.grid.points {
        for &b in &two_spec.grid.points {
            let w = build_w(&two, &[a, b, (0.0, 0.0)]).unwrap();
            acc += 0.25 * abf(&res, &two, &w, &spec.nuisance, &alpha).unwrap().ln_bf().exp();
        }
    }
    assert!((got.log10_bf - acc.log10()).abs() < 1e-10);
}

#[test]
fn model_bf_singular_grid_points_use_restricted_fit() {
    let data = random_data(23, 1, 3, 2, 60, &[0.3, 0.1]);
    let res = Arc::new(Residualized::new(&data).unwrap());
    let mut spec = PriorSpec::default_for(1, 3).unwrap();
    spec.grid = EffectGrid::uniform(vec![(0.0, 0.5), (0.3, 0.3)]).unwrap();
    let alpha = AlphaVector::uniform(1, 0.5).unwrap();
    let model = ModelConfig::new(vec![0b111, 0b011], 1, 3).unwrap();
    let got = model_bf(res.clone(), &model, &spec, &alpha, 4096).unwrap();
    assert!(got.restricted);
    let mut acc = 0.0;
    for &a in &spec.grid.points {
        for &b in &spec.grid.points {
            let w = build_w(&model, &[a, b]).unwrap();
            let t = if w.is_rank_deficient() {
                abf_singular(&res, &model, &w, &spec.nuisance, &alpha).unwrap()
            } else {
                abf(&res, &model, &w, &spec.nuisance, &alpha).unwrap()
            };
            acc += 0.25 * t.ln_bf().exp();
        }
    }
    assert!((got.log10_bf - acc.log10()).abs() < 1e-9, "{} vs {}", got.log10_bf, acc.log10());
}

#[test]
fn sampled_grid_is_seeded_and_close_to_exhaustive() {
    let data = random_data(31, 1, 2, 6, 80, &[0.3, 0.2, 0.2, 0.1, 0.1, 0.1]);
    let res = Arc::new(Residualized::new(&data).unwrap());
    let spec = PriorSpec::default_for(1, 2).unwrap();
    let alpha = AlphaVector::uniform(1, 0.5).unwrap();
    let model = ModelConfig::new(vec![0b11; 6], 1, 2).unwrap();
    let exact = model_bf(res.clone(), &model, &spec, &alpha, 4096).unwrap();
    let ev = ModelEvaluator::new(res.clone(), spec.clone(), alpha.clone()).unwrap().with_budget(1024);
    let approx = ev.model_bf(&model).unwrap();
    let again = ev.model_bf(&model).unwrap();
    let info = approx.grid.clone().unwrap();
    assert!(!info.exhaustive && info.qmc_seed.is_some());
    assert_eq!(approx.log10_bf, again.log10_bf);
    assert!((approx.log10_bf - exact.log10_bf).abs() < 0.05, "{} vs {}", approx.log10_bf, exact.log10_bf);
}

#[test]
fn connection_identities_hold() {
    for seed in 0..10 {
        let data = random_data(40 + seed, 2, 2, 3, 60, &[0.2, 0.1]);
        let res = Residualized::new(&data).unwrap();
        let model = ModelConfig::new(vec![0b1111, 0b0011, 0], 2, 2).unwrap();
        let c = 1.0 + seed as f64 * 0.3;
        let st = connection_stats(&res, &model, c).unwrap();
        let hat = res.fit(&model).unwrap().sigma_hat;
        let w1 = proportional_prior(&res, &model, c, &hat).unwrap();
        let lim = NuisancePriors::limit(2, 2);
        let a1 = abf(&res, &model, &w1, &lim, &AlphaVector::uniform(2, 1.0).unwrap()).unwrap();
        let rhs = abf_from_statistic(c, st.dim, st.t_wald);
        assert!((a1.log10_bf - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        let w0 = proportional_prior(&res, &model, c, &res.sigma_tilde).unwrap();
        let a0 = abf(&res, &model, &w0, &lim, &AlphaVector::uniform(2, 0.0).unwrap()).unwrap();
        let rhs = abf_from_statistic(c, st.dim, st.t_score);
        assert!((a0.log10_bf - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }
}

#[test]
fn null_estimate_gives_zero_statistics() {
    let x = DMatrix::from_column_slice(6, 1, &[1.0, -1.0, 2.0, -2.0, 0.0, 0.0]);
    let y = DMatrix::from_column_slice(6, 1, &[1.0, 1.0, 0.0, 0.0, -1.0, -1.5]);
    let data = SsmrData::new(vec![SubgroupData::with_intercept(y, x).unwrap()]).unwrap();
    let res = Residualized::new(&data).unwrap();
    let st = connection_stats(&res, &all_active(1, 1, 1), 2.0).unwrap();
    assert!(st.t_wald.abs() < 1e-20 && st.t_score.abs() < 1e-20);
    assert!((abf_from_statistic(2.0, 1, 0.0) - (-0.5 * 3f64.log10())).abs() < 1e-15);
}

#[test]
fn bic_gap_stays_bounded_as_n_grows() {
    let model = ModelConfig::new(vec![0b11, 0b11], 1, 2).unwrap();
    let mut gaps = Vec::new();
    for n in [100, 400, 1600] {
        let data = random_data(77, 1, 2, 2, n, &[0.3, 0.2]);
        let res = Residualized::new(&data).unwrap();
        let st = connection_stats(&res, &model, 1.0).unwrap();
        let w = build_w(&model, &[(0.2, 0.2), (0.2, 0.2)]).unwrap();
        let lim = NuisancePriors::limit(1, 2);
        let b = abf(&res, &model, &w, &lim, &AlphaVector::uniform(1, 0.5).unwrap()).unwrap();
        gaps.push(b.ln_bf() - st.bic);
    }
    let d1 = (gaps[1] - gaps[0]).abs();
    let d2 = (gaps[2] - gaps[1]).abs();
    assert!(gaps.iter().all(|g| g.abs() < 15.0), "{gaps:?}");
    assert!(d2 < d1 + 2.0, "{gaps:?}");
}

#[test]
fn rank_deficient_v_is_rejected_by_statistics() {
    let mut data = random_data(5, 1, 1, 2, 20, &[0.5]);
    let col = data.subgroups[0].xg.column(0).clone_owned();
    data.subgroups[0].xg.set_column(1, &col);
    let res = Residualized::new(&data).unwrap();
    assert!(connection_stats(&res, &all_active(2, 1, 1), 1.0).is_err());
}

#[test]
fn non_psd_prior_is_rejected() {
    let data = random_data(2, 1, 2, 1, 20, &[0.5]);
    let res = Residualized::new(&data).unwrap();
    let bad = WBlock { cells: vec![0, 1], values: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]) };
    assert!(PriorMatrixW::from_blocks(res.layout, vec![bad], false).is_err());
    let _ = DVector::<f64>::zeros(1);
}

//! Exact and approximate Bayes factors of one model, with the classical statistics they track.

use ssmr::bf::{abf, abf_singular, connection_stats, exact_bf, AlphaVector};
use ssmr::mle::Residualized;
use ssmr::prior::{build_w, parse_model, NuisancePriors};
use ssmr::sim::{simulate, SimScenario};

fn main() -> ssmr::Result<()> {
    let scenario = SimScenario { n: 150, p: 3, s: 2, r: 2, causal_rate: 0.0, sigma_truth: vec![vec![1.0, 0.3], vec![0.3, 1.0]], seed: 3, ..SimScenario::default() };
    let (mut data, _) = simulate(&scenario)?;
    // Plant a shared effect of covariate 0 on both responses of both subgroups.
    for sub in &mut data.subgroups {
        for t in 0..sub.n() {
            let x = sub.xg[(t, 0)];
            sub.y[(t, 0)] += 0.3 * x;
            sub.y[(t, 1)] += 0.25 * x;
        }
    }
    let res = Residualized::new(&data)?;
    // Gamma strings list the active cells of a covariate, one character per (subgroup, response).
    let model = parse_model("1111,0000,0000", data.s(), data.r(), &data.covariate_ids)?;
    let w = build_w(&model, &[(0.1, 0.4), (0.1, 0.4), (0.1, 0.4)])?;
    let nuisance = NuisancePriors::limit(data.s(), data.r());

    let truth_sigma: Vec<_> = (0..data.s()).map(|_| nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0])).collect();
    println!("exact BF with the true covariance: log10 {:.4}", exact_bf(&res, &model, &w, &truth_sigma)?.log10_bf);
    for a in [0.0, 0.5, 1.0] {
        let alpha = AlphaVector::uniform(data.s(), a)?;
        println!("ABF alpha {a}: log10 {:.4}", abf(&res, &model, &w, &nuisance, &alpha)?.log10_bf);
    }

    // A prior that forces equal effects in the two subgroups has a rank-deficient covariance.
    let shared = ssmr::prior::PriorMatrixW::from_dense(w.layout, &fixed_effect_prior(&w))?;
    let alpha = AlphaVector::uniform(data.s(), 0.5)?;
    let single = abf_singular(&res, &model, &shared, &nuisance, &alpha)?;
    println!("singular prior: log10 {:.4} (restricted path: {})", single.log10_bf, single.restricted);

    let stats = connection_stats(&res, &model, 1e6)?;
    println!("Wald {:.3} score {:.3} BIC {:.3} dim {}", stats.t_wald, stats.t_score, stats.bic, stats.dim);
    Ok(())
}

/// Keeps the response covariance of each subgroup but makes the subgroups perfectly correlated.
fn fixed_effect_prior(w: &ssmr::prior::PriorMatrixW) -> nalgebra::DMatrix<f64> {
    let dense = w.to_dense();
    let mut out = dense.clone();
    let l = w.layout;
    for j in 0..l.p {
        for k in 0..l.r {
            for m in 0..l.r {
                let v = dense[(l.index(0, j, k), l.index(0, j, m))];
                for a in 0..l.s {
                    for b in 0..l.s {
                        out[(l.index(a, j, k), l.index(b, j, m))] = v;
                    }
                }
            }
        }
    }
    out
}

//! Acceptance checks, printed as one `PASS` or `FAIL` line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4,7` runs a subset. A failing criterion is reported, not raised, so the
//! rest of the suite still runs; set `ACCEPTANCE_STRICT=1` to turn any failure into a nonzero exit.

mod common;

use std::sync::Arc;
use std::time::Instant;

use common::{normal_matrix, random_data, random_spd, rng};
use nalgebra::DMatrix;
use rand::Rng;
use ssmr::bf::{
    abf, abf_from_statistic, abf_singular, connection_stats, exact_bf, model_bf, proportional_prior, AlphaVector,
    ModelEvaluator, DEFAULT_BUDGET,
};
use ssmr::mle::{fit_mle, residualize, Residualized};
use ssmr::oracle::{brute_posterior, mc_bf, validate_family, ValidationRow};
use ssmr::prior::{build_w, ModelConfig, ModelPrior, NuisancePriors, PriorMatrixW, PriorSpec, WBlock};
use ssmr::search::{enumerate_with, run_mcmc, single_covariate_scan, McmcConfig, RbPolicy};
use ssmr::sim::{dominance_fraction, evaluate, simulate, EvalMode, SimScenario, ValidationFamily};
use ssmr::{SsmrData, SubgroupData};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const ALPHAS: [f64; 3] = [0.0, 0.5, 1.0];

/// Validation rows per `(n, p)`, shared between the criteria that read the same family.
#[derive(Default)]
struct Cache {
    rows: Vec<((usize, usize), Vec<ValidationRow>)>,
}

impl Cache {
    fn family(&mut self, n: usize, p: usize, count: u64) -> &[ValidationRow] {
        if let Some(i) = self.rows.iter().position(|(k, _)| *k == (n, p)) {
            return &self.rows[i].1;
        }
        let rows = validate_family(&ValidationFamily::new(n, p, 1), 0, count, &ALPHAS).expect("validation family");
        self.rows.push(((n, p), rows));
        &self.rows.last().expect("just pushed").1
    }
}

/// Signed errors of `log10 ABF` against the oracle, one vector per `alpha`.
fn errors(rows: &[ValidationRow]) -> Vec<Vec<f64>> {
    (0..ALPHAS.len()).map(|a| rows.iter().map(|r| r.log10_abf[a] - r.log10_oracle).collect()).collect()
}

fn rmse(e: &[f64]) -> f64 {
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

fn mean_t(e: &[f64]) -> (f64, f64) {
    let n = e.len() as f64;
    let m = e.iter().sum::<f64>() / n;
    let var = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, m / (var / n).sqrt())
}

fn c1(cache: &mut Cache) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [2, 4, 8, 16] {
        let e = errors(cache.family(75, p, 500));
        let r: Vec<f64> = e.iter().map(|v| rmse(v)).collect();
        let band = r[1] <= 0.05;
        let order = p < 8 || (r[1] < r[0] && r[1] < r[2]);
        pass &= band && order;
        parts.push(format!("p={p} rmse {:.3}/{:.3}/{:.3}{}", r[0], r[1], r[2], if band && order { "" } else { " !" }));
    }
    outcome(pass, parts.join("; "))
}

fn c2(cache: &mut Cache) -> Outcome {
    let e = errors(cache.family(75, 8, 500));
    let (m0, t0) = mean_t(&e[0]);
    let (m1, t1) = mean_t(&e[2]);
    outcome(m1 > 0.0 && t1 > 3.0 && m0 < 0.0 && t0 < -3.0, format!("alpha=0 mean {m0:+.4} t {t0:.1}; alpha=1 mean {m1:+.4} t {t1:.1}"))
}

fn c3(cache: &mut Cache) -> Outcome {
    let e = errors(cache.family(1000, 16, 500));
    let r: Vec<f64> = e.iter().map(|v| rmse(v)).collect();
    outcome(r.iter().all(|&v| v <= 0.06), format!("n=1000 p=16 rmse {:.3}/{:.3}/{:.3}", r[0], r[1], r[2]))
}

fn all_active(p: usize, s: usize, r: usize) -> ModelConfig {
    ModelConfig::new(vec![(1u32 << (s * r)) - 1; p], s, r).expect("model")
}

fn c4() -> Outcome {
    let mut g = rng(404);
    let mut hits = 0;
    for t in 0..100u64 {
        let (s, r) = (1 + (t % 2) as usize, 1 + (t % 3) as usize);
        let data = random_data(4000 + t, s, r, 2, 30, &[0.2, 0.05]);
        let full = (1u32 << (s * r)) - 1;
        let model = ModelConfig::new(vec![full, if t % 4 == 0 { 0 } else { 1 }], s, r).expect("model");
        let w = build_w(&model, &[(g.random_range(0.05..0.3), g.random_range(0.0..0.3)); 2]).expect("prior");
        let sigma: Vec<DMatrix<f64>> = (0..s).map(|_| random_spd(&mut g, r)).collect();
        let res = Residualized::new(&data).expect("residualize");
        let exact = 10f64.powf(exact_bf(&res, &model, &w, &sigma).expect("exact").log10_bf);
        let mc = mc_bf(&data, &model, &w, &sigma, 20_000, t).expect("monte carlo");
        if (10f64.powf(mc.log10_bf) - exact).abs() <= 3.0 * mc.std_error.expect("standard error") {
            hits += 1;
        }
    }
    // Scalar conjugate case from centered sums.
    let mut worst: f64 = 0.0;
    for t in 0..20u64 {
        let n = 20 + t as usize;
        let data = random_data(4500 + t, 1, 1, 1, n, &[0.3]);
        let res = Residualized::new(&data).expect("residualize");
        let (sigma2, wv) = (0.5 + 0.1 * t as f64, 0.05 + 0.07 * t as f64);
        let w = PriorMatrixW::from_dense(res.layout, &DMatrix::from_element(1, 1, wv)).expect("prior");
        let got = exact_bf(&res, &all_active(1, 1, 1), &w, &[DMatrix::from_element(1, 1, sigma2)]).expect("exact");
        let x: Vec<f64> = data.subgroups[0].xg.column(0).iter().cloned().collect();
        let y: Vec<f64> = data.subgroups[0].y.column(0).iter().cloned().collect();
        let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let (bhat, v) = (sxy / sxx, sigma2 / sxx);
        let log10 = (0.5 * (v / (v + wv)).ln() + 0.5 * bhat * bhat * wv / (v * (v + wv))) / std::f64::consts::LN_10;
        worst = worst.max((got.log10_bf - log10).abs());
    }
    outcome(hits >= 95 && worst <= 1e-8, format!("{hits}/100 within 3 SE; scalar closed form max diff {worst:.1e}"))
}

/// Random positive semidefinite block of the given rank.
fn low_rank(g: &mut rand_chacha::ChaCha8Rng, dim: usize, rank: usize) -> DMatrix<f64> {
    let a = normal_matrix(g, dim, rank) * 0.3;
    &a * a.transpose()
}

fn c5() -> Outcome {
    let mut g = rng(505);
    let mut worst: f64 = 0.0;
    let mut restricted = true;
    for t in 0..50u64 {
        let (s, r) = if t % 2 == 0 { (1, 3) } else { (2, 2) };
        let data = random_data(5000 + t, s, r, 2, 60, &[0.3, 0.1]);
        let res = Residualized::new(&data).expect("residualize");
        let model = all_active(2, s, r);
        let layout = res.layout;
        let dim = s * r;
        let blocks = (0..2)
            .map(|j| {
                let rank = if j == 0 { 1 + (t as usize % (dim - 1)) } else { dim };
                WBlock { cells: (0..dim).map(|cell| layout.cell_index(j, cell)).collect(), values: low_rank(&mut g, dim, rank) }
            })
            .collect();
        let w = PriorMatrixW::from_blocks(layout, blocks, false).expect("prior");
        let lim = NuisancePriors::limit(s, r);
        let a0 = AlphaVector::uniform(s, 0.0).expect("alpha");
        let single = abf_singular(&res, &model, &w, &lim, &a0).expect("singular");
        let ridge = abf(&res, &model, &w.ridge(1e-8), &lim, &a0).expect("ridge");
        restricted &= single.restricted;
        worst = worst.max((single.log10_bf - ridge.log10_bf).abs());
    }
    outcome(worst <= 1e-4 && restricted, format!("max |difference| {worst:.2e} over 50 priors (alpha=0)"))
}

fn c6() -> Outcome {
    let mut g = rng(606);
    let mut worst: f64 = 0.0;
    for t in 0..100u64 {
        let (s, r) = (1 + (t % 2) as usize, 1 + (t % 3) as usize);
        let data = random_data(6000 + t, s, r, 3, 50, &[0.25, 0.0, 0.1]);
        let res = Residualized::new(&data).expect("residualize");
        let full = (1u32 << (s * r)) - 1;
        let model = ModelConfig::new(vec![full, 0, g.random_range(1..=full)], s, r).expect("model");
        let c = g.random_range(0.5..20.0);
        let (wald, score) = identity_gaps(&res, &model, c);
        worst = worst.max(wald).max(score);
    }
    let mut ranked = true;
    for t in 0..5u64 {
        let data = random_data(6500 + t, 1, 2, 8, 80, &[0.3, 0.0, 0.2, 0.0, 0.1, 0.0, 0.0, 0.05]);
        let res = Residualized::new(&data).expect("residualize");
        let pairs: Vec<(usize, usize)> = (0..8).flat_map(|a| (a + 1..8).map(move |b| (a, b))).take(20).collect();
        let mut wald = Vec::new();
        let mut score = Vec::new();
        for &(a, b) in &pairs {
            let model = ModelConfig::from_active(8, 1, 2, &[(a, 3), (b, 3)]).expect("model");
            let st = connection_stats(&res, &model, 4.0).expect("statistics");
            let (w1, w0) = priors(&res, &model, 4.0);
            let lim = NuisancePriors::limit(1, 2);
            let b1 = abf(&res, &model, &w1, &lim, &AlphaVector::uniform(1, 1.0).expect("alpha")).expect("abf");
            let b0 = abf(&res, &model, &w0, &lim, &AlphaVector::uniform(1, 0.0).expect("alpha")).expect("abf");
            wald.push((b1.log10_bf, st.t_wald));
            score.push((b0.log10_bf, st.t_score));
        }
        ranked &= same_order(&wald) && same_order(&score);
    }
    outcome(worst <= 1e-10 && ranked, format!("max relative gap {worst:.1e}; rankings identical: {ranked}"))
}

fn priors(res: &Residualized, model: &ModelConfig, c: f64) -> (PriorMatrixW, PriorMatrixW) {
    let hat = res.fit(model).expect("fit").sigma_hat;
    (proportional_prior(res, model, c, &hat).expect("prior"), proportional_prior(res, model, c, &res.sigma_tilde).expect("prior"))
}

/// Relative gaps on the Bayes factor scale for the Wald and score identities.
fn identity_gaps(res: &Residualized, model: &ModelConfig, c: f64) -> (f64, f64) {
    let st = connection_stats(res, model, c).expect("statistics");
    let (w1, w0) = priors(res, model, c);
    let s = res.s();
    let lim = NuisancePriors::limit(s, res.r());
    let b1 = abf(res, model, &w1, &lim, &AlphaVector::uniform(s, 1.0).expect("alpha")).expect("abf");
    let b0 = abf(res, model, &w0, &lim, &AlphaVector::uniform(s, 0.0).expect("alpha")).expect("abf");
    let gap = |a: f64, b: f64| ((a - b) * std::f64::consts::LN_10).exp_m1().abs();
    (gap(b1.log10_bf, abf_from_statistic(c, st.dim, st.t_wald)), gap(b0.log10_bf, abf_from_statistic(c, st.dim, st.t_score)))
}

fn same_order(v: &[(f64, f64)]) -> bool {
    let order = |key: fn(&(f64, f64)) -> f64| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| key(&v[a]).total_cmp(&key(&v[b])));
        idx
    };
    order(|x| x.0) == order(|x| x.1)
}

fn c7() -> Outcome {
    let start = Instant::now();
    let mut worst_mc: f64 = 0.0;
    let mut worst_brute: f64 = 0.0;
    for t in 0..20u64 {
        let p = 3 + (t % 4) as usize;
        let effects: Vec<f64> = (0..p).map(|j| [0.35, 0.0, 0.2, 0.0, 0.1, 0.05][j] * (1.0 + 0.1 * t as f64)).collect();
        let data = random_data(7000 + t, 1, 2, p, 80, &effects);
        let mut spec = PriorSpec::default_for(1, 2).expect("prior");
        spec.model_prior = ModelPrior::uniform_nonnull(2, 0.8).expect("model prior");
        let alpha = AlphaVector::uniform(1, 0.5).expect("alpha");
        let ev = ModelEvaluator::new(Arc::new(Residualized::new(&data).expect("residualize")), spec.clone(), alpha.clone())
            .expect("evaluator");
        let exact = enumerate_with(&ev, 1 << 16, &[]).expect("enumeration");
        let mc = run_mcmc(&ev, &McmcConfig { seed: t, ..McmcConfig::default() }).expect("mcmc");
        let brute = brute_posterior(&data, &spec, &alpha).expect("brute force");
        for j in 0..p {
            for c in 0..exact.configs.len() {
                worst_mc = worst_mc.max((mc.pip[j][c] - exact.pip[j][c]).abs());
                worst_brute = worst_brute.max((brute.pip[j][c] - exact.pip[j][c]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_mc <= 0.02 && worst_brute <= 1e-10 && secs <= 300.0,
        format!("max |mcmc - exact| {worst_mc:.4}; max |brute - exact| {worst_brute:.1e}; {secs:.0} s"),
    )
}

fn c8() -> Outcome {
    let mut joint = Vec::new();
    let mut scan = Vec::new();
    let start = Instant::now();
    for rep in 0..50u64 {
        let (data, truth) = simulate(&SimScenario { seed: 8000 + rep, ..SimScenario::default() }).expect("simulate");
        let spec = PriorSpec::default_for(data.s(), data.r()).expect("prior");
        let ev = ModelEvaluator::new(Arc::new(Residualized::new(&data).expect("residualize")), spec, AlphaVector::uniform(1, 0.5).expect("alpha"))
            .expect("evaluator")
            .with_budget(256);
        let cfg = McmcConfig { burn_in: 5_000, samples: 20_000, seed: rep, rb: RbPolicy::Sweeps(10), ..McmcConfig::default() };
        joint.push((run_mcmc(&ev, &cfg).expect("mcmc"), truth.clone()));
        scan.push((single_covariate_scan(&ev, &[]).expect("scan").to_summary(), truth));
    }
    let a = evaluate(&joint, &EvalMode::Covariate).expect("curve");
    let b = evaluate(&scan, &EvalMode::Covariate).expect("curve");
    let frac = dominance_fraction(&a, &b);
    outcome(frac >= 0.9, format!("dominates at {:.1}% of FP levels over 50 replicates ({:.0} s)", 100.0 * frac, start.elapsed().as_secs_f64()))
}

fn rescaled(data: &SsmrData, factors: &[f64], shift: f64) -> SsmrData {
    let subgroups = data
        .subgroups
        .iter()
        .enumerate()
        .map(|(i, sg)| {
            let mut y = sg.y.clone();
            for (k, f) in factors.iter().enumerate() {
                let f = f * (1.0 + i as f64);
                y.column_mut(k).iter_mut().for_each(|v| *v = *v * f + shift);
            }
            SubgroupData::new(y, sg.xc.clone(), sg.xg.clone()).expect("subgroup")
        })
        .collect();
    SsmrData::new(subgroups).expect("data")
}

fn log10_bf(data: &SsmrData, model: &ModelConfig, alpha: f64) -> f64 {
    let spec = PriorSpec::default_for(data.s(), data.r()).expect("prior");
    let res = Arc::new(Residualized::new(data).expect("residualize"));
    model_bf(res, model, &spec, &AlphaVector::uniform(data.s(), alpha).expect("alpha"), DEFAULT_BUDGET).expect("bf").log10_bf
}

fn c9() -> Outcome {
    let mut g = rng(909);
    let mut failed = Vec::new();

    let mut scale_gap: f64 = 0.0;
    for t in 0..20u64 {
        let data = random_data(9000 + t, 2, 2, 3, 40, &[0.3, 0.0, 0.2]);
        let model = ModelConfig::new(vec![g.random_range(0..16), 0, g.random_range(1..16)], 2, 2).expect("model");
        let factors = [10f64.powf(g.random_range(-3.0..3.0)), 10f64.powf(g.random_range(-3.0..3.0))];
        let alpha = g.random_range(0.0..1.0);
        let a = log10_bf(&data, &model, alpha);
        let b = log10_bf(&rescaled(&data, &factors, g.random_range(-20.0..20.0)), &model, alpha);
        scale_gap = scale_gap.max((a - b).abs() / (1.0 + a.abs()));
    }
    if scale_gap > 1e-8 {
        failed.push(format!("rescaling gap {scale_gap:.1e}"));
    }

    let base = random_data(9100, 1, 2, 3, 60, &[0.4, 0.0, 0.0]);
    let sg = &base.subgroups[0];
    let mut xg = DMatrix::zeros(60, 4);
    xg.columns_mut(0, 3).copy_from(&sg.xg);
    xg.set_column(3, &sg.xg.column(0));
    let dup = SsmrData::new(vec![SubgroupData::new(sg.y.clone(), sg.xc.clone(), xg).expect("subgroup")]).expect("data");
    let one = log10_bf(&base, &ModelConfig::from_active(3, 1, 2, &[(0, 3)]).expect("model"), 0.5);
    let copy = log10_bf(&dup, &ModelConfig::from_active(4, 1, 2, &[(3, 3)]).expect("model"), 0.5);
    let both = log10_bf(&dup, &ModelConfig::from_active(4, 1, 2, &[(0, 3), (3, 3)]).expect("model"), 0.5);
    if (one - copy).abs() > 1e-10 || !both.is_finite() {
        failed.push(format!("duplicate columns {one} {copy} {both}"));
    }

    let sc = SimScenario { p: 40, seed: 9200, ..SimScenario::default() };
    let (d1, _) = simulate(&sc).expect("simulate");
    let (d2, _) = simulate(&sc).expect("simulate");
    let run = |d: &SsmrData| {
        let ev = ModelEvaluator::new(
            Arc::new(Residualized::new(d).expect("residualize")),
            PriorSpec::default_for(1, 3).expect("prior"),
            AlphaVector::uniform(1, 0.5).expect("alpha"),
        )
        .expect("evaluator");
        run_mcmc(&ev, &McmcConfig { burn_in: 1_000, samples: 3_000, seed: 5, ..McmcConfig::default() }).expect("mcmc")
    };
    if d1.subgroups[0].y != d2.subgroups[0].y || run(&d1) != run(&d2) {
        failed.push("reruns differ".into());
    }

    let data = random_data(9300, 2, 2, 3, 30, &[0.5]);
    let res = Residualized::new(&data).expect("residualize");
    let model = all_active(3, 2, 2);
    let zero = PriorMatrixW::zero(res.layout);
    let nuis = NuisancePriors::limit(2, 2);
    let zero_bfs = [
        exact_bf(&res, &model, &zero, &[DMatrix::identity(2, 2), DMatrix::identity(2, 2)]).expect("exact").log10_bf,
        abf(&res, &model, &zero, &nuis, &AlphaVector::uniform(2, 0.5).expect("alpha")).expect("abf").log10_bf,
    ];
    if zero_bfs.iter().any(|&v| v != 0.0) {
        failed.push(format!("zero prior gives {zero_bfs:?}"));
    }

    let mut proj_gap: f64 = 0.0;
    for _ in 0..20 {
        let n = 20;
        let mut xc = normal_matrix(&mut g, n, 3);
        xc.column_mut(0).fill(1.0);
        let sub = SubgroupData::new(normal_matrix(&mut g, n, 2), xc.clone(), normal_matrix(&mut g, n, 5)).expect("subgroup");
        let resid = residualize(&sub).expect("residualize");
        let (q, _) = xc.clone().qr().unpack();
        let proj = DMatrix::identity(n, n) - &q * q.transpose();
        proj_gap = proj_gap.max((xc.transpose() * &resid).amax()).max((&resid - proj * &sub.xg).amax());
    }
    if proj_gap > 1e-10 {
        failed.push(format!("projection gap {proj_gap:.1e}"));
    }

    let data = random_data(9400, 1, 2, 4, 30, &[0.2, 0.1, 0.0, 0.0]);
    let mut prev = fit_mle(&data, &ModelConfig::null(4, 1, 2)).expect("fit").sigma_hat[0].clone();
    for k in 1..=4 {
        let active: Vec<(usize, u32)> = (0..k).map(|j| (j, 3)).collect();
        let next = fit_mle(&data, &ModelConfig::from_active(4, 1, 2, &active).expect("model")).expect("fit").sigma_hat[0].clone();
        if (0..2).any(|i| next[(i, i)] > prev[(i, i)] + 1e-12) {
            failed.push(format!("residual variance grew at {k} covariates"));
        }
        prev = next;
    }
    let pass = failed.is_empty();
    outcome(pass, if pass { format!("rescaling gap {scale_gap:.1e}; projection gap {proj_gap:.1e}") } else { failed.join("; ") })
}

fn c10() -> Outcome {
    let dir = std::env::temp_dir().join(format!("ssmr-throughput-{}", std::process::id()));
    let sc = SimScenario { n: 75, p: 4800, r: 3, causal_rate: 0.002, seed: 3, ..SimScenario::default() };
    let (data, _) = simulate(&sc).expect("simulate");
    let manifest = ssmr::io::save_dataset(&data, &dir.join("data")).expect("save");
    let out = dir.join("mcmc");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_ssmr"))
        .arg("mcmc")
        .arg("--data")
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .status()
        .expect("launch");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap_or_default()).unwrap_or_default();
    std::fs::remove_dir_all(&dir).ok();
    let secs = report["elapsed_seconds"].as_f64().unwrap_or(f64::INFINITY);
    let kb = report["peak_rss_kb"].as_f64();
    let mem_ok = kb.is_some_and(|k| k <= 256.0 * 1024.0);
    outcome(
        status.success() && secs <= 1800.0 && mem_ok,
        format!("p=4800 n=75 r=3 25k+50k steps: {secs:.0} s, peak {} MB", kb.map_or("unknown".into(), |k| format!("{:.0}", k / 1024.0))),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut cache = Cache::default();
    let mut failures = 0;
    for id in 1..=10 {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = match id {
            1 => c1(&mut cache),
            2 => c2(&mut cache),
            3 => c3(&mut cache),
            4 => c4(),
            5 => c5(),
            6 => c6(),
            7 => c7(),
            8 => c8(),
            9 => c9(),
            _ => c10(),
        };
        failures += !o.pass as usize;
        println!("{} criterion {id}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed().as_secs_f64());
    }
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

//! Compares approximate Bayes factors against numerical integration over the residual variances.

use ssmr::bf::{abf, AlphaVector};
use ssmr::mle::Residualized;
use ssmr::oracle::{quadrature_bf, validate_family, validation_tsv};
use ssmr::prior::NuisancePriors;
use ssmr::sim::ValidationFamily;

fn main() -> ssmr::Result<()> {
    let family = ValidationFamily::new(75, 2, 1);
    let (data, model, w) = family.instance(0)?;
    let nuisance = NuisancePriors::limit(data.s(), data.r());
    let reference = quadrature_bf(&data, &model, &w, &nuisance)?;
    println!("quadrature log10 BF {:.5} (relative error estimate {:?})", reference.log10_bf, reference.error_estimate);
    let res = Residualized::new(&data)?;
    for a in [0.0, 0.5, 1.0] {
        let approx = abf(&res, &model, &w, &nuisance, &AlphaVector::uniform(data.s(), a)?)?;
        println!("alpha {a}: log10 ABF {:.5} error {:+.5}", approx.log10_bf, approx.log10_bf - reference.log10_bf);
    }

    let alphas = [0.0, 0.5, 1.0];
    let rows = validate_family(&family, 0, 5, &alphas)?;
    print!("{}", validation_tsv(&rows, &alphas));
    Ok(())
}

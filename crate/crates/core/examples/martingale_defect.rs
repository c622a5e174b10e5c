//! The stopped-mean transform, the martingale defect and its small-lambda limit
//! for the inverse Bessel process, plus inversion back to E[X_t].

use natscale::eigen::{eigen_pair, EigenOptions};
use natscale::measure::MeasureSpec;
use natscale::resolvent::{
    defect_curve, martingale_defect, stopped_mean_at, stopped_mean_laplace, tauberian_limit, DefectOptions,
};

fn main() -> natscale::Result<()> {
    let m = MeasureSpec::inverse_bessel().build()?;
    let opts = EigenOptions::default();
    let pair = eigen_pair(&m, 0.5, (1.0, 1.0), &opts)?;
    println!("lambda = 0.5, x = 1: transform {:.10}, defect {:.10} (1/e = {:.10})",
        stopped_mean_laplace(&pair, 1.0)?, martingale_defect(&pair, 1.0)?, (-1f64).exp());

    let curve = defect_curve(&m, 1.0, &DefectOptions::default())?;
    for (l, d) in curve.lambdas.iter().zip(&curve.defect) {
        println!("  lambda {l:.3e}: defect {d:.8}");
    }
    println!("limit {:.6} +- {:.1e} against x - l- = {}", curve.extrapolated_limit, curve.extrapolation_error, curve.target_gap);

    // E[X_t] -> 0: the Tauberian limit of lambda * transform
    let samples: Vec<(f64, f64)> = DefectOptions::default()
        .lambdas()
        .into_iter()
        .map(|l| Ok((l, stopped_mean_laplace(&eigen_pair(&m, l, (1.0, 1.0), &opts)?, 1.0)?)))
        .collect::<natscale::Result<_>>()?;
    let lim = tauberian_limit(&samples, 2, 1e-2)?;
    println!("lim E[X_t] = {:.5} +- {:.1e}", lim.limit, lim.error);

    for t in [1.0, 3.0, 10.0] {
        println!("E_1[X_{t}] = {:.6}", stopped_mean_at(&m, 1.0, t, 12, &opts)?);
    }
    Ok(())
}

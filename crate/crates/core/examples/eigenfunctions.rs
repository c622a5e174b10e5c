//! Solves for the monotone eigenfunctions of Brownian motion and of the inverse
//! Bessel process, and writes them as CSV.

use natscale::eigen::{eigen_pair, picard_basis, EigenOptions};
use natscale::measure::MeasureSpec;

fn main() -> natscale::Result<()> {
    let opts = EigenOptions::default();

    let bm = MeasureSpec::brownian().build()?;
    let (phi, psi) = picard_basis(&bm, 0.5, (-2.0, 2.0), 1e-16, &opts)?;
    println!("brownian picard basis at x = 1: phi {:.12} (cosh 1 = {:.12}), psi {:.12} (sinh 1 = {:.12})",
        phi.value_at(1.0)?, 1f64.cosh(), psi.value_at(1.0)?, 1f64.sinh());

    let pair = eigen_pair(&bm, 0.5, (-3.0, 3.0), &opts)?;
    println!("brownian: f-(1) = {:.10}, f+(1) = {:.10}, h = {:.10}",
        pair.f_minus.value_at(1.0)?, pair.f_plus.value_at(1.0)?, pair.wronskian_h);

    let ib = MeasureSpec::inverse_bessel().build()?;
    let pair = eigen_pair(&ib, 0.5, (0.2, 10.0), &opts)?;
    println!("inverse bessel: alpha+ = {}, h = {:.10}, normalizations {} / {}",
        pair.alpha_plus, pair.wronskian_h, pair.f_minus.normalization(), pair.f_plus.normalization());
    for x in [0.2, 1.0, 5.0, 10.0] {
        let c = pair.f_minus.value_at(1.0)? / (-1f64).exp();
        println!("  x = {x:>4}: f-/c = {:.10} vs x e^(-1/x) = {:.10}; f+ = {:.10} vs x sinh(1/x) = {:.10}",
            pair.f_minus.value_at(x)? / c, x * (-1.0 / x).exp(),
            pair.f_plus.value_at(x)?, x * (1.0 / x).sinh());
    }
    let r = pair.f_minus.residuals(&ib)?;
    println!("  residuals: integral {:.2e}, derivative {:.2e}", r.integral, r.derivative);

    let dir = std::env::temp_dir();
    let path = dir.join("inverse_bessel_f_minus.csv");
    pair.f_minus.write_csv(std::fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

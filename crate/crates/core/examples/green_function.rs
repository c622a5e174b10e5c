//! Green's function of the killed resolvent and the resolvent of a test function.

use natscale::eigen::{eigen_pair, EigenOptions};
use natscale::measure::MeasureSpec;
use natscale::resolvent::{green, green_integral};

fn main() -> natscale::Result<()> {
    let bm = MeasureSpec::brownian().build()?;
    let lambda = 0.5;
    let pair = eigen_pair(&bm, lambda, (-30.0, 30.0), &EigenOptions::default())?;
    // for rho = 2 the Green's function is e^{-|x-y|} / 2 with this convention
    for (x, y) in [(0.0, 0.0), (0.0, 1.0), (1.0, -0.5)] {
        let g = green(&pair, x, y)?;
        let exact = (-f64::abs(x - y)).exp() / 2.0;
        println!("G({x}, {y}) = {g:.12}  (e^-|x-y|/2 = {exact:.12}), G({y}, {x}) = {:.12}", green(&pair, y, x)?);
    }
    // lambda * R 1 = 1 on the whole line
    let r1 = green_integral(&pair, 0.0, |_| 1.0, 1e-12)?;
    println!("lambda * R_lambda 1 at 0 = {:.10}", lambda * r1);
    Ok(())
}

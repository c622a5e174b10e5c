//! Laplace transforms of hitting times from eigenfunction ratios, checked by
//! simulation.

use natscale::eigen::{eigen_pair, hitting_laplace, EigenOptions};
use natscale::measure::MeasureSpec;
use natscale::simulate::{simulate_paths, HitCondition, Schedule, StepControl};

fn main() -> natscale::Result<()> {
    let n = 20_000;
    let ctl = StepControl { bridge: true, ..Default::default() };
    let cases = [
        ("brownian, 1 -> 0", MeasureSpec::brownian(), 1.0, 0.0, HitCondition::Unconditional),
        ("inverse bessel, 1 -> 2", MeasureSpec::inverse_bessel(), 1.0, 2.0, HitCondition::BeforeTauMinus),
    ];
    for (name, spec, x, a, cond) in cases {
        let (x, a): (f64, f64) = (x, a);
        let m = spec.build()?;
        let pair = eigen_pair(&m, 0.5, (x.min(a).max(0.5), x.max(a)), &EigenOptions::default())?;
        let exact = hitting_laplace(&pair, x, a)?;
        let schedule = Schedule { checkpoints: vec![], levels: vec![a], stop_when_levels_hit: true };
        let ens = simulate_paths(&m, x, 20.0, n, 7, ctl, schedule)?;
        let est = ens.estimate_hitting_laplace(a, 0.5, cond, 1e-3)?;
        println!("{name}: ratio {exact:.5}, simulated {:.5} +- {:.5} (z = {:.2})",
            est.estimate.mean, est.estimate.stderr, est.estimate.z_score(exact));
    }
    Ok(())
}

//! Euler-Maruyama paths of the inverse Bessel process: the stopped mean drifts
//! down although the process is a local martingale.

use natscale::measure::{MeasureSpec, Side};
use natscale::simulate::{simulate_paths, Schedule, StepControl};

fn main() -> natscale::Result<()> {
    let m = MeasureSpec::inverse_bessel().build()?;
    let schedule = Schedule { checkpoints: vec![1.0, 3.0, 10.0], levels: vec![], stop_when_levels_hit: false };
    let ens = simulate_paths(&m, 1.0, 10.0, 10_000, 42, StepControl::default(), schedule)?;
    for t in [1.0, 3.0, 10.0] {
        let e = ens.estimate_stopped_mean(t, None)?;
        println!("E_1[X_{t}] ~ {:.4} +- {:.4}", e.mean, e.stderr);
    }
    println!("absorbed at 0: {:.4}, steps {}", ens.absorbed_fraction(Side::Left), ens.total_steps());
    println!("{}", serde_json::to_string_pretty(&ens.summary())?);
    Ok(())
}

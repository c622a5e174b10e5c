//! Classifies the five built-in families and prints the evidence behind each verdict.

use natscale::classify::{classify, ClassifyOptions};
use natscale::measure::MeasureSpec;

fn main() -> natscale::Result<()> {
    let families = [
        ("brownian", MeasureSpec::brownian(), 0.0),
        ("inverse bessel", MeasureSpec::inverse_bessel(), 1.0),
        ("hybrid", MeasureSpec::hybrid(), 0.0),
        ("mirrored hybrid", MeasureSpec::mirrored_hybrid(), 0.0),
        ("double finite tail", MeasureSpec::double_finite_tail(), 0.0),
    ];
    let opts = ClassifyOptions::default();
    for (name, spec, x) in families {
        let v = classify(&spec.build()?, x, 0.5, &opts)?;
        println!("{name}: {:?} / {:?}", v.case, v.classification);
        for e in &v.evidence {
            println!("  {:<20} {:?}", serde_json::to_string(&e.criterion)?, e.outcome);
        }
    }
    Ok(())
}

//! Cross-checks every analytic criterion against the others and against simulated
//! stopped means, then prints the report as JSON.

use natscale::classify::{consistency_audit, AuditOptions};
use natscale::measure::MeasureSpec;

fn main() -> natscale::Result<()> {
    let m = MeasureSpec::inverse_bessel().build()?;
    let report = consistency_audit(&m, 1.0, 0.5, 10_000, &AuditOptions::default())?.ensure_consistent()?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let m = MeasureSpec::hybrid().build()?;
    let report = consistency_audit(&m, 0.0, 0.5, 0, &AuditOptions::default())?;
    println!("hybrid analytic audit: {:?}, all consistent {}", report.classification, report.all_consistent);
    Ok(())
}

//! Builds the built-in measure families and prints their masses and tail moments.

use natscale::measure::{MeasureSpec, Side};

fn main() -> natscale::Result<()> {
    let families = [
        ("brownian", MeasureSpec::brownian()),
        ("inverse bessel", MeasureSpec::inverse_bessel()),
        ("hybrid", MeasureSpec::hybrid()),
        ("mirrored hybrid", MeasureSpec::mirrored_hybrid()),
        ("double finite tail", MeasureSpec::double_finite_tail()),
    ];
    for (name, spec) in &families {
        let m = spec.build()?;
        let iv = m.interval();
        let a = if iv.l_minus.is_finite() { 0.5 } else { -1.0 };
        println!("{name}: interval ({}, {}), case {:?}", iv.l_minus, iv.l_plus, iv.case());
        println!("  m([{a}, 2]) = {:.6}", m.mass(a, 2.0)?);
        for side in [Side::Left, Side::Right] {
            let r = if side == Side::Right { 2.0 } else { a };
            let t = m.first_moment_tail(r, side)?;
            println!("  {side:?} tail from {r}: {:?} {:?} ({:?})", t.verdict, t.value, t.provenance);
        }
    }

    // a tabulated measure with a power-law tail fitted from its samples
    let spec: MeasureSpec = serde_json::from_str(
        r#"{"family":"tabulated","interval":[0,"inf"],
            "x":[1,2,4,8,16,32,64,128],
            "density":[2.0,0.125,0.0078125,0.00048828125,3.0517578125e-05,1.9073486328125e-06,1.1920928955078125e-07,7.450580596923828e-09]}"#,
    )?;
    let m = spec.build()?;
    println!("tabulated: fitted right exponent {:.4}", m.fitted_tail_exponent(Side::Right)?);
    println!("  right tail from 128: {:?}", m.first_moment_tail(128.0, Side::Right)?.verdict);
    Ok(())
}

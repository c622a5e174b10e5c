//! Green's function, the Laplace transform of the stopped mean, the martingale
//! defect and its small-`lambda` limit.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{eigen_pair, EigenOptions, EigenPair};
use crate::error::{Error, Result};
use crate::measure::{CaseTag, SpeedMeasure};

fn in_window(pair: &EigenPair, x: f64) -> Result<()> {
    let (lo, hi) = pair.window();
    if x >= lo && x <= hi {
        Ok(())
    } else {
        Err(Error::OutOfDomain { x, lo, hi })
    }
}

/// `G(x, y) = f_minus(min) f_plus(max) / h`.
pub fn green(pair: &EigenPair, x: f64, y: f64) -> Result<f64> {
    in_window(pair, x)?;
    in_window(pair, y)?;
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    Ok(pair.f_minus.value_at(a)? * pair.f_plus.value_at(b)? / pair.wronskian_h)
}

/// `int G(x, y) g(y) m(dy)` over the pair's window. Mass outside the window is
/// ignored, so the window must cover where the integrand lives.
pub fn green_integral<F: Fn(f64) -> f64>(pair: &EigenPair, x: f64, g: F, tol: f64) -> Result<f64> {
    in_window(pair, x)?;
    let (lo, hi) = pair.window();
    let m = pair.measure();
    let h = pair.wronskian_h;
    let fm = |y: f64| pair.f_minus.value_at(y).unwrap();
    let fp = |y: f64| pair.f_plus.value_at(y).unwrap();
    let left = m.integrate(|y| fm(y) * g(y), lo, x, tol)?;
    let right = m.integrate(|y| fp(y) * g(y), x, hi, tol)?;
    // an atom at x belongs to (lo, x] and not to (x, hi]; G is continuous there
    Ok((fp(x) * left + fm(x) * right) / h)
}

fn case_one(pair: &EigenPair) -> Result<f64> {
    let iv = pair.measure().interval();
    match iv.case() {
        CaseTag::CaseI => Ok(iv.l_minus),
        other => Err(Error::Unsupported(format!(
            "the stopped-mean transform needs a finite left end and an infinite right end, got {other:?}"
        ))),
    }
}

/// `int_0^inf e^{-lambda t} E_x[X_{t ^ tau_-} - l_-] dt
///   = (x - l_-)/lambda - alpha_plus f_minus(x) / (lambda h)`.
pub fn stopped_mean_laplace(pair: &EigenPair, x: f64) -> Result<f64> {
    let l = case_one(pair)?;
    in_window(pair, x)?;
    let defect = pair.alpha_plus * pair.f_minus.value_at(x)? / pair.wronskian_h;
    Ok((x - l - defect) / pair.lambda)
}

/// `alpha_plus f_minus(x) / h`: the gap between `x - l_-` and `lambda` times the
/// transformed stopped mean.
pub fn martingale_defect(pair: &EigenPair, x: f64) -> Result<f64> {
    case_one(pair)?;
    in_window(pair, x)?;
    Ok(pair.alpha_plus * pair.f_minus.value_at(x)? / pair.wronskian_h)
}

/// Extrapolated `lim_{lambda -> 0}` with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub error: f64,
}

/// Value at `s = 0` of the polynomial through `(s_i, v_i)` (Neville).
fn neville_at_zero(s: &[f64], v: &[f64]) -> f64 {
    let mut p = v.to_vec();
    let n = p.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (s[i + k] * p[i] - s[i] * p[i + 1]) / (s[i + k] - s[i]);
        }
    }
    p[0]
}

/// Polynomial extrapolation of `values` to `lambda = 0` in the variable `sqrt(lambda)`,
/// through the `degree + 1` smallest lambdas. The error is the change against the
/// window shifted by one sample.
pub fn extrapolate_to_zero(lambdas: &[f64], values: &[f64], degree: usize) -> Result<Extrapolation> {
    let k = degree + 1;
    if lambdas.len() != values.len() || lambdas.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for degree {degree}, got {}",
            k + 1,
            lambdas.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = lambdas.iter().copied().zip(values.iter().copied()).collect();
    if pts.iter().any(|(l, v)| !(*l > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("lambda samples must be positive, values finite".into()));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let fit = |w: &[(f64, f64)]| {
        let s: Vec<f64> = w.iter().map(|p| p.0.sqrt()).collect();
        let v: Vec<f64> = w.iter().map(|p| p.1).collect();
        neville_at_zero(&s, &v)
    };
    let limit = fit(&pts[..k]);
    let prev = fit(&pts[1..=k]);
    Ok(Extrapolation { limit, error: (limit - prev).abs() })
}

/// `lim_{t -> inf} f(t)` from samples `(lambda, F(lambda))` of the Laplace transform,
/// as the small-`lambda` limit of `lambda F(lambda)`.
///
/// Needs at least four samples spanning two decades. Fails when the extrapolation
/// error exceeds `tol`.
pub fn tauberian_limit(samples: &[(f64, f64)], degree: usize, tol: f64) -> Result<Extrapolation> {
    if samples.len() < 4 {
        return Err(Error::InvalidArgument("need at least 4 lambda samples".into()));
    }
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), (l, _)| (a.min(*l), b.max(*l)));
    if max < 100.0 * min {
        return Err(Error::InvalidArgument(format!(
            "lambda samples span [{min}, {max}], less than two decades"
        )));
    }
    let lambdas: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let scaled: Vec<f64> = samples.iter().map(|(l, f)| l * f).collect();
    let ex = extrapolate_to_zero(&lambdas, &scaled, degree)?;
    if ex.error > tol {
        return Err(Error::NotConverged(format!(
            "lambda F(lambda) not settled: extrapolation moves by {:e} (> {tol:e})",
            ex.error
        )));
    }
    Ok(ex)
}

/// Probe schedule and tolerances for the small-`lambda` defect limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectOptions {
    pub lambda0: f64,
    /// Each probe is the previous one divided by this.
    pub ratio: f64,
    pub count: usize,
    pub degree: usize,
    /// Absolute floor for deciding that the limit equals `x - l_-`.
    pub verdict_floor: f64,
    pub eigen: EigenOptions,
}

impl Default for DefectOptions {
    fn default() -> Self {
        DefectOptions {
            lambda0: 0.5,
            ratio: 4.0,
            count: 7,
            degree: 2,
            verdict_floor: 1e-4,
            eigen: EigenOptions::default(),
        }
    }
}

impl DefectOptions {
    pub fn lambdas(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.lambda0 * self.ratio.powi(-(k as i32))).collect()
    }
}

/// Defect `alpha_plus f_minus(x)/h` along a decreasing lambda schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectCurve {
    pub x: f64,
    pub lambdas: Vec<f64>,
    pub defect: Vec<f64>,
    pub extrapolated_limit: f64,
    pub extrapolation_error: f64,
    /// `x - l_-`.
    pub target_gap: f64,
    /// Whether the limit equals the gap within `max(floor, 3 error)`.
    pub limit_equals_gap: bool,
    /// Diagnostic only: defect nonincreasing as lambda decreases.
    pub monotone_in_lambda: bool,
}

impl DefectCurve {
    /// Rows `lambda,defect,target_gap`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,defect,target_gap")?;
        for (l, d) in self.lambdas.iter().zip(&self.defect) {
            writeln!(w, "{l:e},{d:e},{:e}", self.target_gap)?;
        }
        Ok(())
    }
}

/// Sweeps the defect toward `lambda = 0` and extrapolates its limit.
pub fn defect_curve(m: &SpeedMeasure, x: f64, opts: &DefectOptions) -> Result<DefectCurve> {
    let iv = m.interval();
    if iv.case() != CaseTag::CaseI {
        return Err(Error::Unsupported(format!(
            "defect limit needs a finite left end and an infinite right end, got {:?}",
            iv.case()
        )));
    }
    iv.check(x)?;
    let lambdas = opts.lambdas();
    let defect = lambdas
        .par_iter()
        .map(|&l| {
            let pair = eigen_pair(m, l, (x, x), &opts.eigen)?;
            martingale_defect(&pair, x)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ex = extrapolate_to_zero(&lambdas, &defect, opts.degree)?;
    let target_gap = x - iv.l_minus;
    let threshold = opts.verdict_floor.max(3.0 * ex.error);
    let monotone_in_lambda = defect.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(DefectCurve {
        x,
        lambdas,
        defect,
        extrapolated_limit: ex.limit,
        extrapolation_error: ex.error,
        target_gap,
        limit_equals_gap: (ex.limit - target_gap).abs() <= threshold,
        monotone_in_lambda,
    })
}

/// Gaver-Stehfest weights for an even number of terms.
fn stehfest_weights(n: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).fold(1.0f64, |a, i| a * i as f64);
    let half = n / 2;
    (1..=n)
        .map(|k| {
            let mut s = 0.0;
            for j in k.div_ceil(2)..=k.min(half) {
                s += (j as f64).powi(half as i32) * fact(2 * j)
                    / (fact(half - j) * fact(j) * fact(j - 1) * fact(k - j) * fact(2 * j - k));
            }
            if (k + half).is_multiple_of(2) {
                s
            } else {
                -s
            }
        })
        .collect()
}

/// Inverse Laplace transform at `t` by the Gaver-Stehfest formula with `n` terms.
///
/// Suited to smooth, non-oscillating originals; `n` between 10 and 16 in double
/// precision.
pub fn stehfest_inverse<F>(transform: F, t: f64, n: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if n % 2 == 1 || n < 2 {
        return Err(Error::InvalidArgument(format!("Stehfest needs an even term count, got {n}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("inversion time {t} must be positive")));
    }
    let ln2t = std::f64::consts::LN_2 / t;
    let values = (1..=n)
        .into_par_iter()
        .map(|k| transform(k as f64 * ln2t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ln2t * stehfest_weights(n).iter().zip(&values).map(|(w, v)| w * v).sum::<f64>())
}

/// `E_x[X_{t ^ tau_-}]` recovered from the stopped-mean transform.
pub fn stopped_mean_at(m: &SpeedMeasure, x: f64, t: f64, terms: usize, opts: &EigenOptions) -> Result<f64> {
    let iv = m.interval();
    if iv.case() != CaseTag::CaseI {
        return Err(Error::Unsupported("stopped-mean inversion needs Case I".into()));
    }
    let excess = stehfest_inverse(
        |l| {
            let pair = eigen_pair(m, l, (x, x), opts)?;
            stopped_mean_laplace(&pair, x)
        },
        t,
        terms,
    )?;
    Ok(iv.l_minus + excess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    #[test]
    fn brownian_green_is_exponential() {
        let m = MeasureSpec::brownian().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (-2.0, 2.0), &EigenOptions::default()).unwrap();
        for (x, y) in [(0.0, 1.0), (1.5, -0.5), (-2.0, 2.0), (0.3, 0.3)] {
            let g = green(&pair, x, y).unwrap();
            assert!((g - 0.5 * (-(x - y).abs()).exp()).abs() < 1e-10);
            assert_eq!(g, green(&pair, y, x).unwrap());
        }
        assert!(green(&pair, 0.0, 1e3).is_err());
    }

    #[test]
    fn brownian_resolvent_of_one() {
        let m = MeasureSpec::brownian().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (-40.0, 40.0), &EigenOptions::default()).unwrap();
        let total = 0.5 * green_integral(&pair, 0.0, |_| 1.0, 1e-12).unwrap();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn inverse_bessel_stopped_mean_and_defect() {
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (1.0, 1.0), &EigenOptions::default()).unwrap();
        let want = 2.0 * (1.0 - (-1f64).exp());
        let got = stopped_mean_laplace(&pair, 1.0).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} {want}");
        assert!((martingale_defect(&pair, 1.0).unwrap() - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn case_two_is_rejected() {
        let m = MeasureSpec::hybrid().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (0.0, 1.0), &EigenOptions::default()).unwrap();
        assert!(matches!(stopped_mean_laplace(&pair, 0.5), Err(Error::Unsupported(_))));
        assert!(defect_curve(&m, 0.5, &DefectOptions::default()).is_err());
    }

    #[test]
    fn martingale_case_has_no_defect() {
        let spec: MeasureSpec =
            serde_json::from_str(r#"{"family":"constant","interval":[0,"inf"],"density":2}"#).unwrap();
        let m = spec.build().unwrap();
        let pair = eigen_pair(&m, 0.5, (1.0, 1.0), &EigenOptions::default()).unwrap();
        assert_eq!(martingale_defect(&pair, 1.0).unwrap(), 0.0);
        assert_eq!(stopped_mean_laplace(&pair, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn neville_recovers_quadratics() {
        let l = [0.5, 0.125, 0.03125, 0.0078125];
        let v: Vec<f64> = l.iter().map(|x: &f64| 3.0 - 2.0 * x.sqrt() + x).collect();
        let ex = extrapolate_to_zero(&l, &v, 2).unwrap();
        assert!((ex.limit - 3.0).abs() < 1e-12);
        assert!(ex.error < 1e-12);
    }

    #[test]
    fn stehfest_on_known_pairs() {
        let one = stehfest_inverse(|l| Ok(1.0 / l), 3.0, 14).unwrap();
        assert!((one - 1.0).abs() < 1e-6);
        let e = stehfest_inverse(|l| Ok(1.0 / (1.0 + l)), 1.0, 14).unwrap();
        assert!((e - (-1f64).exp()).abs() < 1e-4);
        assert!(stehfest_inverse(|l| Ok(1.0 / l), 1.0, 13).is_err());
    }

    #[test]
    fn tauberian_needs_range() {
        let s: Vec<(f64, f64)> = (0..4).map(|k| (0.5 * 0.9f64.powi(k), 1.0)).collect();
        assert!(tauberian_limit(&s, 2, 1e-3).is_err());
    }
}

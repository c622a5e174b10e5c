//! Quadrature rules shared by the measure and eigenfunction code.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Chebyshev–Lobatto points on [-1, 1], ascending.
pub fn chebyshev_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|j| -(std::f64::consts::PI * j as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Barycentric weights for Chebyshev–Lobatto points.
pub fn chebyshev_lobatto_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

/// Barycentric Lagrange interpolation at `t` from samples on `nodes`.
pub fn barycentric(nodes: &[f64], bw: &[f64], values: &[f64], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let d = t - nodes[j];
        if d == 0.0 {
            return values[j];
        }
        let w = bw[j] / d;
        num += w * values[j];
        den += w;
    }
    num / den
}

/// Values of all Lagrange basis polynomials at `t`.
pub fn lagrange_basis(nodes: &[f64], bw: &[f64], t: f64, out: &mut [f64]) {
    if let Some(j) = nodes.iter().position(|&x| x == t) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[j] = 1.0;
        return;
    }
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let w = bw[j] / (t - nodes[j]);
        out[j] = w;
        den += w;
    }
    out.iter_mut().for_each(|v| *v /= den);
}

/// Adaptive Simpson quadrature of `f` over [a, b] with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)?;
    if !v.is_finite() {
        return Err(Error::Numerical(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a) <= 1e-15 * m.abs().max(1.0) {
        if depth == 0 && delta.abs() > 15.0 * tol {
            return Err(Error::NotConverged(format!(
                "adaptive Simpson hit depth limit on [{a}, {b}]"
            )));
        }
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Fixed Gauss–Legendre rule applied on [a, b].
pub fn gauss_on<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    nodes
        .iter()
        .zip(weights)
        .map(|(&t, &w)| w * f(c + r * t))
        .sum::<f64>()
        * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 14 monomial
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn barycentric_reproduces_polynomial() {
        let n = 9;
        let nodes = chebyshev_lobatto(n);
        let bw = chebyshev_lobatto_weights(n);
        let vals: Vec<f64> = nodes.iter().map(|t| t.powi(7) - 3.0 * t).collect();
        let t = 0.3141;
        let p = barycentric(&nodes, &bw, &vals, t);
        assert!((p - (t.powi(7) - 3.0 * t)).abs() < 1e-14);
    }

    #[test]
    fn simpson_on_exponential() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
    }
}

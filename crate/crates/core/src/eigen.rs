//! Positive monotone solutions of `d/dm d/dx f = lambda f`.
//!
//! `f_minus` (increasing) and `f_plus` (decreasing) are built by successive
//! approximation anchored at the boundary where each solution is recessive, so the
//! series always integrates in the growing direction. Infinite or singular ends are
//! approached along a ladder of truncation points until the normalized solution
//! stops moving. The Picard basis `(phi, psi)` at the expansion point and the ratio
//! construction `phi - c psi` are kept as a second, independent route.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Profile, Side, SpeedMeasure, TailVerdict};
use crate::mesh::{successive_approximation, Anchor, Mesh, MeshOptions, TailClosure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    /// Basis functions carry no monotonicity guarantee.
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Vanishes at the finite end it is recessive at; unit value at the expansion point.
    FMinusVanishingAtLMinus,
    /// Limit one at the infinite end it is recessive at.
    AlphaPlusOne,
    /// Unit value at the expansion point.
    UnitAtOrigin,
    /// `phi(x0) = 1, phi'(x0) = 0` or `psi(x0) = 0, psi'(x0) = 1`.
    InitialConditions,
    /// Killed solution, `f_minus - (f_minus(z)/f_plus(z)) f_plus`.
    Killed,
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Normalization::FMinusVanishingAtLMinus => "f_minus_vanishing_at_l_minus",
            Normalization::AlphaPlusOne => "alpha_plus_one",
            Normalization::UnitAtOrigin => "unit_at_origin",
            Normalization::InitialConditions => "initial_conditions",
            Normalization::Killed => "killed",
        };
        f.write_str(s)
    }
}

/// Knobs for the eigenfunction solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub mesh: MeshOptions,
    /// Relative size of the last series term at which summation stops.
    pub series_tol: f64,
    pub max_terms: usize,
    /// Relative change between ladder rungs at which a limit counts as converged.
    pub ladder_tol: f64,
    pub max_rungs: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            mesh: MeshOptions::default(),
            series_tol: 1e-16,
            max_terms: 20_000,
            ladder_tol: 1e-10,
            max_rungs: 40,
        }
    }
}

/// Grid-sampled solution with right derivatives.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    lambda: f64,
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    monotonicity: Monotonicity,
    normalization: Normalization,
}

impl Eigenfunction {
    fn new(
        lambda: f64,
        mesh: Mesh,
        values: Vec<f64>,
        derivs: Vec<f64>,
        monotonicity: Monotonicity,
        normalization: Normalization,
    ) -> Self {
        Eigenfunction { lambda, mesh: Arc::new(mesh), values, derivs, monotonicity, normalization }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// `[lo, hi]` covered by the grid.
    pub fn window(&self) -> (f64, f64) {
        (self.mesh.lo(), self.mesh.hi())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.mesh.unique_indices().into_iter().map(|i| self.mesh.nodes()[i]).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.mesh.unique_indices().into_iter().map(|i| self.values[i]).collect()
    }

    pub fn right_derivative(&self) -> Vec<f64> {
        self.mesh.unique_indices().into_iter().map(|i| self.derivs[i]).collect()
    }

    fn check_point(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.window();
        if x >= lo && x <= hi {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, lo, hi })
        }
    }

    /// Value at any point of the window.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.mesh.eval(&self.values, x).unwrap())
    }

    /// Right derivative at any point of the window.
    pub fn derivative_at(&self, x: f64) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.mesh.eval(&self.derivs, x).unwrap())
    }

    /// `c * f`.
    pub fn scaled(&self, c: f64) -> Eigenfunction {
        Eigenfunction {
            values: self.values.iter().map(|v| v * c).collect(),
            derivs: self.derivs.iter().map(|v| v * c).collect(),
            mesh: self.mesh.clone(),
            ..*self
        }
    }

    fn restricted(&self, lo: f64, hi: f64) -> Result<Eigenfunction> {
        let b = self.mesh.bounds();
        let c0 = self.mesh.boundary_index(lo).ok_or_else(|| {
            Error::Numerical(format!("{lo} is not a cell boundary of [{}, {}]", b[0], b[b.len() - 1]))
        })?;
        let c1 = self.mesh.boundary_index(hi).ok_or_else(|| {
            Error::Numerical(format!("{hi} is not a cell boundary of [{}, {}]", b[0], b[b.len() - 1]))
        })?;
        let (mesh, r) = self.mesh.slice(c0, c1);
        Ok(Eigenfunction::new(
            self.lambda,
            mesh,
            self.values[r.clone()].to_vec(),
            self.derivs[r].to_vec(),
            self.monotonicity,
            self.normalization,
        ))
    }

    /// Mirror image `g(x) = f(-x)` on the reflected measure.
    fn reflected(&self, m_reflected: &SpeedMeasure) -> Eigenfunction {
        let mesh = self.mesh.reflected(m_reflected);
        let mono = match self.monotonicity {
            Monotonicity::Increasing => Monotonicity::Decreasing,
            Monotonicity::Decreasing => Monotonicity::Increasing,
            Monotonicity::Unspecified => Monotonicity::Unspecified,
        };
        Eigenfunction::new(
            self.lambda,
            mesh,
            self.mesh.reflect_field(&self.values, false),
            self.mesh.reflect_field(&self.derivs, true),
            mono,
            self.normalization,
        )
    }

    /// Checks positivity and monotonicity on the grid.
    pub fn validate(&self) -> Result<()> {
        let vals = self.values();
        if let Some((i, v)) = vals.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "eigenfunction not positive at x = {}: {v}",
                self.grid()[i]
            )));
        }
        let sign = match self.monotonicity {
            Monotonicity::Increasing => 1.0,
            Monotonicity::Decreasing => -1.0,
            Monotonicity::Unspecified => return Ok(()),
        };
        for w in vals.windows(2) {
            if sign * (w[1] - w[0]) < -1e-9 * w[0].abs().max(w[1].abs()) {
                return Err(Error::Numerical(format!(
                    "eigenfunction not {:?}: {} then {}",
                    self.monotonicity, w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Residuals of the integrated equation, checked between cell boundaries with
    /// adaptive Simpson on the interpolated solution:
    /// `integral`: `max |f(x) - f(x_r) - f'(x_r)(x - x_r) - lambda int (x - y) f dm| / sup|f|`,
    /// `derivative`: `max |f'(x) - f'(x_r) - lambda int f dm| / sup|f'|`.
    pub fn residuals(&self, m: &SpeedMeasure) -> Result<Residuals> {
        let b = self.mesh.bounds();
        let xr = b[0];
        let f = |y: f64| self.mesh.eval(&self.values, y).unwrap();
        let fr = self.values[0];
        let dr = self.derivs[0];
        let supf = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let supd = self.derivs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let (mut a0, mut a1) = (0.0, 0.0);
        let (mut worst_i, mut worst_d) = (0.0f64, 0.0f64);
        for w in b.windows(2) {
            let tol = 1e-13 * supf.max(1e-300);
            a0 += m.integrate(f, w[0], w[1], tol)?;
            a1 += m.integrate(|y| y * f(y), w[0], w[1], tol * w[1].abs().max(1.0))?;
            let x = w[1];
            let fx = self.mesh.eval(&self.values, x).unwrap();
            let dx = self.mesh.eval(&self.derivs, x).unwrap();
            let lhs = fx - fr - dr * (x - xr);
            // int (x - y) f dm = x a0 - a1, re-centred at xr to limit cancellation
            let rhs = self.lambda * ((x - xr) * a0 - (a1 - xr * a0));
            worst_i = worst_i.max((lhs - rhs).abs() / supf);
            worst_d = worst_d.max((dx - dr - self.lambda * a0).abs() / supd);
        }
        Ok(Residuals { integral: worst_i, derivative: worst_d })
    }

    /// Writes `x,value,right_derivative` rows after a header line carrying lambda,
    /// normalization and window.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (lo, hi) = self.window();
        writeln!(w, "# lambda={},normalization={},window=[{},{}]", self.lambda, self.normalization, lo, hi)?;
        writeln!(w, "x,value,right_derivative")?;
        for ((x, v), d) in self.grid().iter().zip(self.values()).zip(self.right_derivative()) {
            writeln!(w, "{x:e},{v:e},{d:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub integral: f64,
    pub derivative: f64,
}

/// Matched `(f_minus, f_plus)` at one `lambda`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub f_minus: Eigenfunction,
    pub f_plus: Eigenfunction,
    pub wronskian_h: f64,
    /// Maximum relative deviation of the Wronskian across the grid.
    pub wronskian_deviation: f64,
    /// `lim f_plus` at the right end, in `f_plus`'s normalization.
    pub alpha_plus: f64,
    pub lambda: f64,
    /// Outermost truncation points used for the left and right limits.
    pub truncation_window: (f64, f64),
    measure: Arc<SpeedMeasure>,
}

impl EigenPair {
    pub fn measure(&self) -> &SpeedMeasure {
        &self.measure
    }

    pub fn window(&self) -> (f64, f64) {
        let (a, b) = self.f_minus.window();
        let (c, d) = self.f_plus.window();
        (a.max(c), b.min(d))
    }
}

/// Record of a truncation ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderTrace {
    pub anchors: Vec<f64>,
    pub probes: Vec<f64>,
    pub converged: bool,
}

/// Expansion point for the Picard basis: 0 when inside the interval, else one unit
/// in from the finite end (the midpoint for short bounded intervals).
pub fn expansion_point(m: &SpeedMeasure) -> f64 {
    let iv = m.interval();
    if iv.contains(0.0) {
        return 0.0;
    }
    match (iv.l_minus.is_finite(), iv.l_plus.is_finite()) {
        (true, true) => {
            let mid = 0.5 * (iv.l_minus + iv.l_plus);
            if iv.l_plus - iv.l_minus > 2.0 {
                if iv.l_minus >= 0.0 {
                    iv.l_minus + 1.0
                } else {
                    iv.l_plus - 1.0
                }
            } else {
                mid
            }
        }
        (true, false) => iv.l_minus + 1.0,
        (false, true) => iv.l_plus - 1.0,
        (false, false) => 0.0,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")))
    }
}

/// Validates `window` and extends it to contain the expansion point. A window that
/// collapses to a point is widened toward the right (or left, near a finite right end).
fn solution_window(m: &SpeedMeasure, window: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = window;
    let iv = m.interval();
    iv.check(lo)?;
    iv.check(hi)?;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("window [{lo}, {hi}] is reversed")));
    }
    let x0 = expansion_point(m);
    let (lo, hi) = (lo.min(x0), hi.max(x0));
    if hi > lo {
        return Ok((lo, hi));
    }
    let room = iv.l_plus - hi;
    if room > 2.0 {
        Ok((lo, hi + 1.0))
    } else if room > lo - iv.l_minus {
        Ok((lo, hi + 0.5 * room))
    } else {
        Ok((lo - 0.5 * (lo - iv.l_minus), hi))
    }
}

/// Picard basis at the expansion point: `phi = 1 + sum lambda^n phi_n`,
/// `psi = x + sum lambda^n psi_n`, `u_n(x) = int_{x0}^x (x - y) u_{n-1}(y) m(dy)`.
///
/// Stops when the last term's sup-norm falls below `tol` relative to the partial sum.
pub fn picard_basis(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    tol: f64,
    opts: &EigenOptions,
) -> Result<(Eigenfunction, Eigenfunction)> {
    check_lambda(lambda)?;
    let (lo, hi) = window;
    let x0 = expansion_point(m);
    let iv = m.interval();
    let inside = |x: f64| x >= iv.l_minus && x <= iv.l_plus && x.is_finite();
    if !inside(lo) || !inside(hi) || lo >= hi {
        return Err(Error::InvalidArgument(format!("window [{lo}, {hi}] outside the interval")));
    }
    if x0 < lo || x0 > hi {
        return Err(Error::InvalidArgument(format!(
            "window [{lo}, {hi}] must contain the expansion point {x0}"
        )));
    }
    let mesh = Mesh::build(m, lambda, lo, hi, &[x0], opts.mesh)?;
    let b0 = mesh.boundary_index(x0).unwrap();
    let basis = |value: f64, slope: f64| {
        successive_approximation(
            &mesh,
            lambda,
            Anchor { boundary: b0, value, slope, closure: None },
            tol,
            opts.max_terms,
        )
    };
    let phi = basis(1.0, 0.0)?;
    let psi = basis(0.0, 1.0)?;
    let mk = |s: crate::mesh::SeriesSolution| {
        Eigenfunction::new(
            lambda,
            mesh.clone(),
            s.values,
            s.derivs,
            Monotonicity::Unspecified,
            Normalization::InitialConditions,
        )
    };
    Ok((mk(phi), mk(psi)))
}

/// How the left end is approached when building the increasing solution.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LeftEnd {
    /// Finite end with bounded density: anchor on the end itself.
    Regular(f64),
    /// Finite end where the density blows up.
    Singular(f64),
    /// Infinite end, infinite tail moment.
    NaturalInfinite,
    /// Infinite end, finite tail moment: the limit of the solution is positive.
    EntranceInfinite,
}

fn classify_left_end(m: &SpeedMeasure) -> Result<LeftEnd> {
    let l = m.interval().l_minus;
    if l.is_finite() {
        let bounded = match &m.segments()[0].profile {
            Profile::Constant(_) | Profile::Table { .. } => true,
            Profile::Power { exponent, .. } => *exponent <= 0.0 || l != 0.0,
        };
        return Ok(if bounded { LeftEnd::Regular(l) } else { LeftEnd::Singular(l) });
    }
    let r = expansion_point(m);
    match m.first_moment_tail(r, Side::Left)?.verdict {
        TailVerdict::Infinite => Ok(LeftEnd::NaturalInfinite),
        TailVerdict::Finite => Ok(LeftEnd::EntranceInfinite),
    }
}

struct Increasing {
    f: Eigenfunction,
    trace: LadderTrace,
    anchor: f64,
}

/// `k`-th truncation point; `step` is the first outward distance for infinite ends.
fn ladder_anchor(end: LeftEnd, lo: f64, step: f64, k: usize) -> f64 {
    let scale = 2f64.powi(k as i32);
    match end {
        LeftEnd::Regular(l) => l,
        LeftEnd::Singular(l) => l + (lo - l) / scale,
        LeftEnd::NaturalInfinite | LeftEnd::EntranceInfinite => lo - step * scale,
    }
}

/// First ladder step: `max(1, |lo|)`, shortened to a few decay lengths where the
/// density is large.
fn ladder_step(m: &SpeedMeasure, lambda: f64, lo: f64) -> f64 {
    let decay = 1.0 / (lambda * m.density(lo)).sqrt();
    lo.abs().max(1.0).min(4.0 * decay)
}

/// Positive increasing solution on `[min(lo, x0), max(hi, x0)]`, recessive at the left end.
fn increasing_solution(
    m: &SpeedMeasure,
    lambda: f64,
    lo: f64,
    hi: f64,
    opts: &EigenOptions,
) -> Result<Increasing> {
    let x0 = expansion_point(m);
    let (lo, hi) = (lo.min(x0), hi.max(x0));
    let end = classify_left_end(m)?;
    let mut trace = LadderTrace { anchors: vec![], probes: vec![], converged: false };
    let mut last: Option<(Eigenfunction, [f64; 2])> = None;
    let step = ladder_step(m, lambda, lo);
    let rungs = if matches!(end, LeftEnd::Regular(_)) { 1 } else { opts.max_rungs };
    for k in 1..=rungs {
        let a = ladder_anchor(end, lo, step, k);
        let (value, slope, closure, norm) = match end {
            LeftEnd::Regular(_) | LeftEnd::Singular(_) => {
                (0.0, 1.0, None, Normalization::FMinusVanishingAtLMinus)
            }
            LeftEnd::NaturalInfinite => {
                (1.0, (lambda * m.density(a)).sqrt(), None, Normalization::UnitAtOrigin)
            }
            LeftEnd::EntranceInfinite => {
                let (mass, first_moment) = m.outer_moments(Side::Left, a).ok_or_else(|| {
                    Error::Numerical(format!("left tail moments diverge beyond {a}"))
                })?;
                (1.0, 0.0, Some((Side::Left, TailClosure { mass, first_moment })), Normalization::AlphaPlusOne)
            }
        };
        let mesh = if a < lo {
            Mesh::build(m, lambda, a, hi, &[lo, x0], opts.mesh)?
        } else {
            Mesh::build(m, lambda, lo, hi, &[x0], opts.mesh)?
        };
        let sol = match successive_approximation(
            &mesh,
            lambda,
            Anchor { boundary: 0, value, slope, closure },
            opts.series_tol,
            opts.max_terms,
        ) {
            Ok(s) => s,
            Err(e) => {
                if let Some((_, [p_lo, p_hi])) = &last {
                    // overflow means f(a)/f(hi) < 1e-280, so with f(lo)/f(hi) above
                    // 1e-200 moving the anchor further cannot change f on the window
                    if matches!(e, Error::Numerical(_)) && p_lo / p_hi > 1e-200 {
                        trace.converged = true;
                    }
                    break;
                }
                return Err(e);
            }
        };
        let f = Eigenfunction::new(lambda, mesh, sol.values, sol.derivs, Monotonicity::Increasing, norm);
        let scale = match norm {
            Normalization::AlphaPlusOne => 1.0,
            _ => 1.0 / f.value_at(x0)?,
        };
        let f = f.scaled(scale);
        // the solution is pinned at x0, so probe both window ends
        let probe = [f.value_at(lo)?, f.value_at(hi)?];
        trace.anchors.push(a);
        trace.probes.push(probe[0]);
        if let Some((_, prev)) = &last {
            let settled = probe
                .iter()
                .zip(prev)
                .all(|(p, q)| (p - q).abs() <= opts.ladder_tol * p.abs());
            if settled {
                trace.converged = true;
                last = Some((f, probe));
                break;
            }
        }
        last = Some((f, probe));
        if matches!(end, LeftEnd::Regular(_)) {
            trace.converged = true;
        }
    }
    let (f, _) = last.unwrap();
    if !trace.converged {
        return Err(Error::NotConverged(format!(
            "left limit not stabilized after {} rungs (last probes {:?})",
            trace.anchors.len(),
            &trace.probes[trace.probes.len().saturating_sub(3)..]
        )));
    }
    let anchor = *trace.anchors.last().unwrap();
    let f = if anchor < lo { f.restricted(lo, hi)? } else { f };
    Ok(Increasing { f, trace, anchor })
}

/// Positive increasing solution `f_minus` on a window containing `window` and the
/// expansion point.
pub fn solve_f_minus(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    opts: &EigenOptions,
) -> Result<Eigenfunction> {
    check_lambda(lambda)?;
    let (lo, hi) = solution_window(m, window)?;
    let inc = increasing_solution(m, lambda, lo, hi, opts)?;
    inc.f.validate()?;
    Ok(inc.f)
}

/// Positive decreasing solution `f_plus`, obtained as the increasing solution of the
/// reflected measure. With a finite right tail moment it is normalized to limit 1
/// (the `g` series); otherwise to 1 at the expansion point.
pub fn solve_f_plus(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    opts: &EigenOptions,
) -> Result<Eigenfunction> {
    check_lambda(lambda)?;
    let window = solution_window(m, window)?;
    Ok(decreasing_solution(m, lambda, window, opts)?.f)
}

fn decreasing_solution(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    opts: &EigenOptions,
) -> Result<Increasing> {
    let r = m.reflected();
    let inc = increasing_solution(&r, lambda, -window.1, -window.0, opts)?;
    let f = inc.f.reflected(m);
    f.validate()?;
    Ok(Increasing { f, trace: inc.trace, anchor: -inc.anchor })
}

/// `h = f_plus f_minus' - f_minus f_plus'`: median over the shared grid and the
/// maximum relative deviation from it.
pub fn wronskian(f_minus: &Eigenfunction, f_plus: &Eigenfunction) -> Result<(f64, f64)> {
    if f_minus.lambda() != f_plus.lambda() {
        return Err(Error::InvalidArgument("eigenfunctions have different lambda".into()));
    }
    let (a, b) = f_minus.window();
    let (c, d) = f_plus.window();
    let (lo, hi) = (a.max(c), b.min(d));
    if lo > hi {
        return Err(Error::InvalidArgument("eigenfunction grids do not overlap".into()));
    }
    let mut hs = Vec::new();
    for ((x, v), dv) in f_minus.grid().iter().zip(f_minus.values()).zip(f_minus.right_derivative()) {
        if *x < lo || *x > hi {
            continue;
        }
        let p = f_plus.value_at(*x)?;
        let dp = f_plus.derivative_at(*x)?;
        hs.push(p * dv - v * dp);
    }
    let mut sorted = hs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = sorted[sorted.len() / 2];
    let dev = hs.iter().fold(0.0f64, |acc, v| acc.max(((v - h) / h).abs()));
    if !(h > 0.0) {
        return Err(Error::Numerical(format!("non-positive Wronskian {h}")));
    }
    if dev > 1e-4 {
        return Err(Error::Numerical(format!(
            "Wronskian varies by {dev:e} across the grid; solutions inconsistent"
        )));
    }
    Ok((h, dev))
}

/// Builds `(f_minus, f_plus)` on a common window containing `window` and the
/// expansion point, with `h` and `alpha_plus`.
pub fn eigen_pair(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    opts: &EigenOptions,
) -> Result<EigenPair> {
    check_lambda(lambda)?;
    let window = solution_window(m, window)?;
    let inc = increasing_solution(m, lambda, window.0, window.1, opts)?;
    inc.f.validate()?;
    let dec = decreasing_solution(m, lambda, window, opts)?;
    let (h, dev) = wronskian(&inc.f, &dec.f)?;
    let alpha_plus = if m.interval().l_plus.is_finite() {
        0.0
    } else {
        match dec.f.normalization() {
            Normalization::AlphaPlusOne => 1.0,
            _ => 0.0,
        }
    };
    Ok(EigenPair {
        f_minus: inc.f,
        f_plus: dec.f,
        wronskian_h: h,
        wronskian_deviation: dev,
        alpha_plus,
        lambda,
        truncation_window: (inc.anchor, dec.anchor),
        measure: Arc::new(m.clone()),
    })
}

/// `f_minus^z = f_minus - (f_minus(z)/f_plus(z)) f_plus` on `[z, hi]`: the increasing
/// solution killed at `z`.
pub fn killed_f_minus(pair: &EigenPair, z: f64, opts: &EigenOptions) -> Result<Eigenfunction> {
    let (lo, hi) = pair.window();
    if z < lo || z >= hi {
        return Err(Error::OutOfDomain { x: z, lo, hi });
    }
    let fpz = pair.f_plus.value_at(z)?;
    if !(fpz > 0.0) {
        return Err(Error::Numerical(format!("f_plus({z}) = {fpz} is not positive")));
    }
    let ratio = pair.f_minus.value_at(z)? / fpz;
    let mesh = Mesh::build(pair.measure(), pair.lambda, z, hi, &[], opts.mesh)?;
    let mut values = Vec::with_capacity(mesh.len());
    let mut derivs = Vec::with_capacity(mesh.len());
    for (i, &x) in mesh.nodes().iter().enumerate() {
        // right limits at cell starts, left limits at cell ends
        let at_end = (i + 1) % mesh.order() == 0;
        let (v, d) = if at_end && x < hi {
            let xl = x - (x.abs().max(1.0)) * 1e-15;
            (
                pair.f_minus.value_at(x)? - ratio * pair.f_plus.value_at(x)?,
                pair.f_minus.derivative_at(xl)? - ratio * pair.f_plus.derivative_at(xl)?,
            )
        } else {
            (
                pair.f_minus.value_at(x)? - ratio * pair.f_plus.value_at(x)?,
                pair.f_minus.derivative_at(x)? - ratio * pair.f_plus.derivative_at(x)?,
            )
        };
        values.push(v);
        derivs.push(d);
    }
    values[0] = 0.0;
    Ok(Eigenfunction::new(
        pair.lambda,
        mesh,
        values,
        derivs,
        Monotonicity::Increasing,
        Normalization::Killed,
    ))
}

/// `E_x[exp(-lambda tau_a)]` from the eigenfunction ratios: `f_plus(x)/f_plus(a)` for
/// `a < x`, `f_minus(x)/f_minus(a)` for `a > x` (the latter on `{tau_a < tau_-}`).
pub fn hitting_laplace(pair: &EigenPair, x: f64, a: f64) -> Result<f64> {
    let iv = pair.measure().interval();
    iv.check(x)?;
    iv.check(a)?;
    if a == x {
        return Ok(1.0);
    }
    if a < x {
        Ok(pair.f_plus.value_at(x)? / pair.f_plus.value_at(a)?)
    } else {
        Ok(pair.f_minus.value_at(x)? / pair.f_minus.value_at(a)?)
    }
}

/// Increasing solution by the ratio construction `phi - (lim phi/psi) psi`, the limit
/// taken at the left end along the truncation ladder. Independent of the anchored
/// solver; used to cross-check it.
pub fn f_minus_by_ratio(
    m: &SpeedMeasure,
    lambda: f64,
    window: (f64, f64),
    opts: &EigenOptions,
) -> Result<(Eigenfunction, LadderTrace)> {
    check_lambda(lambda)?;
    let (lo, hi) = solution_window(m, window)?;
    let end = classify_left_end(m)?;
    let mut trace = LadderTrace { anchors: vec![], probes: vec![], converged: false };
    let rungs = if matches!(end, LeftEnd::Regular(_)) { 1 } else { opts.max_rungs };
    let mut ratio = f64::NAN;
    let step = ladder_step(m, lambda, lo);
    for k in 1..=rungs {
        let a = ladder_anchor(end, lo, step, k);
        let (phi, psi) = match picard_basis(m, lambda, (a, hi), opts.series_tol, opts) {
            Ok(b) => b,
            Err(e) => {
                if trace.probes.is_empty() {
                    return Err(e);
                }
                break;
            }
        };
        let c = phi.value_at(a)? / psi.value_at(a)?;
        if let Some(prev) = trace.probes.last() {
            if (c - prev).abs() <= opts.ladder_tol * c.abs() {
                trace.converged = true;
            }
        }
        trace.anchors.push(a);
        trace.probes.push(c);
        ratio = c;
        if trace.converged || matches!(end, LeftEnd::Regular(_)) {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        return Err(Error::NotConverged(format!(
            "ratio phi/psi not stabilized after {} rungs",
            trace.anchors.len()
        )));
    }
    let (phi, psi) = picard_basis(m, lambda, (lo, hi), opts.series_tol, opts)?;
    let values = phi.values.iter().zip(&psi.values).map(|(p, q)| p - ratio * q).collect();
    let derivs = phi.derivs.iter().zip(&psi.derivs).map(|(p, q)| p - ratio * q).collect();
    let f = Eigenfunction {
        lambda,
        mesh: phi.mesh.clone(),
        values,
        derivs,
        monotonicity: Monotonicity::Increasing,
        normalization: Normalization::UnitAtOrigin,
    };
    Ok((f, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    fn opts() -> EigenOptions {
        EigenOptions::default()
    }

    #[test]
    fn brownian_picard_basis_is_cosh_sinh() {
        let m = MeasureSpec::brownian().build().unwrap();
        let (phi, psi) = picard_basis(&m, 0.5, (-2.0, 2.0), 1e-16, &opts()).unwrap();
        for ((x, p), q) in phi.grid().iter().zip(phi.values()).zip(psi.values()) {
            assert!((p - x.cosh()).abs() < 1e-8);
            assert!((q - x.sinh()).abs() < 1e-8);
        }
    }

    #[test]
    fn picard_basis_small_lambda_limit() {
        let m = MeasureSpec::hybrid().build().unwrap();
        let (phi, psi) = picard_basis(&m, 1e-9, (-3.0, 5.0), 1e-16, &opts()).unwrap();
        for ((x, p), q) in phi.grid().iter().zip(phi.values()).zip(psi.values()) {
            assert!((p - 1.0).abs() < 1e-6);
            assert!((q - x).abs() < 1e-6);
        }
    }

    #[test]
    fn psi_first_term_for_brownian() {
        // psi_1(x) = int_0^x (x - y) y 2 dy = x^3 / 3, so psi = x + lambda x^3/3 + O(lambda^2)
        let m = MeasureSpec::brownian().build().unwrap();
        let lam = 1e-6;
        let (_, psi) = picard_basis(&m, lam, (-1.5, 1.5), 1e-16, &opts()).unwrap();
        for (x, q) in psi.grid().iter().zip(psi.values()) {
            let first = (q - x) / lam;
            assert!((first - x.powi(3) / 3.0).abs() < 1e-4, "{x}: {first}");
        }
    }

    #[test]
    fn picard_window_must_contain_expansion_point() {
        let m = MeasureSpec::brownian().build().unwrap();
        assert!(picard_basis(&m, 0.5, (1.0, 2.0), 1e-16, &opts()).is_err());
    }

    #[test]
    fn brownian_pair() {
        let m = MeasureSpec::brownian().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (-2.0, 2.0), &opts()).unwrap();
        for (x, v) in pair.f_minus.grid().iter().zip(pair.f_minus.values()) {
            assert!((v / x.exp() - 1.0).abs() < 1e-9);
        }
        for (x, v) in pair.f_plus.grid().iter().zip(pair.f_plus.values()) {
            assert!((v / (-x).exp() - 1.0).abs() < 1e-9);
        }
        assert!((pair.wronskian_h - 2.0).abs() < 1e-9);
        assert_eq!(pair.alpha_plus, 0.0);
    }

    #[test]
    fn inverse_bessel_pair() {
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (0.2, 10.0), &opts()).unwrap();
        // f_minus is normalized to 1 at x0 = 1
        let c = 1f64.exp();
        for (x, v) in pair.f_minus.grid().iter().zip(pair.f_minus.values()) {
            let want = c * x * (-1.0 / x).exp();
            assert!((v / want - 1.0).abs() < 1e-8, "{x}: {v} vs {want}");
        }
        for (x, v) in pair.f_plus.grid().iter().zip(pair.f_plus.values()) {
            let want = x * (1.0 / x).sinh();
            assert!((v / want - 1.0).abs() < 1e-8, "{x}: {v} vs {want}");
        }
        assert_eq!(pair.alpha_plus, 1.0);
        assert!((pair.wronskian_h / c - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ratio_route_agrees_with_anchored_route() {
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let anchored = solve_f_minus(&m, 0.5, (0.3, 4.0), &opts()).unwrap();
        let (ratio, trace) = f_minus_by_ratio(&m, 0.5, (0.3, 4.0), &opts()).unwrap();
        assert!(trace.converged);
        for x in [0.3, 0.5, 1.0, 2.0, 4.0] {
            let a = anchored.value_at(x).unwrap();
            let r = ratio.value_at(x).unwrap();
            assert!((a / r - 1.0).abs() < 1e-7, "{x}: {a} vs {r}");
        }
    }

    #[test]
    fn killed_solution_vanishes_and_decomposes() {
        let m = MeasureSpec::brownian().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (-2.0, 2.0), &opts()).unwrap();
        let k = killed_f_minus(&pair, 0.0, &opts()).unwrap();
        assert_eq!(k.value_at(0.0).unwrap(), 0.0);
        for (x, v) in k.grid().iter().zip(k.values()) {
            assert!((v - 2.0 * x.sinh()).abs() < 1e-9);
        }
    }

    #[test]
    fn hitting_laplace_ratios() {
        let m = MeasureSpec::brownian().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (-0.5, 1.5), &opts()).unwrap();
        assert_eq!(hitting_laplace(&pair, 1.0, 1.0).unwrap(), 1.0);
        assert!((hitting_laplace(&pair, 1.0, 0.0).unwrap() - (-1f64).exp()).abs() < 1e-10);
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let pair = eigen_pair(&m, 0.5, (0.5, 3.0), &opts()).unwrap();
        let want = (-1f64).exp() / (2.0 * (-0.5f64).exp());
        assert!((hitting_laplace(&pair, 1.0, 2.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn csv_header() {
        let m = MeasureSpec::brownian().build().unwrap();
        let f = solve_f_minus(&m, 0.5, (-1.0, 1.0), &opts()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# lambda=0.5,normalization=unit_at_origin"));
        assert_eq!(lines.next().unwrap(), "x,value,right_derivative");
        assert_eq!(lines.count(), f.grid().len());
    }
}

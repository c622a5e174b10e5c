//! Piecewise-polynomial meshes and the successive-approximation engine.
//!
//! A mesh is a sequence of cells, each carrying Chebyshev–Lobatto nodes. Fields are
//! stored cell by cell, so a cell boundary appears twice: the last node of the left
//! cell holds the left limit, the first node of the right cell the right limit.
//! Atoms sit on cell boundaries and make first derivatives jump there.
//!
//! Cumulative integrals against `m` use per-cell product weights
//! `W[i][j] = int_{a}^{x_i} l_j(y) rho(y) dy` evaluated with Gauss–Legendre on the exact
//! density, so the density is never interpolated.

use crate::error::{Error, Result};
use crate::measure::{Side, SpeedMeasure};
use crate::quadrature::{
    barycentric, chebyshev_lobatto, chebyshev_lobatto_weights, gauss_legendre, lagrange_basis,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Nodes per cell.
    pub order: usize,
    /// Cell width as a fraction of the local length scale.
    pub kappa: f64,
    pub max_cells: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { order: 12, kappa: 0.25, max_cells: 40_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    order: usize,
    bounds: Vec<f64>,
    nodes: Vec<f64>,
    w_measure: Vec<f64>,
    w_leb: Vec<f64>,
    atoms: Vec<f64>,
    ref_nodes: Vec<f64>,
    bary: Vec<f64>,
}

/// Which weight a cumulative integral uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Measure,
    Lebesgue,
}

impl Mesh {
    /// Builds a mesh on `[lo, hi]` with boundaries at `breaks`, the measure's knots and
    /// atoms, and cell widths adapted to `lambda` and the density.
    pub fn build(
        m: &SpeedMeasure,
        lambda: f64,
        lo: f64,
        hi: f64,
        breaks: &[f64],
        opts: MeshOptions,
    ) -> Result<Mesh> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("mesh range [{lo}, {hi}]")));
        }
        let iv = m.interval();
        let inside = |x: f64| x >= iv.l_minus && x <= iv.l_plus;
        if !inside(lo) || !inside(hi) {
            return Err(Error::OutOfDomain {
                x: if inside(lo) { hi } else { lo },
                lo: iv.l_minus,
                hi: iv.l_plus,
            });
        }
        let mut cuts = vec![lo];
        cuts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
        cuts.extend(m.knots_in(lo, hi));
        cuts.push(hi);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();

        let width = |x: f64| -> f64 {
            let rho = m.density(x);
            let liouville = if rho > 0.0 { 1.0 / (lambda * rho).sqrt() } else { f64::INFINITY };
            let s = liouville.min(m.variation_scale(x)).min(4.0 * x.abs().max(1.0));
            opts.kappa * s
        };
        let mut bounds = vec![lo];
        for w in cuts.windows(2) {
            let (s, e) = (w[0], w[1]);
            let mut pts = vec![s];
            let mut x = s;
            while x < e {
                let mut h = width(x);
                h = h.min(width((x + h).min(e))).min(width((x + 0.5 * h).min(e)));
                if !(h > 0.0) || !h.is_finite() {
                    return Err(Error::Numerical(format!("degenerate cell width at {x}")));
                }
                x += h;
                pts.push(x);
                if bounds.len() + pts.len() > opts.max_cells + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "mesh on [{lo}, {hi}] needs more than {} cells",
                        opts.max_cells
                    )));
                }
            }
            // shrink uniformly so the last boundary lands on e
            let span = x - s;
            for p in pts.iter().skip(1) {
                bounds.push(s + (p - s) * (e - s) / span);
            }
            *bounds.last_mut().unwrap() = e;
        }
        Ok(Self::from_bounds(m, bounds, opts.order))
    }

    /// Builds a mesh with the given cell boundaries.
    pub fn from_bounds(m: &SpeedMeasure, bounds: Vec<f64>, order: usize) -> Mesh {
        let ref_nodes = chebyshev_lobatto(order);
        let bary = chebyshev_lobatto_weights(order);
        let (gx, gw) = gauss_legendre(2 * order + 4);
        let ncells = bounds.len() - 1;
        let mut nodes = Vec::with_capacity(ncells * order);
        let mut w_measure = vec![0.0; ncells * order * order];
        let mut basis = vec![0.0; order];

        // Lebesgue cumulative weights on the reference cell
        let mut w_leb = vec![0.0; order * order];
        for i in 1..order {
            let (a, b) = (-1.0, ref_nodes[i]);
            let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
            for (t, w) in gx.iter().zip(&gw) {
                lagrange_basis(&ref_nodes, &bary, c + r * t, &mut basis);
                for j in 0..order {
                    w_leb[i * order + j] += w * r * basis[j];
                }
            }
        }

        for c in 0..ncells {
            let (a, b) = (bounds[c], bounds[c + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for &t in &ref_nodes {
                nodes.push(mid + half * t);
            }
            // the first node is the cell's left end exactly
            nodes[c * order] = a;
            nodes[c * order + order - 1] = b;
            let base = c * order * order;
            for i in 1..order {
                let ti = ref_nodes[i];
                let (ca, cr) = (0.5 * (-1.0 + ti), 0.5 * (ti + 1.0));
                for (t, w) in gx.iter().zip(&gw) {
                    let tr = ca + cr * t;
                    let y = mid + half * tr;
                    let rho = m.density(y);
                    lagrange_basis(&ref_nodes, &bary, tr, &mut basis);
                    let f = w * cr * half * rho;
                    for j in 0..order {
                        w_measure[base + i * order + j] += f * basis[j];
                    }
                }
            }
        }
        let atoms = bounds.iter().map(|&x| m.atom_at(x)).collect();
        Mesh { order, bounds, nodes, w_measure, w_leb, atoms, ref_nodes, bary }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ncells(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn lo(&self) -> f64 {
        self.bounds[0]
    }

    pub fn hi(&self) -> f64 {
        *self.bounds.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the cell boundary equal to `x`, if any.
    pub fn boundary_index(&self, x: f64) -> Option<usize> {
        self.bounds.iter().position(|&b| b == x)
    }

    /// Field index of the first node of cell `c` (right limit at boundary `c`).
    fn first(&self, c: usize) -> usize {
        c * self.order
    }

    fn last(&self, c: usize) -> usize {
        c * self.order + self.order - 1
    }

    /// Field value at boundary `b`; right limit unless `b` is the last boundary.
    pub fn at_boundary(&self, field: &[f64], b: usize) -> f64 {
        if b < self.ncells() {
            field[self.first(b)]
        } else {
            field[self.last(b - 1)]
        }
    }

    fn local_cumulative(&self, field: &[f64], c: usize, weight: Weight, out: &mut [f64]) {
        let p = self.order;
        let f = &field[c * p..(c + 1) * p];
        match weight {
            Weight::Measure => {
                let w = &self.w_measure[c * p * p..(c + 1) * p * p];
                for (i, o) in out.iter_mut().enumerate().take(p) {
                    *o = (0..p).map(|j| w[i * p + j] * f[j]).sum();
                }
            }
            Weight::Lebesgue => {
                let half = 0.5 * (self.bounds[c + 1] - self.bounds[c]);
                for (i, o) in out.iter_mut().enumerate().take(p) {
                    *o = half * (0..p).map(|j| self.w_leb[i * p + j] * f[j]).sum::<f64>();
                }
            }
        }
    }

    /// `F(x) = init + int_{(x_b, x]} field d(weight)`, signed, right-continuous in `x`,
    /// anchored at boundary `b`.
    pub fn cumulative(&self, field: &[f64], weight: Weight, b: usize, init: f64) -> Vec<f64> {
        let p = self.order;
        let nc = self.ncells();
        let mut out = vec![0.0; field.len()];
        let mut local = vec![0.0; p];
        let atom = |k: usize| match weight {
            Weight::Measure => self.atoms[k],
            Weight::Lebesgue => 0.0,
        };
        // rightwards
        let mut start = init;
        for c in b..nc {
            if c > b {
                start += atom(c) * field[self.last(c - 1)];
            }
            self.local_cumulative(field, c, weight, &mut local);
            for i in 0..p {
                out[c * p + i] = start + local[i];
            }
            start = out[self.last(c)];
        }
        // leftwards
        let mut right_limit = init;
        for c in (0..b).rev() {
            let end = right_limit - atom(c + 1) * field[self.last(c)];
            self.local_cumulative(field, c, weight, &mut local);
            let total = local[p - 1];
            for i in 0..p {
                out[c * p + i] = end - (total - local[i]);
            }
            right_limit = out[self.first(c)];
        }
        out
    }

    fn locate(&self, x: f64) -> Option<usize> {
        if x < self.lo() || x > self.hi() {
            return None;
        }
        let i = self.bounds.partition_point(|&b| b <= x);
        Some(i.saturating_sub(1).min(self.ncells() - 1))
    }

    /// Interpolates a field at `x` (right limit at cell boundaries).
    pub fn eval(&self, field: &[f64], x: f64) -> Option<f64> {
        let c = self.locate(x)?;
        let (a, b) = (self.bounds[c], self.bounds[c + 1]);
        let t = ((2.0 * x - a - b) / (b - a)).clamp(-1.0, 1.0);
        let p = self.order;
        Some(barycentric(&self.ref_nodes, &self.bary, &field[c * p..(c + 1) * p], t))
    }

    /// Flattened grid with each boundary once; indices into a field, picking the right
    /// limit at interior boundaries.
    pub fn unique_indices(&self) -> Vec<usize> {
        let p = self.order;
        let nc = self.ncells();
        let mut idx = Vec::with_capacity(nc * (p - 1) + 1);
        for c in 0..nc {
            for i in 0..p - 1 {
                idx.push(c * p + i);
            }
        }
        idx.push(self.last(nc - 1));
        idx
    }

    /// Cells `c0..c1` as a standalone mesh, with the matching field slice range.
    pub fn slice(&self, c0: usize, c1: usize) -> (Mesh, std::ops::Range<usize>) {
        let p = self.order;
        let mesh = Mesh {
            order: p,
            bounds: self.bounds[c0..=c1].to_vec(),
            nodes: self.nodes[c0 * p..c1 * p].to_vec(),
            w_measure: self.w_measure[c0 * p * p..c1 * p * p].to_vec(),
            w_leb: self.w_leb.clone(),
            atoms: self.atoms[c0..=c1].to_vec(),
            ref_nodes: self.ref_nodes.clone(),
            bary: self.bary.clone(),
        };
        (mesh, c0 * p..c1 * p)
    }

    /// Mirror image `x -> -x` for fields produced by `reflect_field`.
    pub fn reflected(&self, m_reflected: &SpeedMeasure) -> Mesh {
        let bounds: Vec<f64> = self.bounds.iter().rev().map(|b| -b + 0.0).collect();
        Mesh::from_bounds(m_reflected, bounds, self.order)
    }

    /// Reorders a field for the reflected mesh; `odd` negates it (derivatives).
    pub fn reflect_field(&self, field: &[f64], odd: bool) -> Vec<f64> {
        let s = if odd { -1.0 } else { 1.0 };
        field.iter().rev().map(|v| s * v).collect()
    }
}

/// Moments of the measure beyond the anchor, used to close a series anchored at a
/// truncated infinite end: `(m(beyond), int y m(dy) beyond)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailClosure {
    pub mass: f64,
    pub first_moment: f64,
}

/// Where a successive-approximation series is anchored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub boundary: usize,
    pub value: f64,
    pub slope: f64,
    pub closure: Option<(Side, TailClosure)>,
}

#[derive(Debug, Clone)]
pub struct SeriesSolution {
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    pub terms: usize,
}

/// Solves `f(x) = value + slope (x - x_b) + lambda int_{x_b}^x (x - y) f(y) m(dy)`
/// by summing the successive approximations `lambda^n u_n`.
///
/// With a closure, the integral also runs over the truncated tail beyond the anchor,
/// with `f` frozen at its anchor value there.
pub fn successive_approximation(
    mesh: &Mesh,
    lambda: f64,
    anchor: Anchor,
    tol: f64,
    max_terms: usize,
) -> Result<SeriesSolution> {
    let xb = mesh.bounds()[anchor.boundary];
    let mut term: Vec<f64> = mesh.nodes().iter().map(|x| anchor.value + anchor.slope * (x - xb)).collect();
    let mut values = term.clone();
    let mut derivs = vec![anchor.slope; term.len()];
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for n in 1..=max_terms {
        let at = mesh.at_boundary(&term, anchor.boundary);
        let (d0, v0) = match anchor.closure {
            None => (0.0, 0.0),
            Some((Side::Right, c)) => (-at * c.mass, at * (c.first_moment - xb * c.mass)),
            Some((Side::Left, c)) => (at * c.mass, at * (xb * c.mass - c.first_moment)),
        };
        let d = mesh.cumulative(&term, Weight::Measure, anchor.boundary, d0);
        let v = mesh.cumulative(&d, Weight::Lebesgue, anchor.boundary, v0);
        term = v.iter().map(|x| lambda * x).collect();
        let dterm: Vec<f64> = d.iter().map(|x| lambda * x).collect();
        for (s, t) in values.iter_mut().zip(&term) {
            *s += t;
        }
        for (s, t) in derivs.iter_mut().zip(&dterm) {
            *s += t;
        }
        let (st, sv) = (sup(&term), sup(&values));
        let (sdt, sd) = (sup(&dterm), sup(&derivs));
        if !sv.is_finite() || !sd.is_finite() || sv > 1e280 {
            return Err(Error::Numerical(format!(
                "successive approximation overflowed after {n} terms on [{}, {}]",
                mesh.lo(),
                mesh.hi()
            )));
        }
        if st <= tol * sv && sdt <= tol * sd.max(f64::MIN_POSITIVE) {
            return Ok(SeriesSolution { values, derivs, terms: n });
        }
    }
    Err(Error::NotConverged(format!(
        "series terms still above tolerance after {max_terms} terms on [{}, {}]",
        mesh.lo(),
        mesh.hi()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    #[test]
    fn cumulative_measure_integral_of_one_is_mass() {
        let m = MeasureSpec::hybrid().build().unwrap();
        let mesh = Mesh::build(&m, 0.5, -3.0, 6.0, &[0.0], MeshOptions::default()).unwrap();
        let one = vec![1.0; mesh.len()];
        let b0 = mesh.boundary_index(0.0).unwrap();
        let f = mesh.cumulative(&one, Weight::Measure, b0, 0.0);
        let top = mesh.at_boundary(&f, mesh.ncells());
        assert!((top - m.mass(0.0, 6.0).unwrap()).abs() < 1e-13);
        let bottom = mesh.at_boundary(&f, 0);
        assert!((bottom + m.mass(-3.0, 0.0).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn cumulative_respects_atoms() {
        let spec = MeasureSpec::Constant {
            interval: [crate::measure::Bound(-5.0), crate::measure::Bound(5.0)],
            density: 1.0,
            atoms: vec![[1.0, 0.5], [-1.0, 0.25]],
            reflect: false,
        };
        let m = spec.build().unwrap();
        let mesh = Mesh::build(&m, 1.0, -2.0, 2.0, &[0.0], MeshOptions::default()).unwrap();
        let one = vec![1.0; mesh.len()];
        let b0 = mesh.boundary_index(0.0).unwrap();
        let f = mesh.cumulative(&one, Weight::Measure, b0, 0.0);
        let b1 = mesh.boundary_index(1.0).unwrap();
        // right limit at 1 includes the atom, left limit does not
        assert!((mesh.at_boundary(&f, b1) - 1.5).abs() < 1e-13);
        assert!((f[(b1 - 1) * mesh.order() + mesh.order() - 1] - 1.0).abs() < 1e-13);
        let bm1 = mesh.boundary_index(-1.0).unwrap();
        // int_{(-1, 0]} = 1 at the right limit, 1.25 at the left limit
        assert!((mesh.at_boundary(&f, bm1) + 1.0).abs() < 1e-13);
        assert!((f[(bm1 - 1) * mesh.order() + mesh.order() - 1] + 1.25).abs() < 1e-13);
    }

    #[test]
    fn series_reproduces_cosh() {
        let m = MeasureSpec::brownian().build().unwrap();
        let mesh = Mesh::build(&m, 0.5, -2.0, 2.0, &[0.0], MeshOptions::default()).unwrap();
        let b0 = mesh.boundary_index(0.0).unwrap();
        let s = successive_approximation(
            &mesh,
            0.5,
            Anchor { boundary: b0, value: 1.0, slope: 0.0, closure: None },
            1e-16,
            500,
        )
        .unwrap();
        for (x, v) in mesh.nodes().iter().zip(&s.values) {
            assert!((v - x.cosh()).abs() < 1e-12, "{x}: {v}");
        }
    }
}

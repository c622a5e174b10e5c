//! Speed measures on an open interval, their tail moments and quadrature against them.
//!
//! A measure is a piecewise density (constant pieces, power pieces `c|x|^-p`, and
//! linearly interpolated tables) plus finitely many atoms. Every piece has closed-form
//! zeroth and first moments, so `mass` and the tail moments are exact; arbitrary
//! integrands go through adaptive Simpson.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

/// Margin added to the critical exponent 2 when classifying a fitted tail.
pub const FIT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "right")]
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// Finite left end, `+inf` right end.
    CaseI,
    /// `-inf` left end, finite right end; reduced to CaseI through `x -> -x`.
    CaseIReflected,
    /// Both ends infinite.
    CaseII,
    /// Both ends finite.
    Bounded,
}

/// Open interval `(l_minus, l_plus)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub l_minus: f64,
    pub l_plus: f64,
}

impl Interval {
    pub fn new(l_minus: f64, l_plus: f64) -> Result<Self> {
        if l_minus.is_nan() || l_plus.is_nan() || l_minus >= l_plus {
            return Err(Error::InvalidMeasure(format!(
                "interval ({l_minus}, {l_plus}) is empty"
            )));
        }
        if l_minus == f64::INFINITY || l_plus == f64::NEG_INFINITY {
            return Err(Error::InvalidMeasure("interval ends reversed".into()));
        }
        Ok(Interval { l_minus, l_plus })
    }

    pub fn real_line() -> Self {
        Interval { l_minus: f64::NEG_INFINITY, l_plus: f64::INFINITY }
    }

    pub fn case(&self) -> CaseTag {
        match (self.l_minus.is_finite(), self.l_plus.is_finite()) {
            (true, true) => CaseTag::Bounded,
            (true, false) => CaseTag::CaseI,
            (false, true) => CaseTag::CaseIReflected,
            (false, false) => CaseTag::CaseII,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.l_minus && x < self.l_plus
    }

    pub fn end(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.l_minus,
            Side::Right => self.l_plus,
        }
    }

    pub fn reflected(&self) -> Self {
        Interval { l_minus: -self.l_plus, l_plus: -self.l_minus }
    }

    pub(crate) fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, lo: self.l_minus, hi: self.l_plus })
        }
    }
}

/// Shape of the density on one segment.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `coefficient * |x|^(-exponent)`; the segment never straddles 0.
    Power { coefficient: f64, exponent: f64 },
    /// Linear interpolation between `(xs[i], ys[i])`; the segment is `[xs[0], xs[n-1]]`.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub profile: Profile,
}

impl Segment {
    fn density(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Constant(c) => *c,
            Profile::Power { coefficient, exponent } => coefficient * x.abs().powf(-exponent),
            Profile::Table { xs, ys } => {
                let i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                    Ok(i) => return ys[i],
                    Err(i) => i.clamp(1, xs.len() - 1),
                };
                let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
                ys[i - 1] + t * (ys[i] - ys[i - 1])
            }
        }
    }

    /// `int_a^b x^k rho(x) dx` for `k` in {0, 1}, `[a, b]` inside the segment.
    fn moment(&self, a: f64, b: f64, k: i32) -> f64 {
        if a >= b {
            return 0.0;
        }
        match &self.profile {
            Profile::Constant(c) => {
                if *c == 0.0 {
                    return 0.0;
                }
                c * monomial_integral(a, b, k)
            }
            Profile::Power { coefficient, exponent } => {
                coefficient * abs_power_integral(a, b, k, -exponent)
            }
            Profile::Table { xs, ys } => {
                let mut total = 0.0;
                for i in 1..xs.len() {
                    let lo = xs[i - 1].max(a);
                    let hi = xs[i].min(b);
                    if lo >= hi {
                        continue;
                    }
                    let slope = (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
                    let icpt = ys[i - 1] - slope * xs[i - 1];
                    total += icpt * monomial_integral(lo, hi, k)
                        + slope * monomial_integral(lo, hi, k + 1);
                }
                total
            }
        }
    }

    fn variation_scale(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Constant(_) => f64::INFINITY,
            Profile::Power { exponent, .. } => {
                if *exponent == 0.0 {
                    f64::INFINITY
                } else {
                    x.abs() / exponent.abs().max(1.0)
                }
            }
            Profile::Table { .. } => f64::INFINITY,
        }
    }

    fn reflected(&self) -> Segment {
        let profile = match &self.profile {
            Profile::Table { xs, ys } => Profile::Table {
                xs: xs.iter().rev().map(|x| -x).collect(),
                ys: ys.iter().rev().copied().collect(),
            },
            other => other.clone(),
        };
        Segment { lo: -self.hi, hi: -self.lo, profile }
    }

    fn scaled(&self, c: f64) -> Segment {
        let profile = match &self.profile {
            Profile::Constant(v) => Profile::Constant(v * c),
            Profile::Power { coefficient, exponent } => {
                Profile::Power { coefficient: coefficient * c, exponent: *exponent }
            }
            Profile::Table { xs, ys } => {
                Profile::Table { xs: xs.clone(), ys: ys.iter().map(|y| y * c).collect() }
            }
        };
        Segment { lo: self.lo, hi: self.hi, profile }
    }
}

/// `int_a^b x^k dx`, infinite ends allowed.
fn monomial_integral(a: f64, b: f64, k: i32) -> f64 {
    if !a.is_finite() || !b.is_finite() {
        return match k {
            0 => f64::INFINITY,
            // sign is irrelevant to the divergence verdict
            _ => f64::INFINITY,
        };
    }
    let k1 = (k + 1) as f64;
    (b.powi(k + 1) - a.powi(k + 1)) / k1
}

/// `int_a^b x^k |x|^q dx` for `[a, b]` on one side of 0, infinite ends allowed.
fn abs_power_integral(a: f64, b: f64, k: i32, q: f64) -> f64 {
    if a >= 0.0 {
        // x^(k+q) on the positive axis
        pos_power(a, b, q + k as f64)
    } else {
        // x = -u, u in [-b, -a]
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * pos_power(-b, -a, q + k as f64)
    }
}

/// `int_a^b u^e du` with `0 <= a < b <= inf`.
fn pos_power(a: f64, b: f64, e: f64) -> f64 {
    let e1 = e + 1.0;
    if e1 == 0.0 {
        if a == 0.0 || !b.is_finite() {
            return f64::INFINITY;
        }
        return (b / a).ln();
    }
    let fb = if b.is_finite() {
        b.powf(e1)
    } else if e1 < 0.0 {
        0.0
    } else {
        return f64::INFINITY;
    };
    let fa = if a == 0.0 {
        if e1 > 0.0 {
            0.0
        } else {
            return f64::INFINITY;
        }
    } else {
        a.powf(e1)
    };
    (fb - fa) / e1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailVerdict {
    Infinite,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DeclaredAnalytic,
    Extrapolated,
}

/// What is known about one tail of the measure before any integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailFlag {
    Infinite,
    /// Finite, optionally with the tail exponent that decided it.
    Finite,
    /// Tabulated tail with no declared exponent; must be extrapolated.
    Undeclared,
}

/// Outcome of `first_moment_tail`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMoment {
    pub side: Side,
    pub verdict: TailVerdict,
    /// `int |x| m(dx)` over the tail when finite. `None` for a finite end at which
    /// the measure is not integrable against `|x|` (the verdict is still Finite
    /// because the process is bounded on that side).
    pub value: Option<f64>,
    pub provenance: Provenance,
    /// Tail exponent used, when the verdict came from one.
    pub exponent: Option<f64>,
}

/// Speed measure `m(dx) = rho(x) dx + sum of atoms` on an open interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedMeasure {
    interval: Interval,
    segments: Vec<Segment>,
    atoms: Vec<Atom>,
    tail_left: TailFlag,
    tail_right: TailFlag,
    /// Exponent of the power piece at each infinite end, when the tail is a power law.
    exponent_left: Option<f64>,
    exponent_right: Option<f64>,
    label: String,
}

impl SpeedMeasure {
    /// Assembles a measure from contiguous segments covering the interval.
    pub fn from_segments(
        interval: Interval,
        segments: Vec<Segment>,
        atoms: Vec<Atom>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidMeasure("no density segments".into()));
        }
        if segments[0].lo != interval.l_minus || segments.last().unwrap().hi != interval.l_plus {
            return Err(Error::InvalidMeasure("segments do not cover the interval".into()));
        }
        for w in segments.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::InvalidMeasure("segments are not contiguous".into()));
            }
        }
        for s in &segments {
            if s.lo >= s.hi {
                return Err(Error::InvalidMeasure(format!("empty segment [{}, {}]", s.lo, s.hi)));
            }
            match &s.profile {
                Profile::Constant(c) if !(*c > 0.0 && c.is_finite()) => {
                    return Err(Error::InvalidMeasure(format!("density {c} must be positive")));
                }
                Profile::Power { coefficient, exponent } => {
                    if !(*coefficient > 0.0 && coefficient.is_finite() && exponent.is_finite()) {
                        return Err(Error::InvalidMeasure(format!(
                            "power coefficient {coefficient} must be positive"
                        )));
                    }
                    if s.lo < 0.0 && s.hi > 0.0 {
                        return Err(Error::InvalidMeasure(
                            "power piece may not straddle the origin".into(),
                        ));
                    }
                }
                Profile::Table { xs, ys } => {
                    if xs.len() < 2 || xs.len() != ys.len() {
                        return Err(Error::InvalidMeasure("table needs >= 2 matched samples".into()));
                    }
                    if xs.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::InvalidMeasure("table abscissae must increase".into()));
                    }
                    if ys.iter().any(|y| !(*y > 0.0 && y.is_finite())) {
                        return Err(Error::InvalidMeasure(
                            "table densities must be positive".into(),
                        ));
                    }
                    if xs[0] != s.lo || *xs.last().unwrap() != s.hi {
                        return Err(Error::InvalidMeasure("table does not span its segment".into()));
                    }
                }
                _ => {}
            }
        }
        for a in &atoms {
            if !interval.contains(a.x) {
                return Err(Error::InvalidMeasure(format!("atom at {} outside interval", a.x)));
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::InvalidMeasure(format!("atom mass {} must be positive", a.mass)));
            }
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
        let mut m = SpeedMeasure {
            interval,
            segments,
            atoms,
            tail_left: TailFlag::Finite,
            tail_right: TailFlag::Finite,
            exponent_left: None,
            exponent_right: None,
            label: label.into(),
        };
        m.derive_tail_flags();
        Ok(m)
    }

    fn derive_tail_flags(&mut self) {
        for side in [Side::Left, Side::Right] {
            let (flag, exponent) = if self.interval.end(side).is_finite() {
                (TailFlag::Finite, None)
            } else {
                let seg = match side {
                    Side::Left => &self.segments[0],
                    Side::Right => self.segments.last().unwrap(),
                };
                match &seg.profile {
                    Profile::Constant(_) => (TailFlag::Infinite, Some(0.0)),
                    Profile::Power { exponent, .. } => {
                        if *exponent <= 2.0 {
                            (TailFlag::Infinite, Some(*exponent))
                        } else {
                            (TailFlag::Finite, Some(*exponent))
                        }
                    }
                    Profile::Table { .. } => (TailFlag::Undeclared, None),
                }
            };
            match side {
                Side::Left => {
                    self.tail_left = flag;
                    self.exponent_left = exponent;
                }
                Side::Right => {
                    self.tail_right = flag;
                    self.exponent_right = exponent;
                }
            }
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn tail_flag(&self, side: Side) -> TailFlag {
        match side {
            Side::Left => self.tail_left,
            Side::Right => self.tail_right,
        }
    }

    /// Marks a tabulated tail as undeclared, discarding the exponent of its power
    /// extension; `first_moment_tail` then has to extrapolate.
    pub(crate) fn undeclare_tail(&mut self, side: Side) {
        match side {
            Side::Left => {
                self.tail_left = TailFlag::Undeclared;
                self.exponent_left = None;
            }
            Side::Right => {
                self.tail_right = TailFlag::Undeclared;
                self.exponent_right = None;
            }
        }
    }

    pub fn has_atoms(&self) -> bool {
        !self.atoms.is_empty()
    }

    fn segment_at(&self, x: f64) -> &Segment {
        let i = self.segments.partition_point(|s| s.hi < x);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    /// Density `rho(x)` of the absolutely continuous part.
    pub fn density(&self, x: f64) -> f64 {
        self.segment_at(x).density(x)
    }

    /// Distance over which the density changes by an O(1) factor near `x`.
    pub fn variation_scale(&self, x: f64) -> f64 {
        self.segment_at(x).variation_scale(x)
    }

    /// Points where the density is not smooth, plus atom positions, inside `(lo, hi)`.
    pub fn knots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.segments {
            for x in [s.lo, s.hi] {
                if x > lo && x < hi {
                    out.push(x);
                }
            }
            if let Profile::Table { xs, .. } = &s.profile {
                out.extend(xs.iter().copied().filter(|&x| x > lo && x < hi));
            }
        }
        out.extend(self.atoms.iter().map(|a| a.x).filter(|&x| x > lo && x < hi));
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Atom mass located exactly at `x`.
    pub fn atom_at(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|a| a.x == x).map(|a| a.mass).sum()
    }

    /// `int_a^b x^k rho(x) dx` over the absolutely continuous part; infinite ends allowed.
    pub(crate) fn density_moment(&self, a: f64, b: f64, k: i32) -> f64 {
        let mut total = 0.0;
        for s in &self.segments {
            let lo = s.lo.max(a);
            let hi = s.hi.min(b);
            if lo < hi {
                total += s.moment(lo, hi, k);
            }
        }
        total
    }

    /// `m((a, b])`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        self.interval.check(a)?;
        self.interval.check(b)?;
        if a > b {
            return Err(Error::InvalidArgument(format!("mass: a = {a} > b = {b}")));
        }
        let atoms: f64 = self.atoms.iter().filter(|t| t.x > a && t.x <= b).map(|t| t.mass).sum();
        Ok(self.density_moment(a, b, 0) + atoms)
    }

    /// `m` and `int y m(dy)` over the part of the interval strictly beyond `l` on `side`.
    /// `None` when either diverges.
    pub fn outer_moments(&self, side: Side, l: f64) -> Option<(f64, f64)> {
        let (a, b) = match side {
            Side::Right => (l, self.interval.l_plus),
            Side::Left => (self.interval.l_minus, l),
        };
        let in_range = |x: f64| match side {
            Side::Right => x > l,
            Side::Left => x < l,
        };
        let m0 = self.density_moment(a, b, 0)
            + self.atoms.iter().filter(|t| in_range(t.x)).map(|t| t.mass).sum::<f64>();
        let m1 = self.density_moment(a, b, 1)
            + self.atoms.iter().filter(|t| in_range(t.x)).map(|t| t.x * t.mass).sum::<f64>();
        if m0.is_finite() && m1.is_finite() {
            Some((m0, m1))
        } else {
            None
        }
    }

    /// `int_{(a, b]} f(y) m(dy)` by adaptive Simpson on each smooth piece plus the atoms.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidArgument(format!("integrate: a = {a} > b = {b}")));
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument("integrate needs finite limits".into()));
        }
        let mut cuts = vec![a];
        cuts.extend(self.knots_in(a, b));
        cuts.push(b);
        let mut pieces = Vec::new();
        for w in cuts.windows(2) {
            pieces.extend(geometric_split(w[0], w[1]));
        }
        let per = tol / pieces.len().max(1) as f64;
        let mut total = 0.0;
        for (lo, hi) in pieces {
            let g = |y: f64| f(y) * self.density(y);
            total += adaptive_simpson(&g, lo, hi, per)?;
        }
        for t in self.atoms.iter().filter(|t| t.x > a && t.x <= b) {
            total += t.mass * f(t.x);
        }
        Ok(total)
    }

    /// The measure reflected through the origin: `rho(x) -> rho(-x)`.
    pub fn reflected(&self) -> SpeedMeasure {
        let mut segs: Vec<Segment> = self.segments.iter().rev().map(Segment::reflected).collect();
        for s in &mut segs {
            // avoid -0.0 at a reflected origin
            s.lo += 0.0;
            s.hi += 0.0;
        }
        SpeedMeasure {
            interval: self.interval.reflected(),
            segments: segs,
            atoms: self.atoms.iter().rev().map(|a| Atom { x: -a.x + 0.0, mass: a.mass }).collect(),
            tail_left: self.tail_right,
            tail_right: self.tail_left,
            exponent_left: self.exponent_right,
            exponent_right: self.exponent_left,
            label: format!("reflected {}", self.label),
        }
    }

    /// `c * m`.
    pub fn scaled(&self, c: f64) -> Result<SpeedMeasure> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale {c} must be positive")));
        }
        Ok(SpeedMeasure {
            segments: self.segments.iter().map(|s| s.scaled(c)).collect(),
            atoms: self.atoms.iter().map(|a| Atom { x: a.x, mass: a.mass * c }).collect(),
            label: format!("{c} * {}", self.label),
            ..self.clone()
        })
    }

    /// Decides whether `int |x| m(dx)` over the `side` tail beyond `r` diverges.
    pub fn first_moment_tail(&self, r: f64, side: Side) -> Result<TailMoment> {
        self.interval.check(r)?;
        let end = self.interval.end(side);
        let (a, b) = match side {
            Side::Right => (r, self.interval.l_plus),
            Side::Left => (self.interval.l_minus, r),
        };
        let abs_moment = || -> f64 {
            // |x| = x on the positive part, -x on the negative part
            let pos = self.density_moment(a.max(0.0), b.max(0.0), 1);
            let neg = -self.density_moment(a.min(0.0), b.min(0.0), 1);
            let at: f64 = self
                .atoms
                .iter()
                .filter(|t| match side {
                    Side::Right => t.x >= r,
                    Side::Left => t.x <= r,
                })
                .map(|t| t.x.abs() * t.mass)
                .sum();
            pos + neg + at
        };
        if end.is_finite() {
            let v = abs_moment();
            return Ok(TailMoment {
                side,
                verdict: TailVerdict::Finite,
                value: v.is_finite().then_some(v),
                provenance: Provenance::DeclaredAnalytic,
                exponent: None,
            });
        }
        match self.tail_flag(side) {
            TailFlag::Infinite => Ok(TailMoment {
                side,
                verdict: TailVerdict::Infinite,
                value: None,
                provenance: Provenance::DeclaredAnalytic,
                exponent: self.exponent(side),
            }),
            TailFlag::Finite => Ok(TailMoment {
                side,
                verdict: TailVerdict::Finite,
                value: Some(abs_moment()),
                provenance: Provenance::DeclaredAnalytic,
                exponent: self.exponent(side),
            }),
            TailFlag::Undeclared => {
                let p = self.fitted_tail_exponent(side)?;
                let verdict = if p <= 2.0 + FIT_MARGIN {
                    TailVerdict::Infinite
                } else {
                    TailVerdict::Finite
                };
                let value = match verdict {
                    TailVerdict::Finite => Some(self.extrapolated_abs_moment(side, r, p)),
                    TailVerdict::Infinite => None,
                };
                Ok(TailMoment {
                    side,
                    verdict,
                    value,
                    provenance: Provenance::Extrapolated,
                    exponent: Some(p),
                })
            }
        }
    }

    fn exponent(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => self.exponent_left,
            Side::Right => self.exponent_right,
        }
    }

    /// Tail exponent `p` of `rho ~ |x|^-p`, fitted over the last two decades of the
    /// tabulated samples on `side`.
    pub fn fitted_tail_exponent(&self, side: Side) -> Result<f64> {
        let table = self.segments.iter().find_map(|s| match &s.profile {
            Profile::Table { xs, ys } => Some((xs, ys)),
            _ => None,
        });
        let Some((xs, ys)) = table else {
            return Err(Error::Undecidable("no tabulated samples to extrapolate".into()));
        };
        let pts: Vec<(f64, f64)> = match side {
            Side::Right => xs.iter().zip(ys.iter()).map(|(&x, &y)| (x, y)).collect(),
            Side::Left => xs.iter().zip(ys.iter()).map(|(&x, &y)| (-x, y)).collect(),
        };
        let far = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        if far <= 0.0 {
            return Err(Error::Undecidable(format!("no samples on the {side:?} tail")));
        }
        let near = far / 100.0;
        let sel: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.0 >= near * (1.0 - 1e-12) && p.0 > 0.0)
            .map(|&(x, y)| (x.ln(), y.ln()))
            .collect();
        let lowest = pts.iter().filter(|p| p.0 > 0.0).map(|p| p.0).fold(f64::INFINITY, f64::min);
        if sel.len() < 3 || lowest > near * (1.0 + 1e-12) {
            return Err(Error::Undecidable(format!(
                "{side:?} tail samples span less than two decades"
            )));
        }
        let n = sel.len() as f64;
        let mx = sel.iter().map(|p| p.0).sum::<f64>() / n;
        let my = sel.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Ok(-sxy / sxx)
    }

    fn extrapolated_abs_moment(&self, side: Side, r: f64, p: f64) -> f64 {
        // tabulated part up to the last sample, then a fitted power tail
        let m = match side {
            Side::Right => self.clone(),
            Side::Left => self.reflected(),
        };
        let r = if side == Side::Right { r } else { -r };
        let seg = m.segments.iter().find(|s| matches!(s.profile, Profile::Table { .. })).unwrap();
        let xn = seg.hi;
        let yn = seg.density(xn);
        let core = if r < xn {
            let pos = m.density_moment(r.max(0.0), xn, 1);
            let neg = -m.density_moment(r.min(0.0), xn.min(0.0), 1);
            pos + neg
        } else {
            0.0
        };
        let start = r.max(xn);
        core + yn * xn.powf(p) * pos_power(start, f64::INFINITY, 1.0 - p)
    }
}

/// Splits `[a, b]` into pieces whose end ratio stays bounded, so Simpson sees
/// comparable scales on each.
fn geometric_split(a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![a];
    if a < 0.0 && b > 0.0 {
        let left = geometric_split(a, 0.0);
        let right = geometric_split(0.0, b);
        return left.into_iter().chain(right).collect();
    }
    let (lo, hi, flip) = if b <= 0.0 { (-b, -a, true) } else { (a, b, false) };
    let mut inner = vec![lo];
    let mut x = lo.max(1.0);
    if lo < 1.0 && hi > 1.0 {
        inner.push(1.0);
    }
    while x * 2.0 < hi {
        x *= 2.0;
        if x > lo {
            inner.push(x);
        }
    }
    inner.push(hi);
    inner.dedup();
    if flip {
        pts = inner.iter().rev().map(|v| -v).collect();
    } else {
        pts.clear();
        pts.extend(inner);
    }
    pts.windows(2).filter(|w| w[0] < w[1]).map(|w| (w[0], w[1])).collect()
}

/// An interval end as it appears in JSON: a number or `"-inf"` / `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Bound(v)),
            Repr::Str(s) => match s.as_str() {
                "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "interval bound {other:?} is neither a number nor \"-inf\"/\"inf\""
                ))),
            },
        }
    }
}

fn default_knee() -> f64 {
    1.0
}

fn default_left_density() -> f64 {
    2.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Measure-family descriptor, the JSON form of a speed measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `rho = density` on the whole interval.
    Constant {
        interval: [Bound; 2],
        density: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        atoms: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "is_false")]
        reflect: bool,
    },
    /// `rho = c |x|^-p` where `|x| >= knee`, `c knee^-p` inside; without a knee the
    /// power law holds everywhere and the interval must avoid the origin.
    PowerTail {
        interval: [Bound; 2],
        coefficient: f64,
        exponent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knee: Option<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        atoms: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "is_false")]
        reflect: bool,
    },
    /// `rho = left_density` for `x <= knee`, `c x^-p` beyond.
    Hybrid {
        interval: [Bound; 2],
        #[serde(default = "default_left_density")]
        left_density: f64,
        coefficient: f64,
        exponent: f64,
        #[serde(default = "default_knee")]
        knee: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        atoms: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "is_false")]
        reflect: bool,
    },
    /// Linear interpolation of samples; flat beyond the samples toward a finite end,
    /// power-law beyond them toward an infinite end.
    Tabulated {
        interval: [Bound; 2],
        x: Vec<f64>,
        density: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail_exponent: Option<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        atoms: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "is_false")]
        reflect: bool,
    },
}

impl MeasureSpec {
    /// `rho = 2` on the real line: standard Brownian motion.
    pub fn brownian() -> Self {
        MeasureSpec::Constant {
            interval: [Bound(f64::NEG_INFINITY), Bound(f64::INFINITY)],
            density: 2.0,
            atoms: vec![],
            reflect: false,
        }
    }

    /// `rho = 2 x^-4` on `(0, inf)`: the inverse of a three-dimensional Bessel process.
    pub fn inverse_bessel() -> Self {
        MeasureSpec::PowerTail {
            interval: [Bound(0.0), Bound(f64::INFINITY)],
            coefficient: 2.0,
            exponent: 4.0,
            knee: None,
            atoms: vec![],
            reflect: false,
        }
    }

    /// `rho = 2` left of 1, `2 x^-4` right of it, on the real line.
    pub fn hybrid() -> Self {
        MeasureSpec::Hybrid {
            interval: [Bound(f64::NEG_INFINITY), Bound(f64::INFINITY)],
            left_density: 2.0,
            coefficient: 2.0,
            exponent: 4.0,
            knee: 1.0,
            atoms: vec![],
            reflect: false,
        }
    }

    pub fn mirrored_hybrid() -> Self {
        let mut s = Self::hybrid();
        if let MeasureSpec::Hybrid { reflect, .. } = &mut s {
            *reflect = true;
        }
        s
    }

    /// `rho = 2 |x|^-4` beyond the knees at `+-1`, `2` between them.
    pub fn double_finite_tail() -> Self {
        MeasureSpec::PowerTail {
            interval: [Bound(f64::NEG_INFINITY), Bound(f64::INFINITY)],
            coefficient: 2.0,
            exponent: 4.0,
            knee: Some(1.0),
            atoms: vec![],
            reflect: false,
        }
    }

    pub fn build(&self) -> Result<SpeedMeasure> {
        build_measure(self)
    }
}

fn parse_atoms(raw: &[[f64; 2]]) -> Vec<Atom> {
    raw.iter().map(|a| Atom { x: a[0], mass: a[1] }).collect()
}

/// Builds the measure described by `spec`, with analytic tail flags for built-in families.
pub fn build_measure(spec: &MeasureSpec) -> Result<SpeedMeasure> {
    let (m, reflect) = match spec {
        MeasureSpec::Constant { interval, density, atoms, reflect } => {
            let iv = Interval::new(interval[0].0, interval[1].0)?;
            if !(*density > 0.0) {
                return Err(Error::InvalidMeasure(format!("density {density} must be positive")));
            }
            let seg = Segment { lo: iv.l_minus, hi: iv.l_plus, profile: Profile::Constant(*density) };
            (SpeedMeasure::from_segments(iv, vec![seg], parse_atoms(atoms), "constant")?, *reflect)
        }
        MeasureSpec::PowerTail { interval, coefficient, exponent, knee, atoms, reflect } => {
            let iv = Interval::new(interval[0].0, interval[1].0)?;
            if !(*coefficient > 0.0) {
                return Err(Error::InvalidMeasure(format!(
                    "coefficient {coefficient} must be positive"
                )));
            }
            let power = Profile::Power { coefficient: *coefficient, exponent: *exponent };
            let segs = match knee {
                None => {
                    if iv.l_minus < 0.0 && iv.l_plus > 0.0 {
                        return Err(Error::InvalidMeasure(
                            "power_tail without a knee needs an interval avoiding 0".into(),
                        ));
                    }
                    vec![Segment { lo: iv.l_minus, hi: iv.l_plus, profile: power }]
                }
                Some(k) => {
                    if !(*k > 0.0) || !(iv.contains(*k) || iv.contains(-*k)) {
                        return Err(Error::InvalidMeasure(format!("knee {k} outside interval")));
                    }
                    let flat = Profile::Constant(coefficient * k.powf(-exponent));
                    let mut cuts = vec![iv.l_minus];
                    cuts.extend([-k, *k].into_iter().filter(|c| iv.contains(*c)));
                    cuts.push(iv.l_plus);
                    cuts.windows(2)
                        .map(|w| {
                            let mid = if w[0].is_finite() && w[1].is_finite() {
                                0.5 * (w[0] + w[1])
                            } else if w[0].is_finite() {
                                w[0] + 1.0
                            } else {
                                w[1] - 1.0
                            };
                            let profile = if mid.abs() >= *k { power.clone() } else { flat.clone() };
                            Segment { lo: w[0], hi: w[1], profile }
                        })
                        .collect()
                }
            };
            (SpeedMeasure::from_segments(iv, segs, parse_atoms(atoms), "power_tail")?, *reflect)
        }
        MeasureSpec::Hybrid { interval, left_density, coefficient, exponent, knee, atoms, reflect } => {
            let iv = Interval::new(interval[0].0, interval[1].0)?;
            if !(*left_density > 0.0) || !(*coefficient > 0.0) {
                return Err(Error::InvalidMeasure("hybrid densities must be positive".into()));
            }
            if !(*knee > 0.0) || !iv.contains(*knee) {
                return Err(Error::InvalidMeasure(format!("knee {knee} outside interval")));
            }
            let segs = vec![
                Segment { lo: iv.l_minus, hi: *knee, profile: Profile::Constant(*left_density) },
                Segment {
                    lo: *knee,
                    hi: iv.l_plus,
                    profile: Profile::Power { coefficient: *coefficient, exponent: *exponent },
                },
            ];
            (SpeedMeasure::from_segments(iv, segs, parse_atoms(atoms), "hybrid")?, *reflect)
        }
        MeasureSpec::Tabulated { interval, x, density, tail_exponent, atoms, reflect } => {
            (build_tabulated(interval, x, density, *tail_exponent, atoms)?, *reflect)
        }
    };
    Ok(if reflect { m.reflected() } else { m })
}

fn build_tabulated(
    interval: &[Bound; 2],
    xs: &[f64],
    ys: &[f64],
    tail_exponent: Option<f64>,
    atoms: &[[f64; 2]],
) -> Result<SpeedMeasure> {
    let iv = Interval::new(interval[0].0, interval[1].0)?;
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(Error::InvalidMeasure("tabulated density needs >= 2 matched samples".into()));
    }
    if ys.iter().any(|y| *y < 0.0) {
        return Err(Error::InvalidMeasure("negative tabulated density".into()));
    }
    // keep samples inside the interval
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, _)| iv.contains(**x)).map(|(&x, &y)| (x, y)).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidMeasure("fewer than two samples inside the interval".into()));
    }
    let txs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let tys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (x0, y0) = pts[0];
    let (xn, yn) = *pts.last().unwrap();
    let mut segs = Vec::new();
    let mut undeclared = Vec::new();
    // Fits are only used for the density extension; the verdict is re-derived later.
    let probe = SpeedMeasure {
        interval: iv,
        segments: vec![Segment {
            lo: x0,
            hi: xn,
            profile: Profile::Table { xs: txs.clone(), ys: tys.clone() },
        }],
        atoms: vec![],
        tail_left: TailFlag::Undeclared,
        tail_right: TailFlag::Undeclared,
        exponent_left: None,
        exponent_right: None,
        label: String::new(),
    };
    if iv.l_minus.is_finite() {
        segs.push(Segment { lo: iv.l_minus, hi: x0, profile: Profile::Constant(y0) });
    } else {
        if x0 >= 0.0 {
            return Err(Error::InvalidMeasure("left tail needs a negative last sample".into()));
        }
        let p = match tail_exponent {
            Some(p) => p,
            None => {
                undeclared.push(Side::Left);
                probe.fitted_tail_exponent(Side::Left).unwrap_or(0.0)
            }
        };
        segs.push(Segment {
            lo: iv.l_minus,
            hi: x0,
            profile: Profile::Power { coefficient: y0 * x0.abs().powf(p), exponent: p },
        });
    }
    segs.push(Segment { lo: x0, hi: xn, profile: Profile::Table { xs: txs, ys: tys } });
    if iv.l_plus.is_finite() {
        segs.push(Segment { lo: xn, hi: iv.l_plus, profile: Profile::Constant(yn) });
    } else {
        if xn <= 0.0 {
            return Err(Error::InvalidMeasure("right tail needs a positive last sample".into()));
        }
        let p = match tail_exponent {
            Some(p) => p,
            None => {
                undeclared.push(Side::Right);
                probe.fitted_tail_exponent(Side::Right).unwrap_or(0.0)
            }
        };
        segs.push(Segment {
            lo: xn,
            hi: iv.l_plus,
            profile: Profile::Power { coefficient: yn * xn.powf(p), exponent: p },
        });
    }
    segs.retain(|s| s.lo < s.hi);
    let mut m = SpeedMeasure::from_segments(iv, segs, parse_atoms(atoms), "tabulated")?;
    for side in undeclared {
        m.undeclare_tail(side);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn brownian_tails_are_infinite() {
        let m = MeasureSpec::brownian().build().unwrap();
        assert_eq!(m.tail_flag(Side::Left), TailFlag::Infinite);
        assert_eq!(m.tail_flag(Side::Right), TailFlag::Infinite);
        let t = m.first_moment_tail(1.0, Side::Right).unwrap();
        assert_eq!(t.verdict, TailVerdict::Infinite);
    }

    #[test]
    fn inverse_bessel_right_tail_is_one() {
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let t = m.first_moment_tail(1.0, Side::Right).unwrap();
        assert_eq!(t.verdict, TailVerdict::Finite);
        assert!(close(t.value.unwrap(), 1.0, 1e-14));
    }

    #[test]
    fn hybrid_flags() {
        let m = MeasureSpec::hybrid().build().unwrap();
        assert_eq!(m.tail_flag(Side::Left), TailFlag::Infinite);
        assert_eq!(m.tail_flag(Side::Right), TailFlag::Finite);
    }

    #[test]
    fn mass_examples() {
        let b = MeasureSpec::brownian().build().unwrap();
        assert!(close(b.mass(0.0, 1.0).unwrap(), 2.0, 1e-15));
        let ib = MeasureSpec::inverse_bessel().build().unwrap();
        assert!(close(ib.mass(1.0, 2.0).unwrap(), 7.0 / 12.0, 1e-14));
        assert_eq!(ib.mass(1.5, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn mass_errors() {
        let ib = MeasureSpec::inverse_bessel().build().unwrap();
        assert!(ib.mass(2.0, 1.0).is_err());
        assert!(ib.mass(-1.0, 1.0).is_err());
        assert!(ib.mass(0.0, 1.0).is_err());
    }

    #[test]
    fn atoms_counted_once_on_half_open_interval() {
        let spec = MeasureSpec::Constant {
            interval: [Bound(0.0), Bound(f64::INFINITY)],
            density: 1.0,
            atoms: vec![[1.0, 0.5]],
            reflect: false,
        };
        let m = spec.build().unwrap();
        assert!(close(m.mass(0.5, 1.0).unwrap(), 1.0, 1e-15));
        assert!(close(m.mass(1.0, 1.5).unwrap(), 0.5, 1e-15));
        assert_eq!(m.mass(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn construction_errors() {
        let bad_density = MeasureSpec::Constant {
            interval: [Bound(0.0), Bound(1.0)],
            density: -1.0,
            atoms: vec![],
            reflect: false,
        };
        assert!(bad_density.build().is_err());
        let bad_atom = MeasureSpec::Constant {
            interval: [Bound(0.0), Bound(1.0)],
            density: 1.0,
            atoms: vec![[2.0, 1.0]],
            reflect: false,
        };
        assert!(bad_atom.build().is_err());
        let bad_knee = MeasureSpec::Hybrid {
            interval: [Bound(f64::NEG_INFINITY), Bound(0.5)],
            left_density: 2.0,
            coefficient: 2.0,
            exponent: 4.0,
            knee: 1.0,
            atoms: vec![],
            reflect: false,
        };
        assert!(bad_knee.build().is_err());
    }

    #[test]
    fn finite_side_is_finite() {
        let m = MeasureSpec::Constant {
            interval: [Bound(-1.0), Bound(3.0)],
            density: 2.0,
            atoms: vec![],
            reflect: false,
        }
        .build()
        .unwrap();
        let t = m.first_moment_tail(0.0, Side::Right).unwrap();
        assert_eq!(t.verdict, TailVerdict::Finite);
        assert!(close(t.value.unwrap(), 9.0, 1e-14));
    }

    #[test]
    fn tabulated_tail_fit() {
        let xs: Vec<f64> = (0..=40).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let heavy: Vec<f64> = xs.iter().map(|x| 2.0 * x.powf(-1.5)).collect();
        let light: Vec<f64> = xs.iter().map(|x| 2.0 * x.powf(-3.0)).collect();
        let mk = |d: Vec<f64>, p: Option<f64>| MeasureSpec::Tabulated {
            interval: [Bound(0.0), Bound(f64::INFINITY)],
            x: xs.clone(),
            density: d,
            tail_exponent: p,
            atoms: vec![],
            reflect: false,
        };
        let h = mk(heavy, None).build().unwrap();
        let t = h.first_moment_tail(1.0, Side::Right).unwrap();
        assert_eq!(t.verdict, TailVerdict::Infinite);
        assert_eq!(t.provenance, Provenance::Extrapolated);
        assert!((t.exponent.unwrap() - 1.5).abs() < 1e-9);
        let l = mk(light.clone(), None).build().unwrap();
        let t = l.first_moment_tail(1.0, Side::Right).unwrap();
        assert_eq!(t.verdict, TailVerdict::Finite);
        // int_1^inf x * 2 x^-3 dx = 2, up to linear interpolation between samples
        assert!(close(t.value.unwrap(), 2.0, 0.06), "{:?}", t.value);
        let d = mk(light, Some(3.0)).build().unwrap();
        let t = d.first_moment_tail(1.0, Side::Right).unwrap();
        assert_eq!(t.provenance, Provenance::DeclaredAnalytic);
        assert_eq!(t.verdict, TailVerdict::Finite);
    }

    #[test]
    fn tabulated_short_span_is_undecidable() {
        let m = MeasureSpec::Tabulated {
            interval: [Bound(0.0), Bound(f64::INFINITY)],
            x: vec![1.0, 2.0, 3.0],
            density: vec![1.0, 1.0, 1.0],
            tail_exponent: None,
            atoms: vec![],
            reflect: false,
        }
        .build()
        .unwrap();
        assert!(matches!(m.first_moment_tail(1.0, Side::Right), Err(Error::Undecidable(_))));
    }

    #[test]
    fn integrate_matches_mass() {
        let m = MeasureSpec::hybrid().build().unwrap();
        let q = m.integrate(|_| 1.0, -3.0, 50.0, 1e-10).unwrap();
        assert!(close(q, m.mass(-3.0, 50.0).unwrap(), 1e-9));
    }

    #[test]
    fn reflection_swaps_sides() {
        let m = MeasureSpec::hybrid().build().unwrap();
        let r = m.reflected();
        assert_eq!(r.tail_flag(Side::Left), TailFlag::Finite);
        assert_eq!(r.tail_flag(Side::Right), TailFlag::Infinite);
        assert!(close(r.density(-3.0), m.density(3.0), 1e-15));
        assert!(close(r.mass(-5.0, -2.0).unwrap(), m.mass(2.0, 5.0).unwrap(), 1e-14));
    }

    #[test]
    fn descriptor_json_roundtrip() {
        let text = r#"{"family":"hybrid","interval":["-inf","inf"],"coefficient":2,"exponent":4}"#;
        let spec: MeasureSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec, MeasureSpec::hybrid());
        let back: MeasureSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let unknown = r#"{"family":"constant","interval":[0,1],"density":1,"colour":3}"#;
        assert!(serde_json::from_str::<MeasureSpec>(unknown).is_err());
    }
}

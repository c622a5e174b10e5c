//! Martingale classification of the stopped diffusion with per-criterion evidence,
//! and an audit that cross-checks the criteria against each other and against
//! Monte Carlo.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::eigen::{expansion_point, solve_f_minus, solve_f_plus, EigenOptions};
use crate::error::{Error, Result};
use crate::measure::{CaseTag, Side, SpeedMeasure, TailMoment, TailVerdict};
use crate::mesh::{successive_approximation, Anchor, Mesh};
use crate::resolvent::{defect_curve, DefectOptions};
use crate::simulate::{simulate_paths, MCEstimate, Schedule, StepControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    Martingale,
    StrictSubmartingale,
    StrictSupermartingale,
    /// Neither sub- nor supermartingale; only a local martingale.
    StrictLocalMartingaleOnly,
}

impl Classification {
    /// The classification of the process `-X`.
    pub fn reflected(self) -> Classification {
        match self {
            Classification::StrictSubmartingale => Classification::StrictSupermartingale,
            Classification::StrictSupermartingale => Classification::StrictSubmartingale,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// `int x m(dx)` diverges on the right tail.
    TailRight,
    /// `int |x| m(dx)` diverges on the left tail.
    TailLeft,
    /// `f_minus'` diverges at `+inf` (and `f_plus'` at `-inf`).
    FprimeDivergence,
    /// `lim f_plus = 0` at `+inf`.
    AlphaPlus,
    /// The small-`lambda` defect limit vanishes.
    DefectLimit,
}

/// Outcome of one criterion: `Pass` when its martingale condition holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
    Indeterminate,
}

impl Outcome {
    fn from_bool(b: bool) -> Outcome {
        if b {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub criterion: Criterion,
    pub outcome: Outcome,
    pub payload: BTreeMap<String, Value>,
}

impl Evidence {
    fn new(criterion: Criterion, outcome: Outcome, payload: Value) -> Evidence {
        let payload = match payload {
            Value::Object(map) => map.into_iter().collect(),
            Value::Null => BTreeMap::new(),
            other => BTreeMap::from([("value".to_string(), other)]),
        };
        Evidence { criterion, outcome, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub case: CaseTag,
    pub classification: Classification,
    pub x: f64,
    pub lambda: f64,
    pub evidence: Vec<Evidence>,
}

impl Verdict {
    pub fn evidence_for(&self, c: Criterion) -> Option<&Evidence> {
        self.evidence.iter().find(|e| e.criterion == c)
    }
}

/// Thresholds for the derivative-divergence ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprimeOptions {
    /// First rung distance from the expansion point; rungs double.
    pub l0: f64,
    /// Minimum growth of the last sample over the one two rungs earlier.
    pub growth_factor: f64,
    /// The last sample must also exceed this (in units of `f_minus(x0)`).
    pub threshold: f64,
    pub cauchy_tol: f64,
    pub max_rungs: usize,
}

impl Default for FprimeOptions {
    fn default() -> Self {
        FprimeOptions { l0: 1.0, growth_factor: 1.5, threshold: 1e6, cauchy_tol: 1e-6, max_rungs: 40 }
    }
}

/// Thresholds for the independent `alpha_plus` ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaOptions {
    pub l0: f64,
    /// Estimates below this count as zero.
    pub zero_tol: f64,
    pub cauchy_tol: f64,
    pub max_rungs: usize,
    /// Relative residual under which the tail identity counts as exact.
    pub identity_tol: f64,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        AlphaOptions { l0: 1.0, zero_tol: 1e-8, cauchy_tol: 1e-6, max_rungs: 40, identity_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassifyOptions {
    pub eigen: EigenOptions,
    pub fprime: FprimeOptions,
    pub alpha: AlphaOptions,
    pub defect: DefectOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Signature {
    Diverges,
    Bounded,
    Indeterminate,
}

/// Derivative ladder on one side. For the right side the samples are `f_minus'(z)`;
/// for the left side `f_plus'(z)` (negative, diverging to `-inf`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideSignature {
    pub side: Side,
    pub signature: Signature,
    /// `(z, derivative)` along the ladder.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FprimeReport {
    pub lambda: f64,
    pub sides: Vec<SideSignature>,
}

impl FprimeReport {
    pub fn side(&self, side: Side) -> Option<&SideSignature> {
        self.sides.iter().find(|s| s.side == side)
    }
}

fn signature(samples: &[f64], opts: &FprimeOptions) -> Option<Signature> {
    let n = samples.len();
    if n >= 3 {
        let (last, back) = (samples[n - 1], samples[n - 3]);
        if last >= opts.growth_factor * back && last > opts.threshold {
            return Some(Signature::Diverges);
        }
    }
    if n >= 2 {
        let (last, prev) = (samples[n - 1], samples[n - 2]);
        if (last - prev).abs() <= opts.cauchy_tol * last.abs() {
            return Some(Signature::Bounded);
        }
    }
    None
}

/// `f_minus'` along `z_k = x0 + l0 2^k` on a measure with infinite right end.
fn right_ladder(
    m: &SpeedMeasure,
    lambda: f64,
    opts: &FprimeOptions,
    eigen: &EigenOptions,
) -> Result<(Signature, Vec<(f64, f64)>)> {
    let x0 = expansion_point(m);
    let z = |k: usize| x0 + opts.l0 * 2f64.powi(k as i32);
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut current = None;
    for k in 0..=opts.max_rungs {
        let zk = z(k);
        let covers = |f: &crate::eigen::Eigenfunction| f.window().1 >= zk;
        if !current.as_ref().is_some_and(covers) {
            // solve a few rungs ahead; fall back to this rung alone near overflow
            let ahead = z((k + 3).min(opts.max_rungs));
            current = solve_f_minus(m, lambda, (x0, ahead), eigen)
                .or_else(|_| solve_f_minus(m, lambda, (x0, zk), eigen))
                .ok();
        }
        let Some(f) = current.as_ref() else { break };
        let scale = f.value_at(x0)?;
        samples.push((zk, f.derivative_at(zk)? / scale));
        let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
        if let Some(sig) = signature(&values, opts) {
            return Ok((sig, samples));
        }
    }
    Ok((Signature::Indeterminate, samples))
}

/// Whether `f_minus'` diverges at an infinite right end and `f_plus'` at an infinite
/// left end. Finite ends are omitted.
pub fn fprime_divergence(
    m: &SpeedMeasure,
    lambda: f64,
    opts: &FprimeOptions,
    eigen: &EigenOptions,
) -> Result<FprimeReport> {
    let iv = m.interval();
    let mut sides = Vec::new();
    if iv.l_plus.is_infinite() {
        let (signature, samples) = right_ladder(m, lambda, opts, eigen)?;
        sides.push(SideSignature { side: Side::Right, signature, samples });
    }
    if iv.l_minus.is_infinite() {
        let (signature, samples) = right_ladder(&m.reflected(), lambda, opts, eigen)?;
        let samples = samples.into_iter().map(|(z, d)| (-z, -d)).collect();
        sides.push(SideSignature { side: Side::Left, signature, samples });
    }
    Ok(FprimeReport { lambda, sides })
}

/// The three equivalent conditions on the right tail, evaluated independently.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEquivalenceReport {
    pub lambda: f64,
    /// From the truncated `g` ladder; `None` when the ladder is inconclusive.
    pub alpha_zero: Option<bool>,
    /// `1 / g_L(x0)` at the last rung: `alpha_plus / f_plus(x0)`.
    pub alpha_estimate: f64,
    pub alpha_trace: Vec<(f64, f64)>,
    /// From the measure.
    pub tail_infinite: bool,
    /// `|lambda int_x^inf (y - x) f_plus dm - f_plus(x)| / f_plus(x)` at `x0`.
    pub identity_residual: f64,
    /// The integral identity holds to `identity_tol`.
    pub identity_holds: bool,
    /// Upper end of the quadrature and whether the remaining tail was resolved.
    pub quadrature_end: f64,
    pub tail_resolved: bool,
}

impl TailEquivalenceReport {
    pub fn consistent(&self) -> bool {
        self.alpha_zero == Some(self.tail_infinite) && self.identity_holds == self.tail_infinite
    }
}

/// Zero verdict (if settled), last estimate, and the `(L, estimate)` trace.
type AlphaLadder = (Option<bool>, f64, Vec<(f64, f64)>);

/// `1 / g_L(x0)` for `g_L = 1 + lambda int_x^L (y - x) g_L dm` along `L = x0 + l0 2^k`.
fn alpha_ladder(
    m: &SpeedMeasure,
    lambda: f64,
    opts: &AlphaOptions,
    eigen: &EigenOptions,
) -> Result<AlphaLadder> {
    let x0 = expansion_point(m);
    let mut trace: Vec<(f64, f64)> = Vec::new();
    for k in 0..=opts.max_rungs {
        let l = x0 + opts.l0 * 2f64.powi(k as i32);
        let mesh = Mesh::build(m, lambda, x0, l, &[], eigen.mesh)?;
        let anchor = Anchor { boundary: mesh.ncells(), value: 1.0, slope: 0.0, closure: None };
        let alpha = match successive_approximation(&mesh, lambda, anchor, eigen.series_tol, eigen.max_terms) {
            Ok(s) => 1.0 / s.values[0],
            // g_L(x0) beyond the representable range
            Err(Error::Numerical(_)) => 0.0,
            Err(e) => return Err(e),
        };
        trace.push((l, alpha));
        if alpha < opts.zero_tol {
            return Ok((Some(true), alpha, trace));
        }
        if let [.., (_, prev), _] = trace.as_slice() {
            if (alpha - prev).abs() <= opts.cauchy_tol * alpha {
                return Ok((Some(false), alpha, trace));
            }
        }
    }
    let last = trace.last().map_or(f64::NAN, |t| t.1);
    Ok((None, last, trace))
}

/// Evaluates `alpha_plus = 0`, the right tail verdict and the integral identity
/// `lambda int_x^inf (y - x) f_plus dm = f_plus(x)` independently at the expansion point.
pub fn tail_equivalence_check(
    m: &SpeedMeasure,
    lambda: f64,
    opts: &AlphaOptions,
    eigen: &EigenOptions,
) -> Result<TailEquivalenceReport> {
    let iv = m.interval();
    if iv.l_plus.is_finite() {
        return Err(Error::Unsupported("the alpha_plus conditions need an infinite right end".into()));
    }
    let x0 = expansion_point(m);
    let tail = m.first_moment_tail(x0, Side::Right)?;
    let tail_infinite = tail.verdict == TailVerdict::Infinite;
    let (alpha_zero, alpha_estimate, alpha_trace) = alpha_ladder(m, lambda, opts, eigen)?;

    // quadrature of the identity, pushed out until the remainder is negligible
    let mut residual = f64::NAN;
    let mut end = x0;
    let mut resolved = false;
    for k in 1..=opts.max_rungs {
        let h = x0 + opts.l0 * 2f64.powi(k as i32);
        let f = match solve_f_plus(m, lambda, (x0, h), eigen) {
            Ok(f) => f,
            Err(_) if k > 1 => break,
            Err(e) => return Err(e),
        };
        let fx = f.value_at(x0)?;
        let fh = f.value_at(h)?;
        let dh = f.derivative_at(h)?;
        let tol = 1e-13 * fx;
        let body = m.integrate(|y| (y - x0) * f.value_at(y).unwrap(), x0, h, tol)?;
        let (closure, small) = match m.outer_moments(Side::Right, h) {
            // f_plus is frozen at f_plus(h) beyond h
            Some((m0, m1)) if !tail_infinite => {
                let c = lambda * fh * (m1 - x0 * m0);
                (c, lambda * (m1 - x0 * m0) <= 1e-9)
            }
            _ => (0.0, fh <= 1e-12 * fx && (h - x0) * dh.abs() <= 1e-12 * fx),
        };
        residual = (lambda * body + closure - fx).abs() / fx;
        end = h;
        if small {
            resolved = true;
            break;
        }
    }
    Ok(TailEquivalenceReport {
        lambda,
        alpha_zero,
        alpha_estimate,
        alpha_trace,
        tail_infinite,
        identity_residual: residual,
        identity_holds: residual <= opts.identity_tol,
        quadrature_end: end,
        tail_resolved: resolved,
    })
}

fn tail_payload(t: &TailMoment) -> Value {
    json!({
        "verdict": t.verdict,
        "value": t.value,
        "provenance": t.provenance,
        "exponent": t.exponent,
    })
}

/// Classification by the tail moments alone.
pub fn decide(case: CaseTag, right_infinite: bool, left_infinite: bool) -> Classification {
    use Classification::*;
    match case {
        CaseTag::Bounded => Martingale,
        CaseTag::CaseI => {
            if right_infinite {
                Martingale
            } else {
                StrictSupermartingale
            }
        }
        CaseTag::CaseIReflected => {
            if left_infinite {
                Martingale
            } else {
                StrictSubmartingale
            }
        }
        CaseTag::CaseII => match (right_infinite, left_infinite) {
            (true, true) => Martingale,
            (true, false) => StrictSubmartingale,
            (false, true) => StrictSupermartingale,
            (false, false) => StrictLocalMartingaleOnly,
        },
    }
}

/// Classifies the process started at `x`. The verdict comes from the tail moments;
/// the derivative ladder, the `alpha_plus` conditions and (finite left end) the defect
/// limit are attached as evidence.
///
/// Fails with [`Error::Undecidable`] when a tail cannot be decided.
pub fn classify(m: &SpeedMeasure, x: f64, lambda: f64, opts: &ClassifyOptions) -> Result<Verdict> {
    let iv = m.interval();
    iv.check(x)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
    }
    let case = iv.case();
    let r = expansion_point(m);
    let right = m.first_moment_tail(r, Side::Right)?;
    let left = m.first_moment_tail(r, Side::Left)?;
    let right_inf = right.verdict == TailVerdict::Infinite;
    let left_inf = left.verdict == TailVerdict::Infinite;
    let classification = decide(case, right_inf, left_inf);

    let mut evidence = Vec::new();
    let tail_outcome = |t: &TailMoment, end: f64| {
        if end.is_finite() {
            Outcome::NotApplicable
        } else {
            Outcome::from_bool(t.verdict == TailVerdict::Infinite)
        }
    };
    evidence.push(Evidence::new(Criterion::TailRight, tail_outcome(&right, iv.l_plus), tail_payload(&right)));
    evidence.push(Evidence::new(Criterion::TailLeft, tail_outcome(&left, iv.l_minus), tail_payload(&left)));

    let fp = fprime_divergence(m, lambda, &opts.fprime, &opts.eigen)?;
    let fp_outcome = if fp.sides.is_empty() {
        Outcome::NotApplicable
    } else if fp.sides.iter().any(|s| s.signature == Signature::Indeterminate) {
        Outcome::Indeterminate
    } else {
        Outcome::from_bool(fp.sides.iter().all(|s| s.signature == Signature::Diverges))
    };
    evidence.push(Evidence::new(Criterion::FprimeDivergence, fp_outcome, serde_json::to_value(&fp)?));

    if iv.l_plus.is_infinite() {
        let equiv = tail_equivalence_check(m, lambda, &opts.alpha, &opts.eigen)?;
        let outcome = match equiv.alpha_zero {
            Some(z) => Outcome::from_bool(z),
            None => Outcome::Indeterminate,
        };
        let mut payload = serde_json::to_value(&equiv)?;
        payload["consistent"] = json!(equiv.consistent());
        evidence.push(Evidence::new(Criterion::AlphaPlus, outcome, payload));
    } else {
        evidence.push(Evidence::new(Criterion::AlphaPlus, Outcome::NotApplicable, Value::Null));
    }

    if case == CaseTag::CaseI {
        let curve = defect_curve(m, x, &opts.defect)?;
        let threshold = opts.defect.verdict_floor.max(3.0 * curve.extrapolation_error);
        let outcome = if curve.extrapolated_limit.abs() <= threshold {
            Outcome::Pass
        } else if curve.limit_equals_gap {
            Outcome::Fail
        } else {
            Outcome::Indeterminate
        };
        evidence.push(Evidence::new(Criterion::DefectLimit, outcome, serde_json::to_value(&curve)?));
    } else {
        let note = match case {
            CaseTag::CaseII if classification == Classification::StrictSupermartingale => {
                "conjectured regime: the defect limit is only established for a finite left end"
            }
            _ => "needs a finite left end and an infinite right end",
        };
        evidence.push(Evidence::new(Criterion::DefectLimit, Outcome::NotApplicable, json!({ "note": note })));
    }

    Ok(Verdict { case, classification, x, lambda, evidence })
}

/// Agreement of one pair of criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub consistent: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Mean stays at `x` within 3 standard errors.
    Flat,
    /// Mean does not exceed `x` by more than 3 standard errors.
    Below,
    /// Mean does not fall short of `x` by more than 3 standard errors.
    Above,
    Unconstrained,
}

/// Monte Carlo stopped mean at one checkpoint against the classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCheck {
    pub t: f64,
    pub estimate: MCEstimate,
    pub expectation: Expectation,
    /// Mean differs from `x` by more than 3 standard errors.
    pub significant: bool,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub classification: Classification,
    pub case: CaseTag,
    pub x: f64,
    pub lambda: f64,
    pub evidence: Vec<Evidence>,
    pub checks: Vec<Check>,
    pub mc: Vec<McCheck>,
    pub all_consistent: bool,
}

impl AuditReport {
    /// Converts an inconsistent report into an error carrying the full report.
    pub fn ensure_consistent(self) -> Result<AuditReport> {
        if self.all_consistent {
            Ok(self)
        } else {
            Err(Error::Inconsistent(serde_json::to_string_pretty(&self)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub classify: ClassifyOptions,
    pub step_control: StepControl,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            classify: ClassifyOptions::default(),
            step_control: StepControl::default(),
            checkpoints: vec![1.0, 5.0],
            seed: 0,
        }
    }
}

fn check(name: &str, consistent: bool, detail: String) -> Check {
    Check { name: name.to_string(), consistent, detail }
}

fn analytic_checks(v: &Verdict) -> Vec<Check> {
    let mut checks = Vec::new();
    let outcome = |c| v.evidence_for(c).map(|e| e.outcome).unwrap_or(Outcome::NotApplicable);
    let tail_r = outcome(Criterion::TailRight);
    let tail_l = outcome(Criterion::TailLeft);

    if let Some(e) = v.evidence_for(Criterion::FprimeDivergence) {
        if let Some(Value::Array(sides)) = e.payload.get("sides") {
            for s in sides {
                let side = s["side"].as_str().unwrap_or("");
                let sig = s["signature"].as_str().unwrap_or("");
                let tail = if side == "right" { tail_r } else { tail_l };
                let ok = match sig {
                    "diverges" => tail == Outcome::Pass,
                    "bounded" => tail == Outcome::Fail,
                    _ => false,
                };
                checks.push(check(
                    &format!("tail-{side} vs fprime-divergence"),
                    ok,
                    format!("tail {tail:?}, derivative {sig}"),
                ));
            }
        }
    }
    if let Some(e) = v.evidence_for(Criterion::AlphaPlus) {
        if e.outcome != Outcome::NotApplicable {
            let ok = e.payload.get("consistent").and_then(Value::as_bool).unwrap_or(false);
            let residual = e.payload.get("identity_residual").cloned().unwrap_or(Value::Null);
            checks.push(check(
                "tail-right vs alpha-plus vs tail identity",
                ok && (e.outcome == tail_r),
                format!("alpha {:?}, tail {:?}, identity residual {residual}", e.outcome, tail_r),
            ));
        }
    }
    if let Some(e) = v.evidence_for(Criterion::DefectLimit) {
        if e.outcome != Outcome::NotApplicable {
            let limit = e.payload.get("extrapolated_limit").cloned().unwrap_or(Value::Null);
            checks.push(check(
                "tail-right vs defect-limit",
                e.outcome == tail_r,
                format!("defect {:?} (limit {limit}), tail {tail_r:?}", e.outcome),
            ));
        }
    }
    checks
}

/// Classifies, cross-checks every applicable criterion, and with `mc_budget > 0`
/// compares simulated stopped means at the checkpoints with the classification.
pub fn consistency_audit(
    m: &SpeedMeasure,
    x: f64,
    lambda: f64,
    mc_budget: usize,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let verdict = classify(m, x, lambda, &opts.classify)?;
    let checks = analytic_checks(&verdict);
    let mut mc = Vec::new();
    if mc_budget > 0 {
        let t_max = opts.checkpoints.iter().copied().fold(0.0, f64::max);
        let schedule = Schedule { checkpoints: opts.checkpoints.clone(), levels: vec![], stop_when_levels_hit: false };
        let ens = simulate_paths(m, x, t_max, mc_budget, opts.seed, opts.step_control, schedule)?;
        let expectation = match verdict.classification {
            Classification::Martingale => Expectation::Flat,
            Classification::StrictSupermartingale => Expectation::Below,
            Classification::StrictSubmartingale => Expectation::Above,
            Classification::StrictLocalMartingaleOnly => Expectation::Unconstrained,
        };
        for &t in &opts.checkpoints {
            let estimate = ens.estimate_stopped_mean(t, None)?;
            let band = 3.0 * estimate.stderr;
            let diff = estimate.mean - x;
            let consistent = match expectation {
                Expectation::Flat => diff.abs() <= band,
                Expectation::Below => diff <= band,
                Expectation::Above => diff >= -band,
                Expectation::Unconstrained => true,
            };
            mc.push(McCheck { t, estimate, expectation, significant: diff.abs() > band, consistent });
        }
    }
    let all_consistent = checks.iter().all(|c| c.consistent) && mc.iter().all(|c| c.consistent);
    Ok(AuditReport {
        classification: verdict.classification,
        case: verdict.case,
        x,
        lambda,
        evidence: verdict.evidence,
        checks,
        mc,
        all_consistent,
    })
}

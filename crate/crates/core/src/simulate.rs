//! Euler-Maruyama paths of `dX = sigma(X) dW`, `sigma^2 = 2 / rho`, absorbed at finite
//! ends, and Monte Carlo estimators on them.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Side, SpeedMeasure};

/// Time stepping and absorption rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControl {
    pub dt_base: f64,
    /// `c` in `dt = dt_base min(1, c s(x)^2 / sigma(x)^2)`, `s` the local length scale.
    pub boundary_refinement: f64,
    /// Absorption band relative to `max(1, |l|)` at a finite end `l`.
    pub absorption_band: f64,
    /// Detect level crossings between grid times with the Brownian-bridge probability.
    pub bridge: bool,
    /// Each base step consumes `2^crn_depth` normals, shared across `halvings`.
    pub crn_depth: u32,
    /// Number of times `dt_base` is halved; at most `crn_depth`.
    pub halvings: u32,
    pub max_steps_per_path: u64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_base: 1e-2,
            boundary_refinement: 0.1,
            absorption_band: 1e-4,
            bridge: false,
            crn_depth: 0,
            halvings: 0,
            max_steps_per_path: 50_000_000,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
            }
        };
        positive(self.dt_base, "dt_base")?;
        positive(self.boundary_refinement, "boundary_refinement")?;
        positive(self.absorption_band, "absorption_band")?;
        if self.halvings > self.crn_depth {
            return Err(Error::InvalidArgument(format!(
                "halvings = {} exceeds crn_depth = {}",
                self.halvings, self.crn_depth
            )));
        }
        if self.crn_depth > 16 {
            return Err(Error::InvalidArgument("crn_depth above 16".into()));
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.dt_base / f64::from(1u32 << self.halvings)
    }

    fn normals_per_step(&self) -> u32 {
        1 << (self.crn_depth - self.halvings)
    }
}

/// What a simulation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Times at which the stopped state is recorded; the last one is `t_max` if larger.
    pub checkpoints: Vec<f64>,
    /// Levels whose first passage times are recorded.
    pub levels: Vec<f64>,
    /// Stop a path once every level is hit and every checkpoint passed.
    pub stop_when_levels_hit: bool,
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    /// Finite end the path was absorbed at, and when.
    pub absorbed: Option<(Side, f64)>,
    /// `X_{t ^ tau}` at each checkpoint; `NaN` when the path stopped early.
    pub states: Vec<f64>,
    /// First passage time of each level, if before `t_max`.
    pub hits: Vec<Option<f64>>,
    pub steps: u64,
}

/// Paths sharing one start point, horizon, seed and step control.
#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    pub x0: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub step_control: StepControl,
    pub schedule: Schedule,
    pub interval: (f64, f64),
    pub paths: Vec<PathRecord>,
}

/// Mean of a per-path statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    pub estimator: String,
}

impl MCEstimate {
    fn from_samples(samples: &[f64], seed: u64, estimator: String) -> MCEstimate {
        let n = samples.len();
        if n == 0 {
            return MCEstimate { mean: f64::NAN, stderr: f64::NAN, n, seed, estimator };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        MCEstimate { mean, stderr: (var / n as f64).sqrt(), n, seed, estimator }
    }

    /// `|mean - value| / stderr`, infinite when stderr is zero and the mean differs.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

/// Hitting-time transform estimate with its truncation bias bound `e^{-lambda t_max}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingEstimate {
    pub estimate: MCEstimate,
    pub bias_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitCondition {
    Unconditional,
    /// Only paths that reach the level before absorption at `l_-` count.
    BeforeTauMinus,
}

struct Dynamics<'a> {
    m: &'a SpeedMeasure,
    lo: f64,
    hi: f64,
    band_lo: f64,
    band_hi: f64,
    ctl: StepControl,
}

impl Dynamics<'_> {
    fn sigma2(&self, x: f64) -> Result<f64> {
        let rho = self.m.density(x);
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Numerical(format!("density {rho} at {x} cannot drive a diffusion")));
        }
        Ok(2.0 / rho)
    }

    /// Local length scale: distance to a finite end, capped by `max(1, |x|)`.
    fn scale(&self, x: f64) -> f64 {
        let mut s = x.abs().max(1.0);
        if self.lo.is_finite() {
            s = s.min(x - self.lo);
        }
        if self.hi.is_finite() {
            s = s.min(self.hi - x);
        }
        s
    }

    fn absorbed(&self, x: f64) -> Option<Side> {
        if x <= self.lo + self.band_lo {
            Some(Side::Left)
        } else if x >= self.hi - self.band_hi {
            Some(Side::Right)
        } else {
            None
        }
    }
}

/// Simulates `n` paths from `x0` up to `t_max`.
///
/// Path `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so results do not
/// depend on thread count or scheduling.
pub fn simulate_paths(
    m: &SpeedMeasure,
    x0: f64,
    t_max: f64,
    n: usize,
    seed: u64,
    ctl: StepControl,
    schedule: Schedule,
) -> Result<PathEnsemble> {
    if m.has_atoms() {
        return Err(Error::Unsupported("measures with atoms cannot be simulated".into()));
    }
    ctl.validate()?;
    let iv = m.interval();
    iv.check(x0)?;
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("t_max = {t_max} must be positive")));
    }
    let mut schedule = schedule;
    if schedule.checkpoints.iter().any(|t| !(*t >= 0.0) || *t > t_max) {
        return Err(Error::InvalidArgument("checkpoints must lie in [0, t_max]".into()));
    }
    if schedule.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("checkpoints must be strictly increasing".into()));
    }
    for a in &schedule.levels {
        if !(*a >= iv.l_minus && *a <= iv.l_plus) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("level {a} outside the interval")));
        }
    }
    schedule.checkpoints.dedup();
    let band = |l: f64| if l.is_finite() { ctl.absorption_band * l.abs().max(1.0) } else { 0.0 };
    let dynamics = Dynamics {
        m,
        lo: iv.l_minus,
        hi: iv.l_plus,
        band_lo: band(iv.l_minus),
        band_hi: band(iv.l_plus),
        ctl,
    };
    if dynamics.absorbed(x0).is_some() {
        return Err(Error::InvalidArgument(format!("x0 = {x0} starts inside the absorption band")));
    }
    let paths = (0..n)
        .into_par_iter()
        .map(|i| simulate_one(&dynamics, x0, t_max, seed, i as u64, &schedule))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        x0,
        t_max,
        n_paths: n,
        seed,
        step_control: ctl,
        schedule,
        interval: (iv.l_minus, iv.l_plus),
        paths,
    })
}

fn simulate_one(
    d: &Dynamics<'_>,
    x0: f64,
    t_max: f64,
    seed: u64,
    index: u64,
    schedule: &Schedule,
) -> Result<PathRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let ctl = &d.ctl;
    let draws = ctl.normals_per_step();
    let norm = f64::from(draws).sqrt().recip();
    let dt0 = ctl.dt();
    let checkpoints = &schedule.checkpoints;
    let levels = &schedule.levels;

    let mut states = vec![f64::NAN; checkpoints.len()];
    let mut hits: Vec<Option<f64>> =
        levels.iter().map(|a| if *a == x0 { Some(0.0) } else { None }).collect();
    let mut next_cp = 0;
    while next_cp < checkpoints.len() && checkpoints[next_cp] == 0.0 {
        states[next_cp] = x0;
        next_cp += 1;
    }
    let mut x = x0;
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut absorbed = None;
    let done = |next_cp: usize, hits: &[Option<f64>]| {
        schedule.stop_when_levels_hit && next_cp == checkpoints.len() && hits.iter().all(Option::is_some)
    };

    while t < t_max && !done(next_cp, &hits) {
        let s2 = d.sigma2(x)?;
        let scale = d.scale(x);
        let mut dt = dt0 * (ctl.boundary_refinement * scale * scale / s2).min(1.0);
        if dt < 1e-15 * dt0 {
            return Err(Error::Numerical(format!("time step underflow at x = {x}")));
        }
        let target = checkpoints.get(next_cp).copied().unwrap_or(t_max).min(t_max);
        let hits_target = t + dt >= target;
        if hits_target {
            dt = target - t;
        }
        let z: f64 = if draws == 1 {
            rng.sample(StandardNormal)
        } else {
            (0..draws).map(|_| rng.sample::<f64, _>(StandardNormal)).sum::<f64>() * norm
        };
        let sigma = s2.sqrt();
        let mut y = x + sigma * dt.sqrt() * z;
        let t_new = if hits_target { target } else { t + dt };
        steps += 1;
        if steps > ctl.max_steps_per_path {
            return Err(Error::Numerical(format!("path {index} exceeded the step budget")));
        }

        let side = d.absorbed(y);
        if let Some(side) = side {
            y = if side == Side::Left { d.lo } else { d.hi };
        }
        for (a, hit) in levels.iter().zip(hits.iter_mut()) {
            if hit.is_some() {
                continue;
            }
            let crossed = (x - a) * (y - a) <= 0.0;
            let bridged = !crossed && ctl.bridge && {
                let p = (-2.0 * (x - a) * (y - a) / (s2 * dt)).exp();
                rng.gen::<f64>() < p
            };
            if crossed || bridged {
                *hit = Some(t_new);
            }
        }
        x = y;
        t = t_new;
        if hits_target && next_cp < checkpoints.len() && t >= checkpoints[next_cp] {
            states[next_cp] = x;
            next_cp += 1;
        }
        if let Some(side) = side {
            absorbed = Some((side, t));
            for s in states.iter_mut().skip(next_cp) {
                *s = x;
            }
            break;
        }
    }
    Ok(PathRecord { absorbed, states, hits, steps })
}

impl PathEnsemble {
    fn checkpoint_index(&self, t: f64) -> Result<usize> {
        self.schedule
            .checkpoints
            .iter()
            .position(|c| (c - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint at t = {t}")))
    }

    fn level_index(&self, a: f64) -> Result<usize> {
        self.schedule
            .levels
            .iter()
            .position(|l| *l == a)
            .ok_or_else(|| Error::InvalidArgument(format!("level {a} was not tracked")))
    }

    pub fn total_steps(&self) -> u64 {
        self.paths.iter().map(|p| p.steps).sum()
    }

    /// Fraction of paths absorbed at `side` before `t_max`.
    pub fn absorbed_fraction(&self, side: Side) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        let k = self.paths.iter().filter(|p| matches!(p.absorbed, Some((s, _)) if s == side)).count();
        k as f64 / self.paths.len() as f64
    }

    /// Mean of `X_{t ^ tau}`, or of `X_{t ^ tau ^ tau_a}` with a lower stop `a`.
    pub fn estimate_stopped_mean(&self, t: f64, lower_stop: Option<f64>) -> Result<MCEstimate> {
        let k = self.checkpoint_index(t)?;
        let stop = lower_stop.map(|a| self.level_index(a).map(|j| (a, j))).transpose()?;
        let samples: Vec<f64> = self
            .paths
            .iter()
            .map(|p| match stop {
                Some((a, j)) if p.hits[j].is_some_and(|h| h <= t) => a,
                _ => p.states[k],
            })
            .collect();
        if samples.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "paths stopped before t = {t}; simulate without early stopping"
            )));
        }
        let name = match lower_stop {
            Some(a) => format!("stopped_mean(t={t},a={a})"),
            None => format!("stopped_mean(t={t})"),
        };
        Ok(MCEstimate::from_samples(&samples, self.seed, name))
    }

    /// Mean of `e^{-lambda tau_a}`, zero for paths that miss `a` before `t_max`.
    /// Fails when the truncation bias bound `e^{-lambda t_max}` exceeds `max_bias`.
    pub fn estimate_hitting_laplace(
        &self,
        a: f64,
        lambda: f64,
        condition: HitCondition,
        max_bias: f64,
    ) -> Result<HittingEstimate> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
        }
        let name = format!("hitting_laplace(a={a},lambda={lambda},{condition:?})");
        if a == self.x0 {
            let ones = vec![1.0; self.paths.len()];
            return Ok(HittingEstimate {
                estimate: MCEstimate::from_samples(&ones, self.seed, name),
                bias_bound: 0.0,
            });
        }
        let bias_bound = (-lambda * self.t_max).exp();
        if bias_bound > max_bias {
            return Err(Error::InvalidArgument(format!(
                "truncation bias bound {bias_bound:e} exceeds {max_bias:e}; raise t_max"
            )));
        }
        let j = self.level_index(a)?;
        let samples: Vec<f64> = self
            .paths
            .iter()
            .map(|p| match p.hits[j] {
                None => 0.0,
                Some(h) => {
                    let killed = condition == HitCondition::BeforeTauMinus
                        && matches!(p.absorbed, Some((Side::Left, ta)) if ta < h);
                    if killed {
                        0.0
                    } else {
                        (-lambda * h).exp()
                    }
                }
            })
            .collect();
        Ok(HittingEstimate { estimate: MCEstimate::from_samples(&samples, self.seed, name), bias_bound })
    }

    pub fn summary(&self) -> EnsembleSummary {
        let checkpoint_means = self
            .schedule
            .checkpoints
            .iter()
            .filter_map(|t| self.estimate_stopped_mean(*t, None).ok())
            .collect();
        EnsembleSummary {
            x0: self.x0,
            t_max: self.t_max,
            n_paths: self.n_paths,
            seed: self.seed,
            step_control: self.step_control,
            checkpoints: self.schedule.checkpoints.clone(),
            checkpoint_means,
            absorbed_left: self.absorbed_fraction(Side::Left),
            absorbed_right: self.absorbed_fraction(Side::Right),
            total_steps: self.total_steps(),
        }
    }

    /// Rows `path_id,t,x,absorbed` for every recorded checkpoint.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,t,x,absorbed")?;
        for (i, p) in self.paths.iter().enumerate() {
            for (t, x) in self.schedule.checkpoints.iter().zip(&p.states) {
                if x.is_nan() {
                    continue;
                }
                let absorbed = matches!(p.absorbed, Some((_, ta)) if ta <= *t);
                writeln!(w, "{i},{t},{x:e},{absorbed}")?;
            }
        }
        Ok(())
    }
}

/// JSON summary of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub x0: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub step_control: StepControl,
    pub checkpoints: Vec<f64>,
    pub checkpoint_means: Vec<MCEstimate>,
    pub absorbed_left: f64,
    pub absorbed_right: f64,
    pub total_steps: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    fn sched(checkpoints: &[f64], levels: &[f64]) -> Schedule {
        Schedule { checkpoints: checkpoints.to_vec(), levels: levels.to_vec(), stop_when_levels_hit: false }
    }

    #[test]
    fn brownian_increments_are_standard_normal() {
        // sigma = 1 and s >= 1: with c = 1 the step stays at dt_base and X_1 ~ N(0, 1)
        let m = MeasureSpec::brownian().build().unwrap();
        let ctl = StepControl { dt_base: 0.25, boundary_refinement: 1.0, ..Default::default() };
        let ens = simulate_paths(&m, 0.0, 1.0, 4000, 7, ctl, sched(&[1.0], &[])).unwrap();
        assert!(ens.paths.iter().all(|p| p.steps == 4));
        let xs: Vec<f64> = ens.paths.iter().map(|p| p.states[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 4.0 / (4000f64).sqrt());
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn same_seed_same_paths() {
        let m = MeasureSpec::inverse_bessel().build().unwrap();
        let ctl = StepControl { dt_base: 1e-2, ..Default::default() };
        let a = simulate_paths(&m, 1.0, 1.0, 50, 3, ctl, sched(&[0.5, 1.0], &[2.0])).unwrap();
        let b = simulate_paths(&m, 1.0, 1.0, 50, 3, ctl, sched(&[0.5, 1.0], &[2.0])).unwrap();
        assert_eq!(a.paths, b.paths);
        let c = simulate_paths(&m, 1.0, 1.0, 50, 4, ctl, sched(&[0.5, 1.0], &[2.0])).unwrap();
        assert_ne!(a.paths, c.paths);
    }

    #[test]
    fn empty_ensemble() {
        let m = MeasureSpec::brownian().build().unwrap();
        let ens = simulate_paths(&m, 0.0, 1.0, 0, 1, StepControl::default(), sched(&[1.0], &[])).unwrap();
        assert!(ens.paths.is_empty());
        assert_eq!(ens.estimate_stopped_mean(1.0, None).unwrap().n, 0);
    }

    #[test]
    fn atoms_are_rejected() {
        let spec: MeasureSpec = serde_json::from_str(
            r#"{"family":"constant","interval":["-inf","inf"],"density":2,"atoms":[[0.5,1]]}"#,
        )
        .unwrap();
        let m = spec.build().unwrap();
        let r = simulate_paths(&m, 0.0, 1.0, 1, 1, StepControl::default(), sched(&[1.0], &[]));
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn hitting_own_start_is_one() {
        let m = MeasureSpec::brownian().build().unwrap();
        let ens = simulate_paths(&m, 1.0, 1.0, 10, 1, StepControl::default(), sched(&[], &[])).unwrap();
        let h = ens.estimate_hitting_laplace(1.0, 0.5, HitCondition::Unconditional, 1.0).unwrap();
        assert_eq!(h.estimate.mean, 1.0);
        assert_eq!(h.estimate.stderr, 0.0);
    }

    #[test]
    fn absorbed_paths_stay_put() {
        let spec: MeasureSpec =
            serde_json::from_str(r#"{"family":"constant","interval":[0,"inf"],"density":2}"#).unwrap();
        let m = spec.build().unwrap();
        let ctl = StepControl { dt_base: 1e-3, ..Default::default() };
        let ens = simulate_paths(&m, 0.05, 2.0, 200, 9, ctl, sched(&[0.5, 2.0], &[])).unwrap();
        for p in &ens.paths {
            if let Some((Side::Left, ta)) = p.absorbed {
                assert!(ta <= 2.0);
                assert_eq!(p.states[1], 0.0);
            } else {
                assert!(p.states.iter().all(|x| *x > 0.0));
            }
        }
        assert!(ens.absorbed_fraction(Side::Left) > 0.8);
        assert!(ens.estimate_hitting_laplace(0.05, 0.5, HitCondition::Unconditional, 1e-3).is_ok());
        assert!(ens.estimate_hitting_laplace(1.0, 0.5, HitCondition::Unconditional, 1e-3).is_err());
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let m = MeasureSpec::brownian().build().unwrap();
        let ens = simulate_paths(&m, 0.0, 1.0, 2, 1, StepControl::default(), sched(&[1.0], &[])).unwrap();
        assert!(ens.estimate_stopped_mean(0.5, None).is_err());
    }
}

//! Command-line front end: reads a JSON run config, dispatches one command and
//! writes a JSON report (plus CSV curves) to the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::{classify, consistency_audit, AuditOptions, ClassifyOptions};
use crate::eigen::{eigen_pair, hitting_laplace, EigenOptions};
use crate::error::{Error, Result};
use crate::measure::{build_measure, MeasureSpec};
use crate::resolvent::{
    defect_curve, green, martingale_defect, stopped_mean_laplace, DefectOptions,
};
use crate::simulate::{simulate_paths, HitCondition, Schedule, StepControl};

pub const SEED_ENV: &str = "NATSCALE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Classify,
    Eigen,
    Green,
    Defect,
    Hittime,
    Simulate,
    Audit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Eigen => "eigen",
            Command::Green => "green",
            Command::Defect => "defect",
            Command::Hittime => "hittime",
            Command::Simulate => "simulate",
            Command::Audit => "audit",
        }
    }
}

/// Optional overrides of solver tolerances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rungs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fprime_growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fprime_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cauchy_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_zero_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_degree: Option<usize>,
}

/// File names inside the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    /// Also dump per-path checkpoints for `simulate`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub paths_csv: bool,
}

/// One run, as read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub measure: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Target level for `hittime`, extra points for `green`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<HitCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_control: Option<StepControl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Outputs>,
}

fn in_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v > lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` = {v} outside ({lo}, {hi}]")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Range checks on every numeric field.
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            in_range("lambda", l, 0.0, 1e6)?;
        }
        if let Some(t) = self.t_max {
            in_range("t_max", t, 0.0, 1e6)?;
        }
        if let Some(n) = self.n_paths {
            if n > 100_000_000 {
                return Err(Error::Config(format!("`n_paths` = {n} above 1e8")));
            }
        }
        if let Some([a, b]) = self.window {
            if !(a < b) {
                return Err(Error::Config(format!("`window` = [{a}, {b}] is empty")));
            }
        }
        if let Some(cp) = &self.checkpoints {
            if cp.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                return Err(Error::Config("`checkpoints` must be positive".into()));
            }
        }
        if let Some(s) = &self.step_control {
            s.validate().map_err(|e| Error::Config(format!("`step_control`: {e}")))?;
        }
        if let Some(t) = &self.tolerances {
            let unit = |name: &str, v: Option<f64>| v.map_or(Ok(()), |v| in_range(name, v, 0.0, 1.0));
            unit("tolerances.series_tol", t.series_tol)?;
            unit("tolerances.ladder_tol", t.ladder_tol)?;
            unit("tolerances.cauchy_tol", t.cauchy_tol)?;
            unit("tolerances.alpha_zero_tol", t.alpha_zero_tol)?;
            unit("tolerances.defect_floor", t.defect_floor)?;
            if let Some(g) = t.fprime_growth {
                in_range("tolerances.fprime_growth", g, 1.0, 100.0)?;
            }
            if let Some(g) = t.fprime_threshold {
                in_range("tolerances.fprime_threshold", g, 1.0, 1e200)?;
            }
            if let Some(r) = t.max_rungs {
                if !(2..=60).contains(&r) {
                    return Err(Error::Config(format!("`tolerances.max_rungs` = {r} outside [2, 60]")));
                }
            }
            if let Some(o) = t.mesh_order {
                if !(4..=32).contains(&o) {
                    return Err(Error::Config(format!("`tolerances.mesh_order` = {o} outside [4, 32]")));
                }
            }
            if let Some(d) = t.defect_degree {
                if !(1..=4).contains(&d) {
                    return Err(Error::Config(format!("`tolerances.defect_degree` = {d} outside [1, 4]")));
                }
            }
        }
        Ok(())
    }

    fn require<T: Copy>(&self, v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("`{name}` is required for this command")))
    }

    fn classify_options(&self) -> ClassifyOptions {
        let mut o = ClassifyOptions { eigen: self.eigen_options(), ..Default::default() };
        o.defect.eigen = o.eigen;
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.fprime_growth {
                o.fprime.growth_factor = v;
            }
            if let Some(v) = t.fprime_threshold {
                o.fprime.threshold = v;
            }
            if let Some(v) = t.cauchy_tol {
                o.fprime.cauchy_tol = v;
                o.alpha.cauchy_tol = v;
            }
            if let Some(v) = t.alpha_zero_tol {
                o.alpha.zero_tol = v;
            }
            if let Some(v) = t.max_rungs {
                o.fprime.max_rungs = v;
                o.alpha.max_rungs = v;
            }
            if let Some(v) = t.defect_floor {
                o.defect.verdict_floor = v;
            }
            if let Some(v) = t.defect_degree {
                o.defect.degree = v;
            }
        }
        o
    }

    fn eigen_options(&self) -> EigenOptions {
        let mut o = EigenOptions::default();
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.series_tol {
                o.series_tol = v;
            }
            if let Some(v) = t.ladder_tol {
                o.ladder_tol = v;
            }
            if let Some(v) = t.max_rungs {
                o.max_rungs = v;
            }
            if let Some(v) = t.mesh_order {
                o.mesh.order = v;
            }
        }
        o
    }
}

#[derive(Debug, Parser)]
#[command(name = "natscale", version, about = "Eigenfunctions, resolvents and martingale classification of natural-scale diffusions")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Falls back to the config, then to the NATSCALE_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

/// Result of a run: exit status and where the report went.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: i32,
    pub report_path: PathBuf,
    pub report: Value,
}

/// Applies command-line overrides and the seed fallback to a config.
pub fn effective_config(cli: &Cli, mut cfg: RunConfig) -> Result<RunConfig> {
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(Error::Config(format!(
                "config says `{}` but `{}` was requested",
                c.name(),
                cli.command.name()
            )));
        }
    }
    cfg.command = Some(cli.command);
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if cfg.seed.is_none() {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let s = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} = {v:?} is not a u64")))?;
            cfg.seed = Some(s);
        }
    }
    if let Some(n) = cli.paths {
        cfg.n_paths = Some(n);
    }
    if let Some(l) = cli.lambda {
        cfg.lambda = Some(l);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the config, runs the command and writes the report. Errors before a
/// report can be written are returned; later failures end up in the report.
pub fn run(cli: &Cli) -> Result<RunOutcome> {
    let cfg = effective_config(cli, RunConfig::from_file(&cli.config)?)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    run_config(&cfg, &out)
}

/// Runs an already effective config into `out`.
pub fn run_config(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let command = cfg.command.ok_or_else(|| Error::Config("`command` missing".into()))?;
    fs::create_dir_all(out)?;
    let started = Instant::now();
    let outputs = cfg.outputs.clone().unwrap_or_default();
    let report_path = out.join(outputs.report.clone().unwrap_or_else(|| format!("{}.json", command.name())));
    let csv_path = out.join(outputs.csv.clone().unwrap_or_else(|| format!("{}.csv", command.name())));

    let (status, result) = match dispatch(command, cfg, out, &csv_path) {
        Ok((status, v)) => (status, v),
        Err(Error::Undecidable(msg)) => (2, json!({ "refused": msg })),
        Err(e) => (1, json!({ "error": e.to_string() })),
    };
    let report = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "result": result,
        "status": status,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    let w = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(w, &report)?;
    Ok(RunOutcome { status, report_path, report })
}

/// Output file as reported: its name inside the output directory.
fn rel_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn dispatch(command: Command, cfg: &RunConfig, out: &Path, csv_path: &Path) -> Result<(i32, Value)> {
    let m = build_measure(&cfg.measure)?;
    let eigen_opts = cfg.eigen_options();
    let lambda = || cfg.require(cfg.lambda, "lambda");
    let x = || cfg.require(cfg.x, "x");
    let seed = cfg.seed.unwrap_or(0);
    match command {
        Command::Classify => {
            let v = classify(&m, x()?, lambda()?, &cfg.classify_options())?;
            Ok((0, serde_json::to_value(v)?))
        }
        Command::Eigen => {
            let l = lambda()?;
            let w = cfg.window.map(|[a, b]| (a, b)).or(cfg.x.map(|x| (x, x)));
            let w = cfg.require(w, "window")?;
            let pair = eigen_pair(&m, l, w, &eigen_opts)?;
            let fm = out.join("f_minus.csv");
            let fp = out.join("f_plus.csv");
            pair.f_minus.write_csv(BufWriter::new(File::create(&fm)?))?;
            pair.f_plus.write_csv(BufWriter::new(File::create(&fp)?))?;
            Ok((
                0,
                json!({
                    "lambda": l,
                    "wronskian_h": pair.wronskian_h,
                    "wronskian_deviation": pair.wronskian_deviation,
                    "alpha_plus": pair.alpha_plus,
                    "truncation_window": pair.truncation_window,
                    "f_minus": { "normalization": pair.f_minus.normalization(), "residuals": pair.f_minus.residuals(&m)?, "csv": rel_name(&fm) },
                    "f_plus": { "normalization": pair.f_plus.normalization(), "residuals": pair.f_plus.residuals(&m)?, "csv": rel_name(&fp) },
                }),
            ))
        }
        Command::Green => {
            let (l, x) = (lambda()?, x()?);
            let w = cfg.window.map(|[a, b]| (a, b)).unwrap_or((x, x));
            let pair = eigen_pair(&m, l, (w.0.min(x), w.1.max(x)), &eigen_opts)?;
            let mut wtr = BufWriter::new(File::create(csv_path)?);
            use std::io::Write;
            writeln!(wtr, "y,green")?;
            for y in pair.f_minus.grid() {
                if y >= pair.window().0 && y <= pair.window().1 {
                    writeln!(wtr, "{y:e},{:e}", green(&pair, x, y)?)?;
                }
            }
            let at_level = cfg.level.map(|y| green(&pair, x, y)).transpose()?;
            Ok((
                0,
                json!({
                    "lambda": l, "x": x, "wronskian_h": pair.wronskian_h,
                    "green_at_level": at_level, "diagonal": green(&pair, x, x)?, "csv": rel_name(csv_path),
                }),
            ))
        }
        Command::Defect => {
            let x = x()?;
            let mut opts = DefectOptions { eigen: eigen_opts, ..Default::default() };
            let co = cfg.classify_options();
            opts.verdict_floor = co.defect.verdict_floor;
            opts.degree = co.defect.degree;
            let curve = defect_curve(&m, x, &opts)?;
            curve.write_csv(BufWriter::new(File::create(csv_path)?))?;
            let at_lambda = match cfg.lambda {
                Some(l) => {
                    let pair = eigen_pair(&m, l, (x, x), &eigen_opts)?;
                    Some(json!({
                        "lambda": l,
                        "stopped_mean_laplace": stopped_mean_laplace(&pair, x)?,
                        "martingale_defect": martingale_defect(&pair, x)?,
                    }))
                }
                None => None,
            };
            Ok((0, json!({ "curve": curve, "at_lambda": at_lambda, "csv": rel_name(csv_path) })))
        }
        Command::Hittime => {
            let (l, x) = (lambda()?, x()?);
            let a = cfg.require(cfg.level, "level")?;
            let pair = eigen_pair(&m, l, (x.min(a), x.max(a)), &eigen_opts)?;
            let exact = hitting_laplace(&pair, x, a)?;
            let condition = cfg.condition.unwrap_or(if a > x {
                HitCondition::BeforeTauMinus
            } else {
                HitCondition::Unconditional
            });
            let n = cfg.n_paths.unwrap_or(0);
            let mc = if n > 0 {
                let t_max = cfg.t_max.unwrap_or(20.0);
                let ctl = cfg.step_control.unwrap_or(StepControl { bridge: true, ..Default::default() });
                let schedule = Schedule { checkpoints: vec![], levels: vec![a], stop_when_levels_hit: true };
                let ens = simulate_paths(&m, x, t_max, n, seed, ctl, schedule)?;
                let est = ens.estimate_hitting_laplace(a, l, condition, 1e-2)?;
                let agrees = (est.estimate.mean - exact).abs() <= 3.0 * est.estimate.stderr + est.bias_bound;
                Some(json!({ "estimate": est, "agrees_within_3_stderr": agrees }))
            } else {
                None
            };
            Ok((0, json!({ "lambda": l, "x": x, "level": a, "condition": condition, "eigen_ratio": exact, "monte_carlo": mc })))
        }
        Command::Simulate => {
            let x = x()?;
            let checkpoints = cfg.checkpoints.clone().unwrap_or_else(|| vec![1.0, 5.0]);
            let t_max = cfg.t_max.unwrap_or_else(|| checkpoints.iter().copied().fold(0.0, f64::max));
            let n = cfg.n_paths.unwrap_or(10_000);
            let schedule = Schedule { checkpoints, levels: vec![], stop_when_levels_hit: false };
            let ens = simulate_paths(&m, x, t_max, n, seed, cfg.step_control.unwrap_or_default(), schedule)?;
            let paths_csv = if cfg.outputs.as_ref().is_some_and(|o| o.paths_csv) {
                ens.write_csv(BufWriter::new(File::create(csv_path)?))?;
                Some(rel_name(csv_path))
            } else {
                None
            };
            Ok((0, json!({ "summary": ens.summary(), "paths_csv": paths_csv })))
        }
        Command::Audit => {
            let opts = AuditOptions {
                classify: cfg.classify_options(),
                step_control: cfg.step_control.unwrap_or_default(),
                checkpoints: cfg.checkpoints.clone().unwrap_or_else(|| vec![1.0, 5.0]),
                seed,
            };
            let report = consistency_audit(&m, x()?, lambda()?, cfg.n_paths.unwrap_or(0), &opts)?;
            let status = if report.all_consistent { 0 } else { 1 };
            Ok((status, serde_json::to_value(report)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BROWNIAN: &str = r#"{"measure":{"family":"constant","interval":["-inf","inf"],"density":2},"x":0,"lambda":0.5}"#;

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"measure":{"family":"constant","interval":["-inf","inf"],"density":2},"lamda":0.5}"#;
        let err = RunConfig::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let bad = r#"{"measure":{"family":"constant","interval":["-inf","inf"],"density":2},"lambda":-1}"#;
        let err = RunConfig::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_json(BROWNIAN).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn classify_brownian() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::from_json(BROWNIAN).unwrap();
        cfg.command = Some(Command::Classify);
        let out = run_config(&cfg, dir.path()).unwrap();
        assert_eq!(out.status, 0);
        assert_eq!(out.report["result"]["classification"], "Martingale");
        assert_eq!(out.report["result"]["case"], "CaseII");
        let echoed: RunConfig = serde_json::from_value(out.report["config"].clone()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn undecidable_tail_is_refused() {
        // two samples cannot support a tail fit
        let text = r#"{"command":"classify","measure":{"family":"tabulated","interval":[0,"inf"],"x":[1,2],"density":[1,1]},"x":1,"lambda":0.5}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_config(&cfg, dir.path()).unwrap();
        assert_eq!(out.status, 2);
        assert!(out.report["result"]["refused"].is_string());
    }
}

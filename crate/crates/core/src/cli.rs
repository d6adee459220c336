//! Batch driver behind the `spinchaos` binary.
//!
//! `spinchaos <mode> --config <file> [--set key=value ...]` reads a flat
//! `key = value` file (`#` starts a comment), applies the overrides, runs
//! the requested mode and writes CSV files plus `manifest.txt` and
//! `summary.txt` into the output directory. Data files and the summary are
//! byte-identical for identical configurations; only the manifest carries
//! timestamps.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};

use crate::classical_map::{
    angles_to_state, lyapunov_exponent, regime_scan, trajectory, write_trajectory_csv,
    ClassicalParams, DEFAULT_CHAOS_THRESHOLD, DEFAULT_SCAN_STEPS,
};
use crate::correspondence::{
    break_time, difference_series, first_maximum, fit_break_scaling, fit_growth_exponent,
    growth_window, max_difference, saturation_time, variance_growth_fit, variance_window,
    write_break_times_csv, FitOptions, FitWindow, GrowthFit, Intercept,
    GROWTH_CEILING, NOISE_SIGMAS, SMOOTHING, VARIANCE_CEILING,
};
use crate::csvfmt::fmt_f64;
use crate::error::Error;
use crate::exec::Exec;
use crate::liouville::{
    appendix_moments, ensemble_evolve_with_histograms, quantum_jx_moment, vector_model_moments,
    Ensemble, MomentSeries, DEFAULT_N_TRAJ,
};
use crate::quantum_spin::{build_floquet, observable_series, QuantumState, SpinQuantum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Quantum,
    ClassicalTraj,
    Lyapunov,
    RegimeScan,
    Ensemble,
    Compare,
    BreakScaling,
    AppendixCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Quantum => "quantum",
            Mode::ClassicalTraj => "classical-traj",
            Mode::Lyapunov => "lyapunov",
            Mode::RegimeScan => "regime-scan",
            Mode::Ensemble => "ensemble",
            Mode::Compare => "compare",
            Mode::BreakScaling => "break-scaling",
            Mode::AppendixCheck => "appendix-check",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spinchaos", version, about = "Quantum and classical dynamics of two coupled kicked spins")]
pub struct Args {
    pub mode: Mode,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

const KNOWN_KEYS: &[&str] = &[
    "a", "gamma", "r", "c", "s", "l", "r_tol", "ic", "n_kicks", "n_traj", "seed", "out", "exec",
    "hist_kicks", "dump_state", "n_steps", "renorm_every", "n_samples", "threshold", "intercept",
    "noise_sigmas", "growth_ceiling", "variance_ceiling", "smoothing", "fit_start", "fit_end",
    "p", "p_values", "horizon", "l_values", "r_target", "j",
];

/// Parsed configuration: raw entries with typed accessors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Config::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(config_err(format!("line {}: expected key = value, got {raw:?}", no + 1)));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> CliResult<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| config_err(format!("key `{key}`: {v:?} is not a finite number")))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let clean = v.replace('_', "");
                clean
                    .parse::<usize>()
                    .or_else(|_| {
                        // accept 1e6 style integers
                        clean
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.fract() == 0.0 && *x >= 0.0 && *x < 1e18)
                            .map(|x| x as usize)
                            .ok_or(())
                    })
                    .map_err(|_| config_err(format!("key `{key}`: {v:?} is not a non-negative integer")))
            }
        }
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| config_err(format!("key `{key}`: bad entry {x:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| config_err(format!("key `{key}`: bad entry {x:?}")))
                })
                .collect(),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(config_err(format!("key `{key}`: {v:?} is not a boolean"))),
        }
    }

    fn spin(&self, key: &str) -> CliResult<Option<SpinQuantum>> {
        self.f64(key)?
            .map(|j| SpinQuantum::new(j).map_err(|e| config_err(format!("key `{key}`: {e}"))))
            .transpose()
    }

    /// `key = value` lines in key order.
    pub fn echo(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Quantum form of the model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumParams {
    pub a: f64,
    pub c: f64,
    pub s: SpinQuantum,
    pub l: SpinQuantum,
}

impl QuantumParams {
    /// `gamma = c |S|`, `r = |L| / |S|`.
    pub fn classical(&self) -> Result<ClassicalParams, Error> {
        if self.s.twice() == 0 {
            return Err(Error::InvalidArgument("s must be positive".into()));
        }
        ClassicalParams::new(self.a, self.c * self.s.magnitude(), self.l.magnitude() / self.s.magnitude())
    }
}

/// Quantum parameters for classical `(a, gamma, r)` at reference spin `s`.
/// `l` is the point of the half-integer lattice whose `r` is closest to the
/// request; the absolute residual is returned and must not exceed `r_tol`.
pub fn params_convert(p: ClassicalParams, s: SpinQuantum, r_tol: f64) -> Result<(QuantumParams, f64), Error> {
    if s.twice() == 0 {
        return Err(Error::InvalidArgument("reference s must be positive".into()));
    }
    let target = p.r * p.r * s.casimir();
    let l_est = 0.5 * ((1.0 + 4.0 * target).sqrt() - 1.0);
    let base = (2.0 * l_est).floor().max(0.0) as u32;
    let candidates: Vec<SpinQuantum> = (base.saturating_sub(1)..=base + 2).map(SpinQuantum::from_twice).collect();
    let r_of = |l: SpinQuantum| l.magnitude() / s.magnitude();
    let best = *candidates
        .iter()
        .min_by(|x, y| (r_of(**x) - p.r).abs().total_cmp(&(r_of(**y) - p.r).abs()))
        .expect("candidates");
    let residual = (r_of(best) - p.r).abs();
    if residual > r_tol {
        let listing: Vec<String> = candidates.iter().map(|l| format!("l={l} (r={:.6})", r_of(*l))).collect();
        return Err(Error::InvalidArgument(format!(
            "no l within {r_tol} of r={} at s={s}; nearest: {}",
            p.r,
            listing.join(", ")
        )));
    }
    let q = QuantumParams { a: p.a, c: p.gamma / s.magnitude(), s, l: best };
    Ok((q, residual))
}

/// Integer `s` in `1..=l` whose `r = |L|/|S|` is closest to `r_target`.
pub fn s_for_ratio(l: SpinQuantum, r_target: f64) -> SpinQuantum {
    let top = l.j().floor().max(1.0) as u32;
    (1..=top)
        .map(|k| SpinQuantum::from_twice(2 * k))
        .min_by(|x, y| {
            let rx = (l.magnitude() / x.magnitude() - r_target).abs();
            let ry = (l.magnitude() / y.magnitude() - r_target).abs();
            rx.total_cmp(&ry)
        })
        .expect("l >= 1/2")
}

/// Model parameters after resolving whichever form the config used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub classical: ClassicalParams,
    pub quantum: Option<QuantumParams>,
    pub r_requested: Option<f64>,
    pub r_residual: Option<f64>,
}

impl Resolved {
    fn require_quantum(&self) -> CliResult<QuantumParams> {
        self.quantum
            .ok_or_else(|| config_err("this mode needs quantum numbers: give `s` (and `c`, `l` or `gamma`, `r`)"))
    }

    fn describe(&self) -> String {
        let mut out = String::new();
        let p = self.classical;
        let _ = writeln!(out, "a = {}", fmt_f64(p.a));
        let _ = writeln!(out, "gamma = {}", fmt_f64(p.gamma));
        let _ = writeln!(out, "r = {}", fmt_f64(p.r));
        if let Some(q) = self.quantum {
            let _ = writeln!(out, "c = {}", fmt_f64(q.c));
            let _ = writeln!(out, "s = {}", q.s);
            let _ = writeln!(out, "l = {}", q.l);
        }
        if let (Some(req), Some(res)) = (self.r_requested, self.r_residual) {
            let _ = writeln!(out, "r_requested = {}", fmt_f64(req));
            let _ = writeln!(out, "r_residual = {}", fmt_f64(res));
        }
        out
    }
}

pub fn resolve_params(cfg: &Config) -> CliResult<Resolved> {
    let a = cfg.f64_or("a", 5.0)?;
    let quantum_form = cfg.has("c") || cfg.has("l");
    let classical_form = cfg.has("gamma") || cfg.has("r");
    if quantum_form && classical_form {
        return Err(config_err("give either (a, c, s, l) or (a, gamma, r [, s]), not both"));
    }
    let num = |e: Error| config_err(e.to_string());
    if quantum_form {
        let need = |k: &str| -> CliResult<f64> {
            cfg.f64(k)?.ok_or_else(|| config_err(format!("missing key `{k}` for the (a, c, s, l) form")))
        };
        let c = need("c")?;
        let s = cfg.spin("s")?.ok_or_else(|| config_err("missing key `s` for the (a, c, s, l) form"))?;
        let l = cfg.spin("l")?.ok_or_else(|| config_err("missing key `l` for the (a, c, s, l) form"))?;
        let q = QuantumParams { a, c, s, l };
        return Ok(Resolved { classical: q.classical().map_err(num)?, quantum: Some(q), r_requested: None, r_residual: None });
    }
    let gamma = cfg.f64("gamma")?.ok_or_else(|| config_err("missing key `gamma` (or use the c, s, l form)"))?;
    let r = cfg.f64_or("r", 1.1)?;
    let classical = ClassicalParams::new(a, gamma, r).map_err(num)?;
    match cfg.spin("s")? {
        None => Ok(Resolved { classical, quantum: None, r_requested: None, r_residual: None }),
        Some(s) => {
            let (q, residual) = params_convert(classical, s, cfg.f64_or("r_tol", 1e-2)?).map_err(num)?;
            // Dynamics use the r implied by the chosen quantum numbers.
            Ok(Resolved {
                classical: q.classical().map_err(num)?,
                quantum: Some(q),
                r_requested: Some(r),
                r_residual: Some(residual),
            })
        }
    }
}

/// Initial condition in radians from `ic = theta_s, phi_s, theta_l, phi_l`
/// (degrees).
fn initial_angles(cfg: &Config) -> CliResult<[f64; 4]> {
    let v = cfg.f64_list("ic")?.unwrap_or_else(|| vec![20.0, 40.0, 160.0, 130.0]);
    if v.len() != 4 {
        return Err(config_err(format!("key `ic`: expected 4 angles in degrees, got {}", v.len())));
    }
    Ok([v[0].to_radians(), v[1].to_radians(), v[2].to_radians(), v[3].to_radians()])
}

fn exec_of(cfg: &Config) -> CliResult<Exec> {
    match cfg.raw("exec") {
        None | Some("parallel") => Ok(Exec::Parallel),
        Some("sequential") => Ok(Exec::Sequential),
        Some(v) => Err(config_err(format!("key `exec`: {v:?} is neither parallel nor sequential"))),
    }
}

fn fit_options(cfg: &Config) -> CliResult<FitOptions> {
    let intercept = match cfg.raw("intercept") {
        None | Some("fixed") => Intercept::Fixed,
        Some("free") => Intercept::Free,
        Some(v) => return Err(config_err(format!("key `intercept`: {v:?} is neither fixed nor free"))),
    };
    Ok(FitOptions { intercept, noise_sigmas: cfg.f64_or("noise_sigmas", NOISE_SIGMAS)? })
}

/// Files and report produced by one run.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    pub derived: String,
}

impl RunOutput {
    fn add<F>(&mut self, name: impl Into<String>, write: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf).map_err(|e| CliError::Numerical(e.into()))?;
        self.files.push((name.into(), buf));
        Ok(())
    }
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}: {value}");
}

fn fit_line(out: &mut String, key: &str, fit: &std::result::Result<GrowthFit, Error>) {
    match fit {
        Ok(f) => line(
            out,
            key,
            format!(
                "{:.6} (window {}..{}, {} points, prefactor {:.6e}, rms log residual {:.4})",
                f.lambda,
                f.window.start,
                f.window.end,
                f.used.len(),
                f.prefactor,
                f.residual
            ),
        ),
        Err(e) => line(out, key, format!("unavailable ({e})")),
    }
}

/// Runs `mode` with `cfg` and returns the artifacts without touching disk.
pub fn run_mode(mode: Mode, cfg: &Config) -> CliResult<RunOutput> {
    let exec = exec_of(cfg)?;
    let seed = cfg.usize_or("seed", 1)? as u64;
    let mut out = RunOutput::default();
    let mut summary = String::new();
    line(&mut summary, "mode", mode.name());

    match mode {
        Mode::AppendixCheck => {
            let j = cfg.spin("j")?.unwrap_or(SpinQuantum::from_twice(20));
            let n = cfg.usize_or("n_samples", 1_000_000)?;
            let m = appendix_moments(j.j());
            let (x2, x4) = vector_model_moments(exec, j.j(), n, seed);
            line(&mut summary, "j", j);
            line(&mut summary, "qm <Jx^2>", fmt_f64(m.qm_jx2));
            line(&mut summary, "qm <Jx^4>", fmt_f64(m.qm_jx4));
            line(&mut summary, "qm <Jx^4> from matrix powers", fmt_f64(quantum_jx_moment(j, 4)));
            line(&mut summary, "cl <Jx^2>", fmt_f64(m.cl_jx2));
            line(&mut summary, "cl <Jx^4>", fmt_f64(m.cl_jx4));
            line(&mut summary, "delta Jx^4", fmt_f64(m.delta_jx4));
            line(&mut summary, "vector model <Jx^2>", format!("{} +- {}", fmt_f64(x2.mean), fmt_f64(x2.se)));
            line(&mut summary, "vector model <Jx^4>", format!("{} +- {}", fmt_f64(x4.mean), fmt_f64(x4.se)));
            out.add("appendix.csv", |w| {
                writeln!(w, "quantity,value")?;
                for (k, v) in [
                    ("qm_Jx2", m.qm_jx2),
                    ("qm_Jx4", m.qm_jx4),
                    ("cl_Jx2", m.cl_jx2),
                    ("cl_Jx4", m.cl_jx4),
                    ("delta_Jx4", m.delta_jx4),
                    ("mc_Jx2", x2.mean),
                    ("mc_Jx2_se", x2.se),
                    ("mc_Jx4", x4.mean),
                    ("mc_Jx4_se", x4.se),
                ] {
                    writeln!(w, "{k},{}", fmt_f64(v))?;
                }
                Ok(())
            })?;
        }
        Mode::ClassicalTraj | Mode::Lyapunov | Mode::RegimeScan => {
            let res = resolve_params(cfg)?;
            out.derived = res.describe();
            let p = res.classical;
            let ang = initial_angles(cfg)?;
            let x0 = angles_to_state(ang[0], ang[1], ang[2], ang[3]);
            match mode {
                Mode::ClassicalTraj => {
                    let n = cfg.usize_or("n_kicks", 1000)?;
                    let traj = trajectory(x0, p, n);
                    line(&mut summary, "kicks", n);
                    out.add("trajectory.csv", |w| write_trajectory_csv(&traj, w))?;
                }
                Mode::Lyapunov => {
                    let n = cfg.usize_or("n_steps", 100_000)?;
                    let every = cfg.usize_or("renorm_every", 1)?;
                    let lambda = lyapunov_exponent(x0, p, n, every)?;
                    line(&mut summary, "steps", n);
                    line(&mut summary, "lambda_L", format!("{lambda:.6}"));
                    out.add("lyapunov.csv", |w| {
                        writeln!(w, "n_steps,lambda")?;
                        writeln!(w, "{n},{}", fmt_f64(lambda))
                    })?;
                }
                _ => {
                    let n = cfg.usize_or("n_samples", 30_000)?;
                    let steps = cfg.usize_or("n_steps", DEFAULT_SCAN_STEPS)?;
                    let threshold = cfg.f64_or("threshold", DEFAULT_CHAOS_THRESHOLD)?;
                    let scan = regime_scan(exec, p, n, steps, threshold, seed)?;
                    line(&mut summary, "samples", n);
                    line(&mut summary, "steps per sample", steps);
                    line(&mut summary, "threshold", threshold);
                    line(&mut summary, "chaotic fraction", format!("{:.6}", scan.chaotic_fraction));
                    out.add("scan.csv", |w| scan.write_csv(w))?;
                }
            }
        }
        Mode::Quantum | Mode::Ensemble | Mode::Compare => {
            let res = resolve_params(cfg)?;
            out.derived = res.describe();
            let q = res.require_quantum()?;
            let ang = initial_angles(cfg)?;
            let n_kicks = cfg.usize_or("n_kicks", 200)?;
            let hist = cfg.usize_list("hist_kicks")?;
            if let Some(&k) = hist.iter().find(|&&k| k > n_kicks) {
                return Err(config_err(format!("key `hist_kicks`: kick {k} is beyond n_kicks = {n_kicks}")));
            }
            let quantum = if mode != Mode::Ensemble {
                let f = build_floquet(q.s, q.l, q.a, q.c)?;
                let psi = QuantumState::coherent(q.s, q.l, ang[0], ang[1], ang[2], ang[3]);
                let series = observable_series(exec, &psi, &f, n_kicks, &hist)?;
                out.add("qmoments.csv", |w| series.write_csv(w))?;
                for (k, p) in &series.histograms {
                    out.add(format!("qhist_{k}.csv"), |w| {
                        writeln!(w, "m_l,P")?;
                        for (i, v) in p.iter().enumerate() {
                            writeln!(w, "{},{}", crate::csvfmt::fmt_m(q.l.m(i)), fmt_f64(*v))?;
                        }
                        Ok(())
                    })?;
                }
                if cfg.bool_or("dump_state", false)? {
                    let fin = crate::quantum_spin::evolve_with(exec, &psi, &f, n_kicks)?;
                    out.add("state.csv", |w| fin.write_csv(w))?;
                }
                Some(series)
            } else {
                None
            };
            let classical = if mode != Mode::Quantum {
                let n_traj = cfg.usize_or("n_traj", DEFAULT_N_TRAJ)?;
                let e = Ensemble::matched(q.s, q.l, ang, n_traj, seed)?;
                let run = ensemble_evolve_with_histograms(exec, &e, res.classical, n_kicks, &hist, q.l);
                out.add("cmoments.csv", |w| run.moments.write_csv(w))?;
                for h in &run.histograms {
                    out.add(format!("chist_{}.csv", h.kick), |w| h.write_csv(w))?;
                }
                line(&mut summary, "trajectories", n_traj);
                Some(run.moments)
            } else {
                None
            };
            line(&mut summary, "kicks", n_kicks);
            if let Some(series) = &quantum {
                let last = series.kicks.last().expect("at least kick 0");
                line(&mut summary, "final <L~z> quantum", format!("{:.6}", last.l_z_norm()));
                line(&mut summary, "final norm deviation", format!("{:.3e}", (last.norm_sq().sqrt() - 1.0).abs()));
            }
            if let Some(m) = &classical {
                let last = m.kicks.last().expect("at least kick 0");
                line(&mut summary, "final <L~z> classical", format!("{:.6}", last.l.mean[2]));
            }
            if let (Some(series), Some(m)) = (&quantum, &classical) {
                compare_report(cfg, &res, q, ang, series, m, &mut out, &mut summary)?;
            }
        }
        Mode::BreakScaling => break_scaling(cfg, exec, seed, &mut out, &mut summary)?,
    }
    out.summary = summary;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn compare_report(
    cfg: &Config,
    res: &Resolved,
    q: QuantumParams,
    ang: [f64; 4],
    series: &crate::quantum_spin::ObservableSeries,
    m: &MomentSeries,
    out: &mut RunOutput,
    summary: &mut String,
) -> CliResult<()> {
    let d = difference_series(series, m)?;
    out.add("delta.csv", |w| d.write_csv(w))?;
    let opts = fit_options(cfg)?;
    let smoothing = cfg.usize_or("smoothing", SMOOTHING)?;
    let ceiling = cfg.f64_or("growth_ceiling", GROWTH_CEILING)?;
    let window = match (cfg.usize_or("fit_start", 0)?, cfg.usize_or("fit_end", 0)?) {
        (_, 0) => growth_window(&d, ceiling, smoothing, opts.noise_sigmas),
        (start, end) => FitWindow::new(start.max(1), end),
    };
    let lambda_l = {
        let x0 = angles_to_state(ang[0], ang[1], ang[2], ang[3]);
        lyapunov_exponent(x0, res.classical, cfg.usize_or("n_steps", 100_000)?, 1)?
    };
    let growth = window.and_then(|w| fit_growth_exponent(&d, w, opts));
    let vceil = cfg.f64_or("variance_ceiling", VARIANCE_CEILING)?;
    let qvar = series.l_var_norm();
    let cvar: Vec<f64> = m.kicks.iter().map(|k| k.l.var_norm).collect();
    let cvar_se: Vec<f64> = m.kicks.iter().map(|k| k.l.var_se).collect();
    let vfit_q = variance_window(&qvar, vceil)
        .and_then(|w| variance_growth_fit(&qvar, None, q.l, w, FitOptions { noise_sigmas: 0.0, ..opts }));
    let vfit_c = variance_window(&cvar, vceil)
        .and_then(|w| variance_growth_fit(&cvar, Some(&cvar_se), q.l, w, FitOptions { noise_sigmas: 0.0, ..opts }));

    line(summary, "lambda_L", format!("{lambda_l:.6}"));
    fit_line(summary, "lambda_w quantum", &vfit_q);
    fit_line(summary, "lambda_w classical", &vfit_c);
    if let Ok(f) = &vfit_q {
        line(summary, "t_sat", format!("{:.3}", saturation_time(f.lambda, q.l.j())));
    }
    line(summary, "t* (first maximum of delta)", first_maximum(&d, smoothing, opts.noise_sigmas));
    fit_line(summary, "lambda_qc direct fit", &growth);
    let horizon = cfg.usize_or("horizon", 200)?;
    line(summary, "max delta L_z", format!("{:.6}", max_difference(&d, horizon)));
    let ps = cfg.f64_list("p_values")?.unwrap_or_else(|| vec![cfg.f64_or("p", 0.1).unwrap_or(0.1), 1.0]);
    for p in ps {
        let rec = break_time(&d, p);
        let est = rec
            .t_b
            .map(|t| format!(", lambda_qc from ln(8pl)/t_b = {:.6}", (8.0 * p * q.l.j()).ln() / t as f64))
            .unwrap_or_default();
        let t = rec.t_b.map_or_else(|| "not reached".to_string(), |t| t.to_string());
        line(summary, &format!("t_b(p={p})"), format!("{t}{est}"));
    }
    Ok(())
}

fn break_scaling(cfg: &Config, exec: Exec, seed: u64, out: &mut RunOutput, summary: &mut String) -> CliResult<()> {
    if cfg.has("c") || cfg.has("s") || cfg.has("l") {
        return Err(config_err("break-scaling takes (a, gamma, r_target) and `l_values`; s is chosen per l"));
    }
    let a = cfg.f64_or("a", 5.0)?;
    let gamma = cfg.f64("gamma")?.ok_or_else(|| config_err("missing key `gamma`"))?;
    let r_target = cfg.f64_or("r_target", cfg.f64_or("r", 1.1)?)?;
    let p = cfg.f64_or("p", 0.1)?;
    if p <= 0.0 {
        return Err(config_err("key `p` must be positive"));
    }
    let ls = cfg.f64_list("l_values")?.unwrap_or_else(|| vec![11.0, 22.0, 44.0, 88.0, 154.0, 220.0]);
    let n_kicks = cfg.usize_or("n_kicks", 40)?;
    let n_traj = cfg.usize_or("n_traj", DEFAULT_N_TRAJ)?;
    let ang = initial_angles(cfg)?;
    let mut records = Vec::new();
    let mut derived = String::new();
    for &lv in &ls {
        let l = SpinQuantum::new(lv).map_err(|e| config_err(format!("key `l_values`: {e}")))?;
        let s = s_for_ratio(l, r_target);
        let qp = QuantumParams { a, c: gamma / s.magnitude(), s, l };
        let cp = qp.classical()?;
        let _ = writeln!(derived, "l = {l}: s = {s}, c = {}, r = {}", fmt_f64(qp.c), fmt_f64(cp.r));
        let f = build_floquet(s, l, a, qp.c)?;
        let psi = QuantumState::coherent(s, l, ang[0], ang[1], ang[2], ang[3]);
        let series = observable_series(exec, &psi, &f, n_kicks, &[])?;
        let e = Ensemble::matched(s, l, ang, n_traj, seed)?;
        let m = ensemble_evolve_with_histograms(exec, &e, cp, n_kicks, &[], l).moments;
        let d = difference_series(&series, &m)?;
        records.push(break_time(&d, p));
    }
    out.derived = derived;
    out.add("breaktimes.csv", |w| write_break_times_csv(&records, w))?;
    line(summary, "p", p);
    line(summary, "gamma", gamma);
    line(summary, "r_target", r_target);
    for r in &records {
        line(summary, &format!("t_b(l={})", r.l), r.t_b.map_or_else(|| "not reached".to_string(), |t| t.to_string()));
    }
    match fit_break_scaling(&records) {
        Ok(f) => line(summary, "lambda_qc break-time fit", format!("{:.6} (rms residual {:.4} kicks)", f.lambda, f.residual)),
        Err(e) => return Err(CliError::Numerical(e)),
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))
}

/// Runs a mode and writes all artifacts into `cfg.out` (default `out`).
pub fn run(mode: Mode, cfg: &Config) -> CliResult<PathBuf> {
    let dir = PathBuf::from(cfg.raw("out").unwrap_or("out"));
    fs::create_dir_all(&dir).map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
    let started = unix_now();
    let output = run_mode(mode, cfg)?;
    for (name, bytes) in &output.files {
        write_file(&dir, name, bytes)?;
    }
    write_file(&dir, "summary.txt", output.summary.as_bytes())?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "spinchaos {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "mode = {}", mode.name());
    let _ = writeln!(manifest, "seed = {}", cfg.usize_or("seed", 1)?);
    let _ = writeln!(manifest, "started_unix = {started}");
    let _ = writeln!(manifest, "finished_unix = {}", unix_now());
    let _ = writeln!(manifest, "parallel_feature = {}", cfg!(feature = "parallel"));
    manifest.push_str("\n[config]\n");
    manifest.push_str(&cfg.echo());
    manifest.push_str("\n[derived]\n");
    manifest.push_str(&output.derived);
    manifest.push_str("\n[files]\n");
    for (name, _) in &output.files {
        let _ = writeln!(manifest, "{name}");
    }
    write_file(&dir, "manifest.txt", manifest.as_bytes())?;
    Ok(dir)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = fs::read_to_string(&args.config)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.config.display())))
        .and_then(|text| Config::parse(&text))
        .and_then(|mut cfg| {
            for kv in &args.set {
                cfg.apply_override(kv)?;
            }
            run(args.mode, &cfg)
        });
    match result {
        Ok(dir) => {
            match fs::read_to_string(dir.join("summary.txt")) {
                Ok(s) => print!("{s}"),
                Err(_) => println!("wrote {}", dir.display()),
            }
            0
        }
        Err(e) => {
            eprintln!("spinchaos: {e}");
            e.exit_code()
        }
    }
}

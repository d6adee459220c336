//! Quantum-classical differences and the exponents extracted from them.
//!
//! Everything here is post-processing of in-memory series: the quantum
//! `<L_z(n)>` from an exact run and the Liouville `<L_z(n)>_c` with its
//! Monte Carlo standard error.

use std::io::Write;

use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};
use crate::liouville::MomentSeries;
use crate::quantum_spin::{ObservableSeries, SpinQuantum};

/// Kicks where `delta < NOISE_SIGMAS * classical SE` are left out of fits.
pub const NOISE_SIGMAS: f64 = 3.0;
/// Growth fits stop once the difference exceeds this many hbar.
pub const GROWTH_CEILING: f64 = 0.3;
/// Variance fits stop once the normalized variance reaches this value.
pub const VARIANCE_CEILING: f64 = 0.5;
/// Width of the trailing moving average used to locate the first maximum.
pub const SMOOTHING: usize = 5;
pub const DEFAULT_HORIZON: usize = 200;

/// `delta L_z(n) = |<L_z(n)> - <L_z(n)>_c|` in units of hbar.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSeries {
    pub l: SpinQuantum,
    pub quantum: Vec<f64>,
    pub classical: Vec<f64>,
    pub classical_se: Vec<f64>,
    pub delta: Vec<f64>,
}

impl DifferenceSeries {
    pub fn from_parts(
        l: SpinQuantum,
        quantum: Vec<f64>,
        classical: Vec<f64>,
        classical_se: Vec<f64>,
    ) -> Result<Self> {
        if quantum.len() != classical.len() {
            return Err(Error::LengthMismatch { left: quantum.len(), right: classical.len() });
        }
        if classical_se.len() != classical.len() {
            return Err(Error::LengthMismatch { left: classical.len(), right: classical_se.len() });
        }
        let delta = quantum.iter().zip(&classical).map(|(q, c)| (q - c).abs()).collect();
        Ok(Self { l, quantum, classical, classical_se, delta })
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Whether `delta(n)` stands clear of the Monte Carlo noise.
    pub fn resolved(&self, n: usize, sigmas: f64) -> bool {
        self.delta[n] >= sigmas * self.classical_se[n]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,Lz_q,Lz_c,Lz_c_se,delta")?;
        for n in 0..self.len() {
            writeln!(
                w,
                "{n},{},{},{},{}",
                fmt_f64(self.quantum[n]),
                fmt_f64(self.classical[n]),
                fmt_f64(self.classical_se[n]),
                fmt_f64(self.delta[n])
            )?;
        }
        Ok(())
    }
}

pub fn difference_series(q: &ObservableSeries, c: &MomentSeries) -> Result<DifferenceSeries> {
    let n = c.len();
    DifferenceSeries::from_parts(
        q.l,
        q.l_z(),
        (0..n).map(|k| c.l_z(k)).collect(),
        (0..n).map(|k| c.l_z_se(k)).collect(),
    )
}

/// Inclusive range of kicks used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitWindow {
    pub start: usize,
    pub end: usize,
}

impl FitWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!("empty fit window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Intercept {
    /// Pinned to the theoretical initial value.
    #[default]
    Fixed,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub intercept: Intercept,
    /// Points below this many standard errors are skipped; 0 keeps all.
    pub noise_sigmas: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { intercept: Intercept::Fixed, noise_sigmas: NOISE_SIGMAS }
    }
}

/// Exponential fit `y(n) = prefactor * exp(rate * n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    /// Exponent per kick. For variance fits this is half the log slope.
    pub lambda: f64,
    pub prefactor: f64,
    pub window: FitWindow,
    /// Kicks that entered the fit.
    pub used: Vec<usize>,
    /// rms residual of the log values.
    pub residual: f64,
}

/// Least squares of `ln y` against `n`. Returns `(slope, intercept, rms)`.
fn log_linear(ns: &[f64], ys: &[f64], intercept: Option<f64>) -> Result<(f64, f64, f64)> {
    let k = ns.len() as f64;
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, b) = match intercept {
        Some(b) => {
            let sxx: f64 = ns.iter().map(|n| n * n).sum();
            if ns.is_empty() || sxx == 0.0 {
                return Err(Error::Fit("need at least one point with n > 0".into()));
            }
            let sxy: f64 = ns.iter().zip(&logs).map(|(n, y)| n * (y - b)).sum();
            (sxy / sxx, b)
        }
        None => {
            if ns.len() < 2 {
                return Err(Error::Fit("free-intercept fit needs two points".into()));
            }
            let mx = ns.iter().sum::<f64>() / k;
            let my = logs.iter().sum::<f64>() / k;
            let sxx: f64 = ns.iter().map(|n| (n - mx).powi(2)).sum();
            let sxy: f64 = ns.iter().zip(&logs).map(|(n, y)| (n - mx) * (y - my)).sum();
            let slope = sxy / sxx;
            (slope, my - slope * mx)
        }
    };
    let rms = (ns
        .iter()
        .zip(&logs)
        .map(|(n, y)| (y - b - slope * n).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok((slope, b, rms))
}

fn select(
    values: &[f64],
    se: Option<&[f64]>,
    window: FitWindow,
    sigmas: f64,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    if window.end >= values.len() {
        return Err(Error::InvalidArgument(format!(
            "fit window ends at {} but the series has {} kicks",
            window.end,
            values.len()
        )));
    }
    let mut used = Vec::new();
    for n in window.start..=window.end {
        let v = values[n];
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::Fit(format!("non-positive value {v} at kick {n} inside the fit window")));
        }
        if se.is_some_and(|se| v < sigmas * se[n]) {
            continue;
        }
        used.push(n);
    }
    if used.is_empty() {
        return Err(Error::Fit("every point in the window is below the noise floor".into()));
    }
    let ns = used.iter().map(|&n| n as f64).collect();
    let ys = used.iter().map(|&n| values[n]).collect();
    Ok((used, ns, ys))
}

/// Fits `delta L_z(n) ~ (1/8l) exp(lambda n)` on `window`.
pub fn fit_growth_exponent(
    d: &DifferenceSeries,
    window: FitWindow,
    opts: FitOptions,
) -> Result<GrowthFit> {
    let (used, ns, ys) = select(&d.delta, Some(&d.classical_se), window, opts.noise_sigmas)?;
    let pinned = match opts.intercept {
        Intercept::Fixed => Some(-(8.0 * d.l.j()).ln()),
        Intercept::Free => None,
    };
    let (slope, b, residual) = log_linear(&ns, &ys, pinned)?;
    Ok(GrowthFit { lambda: slope, prefactor: b.exp(), window, used, residual })
}

/// Fits `Delta L~^2(n) ~ (1/l) exp(2 lambda_w n)` and returns `lambda_w`.
pub fn variance_growth_fit(
    var: &[f64],
    var_se: Option<&[f64]>,
    l: SpinQuantum,
    window: FitWindow,
    opts: FitOptions,
) -> Result<GrowthFit> {
    let (used, ns, ys) = select(var, var_se, window, opts.noise_sigmas)?;
    let pinned = match opts.intercept {
        Intercept::Fixed => Some(-l.j().ln()),
        Intercept::Free => None,
    };
    let (slope, b, residual) = log_linear(&ns, &ys, pinned)?;
    Ok(GrowthFit { lambda: slope / 2.0, prefactor: b.exp(), window, used, residual })
}

/// First kick after which the trailing `width`-kick moving average of
/// `delta` stops increasing, counting only from the first resolved kick.
/// Falls back to the last kick.
pub fn first_maximum(d: &DifferenceSeries, width: usize, sigmas: f64) -> usize {
    let last = d.len().saturating_sub(1);
    let Some(first) = (1..d.len()).find(|&n| d.resolved(n, sigmas)) else {
        return last;
    };
    let width = width.max(1);
    let avg = |n: usize| d.delta[n + 1 - width..=n].iter().sum::<f64>() / width as f64;
    let begin = (first + width - 1).max(width - 1);
    (begin..last).find(|&n| avg(n + 1) <= avg(n)).unwrap_or(last)
}

/// Default growth window `[1, min(t*, first n with delta > ceiling)]`.
pub fn growth_window(d: &DifferenceSeries, ceiling: f64, width: usize, sigmas: f64) -> Result<FitWindow> {
    if d.len() < 2 {
        return Err(Error::Fit("series too short for a growth fit".into()));
    }
    let t_star = first_maximum(d, width, sigmas);
    let cross = (1..d.len()).find(|&n| d.delta[n] > ceiling).unwrap_or(d.len() - 1);
    FitWindow::new(1, t_star.min(cross).max(1))
}

/// Default variance window: kicks `1..` up to the last one before the
/// normalized variance first reaches `ceiling`.
pub fn variance_window(var: &[f64], ceiling: f64) -> Result<FitWindow> {
    let cross = (1..var.len()).find(|&n| var[n] >= ceiling).unwrap_or(var.len());
    if cross < 2 {
        return Err(Error::Fit("variance saturates before any fit point".into()));
    }
    FitWindow::new(1, cross - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakTimeRecord {
    pub l: f64,
    pub p: f64,
    /// `None` when the tolerance is never exceeded within the series.
    pub t_b: Option<usize>,
}

/// First kick `n >= 1` with `delta L_z(n) > p`.
pub fn break_time(d: &DifferenceSeries, p: f64) -> BreakTimeRecord {
    BreakTimeRecord {
        l: d.l.j(),
        p,
        t_b: (1..d.len()).find(|&n| d.delta[n] > p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakScalingFit {
    pub lambda: f64,
    /// rms of `t_b - ln(8 p l) / lambda`
    pub residual: f64,
}

/// Fits `t_b = ln(8 p l) / lambda` by least squares in `1/lambda`.
pub fn fit_break_scaling(records: &[BreakTimeRecord]) -> Result<BreakScalingFit> {
    let mut xs = Vec::with_capacity(records.len());
    let mut ts = Vec::with_capacity(records.len());
    for r in records {
        let Some(t) = r.t_b else {
            return Err(Error::Fit(format!("break time not reached for l = {}", r.l)));
        };
        xs.push((8.0 * r.p * r.l).ln());
        ts.push(t as f64);
    }
    let mut ls: Vec<f64> = records.iter().map(|r| r.l).collect();
    ls.sort_by(f64::total_cmp);
    ls.dedup();
    if ls.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 distinct l values, got {}", ls.len())));
    }
    if ts.iter().all(|&t| t == ts[0]) {
        return Err(Error::Fit(
            "all break times are equal; widen the range of l or lower p".into(),
        ));
    }
    let sxt: f64 = xs.iter().zip(&ts).map(|(x, t)| x * t).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let inv = sxt / sxx;
    if inv <= 0.0 {
        return Err(Error::Fit("break times do not grow with ln(8pl)".into()));
    }
    let residual = (xs.iter().zip(&ts).map(|(x, t)| (t - inv * x).powi(2)).sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(BreakScalingFit { lambda: 1.0 / inv, residual })
}

/// `t_sat = ln(l) / (2 lambda_w)`
pub fn saturation_time(lambda_w: f64, l: f64) -> f64 {
    l.ln() / (2.0 * lambda_w)
}

/// `max delta L_z(n)` over `n in [1, horizon]`, truncated to the series.
pub fn max_difference(d: &DifferenceSeries, horizon: usize) -> f64 {
    let end = horizon.min(d.len().saturating_sub(1));
    d.delta.get(1..=end).map_or(0.0, |s| s.iter().copied().fold(0.0, f64::max))
}

/// Largest `|q - c| / se` over kicks `0..=until`, with the kick where it
/// occurs.
pub fn max_standardized_gap(q: &[f64], c: &[f64], se: &[f64], until: usize) -> Result<(f64, usize)> {
    if q.len() != c.len() || c.len() != se.len() {
        return Err(Error::LengthMismatch { left: q.len(), right: c.len() });
    }
    let end = until.min(q.len().saturating_sub(1));
    let mut best = (0.0, 0);
    for n in 0..=end {
        let z = (q[n] - c[n]).abs() / se[n];
        if z > best.0 || z.is_nan() {
            best = (z, n);
        }
    }
    Ok(best)
}

pub fn write_break_times_csv<W: Write>(records: &[BreakTimeRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "l,p,t_b")?;
    for r in records {
        let t = r.t_b.map_or_else(|| "not_reached".to_string(), |t| t.to_string());
        writeln!(w, "{},{},{}", r.l, fmt_f64(r.p), t)?;
    }
    Ok(())
}

//! Classical Liouville dynamics by Monte Carlo trajectory ensembles.
//!
//! The initial density for a spin polarized along z is
//! `rho ~ exp[-(1 - J~_z) / sigma^2] dJ~_z dphi`, with `sigma^2` fixed so that
//! `<J_z>_c / <J_x^2>_c` equals the coherent-state value. Other polarization
//! axes are reached by rotating the samples rigidly about y by `theta0` and
//! then about z by `phi0`. The two spins are sampled independently.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;

use crate::classical_map::{ClassicalParams, ClassicalSpinPair, KickedMap};
use crate::csvfmt::{fmt_f64, fmt_m};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, pairwise_reduce, Exec};
use crate::quantum_spin::{jx_matrix, SpinQuantum};
use crate::rng::stream_rng;

/// Trajectories per task; fixed so reductions do not depend on threads.
const CHUNK: usize = 2048;
/// Tasks reduced together before their partial sums are merged.
const BATCH: usize = 64;

/// Default ensemble size.
pub const DEFAULT_N_TRAJ: usize = 1_000_000;

/// `sigma^2 = 1 / (2 sqrt(j(j+1)))`.
pub fn sigma2_for(j: f64) -> f64 {
    1.0 / (2.0 * (j * (j + 1.0)).sqrt())
}

/// `G(sigma^2) = (1 + e^{-2/sigma^2}) / (1 - e^{-2/sigma^2}) - sigma^2`.
///
/// When `e^{-2/sigma^2}` underflows the exact value is `1 - sigma^2`.
pub fn g_factor(sigma2: f64) -> f64 {
    let e = (-2.0 / sigma2).exp();
    if e == 0.0 {
        1.0 - sigma2
    } else {
        (1.0 + e) / (1.0 - e) - sigma2
    }
}

/// Density matched to a spin-`j` coherent state along `(theta0, phi0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDensityParams {
    pub j: f64,
    /// `|J| = sqrt(j(j+1))`
    pub magnitude: f64,
    pub sigma2: f64,
    pub theta0: f64,
    pub phi0: f64,
}

impl MatchedDensityParams {
    pub fn new(j: SpinQuantum, theta0: f64, phi0: f64) -> Self {
        Self {
            j: j.j(),
            magnitude: j.magnitude(),
            sigma2: sigma2_for(j.j()),
            theta0,
            phi0,
        }
    }

    /// Same axis and length with an explicit width (`sigma2 >= 0`).
    pub fn with_sigma2(self, sigma2: f64) -> Self {
        Self { sigma2, ..self }
    }

    /// `<J_z>_c` along the polarization axis: `|J| G(sigma^2)`.
    pub fn mean_along_axis(&self) -> f64 {
        self.magnitude * g_factor(self.sigma2)
    }

    /// Transverse second moment `<J_x^2>_c = |J|^2 sigma^2 G(sigma^2)` for a
    /// density polarized along z.
    pub fn transverse_second_moment(&self) -> f64 {
        self.magnitude * self.magnitude * self.sigma2 * g_factor(self.sigma2)
    }
}

/// Draws one unit vector from the matched density.
///
/// `1 - J~_z` follows an exponential law truncated to `[0, 2]`, sampled by
/// inverting its CDF; the azimuth is uniform.
pub fn sample_initial<R: Rng + ?Sized>(p: &MatchedDensityParams, rng: &mut R) -> [f64; 3] {
    let u: f64 = rng.random();
    let phi = TAU * rng.random::<f64>();
    let w = if p.sigma2 > 0.0 {
        // w = -sigma^2 ln(1 - u (1 - e^{-2/sigma^2}))
        (-p.sigma2 * (u * (-2.0 / p.sigma2).exp_m1()).ln_1p()).min(2.0)
    } else {
        0.0
    };
    let z = 1.0 - w;
    let rho = (w * (2.0 - w)).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    let local = [rho * cp, rho * sp, z];
    rotate_to_axis(local, p.theta0, p.phi0)
}

/// Rotation about y by `theta` followed by rotation about z by `phi`.
fn rotate_to_axis(v: [f64; 3], theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let x = v[0] * ct + v[2] * st;
    let y = v[1];
    let z = -v[0] * st + v[2] * ct;
    [x * cp - y * sp, x * sp + y * cp, z]
}

/// Monte Carlo ensemble of spin pairs. Trajectory `i` is generated on demand
/// from RNG stream `i` of `seed`, so members never need to be stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub s_density: MatchedDensityParams,
    pub l_density: MatchedDensityParams,
    pub n_traj: usize,
    pub seed: u64,
}

impl Ensemble {
    /// Ensemble matched to coherent states of spins `s` and `l` centred on
    /// the given angles (radians).
    pub fn matched(
        s: SpinQuantum,
        l: SpinQuantum,
        angles: [f64; 4],
        n_traj: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one trajectory".into()));
        }
        Ok(Self {
            s_density: MatchedDensityParams::new(s, angles[0], angles[1]),
            l_density: MatchedDensityParams::new(l, angles[2], angles[3]),
            n_traj,
            seed,
        })
    }

    pub fn s_magnitude(&self) -> f64 {
        self.s_density.magnitude
    }

    pub fn l_magnitude(&self) -> f64 {
        self.l_density.magnitude
    }

    pub fn initial_state(&self, i: usize) -> ClassicalSpinPair {
        let mut rng = stream_rng(self.seed, i as u64);
        let s_hat = sample_initial(&self.s_density, &mut rng);
        let l_hat = sample_initial(&self.l_density, &mut rng);
        ClassicalSpinPair { s_hat, l_hat }
    }

    /// All initial members, in index order.
    pub fn states(&self) -> Vec<ClassicalSpinPair> {
        (0..self.n_traj).map(|i| self.initial_state(i)).collect()
    }
}

/// Ensemble averages of one unit spin at one kick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpinMoments {
    /// `(<J~_x>, <J~_y>, <J~_z>)`
    pub mean: [f64; 3],
    /// Standard errors of `mean`.
    pub se: [f64; 3],
    /// `1 - |<J~>|^2`
    pub var_norm: f64,
    /// Delta-method standard error of `var_norm`.
    pub var_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentRecord {
    pub s: SpinMoments,
    pub l: SpinMoments,
}

/// Per-kick classical moments, normalized by the spin lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub n_traj: usize,
    pub s_magnitude: f64,
    pub l_magnitude: f64,
    pub kicks: Vec<MomentRecord>,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.kicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kicks.is_empty()
    }

    /// Unnormalized `<L_z>_c` at kick `n`.
    pub fn l_z(&self, n: usize) -> f64 {
        self.l_magnitude * self.kicks[n].l.mean[2]
    }

    /// Standard error of unnormalized `<L_z>_c`.
    pub fn l_z_se(&self, n: usize) -> f64 {
        self.l_magnitude * self.kicks[n].l.se[2]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "n,Lz_mean,Lz_se,var_norm,var_se,Lx_mean,Lx_se,Ly_mean,Ly_se,\
             Sz_mean,Sz_se,S_var_norm,S_var_se,Sx_mean,Sx_se,Sy_mean,Sy_se"
        )?;
        for (n, k) in self.kicks.iter().enumerate() {
            write!(w, "{n}")?;
            for sp in [&k.l, &k.s] {
                write!(w, ",{},{}", fmt_f64(sp.mean[2]), fmt_f64(sp.se[2]))?;
                write!(w, ",{},{}", fmt_f64(sp.var_norm), fmt_f64(sp.var_se))?;
                for c in [0, 1] {
                    write!(w, ",{},{}", fmt_f64(sp.mean[c]), fmt_f64(sp.se[c]))?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Classical `P_z^c(m_l)` at one kick, in descending `m_l` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub kick: usize,
    pub l: SpinQuantum,
    pub probs: Vec<f64>,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m_l,P")?;
        for (i, p) in self.probs.iter().enumerate() {
            writeln!(w, "{},{}", fmt_m(self.l.m(i)), fmt_f64(*p))?;
        }
        Ok(())
    }
}

/// Unit-width bin of `L_z = |L| L~_z` in descending `m_l` order. Values in
/// the slivers `l < |L_z| <= sqrt(l(l+1))` land in the end bins.
fn lz_bin(l: SpinQuantum, l_mag: f64, lz_hat: f64) -> usize {
    let top = l.twice() as usize;
    let asc = (l_mag * lz_hat + l.j() + 0.5).floor();
    let asc = if asc < 0.0 { 0 } else { (asc as usize).min(top) };
    top - asc
}

/// `P_z^c(m_l)` of a set of spin pairs whose `L` has length `sqrt(l(l+1))`.
pub fn marginal_pz_classical(states: &[ClassicalSpinPair], l: SpinQuantum) -> Vec<f64> {
    let mut counts = vec![0u64; l.dim()];
    for x in states {
        counts[lz_bin(l, l.magnitude(), x.l_hat[2])] += 1;
    }
    let n = states.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

// Layout of the per-kick accumulator: for each spin (S at 0, L at 9)
// sums of x, y, z, xx, yy, zz, xy, xz, yz.
const NSUM: usize = 18;

#[derive(Debug, Clone)]
struct Partial {
    sums: Vec<[f64; NSUM]>,
    counts: Vec<Vec<u64>>,
}

impl Partial {
    fn zeros(n_kicks: usize, n_hist: usize, bins: usize) -> Self {
        Self {
            sums: vec![[0.0; NSUM]; n_kicks + 1],
            counts: vec![vec![0; bins]; n_hist],
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

#[inline]
fn accumulate(acc: &mut [f64; NSUM], x: &ClassicalSpinPair) {
    for (base, v) in [(0, x.s_hat), (9, x.l_hat)] {
        acc[base] += v[0];
        acc[base + 1] += v[1];
        acc[base + 2] += v[2];
        acc[base + 3] += v[0] * v[0];
        acc[base + 4] += v[1] * v[1];
        acc[base + 5] += v[2] * v[2];
        acc[base + 6] += v[0] * v[1];
        acc[base + 7] += v[0] * v[2];
        acc[base + 8] += v[1] * v[2];
    }
}

fn spin_moments(sums: &[f64], n: f64) -> SpinMoments {
    let mean = [sums[0] / n, sums[1] / n, sums[2] / n];
    let dof = (n - 1.0).max(1.0);
    let cov = |i: usize, j: usize, sij: f64| (sij - n * mean[i] * mean[j]) / dof;
    let c = [
        [cov(0, 0, sums[3]), cov(0, 1, sums[6]), cov(0, 2, sums[7])],
        [cov(0, 1, sums[6]), cov(1, 1, sums[4]), cov(1, 2, sums[8])],
        [cov(0, 2, sums[7]), cov(1, 2, sums[8]), cov(2, 2, sums[5])],
    ];
    let se = [
        (c[0][0].max(0.0) / n).sqrt(),
        (c[1][1].max(0.0) / n).sqrt(),
        (c[2][2].max(0.0) / n).sqrt(),
    ];
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += mean[i] * c[i][j] * mean[j];
        }
    }
    let m2 = mean.iter().map(|m| m * m).sum::<f64>();
    SpinMoments {
        mean,
        se,
        var_norm: 1.0 - m2,
        var_se: 2.0 * (quad.max(0.0) / n).sqrt(),
    }
}

/// Output of [`ensemble_evolve_with_histograms`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub moments: MomentSeries,
    pub histograms: Vec<Histogram>,
}

/// Propagates every member for `n_kicks` kicks and returns the moments at
/// kicks `0..=n_kicks`.
pub fn ensemble_evolve(
    exec: Exec,
    e: &Ensemble,
    p: ClassicalParams,
    n_kicks: usize,
) -> MomentSeries {
    ensemble_evolve_with_histograms(exec, e, p, n_kicks, &[], SpinQuantum::from_twice(0)).moments
}

/// Like [`ensemble_evolve`], additionally binning `L_z` into `2l+1` unit
/// bins at each kick listed in `hist_kicks`.
pub fn ensemble_evolve_with_histograms(
    exec: Exec,
    e: &Ensemble,
    p: ClassicalParams,
    n_kicks: usize,
    hist_kicks: &[usize],
    l: SpinQuantum,
) -> EnsembleRun {
    let map = KickedMap::new(p);
    let bins = l.dim();
    let l_mag = e.l_magnitude();
    let n_hist = hist_kicks.len();
    let n_chunks = e.n_traj.div_ceil(CHUNK);

    let run_chunk = |chunk: usize| {
        let mut part = Partial::zeros(n_kicks, n_hist, bins);
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(e.n_traj);
        for i in start..end {
            let mut x = e.initial_state(i);
            for n in 0..=n_kicks {
                if n > 0 {
                    x = map.step(x);
                }
                accumulate(&mut part.sums[n], &x);
                for (h, &k) in hist_kicks.iter().enumerate() {
                    if k == n {
                        part.counts[h][lz_bin(l, l_mag, x.l_hat[2])] += 1;
                    }
                }
            }
        }
        part
    };

    let mut batches = Vec::with_capacity(n_chunks.div_ceil(BATCH));
    for b in (0..n_chunks).step_by(BATCH) {
        let len = BATCH.min(n_chunks - b);
        let parts = map_indexed(exec, len, |k| run_chunk(b + k));
        batches.push(pairwise_reduce(parts, Partial::merge).expect("non-empty batch"));
    }
    let total = pairwise_reduce(batches, Partial::merge).expect("non-empty ensemble");

    let n = e.n_traj as f64;
    let kicks = total
        .sums
        .iter()
        .map(|s| MomentRecord {
            s: spin_moments(&s[0..9], n),
            l: spin_moments(&s[9..18], n),
        })
        .collect();
    let histograms = hist_kicks
        .iter()
        .zip(total.counts)
        .map(|(&kick, counts)| Histogram {
            kick,
            l,
            probs: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
        .collect();
    EnsembleRun {
        moments: MomentSeries {
            n_traj: e.n_traj,
            s_magnitude: e.s_magnitude(),
            l_magnitude: l_mag,
            kicks,
        },
        histograms,
    }
}

/// Closed-form `J_x` moments of the `|j,j>` coherent state and of any
/// axially symmetric classical density reproducing `<J_z^n> = j^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixMoments {
    pub qm_jx2: f64,
    pub qm_jx4: f64,
    pub cl_jx2: f64,
    pub cl_jx4: f64,
    pub delta_jx4: f64,
}

pub fn appendix_moments(j: f64) -> AppendixMoments {
    let qm_jx4 = 0.75 * j * j - 0.25 * j;
    let cl_jx4 = 0.375 * j * j;
    AppendixMoments {
        qm_jx2: j / 2.0,
        qm_jx4,
        cl_jx2: j / 2.0,
        cl_jx4,
        delta_jx4: (cl_jx4 - 0.25 * j).abs(),
    }
}

/// `<j,j| J_x^power |j,j>` from explicit matrix powers of `J_x`.
pub fn quantum_jx_moment(j: SpinQuantum, power: u32) -> f64 {
    let jx = jx_matrix(j);
    let mut v = ndarray::Array1::<f64>::zeros(j.dim());
    v[0] = 1.0;
    let mut w = v.clone();
    for _ in 0..power {
        w = jx.dot(&w);
    }
    v.dot(&w)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// `<J_x^2>_c` and `<J_x^4>_c` over the vector-model density (a cone of
/// half-angle `acos(j / |J|)` around z).
pub fn vector_model_moments(exec: Exec, j: f64, n_samples: usize, seed: u64) -> (Estimate, Estimate) {
    let mag = (j * (j + 1.0)).sqrt();
    let sin_t = (1.0 - (j / mag).powi(2)).max(0.0).sqrt();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let parts = map_indexed(exec, n_chunks, |c| {
        let mut rng = stream_rng(seed, c as u64);
        let mut acc = [0.0; 4];
        for _ in (c * CHUNK)..((c + 1) * CHUNK).min(n_samples) {
            let jx = mag * sin_t * (TAU * rng.random::<f64>()).cos();
            let x2 = jx * jx;
            acc[0] += x2;
            acc[1] += x2 * x2;
            acc[2] += x2 * x2 * x2;
            acc[3] += x2 * x2 * x2 * x2;
        }
        acc
    });
    let acc = pairwise_reduce(parts, |mut a, b| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        a
    })
    .unwrap_or([0.0; 4]);
    let n = n_samples as f64;
    let est = |s1: f64, s2: f64| {
        let mean = s1 / n;
        let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        Estimate { mean, se: (var / n).sqrt() }
    };
    (est(acc[0], acc[1]), est(acc[1], acc[3]))
}

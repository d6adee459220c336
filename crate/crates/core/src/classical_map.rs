//! Classical stroboscopic dynamics on S^2 x S^2.
//!
//! Each kick rotates `S~` about the x-axis by `gamma r L~_x` and `L~` about the
//! x-axis by `gamma S~_x`, after which both spins precess about z by `a`.
//! States are unit vectors; the six Cartesian components are ordered
//! `(S~_x, S~_y, S~_z, L~_x, L~_y, L~_z)` wherever a flat array is used.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::rng::stream_rng;

/// Dimensionless parameters of the classical map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalParams {
    /// Free precession angle, reduced into `[0, 2pi)`.
    pub a: f64,
    /// Scaled coupling `c |S|`.
    pub gamma: f64,
    /// Length ratio `|L| / |S|`, at least 1.
    pub r: f64,
}

impl ClassicalParams {
    pub fn new(a: f64, gamma: f64, r: f64) -> Result<Self> {
        if !(a.is_finite() && gamma.is_finite() && r.is_finite()) {
            return Err(Error::InvalidArgument("classical parameters must be finite".into()));
        }
        if r < 1.0 {
            return Err(Error::InvalidArgument(format!("r = {r} must be >= 1 (L is the larger spin)")));
        }
        Ok(Self { a: a.rem_euclid(TAU), gamma, r })
    }
}

/// Pair of unit spin vectors `(S~, L~)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSpinPair {
    pub s_hat: [f64; 3],
    pub l_hat: [f64; 3],
}

impl ClassicalSpinPair {
    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            s_hat: [x[0], x[1], x[2]],
            l_hat: [x[3], x[4], x[5]],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        let (s, l) = (self.s_hat, self.l_hat);
        [s[0], s[1], s[2], l[0], l[1], l[2]]
    }

    pub fn renormalized(self) -> Self {
        Self {
            s_hat: unit(self.s_hat),
            l_hat: unit(self.l_hat),
        }
    }
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Point in the canonical chart `(S~_z, phi_s, L~_z, phi_l)`.
///
/// The z components are normalized by the spin lengths, so the canonical
/// measure `dS~_z dphi_s dL~_z dphi_l` is uniform on the chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalPoint {
    pub s_z: f64,
    pub phi_s: f64,
    pub l_z: f64,
    pub phi_l: f64,
}

/// The four trivial fixed points sit at the poles; they come in two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointClass {
    /// `(S_z, L_z) = +-(|S|, |L|)`
    Parallel,
    /// `(S_z, L_z) = (+-|S|, -+|L|)`
    Antiparallel,
}

/// The map with `cos a` and `sin a` precomputed, for tight loops.
#[derive(Debug, Clone, Copy)]
pub struct KickedMap {
    params: ClassicalParams,
    cos_a: f64,
    sin_a: f64,
}

impl KickedMap {
    pub fn new(params: ClassicalParams) -> Self {
        Self {
            params,
            cos_a: params.a.cos(),
            sin_a: params.a.sin(),
        }
    }

    pub fn params(&self) -> ClassicalParams {
        self.params
    }

    /// The six update formulas applied to an arbitrary point of R^6.
    #[inline]
    pub fn step_raw(&self, x: [f64; 6]) -> [f64; 6] {
        let [sx, sy, sz, lx, ly, lz] = x;
        let ClassicalParams { gamma, r, .. } = self.params;
        let (sin_s, cos_s) = (gamma * r * lx).sin_cos();
        let (sin_l, cos_l) = (gamma * sx).sin_cos();
        let sy_k = sy * cos_s - sz * sin_s;
        let sz_k = sz * cos_s + sy * sin_s;
        let ly_k = ly * cos_l - lz * sin_l;
        let lz_k = lz * cos_l + ly * sin_l;
        let (c, s) = (self.cos_a, self.sin_a);
        [
            sx * c - sy_k * s,
            sy_k * c + sx * s,
            sz_k,
            lx * c - ly_k * s,
            ly_k * c + lx * s,
            lz_k,
        ]
    }

    /// One kick followed by renormalization of both spins.
    #[inline]
    pub fn step(&self, x: ClassicalSpinPair) -> ClassicalSpinPair {
        ClassicalSpinPair::from_array(self.step_raw(x.to_array())).renormalized()
    }

    /// Jacobian of [`KickedMap::step_raw`] at `x`.
    pub fn tangent(&self, x: [f64; 6]) -> [[f64; 6]; 6] {
        let [sx, sy, sz, lx, ly, lz] = x;
        let ClassicalParams { gamma, r, .. } = self.params;
        let (sin_s, cos_s) = (gamma * r * lx).sin_cos();
        let (sin_l, cos_l) = (gamma * sx).sin_cos();
        let sy_k = sy * cos_s - sz * sin_s;
        let sz_k = sz * cos_s + sy * sin_s;
        let ly_k = ly * cos_l - lz * sin_l;
        let lz_k = lz * cos_l + ly * sin_l;

        // Jacobian of the kick alone.
        let mut k = [[0.0; 6]; 6];
        k[0][0] = 1.0;
        k[1][1] = cos_s;
        k[1][2] = -sin_s;
        k[1][3] = -gamma * r * sz_k;
        k[2][1] = sin_s;
        k[2][2] = cos_s;
        k[2][3] = gamma * r * sy_k;
        k[3][3] = 1.0;
        k[4][4] = cos_l;
        k[4][5] = -sin_l;
        k[4][0] = -gamma * lz_k;
        k[5][4] = sin_l;
        k[5][5] = cos_l;
        k[5][0] = gamma * ly_k;

        // Left-multiply by the z-rotation acting on each spin.
        let (c, s) = (self.cos_a, self.sin_a);
        let mut m = [[0.0; 6]; 6];
        for base in [0, 3] {
            for col in 0..6 {
                m[base][col] = c * k[base][col] - s * k[base + 1][col];
                m[base + 1][col] = s * k[base][col] + c * k[base + 1][col];
                m[base + 2][col] = k[base + 2][col];
            }
        }
        m
    }
}

pub fn map_step(x: ClassicalSpinPair, p: ClassicalParams) -> ClassicalSpinPair {
    KickedMap::new(p).step(x)
}

pub fn tangent_map(x: ClassicalSpinPair, p: ClassicalParams) -> [[f64; 6]; 6] {
    KickedMap::new(p).tangent(x.to_array())
}

/// Iterates the map, returning `n + 1` states including `x0`.
pub fn trajectory(x0: ClassicalSpinPair, p: ClassicalParams, n: usize) -> Vec<ClassicalSpinPair> {
    let map = KickedMap::new(p);
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..n {
        x = map.step(x);
        out.push(x);
    }
    out
}

fn spherical(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Spin pair from spherical angles (radians).
pub fn angles_to_state(theta_s: f64, phi_s: f64, theta_l: f64, phi_l: f64) -> ClassicalSpinPair {
    ClassicalSpinPair {
        s_hat: spherical(theta_s, phi_s),
        l_hat: spherical(theta_l, phi_l),
    }
}

/// Chart coordinates of a spin pair; `at_pole` is set when either azimuth is
/// undefined, in which case that azimuth is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub point: CanonicalPoint,
    pub at_pole: bool,
}

fn azimuth(v: [f64; 3]) -> Option<f64> {
    if v[0] == 0.0 && v[1] == 0.0 {
        None
    } else {
        Some(v[1].atan2(v[0]).rem_euclid(TAU))
    }
}

pub fn state_to_canonical(x: ClassicalSpinPair) -> ChartPoint {
    let ps = azimuth(x.s_hat);
    let pl = azimuth(x.l_hat);
    ChartPoint {
        point: CanonicalPoint {
            s_z: x.s_hat[2],
            phi_s: ps.unwrap_or(0.0),
            l_z: x.l_hat[2],
            phi_l: pl.unwrap_or(0.0),
        },
        at_pole: ps.is_none() || pl.is_none(),
    }
}

pub fn canonical_to_state(p: CanonicalPoint) -> ClassicalSpinPair {
    let on_sphere = |z: f64, phi: f64| {
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let (sp, cp) = phi.sin_cos();
        [rho * cp, rho * sp, z]
    };
    ClassicalSpinPair {
        s_hat: on_sphere(p.s_z, p.phi_s),
        l_hat: on_sphere(p.l_z, p.phi_l),
    }
}

/// The map expressed in canonical coordinates.
pub fn canonical_map(x: CanonicalPoint, p: ClassicalParams) -> CanonicalPoint {
    state_to_canonical(map_step(canonical_to_state(x), p)).point
}

/// Roots of `[xi^2 - 2 xi cos a + 1]^2 -+ xi^2 gamma^2 r sin^2 a = 0`.
///
/// The quartic factors into two quadratics `xi^2 - b xi + 1 = 0` with
/// `b = 2 cos a +- g` (parallel) or `b = 2 cos a +- i g` (antiparallel),
/// where `g = |gamma sin a| sqrt(r)`. The antiparallel case is the parallel
/// one with `r -> -r`.
pub fn fixed_point_eigenvalues(p: ClassicalParams, kind: FixedPointClass) -> [Complex64; 4] {
    let g = (p.gamma * p.a.sin()).abs() * p.r.sqrt();
    let two_cos = 2.0 * p.a.cos();
    let shift = match kind {
        FixedPointClass::Parallel => Complex64::new(g, 0.0),
        FixedPointClass::Antiparallel => Complex64::new(0.0, g),
    };
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for (k, b) in [two_cos + shift, two_cos - shift].into_iter().enumerate() {
        let disc = (b * b - 4.0).sqrt();
        // Take the larger root first and get its partner from the product 1.
        let (x1, x2) = ((b + disc) * 0.5, (b - disc) * 0.5);
        let big = if x1.norm() >= x2.norm() { x1 } else { x2 };
        out[2 * k] = big;
        out[2 * k + 1] = 1.0 / big;
    }
    out
}

/// Left-hand side of the characteristic quartic at `xi`.
pub fn characteristic(p: ClassicalParams, kind: FixedPointClass, xi: Complex64) -> Complex64 {
    let quad = xi * xi - 2.0 * xi * p.a.cos() + 1.0;
    let coupling = xi * xi * p.gamma * p.gamma * p.r * p.a.sin().powi(2);
    match kind {
        FixedPointClass::Parallel => quad * quad - coupling,
        FixedPointClass::Antiparallel => quad * quad + coupling,
    }
}

/// Initial tangent direction used by [`lyapunov_exponent`]: `dS~_x`.
pub const DEFAULT_TANGENT: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// Largest Lyapunov exponent `(1/N) sum ln d(n)` with `d` the 1-norm of the
/// tangent vector, renormalized every `renorm_every` kicks.
pub fn lyapunov_exponent(
    x0: ClassicalSpinPair,
    p: ClassicalParams,
    n_steps: usize,
    renorm_every: usize,
) -> Result<f64> {
    lyapunov_with_tangent(x0, p, n_steps, renorm_every, DEFAULT_TANGENT)
}

pub fn lyapunov_with_tangent(
    x0: ClassicalSpinPair,
    p: ClassicalParams,
    n_steps: usize,
    renorm_every: usize,
    dx0: [f64; 6],
) -> Result<f64> {
    if n_steps == 0 || renorm_every == 0 {
        return Err(Error::InvalidArgument("n_steps and renorm_every must be positive".into()));
    }
    let map = KickedMap::new(p);
    let norm1 = |v: &[f64; 6]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut dx = dx0;
    let d0 = norm1(&dx);
    dx.iter_mut().for_each(|v| *v /= d0);
    let mut x = x0;
    let mut log_sum = 0.0;
    for step in 1..=n_steps {
        let m = map.tangent(x.to_array());
        let mut next = [0.0; 6];
        for (row, out) in m.iter().zip(next.iter_mut()) {
            *out = row.iter().zip(&dx).map(|(a, b)| a * b).sum();
        }
        dx = next;
        x = map.step(x);
        if step % renorm_every == 0 || step == n_steps {
            let d = norm1(&dx);
            if !d.is_finite() || d == 0.0 {
                return Err(Error::NonFinite("lyapunov_exponent"));
            }
            log_sum += d.ln();
            dx.iter_mut().for_each(|v| *v /= d);
        }
    }
    let lambda = log_sum / n_steps as f64;
    if !lambda.is_finite() {
        return Err(Error::NonFinite("lyapunov_exponent"));
    }
    Ok(lambda)
}

/// Default exponent above which a trajectory counts as chaotic.
pub const DEFAULT_CHAOS_THRESHOLD: f64 = 0.005;
/// Default trajectory length for regime classification.
pub const DEFAULT_SCAN_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSample {
    pub point: CanonicalPoint,
    pub lambda: f64,
    pub is_chaotic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeScan {
    pub chaotic_fraction: f64,
    pub samples: Vec<ScanSample>,
}

impl RegimeScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "S_z,phi_s,L_z,phi_l,lambda,is_chaotic")?;
        for s in &self.samples {
            let p = s.point;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(p.s_z),
                fmt_f64(p.phi_s),
                fmt_f64(p.l_z),
                fmt_f64(p.phi_l),
                fmt_f64(s.lambda),
                u8::from(s.is_chaotic)
            )?;
        }
        Ok(())
    }
}

/// Samples initial conditions uniformly in the canonical measure and
/// classifies each by its Lyapunov exponent. Sample `i` draws from RNG
/// stream `i` of `seed`, so the result does not depend on `exec`.
pub fn regime_scan(
    exec: Exec,
    p: ClassicalParams,
    n_samples: usize,
    n_steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<RegimeScan> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("regime_scan needs at least one sample".into()));
    }
    let results = map_indexed(exec, n_samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let point = CanonicalPoint {
            s_z: 2.0 * rng.random::<f64>() - 1.0,
            phi_s: TAU * rng.random::<f64>(),
            l_z: 2.0 * rng.random::<f64>() - 1.0,
            phi_l: TAU * rng.random::<f64>(),
        };
        lyapunov_exponent(canonical_to_state(point), p, n_steps, 1).map(|lambda| ScanSample {
            point,
            lambda,
            is_chaotic: lambda > threshold,
        })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let chaotic = samples.iter().filter(|s| s.is_chaotic).count();
    Ok(RegimeScan {
        chaotic_fraction: chaotic as f64 / n_samples as f64,
        samples,
    })
}

/// Writes `n,Sx,Sy,Sz,Lx,Ly,Lz` rows for a trajectory.
pub fn write_trajectory_csv<W: Write>(traj: &[ClassicalSpinPair], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,Sx,Sy,Sz,Lx,Ly,Lz")?;
    for (n, x) in traj.iter().enumerate() {
        let v = x.to_array();
        write!(w, "{n}")?;
        for c in v {
            write!(w, ",{}", fmt_f64(c))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

//! Exact quantum dynamics of the two kicked spins.
//!
//! States live in the product basis `|s,m_s> (x) |l,m_l>` with both `m`
//! indices in descending order (`m = j, j-1, ..., -j`). A state is stored as
//! a `(2s+1) x (2l+1)` matrix, so an operator `A (x) B` acts as `A psi B^T`
//! and the Floquet step never needs the full product-space matrix.

use std::fmt;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;

use crate::csvfmt::{fmt_f64, fmt_m};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{gemm, MatRef};

/// A spin quantum number `j`, stored as the integer `2j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinQuantum {
    twice: u32,
}

impl SpinQuantum {
    pub fn new(j: f64) -> Result<Self> {
        let t = 2.0 * j;
        if !t.is_finite() || t < 0.0 || t.fract() != 0.0 || t > u32::MAX as f64 {
            return Err(Error::InvalidQuantumNumber(j));
        }
        Ok(Self { twice: t as u32 })
    }

    pub const fn from_twice(twice: u32) -> Self {
        Self { twice }
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    pub fn j(self) -> f64 {
        self.twice as f64 / 2.0
    }

    pub fn dim(self) -> usize {
        self.twice as usize + 1
    }

    /// Magnetic quantum number at basis index `i` (descending order).
    pub fn m(self, i: usize) -> f64 {
        self.j() - i as f64
    }

    /// `j(j+1)`, the eigenvalue of `J^2`.
    pub fn casimir(self) -> f64 {
        let j = self.j();
        j * (j + 1.0)
    }

    /// Classical length `sqrt(j(j+1))` associated with this spin.
    pub fn magnitude(self) -> f64 {
        self.casimir().sqrt()
    }
}

impl fmt::Display for SpinQuantum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.twice.is_multiple_of(2) {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

/// Wigner small-d matrix `d^(j)_{m',m}(theta) = <j,m'| exp(-i theta J_y) |j,m>`.
///
/// Rows are indexed by `m'`, columns by `m`, both descending. The matrix is
/// built by a two-term recursion in `2j`: a spin-j state is a symmetric
/// product of `2j` spin-1/2 states, and each added spin-1/2 maps column `m`
/// of `d^(j-1/2)` onto a column of `d^(j)` using only the spin-1/2 rotation
/// `(cos(theta/2), sin(theta/2))`. Every entry averages the two exact ways of
/// reaching it (from column `m - 1/2` and from column `m + 1/2`), weighted so
/// all coefficients are bounded; a single-parent update divides by small
/// square roots and loses accuracy near `theta = pi/2` beyond `j ~ 100`.
/// Any real `theta` is accepted.
pub fn wigner_d(j: SpinQuantum, theta: f64) -> Array2<f64> {
    let n_max = j.twice as usize;
    let p = (0.5 * theta).cos();
    let q = (0.5 * theta).sin();
    let sqrt_int: Vec<f64> = (0..=n_max + 1).map(|k| (k as f64).sqrt()).collect();

    // `cur` holds d^(n/2) indexed by u = j + m (ascending), row-major.
    let mut cur = vec![1.0];
    let mut next = Vec::with_capacity((n_max + 1) * (n_max + 1));
    for n in 0..n_max {
        let old = n + 1;
        let new = n + 2;
        let inv = 1.0 / (n + 1) as f64;
        next.clear();
        next.resize(new * new, 0.0);
        for row in 0..new {
            let (ru, rd) = (sqrt_int[row], sqrt_int[n + 1 - row]);
            for col in 0..new {
                let (cu, cd) = (sqrt_int[col], sqrt_int[n + 1 - col]);
                let at = |r: usize, c: usize| cur[r * old + c];
                let mut acc = 0.0;
                if row >= 1 && col >= 1 {
                    acc += p * ru * cu * at(row - 1, col - 1);
                }
                if row < old && col >= 1 {
                    acc += q * rd * cu * at(row, col - 1);
                }
                if row >= 1 && col < old {
                    acc -= q * ru * cd * at(row - 1, col);
                }
                if row < old && col < old {
                    acc += p * rd * cd * at(row, col);
                }
                next[row * new + col] = acc * inv;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }

    let dim = n_max + 1;
    let d = Array2::from_shape_fn((dim, dim), |(r, c)| cur[(n_max - r) * dim + (n_max - c)]);
    polish_orthogonal(d)
}

/// One Newton-Schulz step `R (3I - R^T R) / 2` towards the nearest orthogonal
/// matrix. The recursion leaves `R^T R - I` at a few 1e-15 for large `j`,
/// which would otherwise shrink the norm systematically over many kicks.
fn polish_orthogonal(r: Array2<f64>) -> Array2<f64> {
    let mut g = r.t().dot(&r);
    g.mapv_inplace(|x| -0.5 * x);
    g.diag_mut().mapv_inplace(|x| x + 1.5);
    r.dot(&g)
}

/// Rotation matrix `<j,m'| R(theta, phi) |j,m> = exp(-i m' phi) d^(j)_{m',m}(theta)`.
pub fn rotation_matrix(j: SpinQuantum, theta: f64, phi: f64) -> Array2<Complex64> {
    let d = wigner_d(j, theta);
    Array2::from_shape_fn(d.dim(), |(r, c)| {
        Complex64::from_polar(1.0, -j.m(r) * phi) * d[[r, c]]
    })
}

/// SU(2) coherent state `R(theta, phi) |j,j>`.
pub fn coherent_state(j: SpinQuantum, theta: f64, phi: f64) -> Vec<Complex64> {
    rotation_matrix(j, theta, phi).column(0).to_vec()
}

/// Matrix of `J_x` in the descending `|j,m>` basis (real and symmetric).
pub fn jx_matrix(j: SpinQuantum) -> Array2<f64> {
    let dim = j.dim();
    let mut out = Array2::zeros((dim, dim));
    for i in 1..dim {
        // <m+1| J_+ |m> / 2 with m = m(i)
        let m = j.m(i);
        let v = 0.5 * (j.casimir() - m * (m + 1.0)).sqrt();
        out[[i - 1, i]] = v;
        out[[i, i - 1]] = v;
    }
    out
}

/// Moments of a single-spin state: `(<J_x>, <J_y>, <J_z>)`.
pub fn spin_moments(j: SpinQuantum, psi: &[Complex64]) -> [f64; 3] {
    let mut jz = 0.0;
    let mut jplus = Complex64::new(0.0, 0.0);
    for (i, a) in psi.iter().enumerate() {
        let m = j.m(i);
        jz += m * a.norm_sqr();
        if i >= 1 {
            jplus += psi[i - 1].conj() * a * (j.casimir() - m * (m + 1.0)).sqrt();
        }
    }
    [jplus.re, jplus.im, jz]
}

/// Pure state of the two spins.
///
/// Amplitudes are kept as two real planes (real part, then imaginary part),
/// each a row-major `(2s+1) x (2l+1)` matrix indexed `(m_s, m_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    s: SpinQuantum,
    l: SpinQuantum,
    planes: Vec<f64>,
}

impl QuantumState {
    pub fn from_amplitudes(s: SpinQuantum, l: SpinQuantum, amps: &[Complex64]) -> Result<Self> {
        let n = s.dim() * l.dim();
        if amps.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: amps.len() });
        }
        let mut planes = vec![0.0; 2 * n];
        for (k, a) in amps.iter().enumerate() {
            planes[k] = a.re;
            planes[n + k] = a.im;
        }
        Ok(Self { s, l, planes })
    }

    /// Separable state `psi_s (x) psi_l`.
    pub fn product(
        s: SpinQuantum,
        l: SpinQuantum,
        psi_s: &[Complex64],
        psi_l: &[Complex64],
    ) -> Result<Self> {
        if psi_s.len() != s.dim() {
            return Err(Error::DimensionMismatch { expected: s.dim(), found: psi_s.len() });
        }
        if psi_l.len() != l.dim() {
            return Err(Error::DimensionMismatch { expected: l.dim(), found: psi_l.len() });
        }
        let amps: Vec<Complex64> = psi_s
            .iter()
            .flat_map(|a| psi_l.iter().map(move |b| a * b))
            .collect();
        Self::from_amplitudes(s, l, &amps)
    }

    /// Product of coherent states pointing along `(theta_s, phi_s)` and
    /// `(theta_l, phi_l)` (radians).
    pub fn coherent(
        s: SpinQuantum,
        l: SpinQuantum,
        theta_s: f64,
        phi_s: f64,
        theta_l: f64,
        phi_l: f64,
    ) -> Self {
        let cs = coherent_state(s, theta_s, phi_s);
        let cl = coherent_state(l, theta_l, phi_l);
        Self::product(s, l, &cs, &cl).expect("coherent state dimensions")
    }

    pub fn s(&self) -> SpinQuantum {
        self.s
    }

    pub fn l(&self) -> SpinQuantum {
        self.l
    }

    fn len(&self) -> usize {
        self.s.dim() * self.l.dim()
    }

    pub fn amplitude(&self, i_s: usize, i_l: usize) -> Complex64 {
        let k = i_s * self.l.dim() + i_l;
        Complex64::new(self.planes[k], self.planes[self.len() + k])
    }

    /// Amplitudes in row-major `(m_s, m_l)` order.
    pub fn amplitudes(&self) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|k| Complex64::new(self.planes[k], self.planes[n + k]))
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.planes.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Writes `m_s,m_l,re,im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m_s,m_l,re,im")?;
        for i in 0..self.s.dim() {
            for k in 0..self.l.dim() {
                let a = self.amplitude(i, k);
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_m(self.s.m(i)),
                    fmt_m(self.l.m(k)),
                    fmt_f64(a.re),
                    fmt_f64(a.im)
                )?;
            }
        }
        Ok(())
    }
}

/// Factored single-kick Floquet operator
/// `F = exp[-ia(S_z+L_z)] (R_s (x) R_l) exp[-ic S_z L_z] (R_s (x) R_l)^T`
/// with `R = R(pi/2, 0)`, which is real orthogonal.
#[derive(Debug, Clone)]
pub struct FloquetOperator {
    s: SpinQuantum,
    l: SpinQuantum,
    a: f64,
    c: f64,
    rot_s: Array2<f64>,
    rot_l: Array2<f64>,
    interaction_phases: Vec<Complex64>,
    free_phases: Vec<Complex64>,
}

pub fn build_floquet(s: SpinQuantum, l: SpinQuantum, a: f64, c: f64) -> Result<FloquetOperator> {
    if !a.is_finite() || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite Floquet parameters a={a}, c={c}")));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let rot_s = wigner_d(s, half_pi);
    let rot_l = if l == s { rot_s.clone() } else { wigner_d(l, half_pi) };
    let mut interaction_phases = Vec::with_capacity(s.dim() * l.dim());
    let mut free_phases = Vec::with_capacity(s.dim() * l.dim());
    for i in 0..s.dim() {
        for k in 0..l.dim() {
            let (ms, ml) = (s.m(i), l.m(k));
            interaction_phases.push(Complex64::from_polar(1.0, -c * ms * ml));
            free_phases.push(Complex64::from_polar(1.0, -a * (ms + ml)));
        }
    }
    Ok(FloquetOperator { s, l, a, c, rot_s, rot_l, interaction_phases, free_phases })
}

impl FloquetOperator {
    pub fn s(&self) -> SpinQuantum {
        self.s
    }

    pub fn l(&self) -> SpinQuantum {
        self.l
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `R^(s)(pi/2, 0)`; real because the azimuth is zero.
    pub fn rot_s(&self) -> &Array2<f64> {
        &self.rot_s
    }

    pub fn rot_l(&self) -> &Array2<f64> {
        &self.rot_l
    }

    /// `exp(-i c m_s m_l)`, row-major over `(m_s, m_l)`.
    pub fn interaction_phases(&self) -> &[Complex64] {
        &self.interaction_phases
    }

    /// `exp(-i a (m_s + m_l))`, row-major over `(m_s, m_l)`.
    pub fn free_phases(&self) -> &[Complex64] {
        &self.free_phases
    }

    /// Applies one kick in place.
    pub fn apply(&self, exec: Exec, state: &mut QuantumState) -> Result<()> {
        if state.s != self.s || state.l != self.l {
            return Err(Error::DimensionMismatch {
                expected: self.s.dim() * self.l.dim(),
                found: state.len(),
            });
        }
        let mut scratch = vec![0.0; state.planes.len()];
        self.kick(exec, &mut state.planes, &mut scratch);
        Ok(())
    }

    fn kick(&self, exec: Exec, x: &mut [f64], t: &mut [f64]) {
        let (ds, dl) = (self.s.dim(), self.l.dim());
        let rs = self.rot_s.as_slice().expect("standard layout");
        let rl = self.rot_l.as_slice().expect("standard layout");
        let rs = MatRef::row_major(rs, ds, ds);
        let rl = MatRef::row_major(rl, dl, dl);

        // (R_s (x) R_l)^T
        self.left(exec, rs.t(), x, t);
        gemm(exec, MatRef::row_major(t, 2 * ds, dl), rl, x);
        multiply_phases(x, &self.interaction_phases);
        // (R_s (x) R_l)
        self.left(exec, rs, x, t);
        gemm(exec, MatRef::row_major(t, 2 * ds, dl), rl.t(), x);
        multiply_phases(x, &self.free_phases);
    }

    /// `out_p = a * x_p` for both real planes.
    fn left(&self, exec: Exec, a: MatRef<'_>, x: &[f64], out: &mut [f64]) {
        let (ds, dl) = (self.s.dim(), self.l.dim());
        let n = ds * dl;
        let (out_re, out_im) = out.split_at_mut(n);
        gemm(exec, a, MatRef::row_major(&x[..n], ds, dl), out_re);
        gemm(exec, a, MatRef::row_major(&x[n..], ds, dl), out_im);
    }
}

fn multiply_phases(x: &mut [f64], phases: &[Complex64]) {
    let n = phases.len();
    let (re, im) = x.split_at_mut(n);
    for ((r, i), p) in re.iter_mut().zip(im.iter_mut()).zip(phases) {
        let (a, b) = (*r, *i);
        *r = a * p.re - b * p.im;
        *i = a * p.im + b * p.re;
    }
}

/// Applies `f` to `state` `n` times.
pub fn evolve(state: &QuantumState, f: &FloquetOperator, n: usize) -> Result<QuantumState> {
    evolve_with(Exec::default(), state, f, n)
}

pub fn evolve_with(
    exec: Exec,
    state: &QuantumState,
    f: &FloquetOperator,
    n: usize,
) -> Result<QuantumState> {
    let mut out = state.clone();
    if out.s != f.s || out.l != f.l {
        return Err(Error::DimensionMismatch {
            expected: f.s.dim() * f.l.dim(),
            found: out.len(),
        });
    }
    let mut scratch = vec![0.0; out.planes.len()];
    for _ in 0..n {
        f.kick(exec, &mut out.planes, &mut scratch);
    }
    Ok(out)
}

/// Observables at kicks `0..=n` of one quantum run, with `P_z(m_l)` at
/// selected kicks.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub s: SpinQuantum,
    pub l: SpinQuantum,
    pub kicks: Vec<Observables>,
    /// `(kick, P_z)` pairs in the order requested.
    pub histograms: Vec<(usize, Vec<f64>)>,
}

impl ObservableSeries {
    pub fn l_z(&self) -> Vec<f64> {
        self.kicks.iter().map(|o| o.l_z).collect()
    }

    pub fn l_var_norm(&self) -> Vec<f64> {
        self.kicks.iter().map(|o| o.l_var_norm()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,Lz,Lz_norm,var_norm,Lx,Ly,Sz,Sx,Sy,S_var_norm,norm")?;
        for (n, o) in self.kicks.iter().enumerate() {
            writeln!(
                w,
                "{n},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(o.l_z),
                fmt_f64(o.l_z_norm()),
                fmt_f64(o.l_var_norm()),
                fmt_f64(o.l_x),
                fmt_f64(o.l_y),
                fmt_f64(o.s_z),
                fmt_f64(o.s_x),
                fmt_f64(o.s_y),
                fmt_f64(o.s_var_norm()),
                fmt_f64(o.norm_sq().sqrt()),
            )?;
        }
        Ok(())
    }
}

/// Evolves `state` for `n_kicks` kicks, recording observables after each.
pub fn observable_series(
    exec: Exec,
    state: &QuantumState,
    f: &FloquetOperator,
    n_kicks: usize,
    hist_kicks: &[usize],
) -> Result<ObservableSeries> {
    let mut cur = state.clone();
    let mut kicks = Vec::with_capacity(n_kicks + 1);
    let mut histograms = Vec::new();
    for n in 0..=n_kicks {
        if n > 0 {
            f.apply(exec, &mut cur)?;
        }
        kicks.push(observables(&cur));
        for &k in hist_kicks.iter().filter(|&&k| k == n) {
            histograms.push((k, marginal_pz(&cur)));
        }
    }
    histograms.sort_by_key(|(k, _)| hist_kicks.iter().position(|h| h == k));
    Ok(ObservableSeries { s: state.s, l: state.l, kicks, histograms })
}

/// Expectation values of a two-spin state, in units of hbar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub s_x: f64,
    pub s_y: f64,
    pub s_z: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub l_z: f64,
    /// `<S^2> = s(s+1) <psi|psi>`
    pub s_sq: f64,
    /// `<L^2> = l(l+1) <psi|psi>`
    pub l_sq: f64,
    s_casimir: f64,
    l_casimir: f64,
}

impl Observables {
    /// `<L_z> / sqrt(l(l+1))`
    pub fn l_z_norm(&self) -> f64 {
        self.l_z / self.l_casimir.sqrt()
    }

    pub fn s_z_norm(&self) -> f64 {
        self.s_z / self.s_casimir.sqrt()
    }

    /// `(<L^2> - <L>^2) / l(l+1)`
    pub fn l_var_norm(&self) -> f64 {
        (self.l_sq - (self.l_x * self.l_x + self.l_y * self.l_y + self.l_z * self.l_z))
            / self.l_casimir
    }

    /// `<psi|psi>`
    pub fn norm_sq(&self) -> f64 {
        self.l_sq / self.l_casimir
    }

    pub fn s_var_norm(&self) -> f64 {
        (self.s_sq - (self.s_x * self.s_x + self.s_y * self.s_y + self.s_z * self.s_z))
            / self.s_casimir
    }
}

pub fn observables(state: &QuantumState) -> Observables {
    let (s, l) = (state.s, state.l);
    let (ds, dl) = (s.dim(), l.dim());
    let n = ds * dl;
    let (re, im) = state.planes.split_at(n);

    let ladder = |j: SpinQuantum, i: usize| {
        let m = j.m(i);
        (j.casimir() - m * (m + 1.0)).sqrt()
    };
    let cl: Vec<f64> = (0..dl).map(|k| ladder(l, k)).collect();

    let mut norm2 = 0.0;
    let mut s_z = 0.0;
    let mut l_z = 0.0;
    let (mut lp_re, mut lp_im) = (0.0, 0.0);
    let (mut sp_re, mut sp_im) = (0.0, 0.0);
    for i in 0..ds {
        let row = i * dl;
        let ms = s.m(i);
        let cs = ladder(s, i);
        let mut row_p = 0.0;
        for k in 0..dl {
            let (ar, ai) = (re[row + k], im[row + k]);
            let p = ar * ar + ai * ai;
            row_p += p;
            l_z += l.m(k) * p;
            if k >= 1 {
                // conj(psi[i, k-1]) psi[i, k], L_+ raises m_l(k) to m_l(k-1)
                let (br, bi) = (re[row + k - 1], im[row + k - 1]);
                lp_re += cl[k] * (br * ar + bi * ai);
                lp_im += cl[k] * (br * ai - bi * ar);
            }
            if i >= 1 {
                let (br, bi) = (re[row - dl + k], im[row - dl + k]);
                sp_re += cs * (br * ar + bi * ai);
                sp_im += cs * (br * ai - bi * ar);
            }
        }
        norm2 += row_p;
        s_z += ms * row_p;
    }
    Observables {
        s_x: sp_re,
        s_y: sp_im,
        s_z,
        l_x: lp_re,
        l_y: lp_im,
        l_z,
        s_sq: s.casimir() * norm2,
        l_sq: l.casimir() * norm2,
        s_casimir: s.casimir(),
        l_casimir: l.casimir(),
    }
}

/// Diagonal of the reduced density matrix of `L`: `P_z(m_l)` in descending
/// `m_l` order.
pub fn marginal_pz(state: &QuantumState) -> Vec<f64> {
    let (ds, dl) = (state.s.dim(), state.l.dim());
    let n = ds * dl;
    let (re, im) = state.planes.split_at(n);
    let mut p = vec![0.0; dl];
    for i in 0..ds {
        let (row_re, row_im) = (&re[i * dl..(i + 1) * dl], &im[i * dl..(i + 1) * dl]);
        for ((pk, x), y) in p.iter_mut().zip(row_re).zip(row_im) {
            *pk += x * x + y * y;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn spin(j: f64) -> SpinQuantum {
        SpinQuantum::new(j).unwrap()
    }

    #[test]
    fn quantum_number_validation() {
        assert!(SpinQuantum::new(1.5).is_ok());
        assert!(SpinQuantum::new(0.0).is_ok());
        assert!(matches!(SpinQuantum::new(0.3), Err(Error::InvalidQuantumNumber(_))));
        assert!(SpinQuantum::new(-1.0).is_err());
        assert!(SpinQuantum::new(f64::NAN).is_err());
        assert_eq!(spin(1.5).dim(), 4);
        assert_eq!(spin(1.5).m(3), -1.5);
        assert_eq!(spin(1.5).to_string(), "3/2");
        assert_eq!(spin(154.0).to_string(), "154");
    }

    #[test]
    fn spin_half_closed_form() {
        for &th in &[0.0, 0.3, FRAC_PI_2, 2.0, PI] {
            let d = wigner_d(spin(0.5), th);
            let (c, s) = ((th / 2.0).cos(), (th / 2.0).sin());
            let want = [[c, -s], [s, c]];
            for r in 0..2 {
                for k in 0..2 {
                    assert!((d[[r, k]] - want[r][k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_angle_is_identity() {
        for t in [0, 1, 2, 7, 40] {
            let d = wigner_d(SpinQuantum::from_twice(t), 0.0);
            for ((r, c), v) in d.indexed_iter() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spin_one_closed_form() {
        let th = 0.83_f64;
        let d = wigner_d(spin(1.0), th);
        let (c, s) = (th.cos(), th.sin());
        let r2 = std::f64::consts::SQRT_2;
        let want = [
            [(1.0 + c) / 2.0, -s / r2, (1.0 - c) / 2.0],
            [s / r2, c, -s / r2],
            [(1.0 - c) / 2.0, s / r2, (1.0 + c) / 2.0],
        ];
        for r in 0..3 {
            for k in 0..3 {
                assert!((d[[r, k]] - want[r][k]).abs() < 1e-14, "({r},{k})");
            }
        }
    }

    #[test]
    fn rotation_spin_half_with_azimuth() {
        let r = rotation_matrix(spin(0.5), FRAC_PI_2, FRAC_PI_2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let em = Complex64::from_polar(1.0, -PI / 4.0);
        let ep = Complex64::from_polar(1.0, PI / 4.0);
        let want = [[em * h, -em * h], [ep * h, ep * h]];
        for i in 0..2 {
            for k in 0..2 {
                assert!((r[[i, k]] - want[i][k]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn rotation_composes_about_one_axis() {
        let j = spin(7.5);
        let r1 = rotation_matrix(j, 0.7, 0.0);
        let r2 = rotation_matrix(j, 1.4, 0.0);
        let prod = r1.dot(&r1);
        for (a, b) in prod.iter().zip(r2.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn coherent_state_at_pole_is_basis_vector() {
        let v = coherent_state(spin(3.0), 0.0, 0.0);
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(v[1..].iter().all(|a| a.norm() < 1e-15));
    }

    #[test]
    fn coherent_state_moments() {
        let j = spin(10.0);
        let m = spin_moments(j, &coherent_state(j, FRAC_PI_2, 0.0));
        assert!(m[2].abs() < 1e-10);
        assert!((m[0] - 10.0).abs() < 1e-10);
        assert!(m[1].abs() < 1e-10);
    }

    #[test]
    fn interaction_off_is_pure_z_rotation() {
        let (s, l) = (spin(1.0), spin(1.5));
        let a = 0.77;
        let f = build_floquet(s, l, a, 0.0).unwrap();
        for i in 0..s.dim() {
            for k in 0..l.dim() {
                let mut amps = vec![Complex64::new(0.0, 0.0); s.dim() * l.dim()];
                amps[i * l.dim() + k] = Complex64::new(1.0, 0.0);
                let st = QuantumState::from_amplitudes(s, l, &amps).unwrap();
                let out = evolve(&st, &f, 1).unwrap();
                let phase = Complex64::from_polar(1.0, -a * (s.m(i) + l.m(k)));
                for i2 in 0..s.dim() {
                    for k2 in 0..l.dim() {
                        let want = if (i2, k2) == (i, k) { phase } else { Complex64::new(0.0, 0.0) };
                        assert!((out.amplitude(i2, k2) - want).norm() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn interaction_phases_for_two_spin_halves() {
        let f = build_floquet(spin(0.5), spin(0.5), 0.0, 2.0 * PI).unwrap();
        for p in f.interaction_phases() {
            assert!((p.norm() - 1.0).abs() < 1e-14);
        }
        // m_s m_l = +1/4 on the diagonal corners, -1/4 off-diagonal
        let want_pp = Complex64::from_polar(1.0, -2.0 * PI * 0.25);
        let want_pm = Complex64::from_polar(1.0, 2.0 * PI * 0.25);
        let ph = f.interaction_phases();
        assert!((ph[0] - want_pp).norm() < 1e-15);
        assert!((ph[1] - want_pm).norm() < 1e-15);
        assert!((ph[2] - want_pm).norm() < 1e-15);
        assert!((ph[3] - want_pp).norm() < 1e-15);
    }

    #[test]
    fn zero_kicks_is_identity() {
        let (s, l) = (spin(2.0), spin(2.5));
        let st = QuantumState::coherent(s, l, 0.4, 1.0, 2.0, 3.0);
        let f = build_floquet(s, l, 5.0, 0.9).unwrap();
        assert_eq!(evolve(&st, &f, 0).unwrap(), st);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let st = QuantumState::coherent(spin(1.0), spin(1.0), 0.1, 0.2, 0.3, 0.4);
        let f = build_floquet(spin(1.0), spin(2.0), 5.0, 0.5).unwrap();
        assert!(matches!(evolve(&st, &f, 1), Err(Error::DimensionMismatch { .. })));
        assert!(QuantumState::from_amplitudes(spin(1.0), spin(1.0), &[Complex64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn pole_state_observables() {
        let l = spin(12.0);
        let st = QuantumState::coherent(spin(3.0), l, 0.0, 0.0, 0.0, 0.0);
        let o = observables(&st);
        assert!((o.l_z - 12.0).abs() < 1e-12);
        assert!((o.l_var_norm() - 1.0 / 13.0).abs() < 1e-12);
        assert!((o.l_sq / l.casimir() - 1.0).abs() < 1e-12);
        let p = marginal_pz(&st);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn south_pole_marginal() {
        let l = spin(6.5);
        let st = QuantumState::coherent(spin(1.0), l, 0.3, 0.0, PI, 0.0);
        let p = marginal_pz(&st);
        assert!((p[l.dim() - 1] - 1.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_csv_layout() {
        let st = QuantumState::coherent(spin(0.5), spin(1.0), 0.0, 0.0, 0.0, 0.0);
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "m_s,m_l,re,im");
        assert_eq!(lines.len(), 1 + 2 * 3);
        let first: Vec<_> = lines[1].split(',').collect();
        assert_eq!(&first[..2], &["0.5", "1"]);
        assert!((first[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-15);
        assert!(lines[6].starts_with("-0.5,-1,"));
    }
}

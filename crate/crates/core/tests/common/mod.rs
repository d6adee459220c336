//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numerical kernels.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Fractional bits of the fixed-point reals below.
pub const BITS: u64 = 640;

/// Fixed-point real `value / 2^BITS`.
#[derive(Clone, Debug)]
pub struct Fx(pub BigInt);

impl Fx {
    pub fn one() -> Self {
        Fx(BigInt::one() << BITS)
    }

    pub fn zero() -> Self {
        Fx(BigInt::zero())
    }

    /// Exact conversion of a finite double.
    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        let mut v = BigInt::from(mant);
        let shift = e + BITS as i64;
        v = if shift >= 0 { v << shift as u64 } else { v >> (-shift) as u64 };
        Fx(if x < 0.0 { -v } else { v })
    }

    pub fn from_int(n: i64) -> Self {
        Fx(BigInt::from(n) << BITS)
    }

    pub fn to_f64(&self) -> f64 {
        let neg = self.0.is_negative();
        let mag = self.0.abs();
        let top = mag.bits();
        // Keep 64 significant bits and scale back.
        let drop = top.saturating_sub(64);
        let head = (&mag >> drop).to_u64().unwrap() as f64;
        let v = head * 2f64.powi(drop as i32 - BITS as i32);
        if neg {
            -v
        } else {
            v
        }
    }

    pub fn add(&self, o: &Fx) -> Fx {
        Fx(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Fx) -> Fx {
        Fx(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Fx) -> Fx {
        Fx((&self.0 * &o.0) >> BITS)
    }

    pub fn div(&self, o: &Fx) -> Fx {
        Fx((&self.0 << BITS) / &o.0)
    }

    pub fn scale(&self, k: &BigInt) -> Fx {
        Fx(&self.0 * k)
    }

    pub fn div_int(&self, k: &BigInt) -> Fx {
        Fx(&self.0 / k)
    }

    pub fn sqrt(&self) -> Fx {
        Fx((&self.0 << BITS).sqrt())
    }

    /// Taylor series; fine for the moderate arguments used in tests.
    pub fn sin_cos(&self) -> (Fx, Fx) {
        let x2 = self.mul(self);
        let mut term = self.clone();
        let mut sin = Fx::zero();
        let mut k = 1i64;
        while !term.0.is_zero() {
            sin = sin.add(&term);
            term = Fx(-(term.mul(&x2).0) / BigInt::from((k + 1) * (k + 2)));
            k += 2;
        }
        let mut term = Fx::one();
        let mut cos = Fx::zero();
        let mut k = 0i64;
        while !term.0.is_zero() {
            cos = cos.add(&term);
            term = Fx(-(term.mul(&x2).0) / BigInt::from((k + 1) * (k + 2)));
            k += 2;
        }
        (sin, cos)
    }
}

fn factorials(n: usize) -> Vec<BigInt> {
    let mut f = vec![BigInt::one()];
    for k in 1..=n {
        let next = &f[k - 1] * BigInt::from(k);
        f.push(next);
    }
    f
}

/// `d^(j)_{m',m}(theta)` from Wigner's explicit sum, evaluated in fixed
/// point. Rows and columns in descending `m`. `twice_j = 2j`.
pub fn wigner_d_formula(twice_j: usize, theta: f64) -> Vec<Vec<f64>> {
    let half = Fx::from_f64(theta).div_int(&BigInt::from(2));
    let (s, c) = half.sin_cos();
    let n = twice_j;
    let fact = factorials(n + 1);
    let mut cpow = vec![Fx::one()];
    let mut spow = vec![Fx::one()];
    for k in 1..=2 * n {
        cpow.push(cpow[k - 1].mul(&c));
        spow.push(spow[k - 1].mul(&s));
    }
    let dim = n + 1;
    let mut out = vec![vec![0.0; dim]; dim];
    // u = j + m, integer in [0, n]
    for (row, out_row) in out.iter_mut().enumerate() {
        let up = n - row; // j + m'
        let dp = row; // j - m'
        for (col, out_cell) in out_row.iter_mut().enumerate() {
            let u = n - col; // j + m
            let d = col; // j - m
            let prod = &fact[up] * &fact[dp] * &fact[u] * &fact[d];
            let root = Fx(prod << BITS).sqrt();
            let mut sum = Fx::zero();
            // m' - m = up - u
            let diff = up as i64 - u as i64;
            for k in 0..=n {
                let k = k as i64;
                let a = u as i64 - k; // j + m - s
                let b = diff + k; // m' - m + s
                let e = dp as i64 - k; // j - m' - s
                if a < 0 || b < 0 || e < 0 {
                    continue;
                }
                let cexp = (n as i64 - diff - 2 * k) as usize; // 2j + m - m' - 2s
                let sexp = (diff + 2 * k) as usize; // m' - m + 2s
                let den = &fact[a as usize] * &fact[k as usize] * &fact[b as usize] * &fact[e as usize];
                let mut term = root.mul(&cpow[cexp]).mul(&spow[sexp]).div_int(&den);
                if (diff + k).rem_euclid(2) == 1 {
                    term.0 = -term.0;
                }
                sum = sum.add(&term);
            }
            *out_cell = sum.to_f64();
        }
    }
    out
}

/// Dense complex square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub a: Vec<Complex64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.a[i * self.n + j]
    }

    pub fn mul(&self, o: &Dense) -> Dense {
        let n = self.n;
        let mut out = Dense::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * n + k];
                for j in 0..n {
                    out.a[i * n + j] += x * o.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn scaled(&self, z: Complex64) -> Dense {
        Dense { n: self.n, a: self.a.iter().map(|x| x * z).collect() }
    }

    pub fn add(&self, o: &Dense) -> Dense {
        Dense { n: self.n, a: self.a.iter().zip(&o.a).map(|(x, y)| x + y).collect() }
    }

    pub fn kron(&self, o: &Dense) -> Dense {
        let n = self.n * o.n;
        let mut out = Dense::zeros(n);
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..o.n {
                    for l in 0..o.n {
                        out.a[(i * o.n + k) * n + j * o.n + l] = self.at(i, j) * o.at(k, l);
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }

    fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.at(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring with a Taylor series.
    pub fn expm(&self) -> Dense {
        let mut squarings = 0;
        while self.norm1() / 2f64.powi(squarings) > 0.25 {
            squarings += 1;
        }
        let x = self.scaled(Complex64::new(2f64.powi(-squarings), 0.0));
        let mut sum = Dense::identity(self.n);
        let mut term = Dense::identity(self.n);
        for k in 1..30 {
            term = term.mul(&x).scaled(Complex64::new(1.0 / k as f64, 0.0));
            sum = sum.add(&term);
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        sum
    }
}

/// Spin operators `(J_x, J_y, J_z)` in the descending-`m` basis, built from
/// the ladder matrix elements.
pub fn spin_ops(twice_j: usize) -> (Dense, Dense, Dense) {
    let j = twice_j as f64 / 2.0;
    let n = twice_j + 1;
    let mut jp = Dense::zeros(n);
    let mut jz = Dense::zeros(n);
    for i in 0..n {
        let m = j - i as f64;
        jz.a[i * n + i] = Complex64::new(m, 0.0);
        if i >= 1 {
            // <m+1| J_+ |m>, row i-1 holds m+1
            jp.a[(i - 1) * n + i] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let mut jm = Dense::zeros(n);
    for i in 0..n {
        for k in 0..n {
            jm.a[k * n + i] = jp.a[i * n + k].conj();
        }
    }
    let jx = jp.add(&jm).scaled(Complex64::new(0.5, 0.0));
    let jy = jp.add(&jm.scaled(Complex64::new(-1.0, 0.0))).scaled(Complex64::new(0.0, -0.5));
    (jx, jy, jz)
}

/// Full Floquet matrix `exp[-i a (S_z + L_z)] exp[-i c S_x L_x]`.
pub fn dense_floquet(twice_s: usize, twice_l: usize, a: f64, c: f64) -> Dense {
    let (sx, _, sz) = spin_ops(twice_s);
    let (lx, _, lz) = spin_ops(twice_l);
    let is = Dense::identity(sz.n);
    let il = Dense::identity(lz.n);
    let kick = sx.kron(&lx).scaled(Complex64::new(0.0, -c)).expm();
    let free = sz.kron(&il).add(&is.kron(&lz)).scaled(Complex64::new(0.0, -a)).expm();
    free.mul(&kick)
}

/// Extended-precision kicked map on unit vectors, renormalizing at the end
/// like the production step.
pub fn map_step_exact(x: [f64; 6], a: f64, gamma: f64, r: f64) -> [f64; 6] {
    let [sx, sy, sz, lx, ly, lz] = x.map(Fx::from_f64);
    let (g, rr) = (Fx::from_f64(gamma), Fx::from_f64(r));
    let (sin_s, cos_s) = g.mul(&rr).mul(&lx).sin_cos();
    let (sin_l, cos_l) = g.mul(&sx).sin_cos();
    let sy_k = sy.mul(&cos_s).sub(&sz.mul(&sin_s));
    let sz_k = sz.mul(&cos_s).add(&sy.mul(&sin_s));
    let ly_k = ly.mul(&cos_l).sub(&lz.mul(&sin_l));
    let lz_k = lz.mul(&cos_l).add(&ly.mul(&sin_l));
    let (sa, ca) = Fx::from_f64(a).sin_cos();
    let out = [
        sx.mul(&ca).sub(&sy_k.mul(&sa)),
        sy_k.mul(&ca).add(&sx.mul(&sa)),
        sz_k,
        lx.mul(&ca).sub(&ly_k.mul(&sa)),
        ly_k.mul(&ca).add(&lx.mul(&sa)),
        lz_k,
    ];
    let ns = out[0].mul(&out[0]).add(&out[1].mul(&out[1])).add(&out[2].mul(&out[2])).sqrt();
    let nl = out[3].mul(&out[3]).add(&out[4].mul(&out[4])).add(&out[5].mul(&out[5])).sqrt();
    let mut res = [0.0; 6];
    for i in 0..3 {
        res[i] = out[i].div(&ns).to_f64();
        res[i + 3] = out[i + 3].div(&nl).to_f64();
    }
    res
}

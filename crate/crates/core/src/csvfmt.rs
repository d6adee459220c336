//! Number formatting shared by every CSV writer.

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Magnetic quantum number (integer or half-integer).
pub fn fmt_m(m: f64) -> String {
    format!("{}", m + 0.0)
}

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Symmetric Hann taper `w[k] = 0.5 (1 − cos(2πk/(n−1)))`, both endpoints exactly 0.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Argument(format!("hann window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    let mut w: Vec<f64> = (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / denom).cos()))
        .collect();
    // Mirror the first half so symmetry is exact and the endpoints are 0.0
    // rather than cos rounding residue.
    w[0] = 0.0;
    for k in 0..n / 2 {
        w[n - 1 - k] = w[k];
    }
    Ok(w)
}

//! Digital Butterworth design by the bilinear transform with frequency
//! pre-warping, realized as second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    HighPass,
    LowPass,
}

/// One biquad `[b0, b1, b2, a0 = 1, a1, a2]`.
pub type Section = [f64; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct IirFilter {
    /// Feed-forward coefficients of the full transfer function, length order + 1.
    pub b: Vec<f64>,
    /// Feedback coefficients, `a[0] = 1`.
    pub a: Vec<f64>,
    pub sections: Vec<Section>,
    pub poles: Vec<Complex64>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub kind: FilterKind,
    pub sample_rate: f64,
}

pub fn design_butterworth(
    order: usize,
    cutoff_hz: f64,
    sample_rate: f64,
    kind: FilterKind,
) -> Result<IirFilter> {
    if !(1..=12).contains(&order) {
        return Err(Error::Design(format!("order {order} outside 1..=12")));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::Design(format!("sample rate {sample_rate} must be > 0")));
    }
    let nyquist = sample_rate / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Design(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)"
        )));
    }
    let k = 2.0 * sample_rate;
    let warped = k * (PI * cutoff_hz / sample_rate).tan();
    let n = order as f64;
    let poles: Vec<Complex64> = (0..order)
        .map(|i| {
            let proto = Complex64::from_polar(1.0, PI * (2.0 * i as f64 + n + 1.0) / (2.0 * n));
            let s = match kind {
                FilterKind::LowPass => proto * warped,
                FilterKind::HighPass => warped / proto,
            };
            (k + s) / (k - s)
        })
        .collect();
    // All zeros sit at z = -1 (low-pass) or z = +1 (high-pass).
    let zero = match kind {
        FilterKind::LowPass => -1.0,
        FilterKind::HighPass => 1.0,
    };

    let mut sections = Vec::new();
    let mut used = vec![false; order];
    for i in 0..order {
        if used[i] {
            continue;
        }
        used[i] = true;
        let p = poles[i];
        if p.im.abs() < 1e-12 {
            sections.push([1.0, -zero, 0.0, 1.0, -p.re, 0.0]);
            continue;
        }
        let j = (0..order)
            .find(|&j| !used[j] && (poles[j] - p.conj()).norm() < 1e-9)
            .ok_or_else(|| Error::Design("unpaired complex pole".into()))?;
        used[j] = true;
        sections.push([1.0, -2.0 * zero, 1.0, 1.0, -2.0 * p.re, p.norm_sqr()]);
    }

    // Unit gain at DC (low-pass) or Nyquist (high-pass).
    let z_ref = Complex64::new(-zero, 0.0);
    let raw: Complex64 = sections.iter().map(|s| section_response(s, z_ref)).product();
    let gain = 1.0 / raw.norm();
    if let Some(first) = sections.first_mut() {
        for c in &mut first[..3] {
            *c *= gain;
        }
    }

    let (mut b, mut a) = (vec![1.0], vec![1.0]);
    for s in &sections {
        b = poly_mul(&b, &s[..3]);
        a = poly_mul(&a, &s[3..]);
    }
    b.truncate(order + 1);
    a.truncate(order + 1);

    Ok(IirFilter {
        b,
        a,
        sections,
        poles,
        order,
        cutoff_hz,
        kind,
        sample_rate,
    })
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn section_response(s: &Section, z: Complex64) -> Complex64 {
    let zi = z.inv();
    let num = s[0] + zi * (s[1] + zi * s[2]);
    let den = s[3] + zi * (s[4] + zi * s[5]);
    num / den
}

impl IirFilter {
    /// `H(e^{j2πf/fs})` from the polynomial coefficients.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let zi = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sample_rate);
        let eval = |c: &[f64]| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * zi + v);
        eval(&self.b) / eval(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.norm() < 1.0)
    }
}

/// Causal single-pass filtering through the cascaded sections
/// (direct form II transposed).
pub fn filter_channel(filter: &IirFilter, signal: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Data("cannot filter an empty signal".into()));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite sample at index {i}")));
    }
    let mut out = signal.to_vec();
    for s in &filter.sections {
        let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in out.iter_mut() {
            let x = *v;
            let y = b0 * x + z1;
            z1 = b1 * x - a1 * y + z2;
            z2 = b2 * x - a2 * y;
            *v = y;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_is_half_power() {
        let f = design_butterworth(3, 30.0, 160.0, FilterKind::HighPass).unwrap();
        let mag = f.response(30.0).norm();
        assert!((mag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(f.response(0.0).norm() < 1e-10);
        assert!((f.response(80.0).norm() - 1.0).abs() < 1e-12);
        assert_eq!(f.a[0], 1.0);
        assert_eq!(f.b.len(), 4);
        assert_eq!(f.a.len(), 4);
        assert!(f.is_stable());
    }

    #[test]
    fn low_pass_gains() {
        let f = design_butterworth(3, 30.0, 160.0, FilterKind::LowPass).unwrap();
        assert!((f.response(0.0).norm() - 1.0).abs() < 1e-12);
        assert!(f.response(80.0).norm() < 1e-10);
    }

    #[test]
    fn nyquist_boundary() {
        assert!(matches!(
            design_butterworth(3, 80.0, 160.0, FilterKind::LowPass),
            Err(Error::Design(_))
        ));
        assert!(design_butterworth(3, 0.0, 160.0, FilterKind::HighPass).is_err());
    }

    #[test]
    fn zero_in_zero_out_and_errors() {
        let f = design_butterworth(3, 30.0, 160.0, FilterKind::HighPass).unwrap();
        let y = filter_channel(&f, &[0.0; 50]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(filter_channel(&f, &[]).is_err());
        assert!(matches!(filter_channel(&f, &[1.0, f64::NAN]), Err(Error::Data(_))));
    }

    #[test]
    fn dc_offset_sine_steady_state() {
        let f = design_butterworth(3, 30.0, 160.0, FilterKind::HighPass).unwrap();
        let fs = 160.0;
        let x: Vec<f64> = (0..4000)
            .map(|n| 5.0 + (2.0 * PI * 40.0 * n as f64 / fs).sin())
            .collect();
        let y = filter_channel(&f, &x).unwrap();
        let tail = &y[2000..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean.abs() < 1e-3, "dc residue {mean}");
        let amp = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let expect = f.response(40.0).norm();
        assert!((amp - expect).abs() / expect < 0.05, "{amp} vs {expect}");
        assert!(expect > 0.95);
    }
}

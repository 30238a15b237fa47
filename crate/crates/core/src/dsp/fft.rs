//! Discrete Fourier transform of real input.
//!
//! Power-of-two sizes use an iterative radix-2 decimation-in-time kernel.
//! Any other size goes through Bluestein's chirp-z identity, which re-expresses
//! the length-n DFT as a circular convolution evaluated with power-of-two FFTs.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `X[k] = Σ x[n]·e^{−j2πkn/nfft}` with `x` zero-padded to `nfft`.
pub fn fft(x: &[f64], nfft: usize) -> Result<Vec<Complex64>> {
    FftPlan::new(nfft)?.transform(x)
}

/// Precomputed tables for repeated transforms of one size.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein {
        inner: Radix2,
        chirp: Vec<Complex64>,
        /// Transformed conjugate-chirp convolution kernel.
        kernel: Vec<Complex64>,
    },
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("nfft must be positive".into()));
        }
        let kind = if n.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(n))
        } else {
            let m = (2 * n - 1).next_power_of_two();
            let inner = Radix2::new(m);
            // chirp[k] = e^{−jπk²/n}; k² is reduced mod 2n to keep the angle small.
            let chirp: Vec<Complex64> = (0..n)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                    Complex64::from_polar(1.0, -PI * k2 / n as f64)
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..n {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.run(&mut kernel, false);
            PlanKind::Bluestein { inner, chirp, kernel }
        };
        Ok(FftPlan { n, kind })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.len() > self.n {
            return Err(Error::Argument(format!(
                "nfft = {} must be at least the input length {}",
                self.n,
                x.len()
            )));
        }
        let zero = Complex64::new(0.0, 0.0);
        match &self.kind {
            PlanKind::Radix2(r) => {
                let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                buf.resize(self.n, zero);
                r.run(&mut buf, false);
                Ok(buf)
            }
            PlanKind::Bluestein { inner, chirp, kernel } => {
                let mut a = vec![zero; inner.n];
                for (k, &v) in x.iter().enumerate() {
                    a[k] = chirp[k] * v;
                }
                inner.run(&mut a, false);
                for (u, v) in a.iter_mut().zip(kernel) {
                    *u *= v;
                }
                inner.run(&mut a, true);
                let scale = 1.0 / inner.n as f64;
                Ok((0..self.n).map(|k| a[k] * scale * chirp[k]).collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Radix2 {
    n: usize,
    /// `e^{−j2πk/n}` for `k < n/2`; stage of length `len` uses every `n/len`-th.
    twiddles: Vec<Complex64>,
    swaps: Vec<(usize, usize)>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let swaps = (0..n)
            .filter_map(|i| {
                let j = if n > 1 { i.reverse_bits() >> (usize::BITS - bits) } else { 0 };
                (j > i).then_some((i, j))
            })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Radix2 { n, twiddles, swaps }
    }

    /// Unnormalized; `inverse` conjugates the twiddles.
    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.n);
        for &(i, j) in &self.swaps {
            buf.swap(i, j);
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn impulse_and_constant() {
        let x = fft(&[1.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert!(x.iter().all(|&v| close(v, Complex64::new(1.0, 0.0))));
        let x = fft(&[1.0; 4], 4).unwrap();
        assert!(close(x[0], Complex64::new(4.0, 0.0)));
        assert!(x[1..].iter().all(|&v| v.norm() < 1e-12));
    }

    #[test]
    fn zero_padding_and_argument_errors() {
        let x = fft(&[1.0, 1.0], 4).unwrap();
        assert!(close(x[2], Complex64::new(0.0, 0.0)));
        assert!(fft(&[1.0; 5], 4).is_err());
        assert!(fft(&[], 0).is_err());
    }

    #[test]
    fn non_power_of_two_impulse() {
        let mut x = vec![0.0; 96];
        x[0] = 1.0;
        let s = fft(&x, 96).unwrap();
        assert!(s.iter().all(|&v| close(v, Complex64::new(1.0, 0.0))));
    }
}

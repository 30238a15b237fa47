//! Welch power spectral density and band selection.

use serde::{Deserialize, Serialize};

use crate::dsp::fft::FftPlan;
use crate::dsp::window::hann_window;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchConfig {
    /// Samples per segment (24 = 0.15 s at 160 Hz).
    pub segment_len: usize,
    pub overlap: f64,
    /// Zero-padded transform length; resolution is `sample_rate / nfft`.
    pub nfft: usize,
    pub sample_rate: f64,
    /// Inclusive feature band in Hz.
    pub band: [f64; 2],
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            segment_len: 24,
            overlap: 0.5,
            nfft: 96,
            sample_rate: 160.0,
            band: [8.0, 12.0],
        }
    }
}

impl WelchConfig {
    pub fn step(&self) -> usize {
        ((self.segment_len as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 || self.nfft < self.segment_len {
            return Err(Error::Argument(format!(
                "need 2 <= segment_len ({}) <= nfft ({})",
                self.segment_len, self.nfft
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) || !(self.sample_rate > 0.0) {
            return Err(Error::Argument("overlap must be in [0, 1) and sample rate > 0".into()));
        }
        if !(self.band[0] <= self.band[1]) {
            return Err(Error::Argument(format!("band {:?} is reversed", self.band)));
        }
        Ok(())
    }
}

/// One-sided power spectral density.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub resolution: f64,
    pub segment_count: usize,
}

/// Averages Hann-windowed, zero-padded periodograms of overlapping segments.
/// Each periodogram is `|X[k]|² / (fs · Σw²)`, with interior bins doubled.
pub fn welch_psd(signal: &[f64], cfg: &WelchConfig) -> Result<Psd> {
    cfg.validate()?;
    let seg = cfg.segment_len;
    if signal.len() < seg {
        return Err(Error::Data(format!(
            "signal of {} samples is shorter than one {seg}-sample segment",
            signal.len()
        )));
    }
    let window = hann_window(seg)?;
    let plan = FftPlan::new(cfg.nfft)?;
    let norm = cfg.sample_rate * window.iter().map(|w| w * w).sum::<f64>();
    let bins = cfg.nfft / 2 + 1;
    let step = cfg.step();
    let mut power = vec![0.0; bins];
    let mut count = 0;
    let mut buf = vec![0.0; seg];
    let mut start = 0;
    while start + seg <= signal.len() {
        for ((b, x), w) in buf.iter_mut().zip(&signal[start..start + seg]).zip(&window) {
            *b = x * w;
        }
        let spec = plan.transform(&buf)?;
        for (k, p) in power.iter_mut().enumerate() {
            let mut v = spec[k].norm_sqr() / norm;
            let is_nyquist = cfg.nfft % 2 == 0 && k == cfg.nfft / 2;
            if k != 0 && !is_nyquist {
                v *= 2.0;
            }
            *p += v;
        }
        count += 1;
        start += step;
    }
    let inv = 1.0 / count as f64;
    power.iter_mut().for_each(|p| *p *= inv);
    let resolution = cfg.sample_rate / cfg.nfft as f64;
    Ok(Psd {
        frequencies: (0..bins).map(|k| k as f64 * resolution).collect(),
        power,
        resolution,
        segment_count: count,
    })
}

const BAND_TOL: f64 = 1e-9;

/// Indices of bins whose centre frequency lies in `[lo, hi]`.
pub fn band_bins(psd: &Psd, band: [f64; 2]) -> Result<Vec<usize>> {
    let top = *psd.frequencies.last().unwrap_or(&0.0);
    if band[0] > band[1] || band[0] > top + BAND_TOL || band[1] < -BAND_TOL {
        return Err(Error::Argument(format!(
            "band {band:?} Hz lies outside the PSD range [0, {top}] Hz"
        )));
    }
    let idx: Vec<usize> = psd
        .frequencies
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= band[0] - BAND_TOL && f <= band[1] + BAND_TOL)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Argument(format!("no PSD bin falls inside {band:?} Hz")));
    }
    Ok(idx)
}

/// Power at every bin inside the inclusive band.
pub fn alpha_band_features(psd: &Psd, band: [f64; 2]) -> Result<Vec<f64>> {
    Ok(band_bins(psd, band)?
        .into_iter()
        .map(|i| psd.power[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn segment_count_and_resolution() {
        let psd = welch_psd(&vec![0.0; 656], &WelchConfig::default()).unwrap();
        assert_eq!(psd.segment_count, 53);
        assert_eq!(psd.power.len(), 49);
        assert!((psd.resolution - 160.0 / 96.0).abs() < 1e-15);
        assert!(psd.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn ten_hz_peak() {
        let x: Vec<f64> = (0..656)
            .map(|n| (2.0 * PI * 10.0 * n as f64 / 160.0).sin())
            .collect();
        let psd = welch_psd(&x, &WelchConfig::default()).unwrap();
        let argmax = (0..psd.power.len())
            .max_by(|&a, &b| psd.power[a].total_cmp(&psd.power[b]))
            .unwrap();
        assert_eq!(argmax, 6);
        assert!((psd.frequencies[argmax] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_bins() {
        let psd = welch_psd(&vec![1.0; 96], &WelchConfig::default()).unwrap();
        let idx = band_bins(&psd, [8.0, 12.0]).unwrap();
        assert_eq!(idx, vec![5, 6, 7]);
        assert_eq!(alpha_band_features(&psd, [0.0, 80.0]).unwrap().len(), 49);
        assert!(matches!(
            alpha_band_features(&psd, [200.0, 300.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            welch_psd(&[1.0; 10], &WelchConfig::default()),
            Err(Error::Data(_))
        ));
    }
}

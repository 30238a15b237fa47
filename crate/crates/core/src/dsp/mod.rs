//! Signal processing: Butterworth filtering, Hann window, FFT, Welch PSD and
//! the alpha-band feature vectors fed to the MLP.

pub mod butterworth;
pub mod fft;
pub mod welch;
pub mod window;

use std::io::Write;
use std::path::Path;

pub use butterworth::{design_butterworth, filter_channel, FilterKind, IirFilter};
pub use fft::{fft, FftPlan};
pub use welch::{alpha_band_features, band_bins, welch_psd, Psd, WelchConfig};
pub use window::hann_window;

use crate::edf::{Epoch, Label, Recording};
use crate::error::{Error, Result};
use crate::par;

/// Filters every channel of `rec` over its full length, in place.
pub fn filter_recording(rec: &mut Recording, filter: &IirFilter) -> Result<()> {
    if (filter.sample_rate - rec.sample_rate).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "filter designed for {} Hz, recording is {} Hz",
            filter.sample_rate, rec.sample_rate
        )));
    }
    let out = par::map_indices(rec.samples.len(), |c| filter_channel(filter, &rec.samples[c]));
    for (dst, res) in rec.samples.iter_mut().zip(out) {
        *dst = res?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    /// Channel-major: all band bins of channel 0, then channel 1, ...
    pub values: Vec<f64>,
    pub label: Label,
}

pub fn epoch_to_features(epoch: &Epoch, cfg: &WelchConfig) -> Result<FeatureVector> {
    let mut values = Vec::new();
    for c in 0..epoch.channels {
        let signal: Vec<f64> = epoch.channel(c).iter().map(|&v| v as f64).collect();
        let psd = welch_psd(&signal, cfg)?;
        values.extend(alpha_band_features(&psd, cfg.band)?);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite feature {i} for S{:03}R{:02}@{}",
            epoch.subject_id, epoch.run_id, epoch.onset_sample
        )));
    }
    Ok(FeatureVector {
        values,
        label: epoch.label,
    })
}

pub fn epochs_to_features(epochs: &[Epoch], cfg: &WelchConfig) -> Result<Vec<FeatureVector>> {
    par::map_indices(epochs.len(), |i| epoch_to_features(&epochs[i], cfg))
        .into_iter()
        .collect()
}

/// Column names `ch{c}_f{freq}` matching the layout of [`epoch_to_features`].
pub fn feature_names(channels: usize, cfg: &WelchConfig) -> Result<Vec<String>> {
    let probe = welch_psd(&vec![0.0; cfg.segment_len], cfg)?;
    let bins = band_bins(&probe, cfg.band)?;
    let freqs: Vec<f64> = bins.iter().map(|&b| probe.frequencies[b]).collect();
    Ok((0..channels)
        .flat_map(|c| freqs.iter().map(move |f| format!("ch{c}_f{f:.2}")))
        .collect())
}

/// One row per vector, final column the label name.
pub fn write_features_csv(
    w: &mut impl Write,
    names: &[String],
    features: &[FeatureVector],
) -> Result<()> {
    let err = |e| Error::io("<csv>", e);
    writeln!(w, "{},label", names.join(",")).map_err(err)?;
    for (i, f) in features.iter().enumerate() {
        if f.values.len() != names.len() {
            return Err(Error::Shape(format!(
                "row {i} has {} values, header has {}",
                f.values.len(),
                names.len()
            )));
        }
        let row: Vec<String> = f.values.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{},{}", row.join(","), f.label.name()).map_err(err)?;
    }
    Ok(())
}

pub fn save_features_csv(path: &Path, names: &[String], features: &[FeatureVector]) -> Result<()> {
    let mut buf = Vec::new();
    write_features_csv(&mut buf, names, features)?;
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn epoch_with(f: impl Fn(usize, usize) -> f32) -> Epoch {
        let (channels, len) = (64, 656);
        let mut data = Vec::with_capacity(channels * len);
        for c in 0..channels {
            data.extend((0..len).map(|t| f(c, t)));
        }
        Epoch {
            channels,
            len,
            data,
            label: Label::Right,
            subject_id: 1,
            run_id: 4,
            onset_sample: 0,
        }
    }

    #[test]
    fn feature_length_and_zero_epoch() {
        let fv = epoch_to_features(&epoch_with(|_, _| 0.0), &WelchConfig::default()).unwrap();
        assert_eq!(fv.values.len(), 192);
        assert!(fv.values.iter().all(|&v| v == 0.0));
        assert_eq!(fv.label, Label::Right);
    }

    #[test]
    fn single_channel_energy_stays_in_its_slots() {
        let e = epoch_with(|c, t| {
            if c == 0 {
                (2.0 * PI * 10.0 * t as f64 / 160.0).sin() as f32
            } else {
                0.0
            }
        });
        let fv = epoch_to_features(&e, &WelchConfig::default()).unwrap();
        assert!(fv.values[..3].iter().all(|&v| v > 0.0));
        assert!(fv.values[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn names_and_csv() {
        let names = feature_names(2, &WelchConfig::default()).unwrap();
        assert_eq!(names, ["ch0_f8.33", "ch0_f10.00", "ch0_f11.67", "ch1_f8.33", "ch1_f10.00", "ch1_f11.67"]);
        let rows = vec![FeatureVector { values: vec![1.0; 6], label: Label::Left }];
        let mut out = Vec::new();
        write_features_csv(&mut out, &names, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().ends_with("ch1_f11.67,label"));
        assert!(lines.next().unwrap().ends_with(",Left"));
        let bad = vec![FeatureVector { values: vec![1.0; 5], label: Label::Left }];
        assert!(write_features_csv(&mut Vec::new(), &names, &bad).is_err());
    }
}

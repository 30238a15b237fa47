//! Class-separable EEG-shaped epochs: Gaussian background on every channel
//! plus one class-specific source rhythm projected in phase onto a block of
//! channels. Left cues carry a 10 Hz rhythm (inside the alpha band), Right
//! cues a 22 Hz one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edf::{Epoch, Label, EEGMMI_CHANNELS, EEGMMI_RATE, EPOCH_LEN};
use crate::error::{Error, Result};
use crate::par;

pub fn class_frequency(label: Label) -> f64 {
    match label {
        Label::Left => 10.0,
        Label::Right => 22.0,
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub epochs: usize,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub noise_uv: f64,
    pub rhythm_uv: f64,
    pub active_channels: usize,
    /// Epochs are spread round-robin over this many pseudo-subjects.
    pub subjects: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            epochs: 240,
            channels: EEGMMI_CHANNELS,
            samples: EPOCH_LEN,
            sample_rate: EEGMMI_RATE,
            noise_uv: 10.0,
            rhythm_uv: 8.0,
            active_channels: 8,
            subjects: 12,
            seed: 0,
        }
    }
}

/// Labels alternate Left/Right, so the set is balanced for even counts.
pub fn synthetic_epochs(cfg: &SyntheticConfig) -> Result<Vec<Epoch>> {
    if cfg.epochs == 0 || cfg.channels == 0 || cfg.samples == 0 || cfg.subjects == 0 {
        return Err(Error::Argument("synthetic dataset dimensions must be positive".into()));
    }
    if cfg.active_channels > cfg.channels {
        return Err(Error::Argument(format!(
            "{} active channels out of {}",
            cfg.active_channels, cfg.channels
        )));
    }
    let noise = Normal::new(0.0, cfg.noise_uv).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(par::map_indices(cfg.epochs, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let label = Label::ALL[i % 2];
        let freq = class_frequency(label);
        let mut data = Vec::with_capacity(cfg.channels * cfg.samples);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for c in 0..cfg.channels {
            let amp = if c < cfg.active_channels { cfg.rhythm_uv } else { 0.0 };
            data.extend((0..cfg.samples).map(|t| {
                let s = amp * (std::f64::consts::TAU * freq * t as f64 / cfg.sample_rate + phase).sin();
                (s + noise.sample(&mut rng)) as f32
            }));
        }
        Epoch {
            channels: cfg.channels,
            len: cfg.samples,
            data,
            label,
            subject_id: (i as u32 % cfg.subjects) + 1,
            run_id: 4,
            onset_sample: i * cfg.samples,
        }
    }))
}

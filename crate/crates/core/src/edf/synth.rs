//! Synthetic EEGMMI-shaped EDF+ recordings for tests, benches and offline
//! demos: 64 channels at 160 Hz, 1-s data records, and the task-run cue
//! schedule (rest 4.2 s, cue 4.1 s, 15 cues per run).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edf::annotations::encode_tals;
use crate::edf::parse::{EdfHeader, SignalHeader, ANNOTATION_LABEL};
use crate::edf::{record_path, write_edf, AnnotationCode, AnnotationEvent, Recording};
use crate::error::{Error, Result};
use crate::synthetic::class_frequency;

/// The 64 EEGMMI electrode labels in file order.
pub const CHANNEL_LABELS: [&str; 64] = [
    "Fc5.", "Fc3.", "Fc1.", "Fcz.", "Fc2.", "Fc4.", "Fc6.", "C5..", "C3..", "C1..", "Cz..",
    "C2..", "C4..", "C6..", "Cp5.", "Cp3.", "Cp1.", "Cpz.", "Cp2.", "Cp4.", "Cp6.", "Fp1.",
    "Fpz.", "Fp2.", "Af7.", "Af3.", "Afz.", "Af4.", "Af8.", "F7..", "F5..", "F3..", "F1..",
    "Fz..", "F2..", "F4..", "F6..", "F8..", "Ft7.", "Ft8.", "T7..", "T8..", "T9..", "T10.",
    "Tp7.", "Tp8.", "P7..", "P5..", "P3..", "P1..", "Pz..", "P2..", "P4..", "P6..", "P8..",
    "Po7.", "Po3.", "Poz.", "Po4.", "Po8.", "O1..", "Oz..", "O2..", "Iz..",
];

const RATE: usize = 160;
const RECORDS: usize = 125;
const ANNOT_SPR: usize = 60;
const REST_S: f64 = 4.2;
const CUE_S: f64 = 4.1;
const CUES: usize = 15;

#[derive(Clone, Debug)]
pub struct SynthRecord {
    pub subject: u32,
    pub run: u32,
    pub seed: u64,
    /// Background noise standard deviation, µV.
    pub noise_uv: f64,
    /// Amplitude of the class rhythm during cues, µV.
    pub rhythm_uv: f64,
    /// Channels that carry the class rhythm.
    pub active_channels: usize,
}

impl SynthRecord {
    pub fn new(subject: u32, run: u32, seed: u64) -> Self {
        SynthRecord {
            subject,
            run,
            seed,
            noise_uv: 10.0,
            rhythm_uv: 8.0,
            active_channels: 8,
        }
    }
}

fn pad(s: &str, width: usize) -> String {
    format!("{s:<width$}")
}

/// Alternating rest/cue schedule; cue sides drawn from `rng`.
pub fn cue_schedule(rng: &mut impl Rng) -> Vec<AnnotationEvent> {
    let mut events = Vec::with_capacity(2 * CUES);
    let mut t = 0.0;
    for _ in 0..CUES {
        events.push(AnnotationEvent { onset: t, duration: REST_S, code: AnnotationCode::T0 });
        t = round_ms(t + REST_S);
        let code = if rng.gen_bool(0.5) { AnnotationCode::T1 } else { AnnotationCode::T2 };
        events.push(AnnotationEvent { onset: t, duration: CUE_S, code });
        t = round_ms(t + CUE_S);
    }
    events
}

fn round_ms(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn synth_recording(spec: &SynthRecord) -> Result<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ ((spec.subject as u64) << 32) ^ ((spec.run as u64) << 16),
    );
    let events = cue_schedule(&mut rng);
    let n = RATE * RECORDS;
    let noise = Normal::new(0.0, spec.noise_uv).map_err(|e| Error::Argument(e.to_string()))?;
    let mut samples: Vec<Vec<f64>> = (0..CHANNEL_LABELS.len())
        .map(|_| (0..n).map(|_| noise.sample(&mut rng)).collect())
        .collect();
    for e in &events {
        let Some(label) = e.code.label() else { continue };
        let freq = class_frequency(label);
        let start = (e.onset * RATE as f64).round() as usize;
        let len = (e.duration * RATE as f64).round() as usize;
        for ch in samples.iter_mut().take(spec.active_channels) {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for k in 0..len.min(n - start) {
                let t = k as f64 / RATE as f64;
                ch[start + k] += spec.rhythm_uv * (std::f64::consts::TAU * freq * t + phase).sin();
            }
        }
    }

    let data_signal = |label: &str| SignalHeader {
        label: pad(label, 16),
        transducer: pad("", 80),
        physical_dimension: pad("uV", 8),
        physical_min_raw: pad("-8092", 8),
        physical_max_raw: pad("8092", 8),
        digital_min_raw: pad("-32768", 8),
        digital_max_raw: pad("32767", 8),
        prefilter: pad("HP:0Hz LP:0Hz N:0Hz", 80),
        samples_per_record_raw: pad(&RATE.to_string(), 8),
        reserved: pad("", 32),
        physical_min: -8092.0,
        physical_max: 8092.0,
        digital_min: -32768,
        digital_max: 32767,
        samples_per_record: RATE,
    };
    let mut signals: Vec<SignalHeader> = CHANNEL_LABELS.iter().map(|l| data_signal(l)).collect();
    signals.push(SignalHeader {
        label: pad(ANNOTATION_LABEL, 16),
        samples_per_record_raw: pad(&ANNOT_SPR.to_string(), 8),
        samples_per_record: ANNOT_SPR,
        physical_dimension: pad("", 8),
        physical_min_raw: pad("-1", 8),
        physical_max_raw: pad("1", 8),
        physical_min: -1.0,
        physical_max: 1.0,
        ..data_signal("")
    });

    let mut annotation_records = Vec::with_capacity(RECORDS);
    for r in 0..RECORDS {
        let in_record: Vec<AnnotationEvent> = events
            .iter()
            .filter(|e| e.onset.floor() as usize == r)
            .copied()
            .collect();
        let mut raw = encode_tals(r as f64, &in_record);
        if raw.len() > ANNOT_SPR * 2 {
            return Err(Error::Shape(format!("annotation record {r} overflows")));
        }
        raw.resize(ANNOT_SPR * 2, 0);
        annotation_records.push(raw);
    }

    let ns = signals.len();
    let header = EdfHeader {
        version: pad("0", 8),
        patient: pad("X X X X", 80),
        recording: pad("Startdate 12-AUG-2009 X X BCI2000", 80),
        start_date: "12.08.09".into(),
        start_time: "16.15.00".into(),
        header_bytes_raw: pad(&(256 * (ns + 1)).to_string(), 8),
        reserved: pad("EDF+C", 44),
        record_count_raw: pad(&RECORDS.to_string(), 8),
        record_duration_raw: pad("1", 8),
        signal_count_raw: pad(&ns.to_string(), 4),
        record_count: RECORDS,
        record_duration: 1.0,
        signals,
        annotation_records,
    };
    // Quantize through the digital grid so the samples equal what a parser reads back.
    let samples = samples
        .into_iter()
        .map(|ch| {
            ch.into_iter()
                .map(|v| header.signals[0].to_physical(header.signals[0].to_digital(v)))
                .collect()
        })
        .collect();
    Ok(Recording {
        subject_id: spec.subject,
        run_id: spec.run,
        sample_rate: RATE as f64,
        channels: CHANNEL_LABELS.iter().map(|l| l.trim().to_string()).collect(),
        samples,
        events,
        header,
    })
}

/// Writes `S{sss}/S{sss}R{rr}.edf` files under `dir` in the archive layout.
pub fn write_synthetic_archive(dir: &Path, subjects: &[u32], runs: &[u32], seed: u64) -> Result<()> {
    for &s in subjects {
        for &r in runs {
            let rec = synth_recording(&SynthRecord::new(s, r, seed))?;
            let path = dir.join(record_path(s, r));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, write_edf(&rec)?).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

//! EEGMMI ingestion: archive fetching, EDF/EDF+ parsing, annotation decoding,
//! epoch extraction and the epoch container format.

pub mod annotations;
pub mod container;
pub mod dataset;
pub mod epochs;
pub mod fetch;
pub mod parse;
pub mod synth;
pub mod write;

use serde::{Deserialize, Serialize};

pub use annotations::parse_annotations;
pub use dataset::{build_dataset, DatasetReport, RecordFailure};
pub use epochs::{extract_epochs, Extraction};
pub use fetch::{FetchStatus, Fetcher};
pub use parse::{parse_edf, parse_edf_bytes, EdfHeader, SignalHeader};
pub use write::write_edf;

pub const EEGMMI_SUBJECTS: u32 = 109;
pub const EEGMMI_RUNS: u32 = 14;
pub const EEGMMI_CHANNELS: usize = 64;
pub const EEGMMI_RATE: f64 = 160.0;
/// Imagined left/right fist runs.
pub const IMAGERY_RUNS: [u32; 3] = [4, 8, 12];
/// 4.1 s at 160 Hz.
pub const EPOCH_LEN: usize = 656;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Left,
    Right,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Left, Label::Right];

    pub fn index(self) -> usize {
        match self {
            Label::Left => 0,
            Label::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Left => "Left",
            Label::Right => "Right",
        }
    }
}

/// Annotation codes of the motor-imagery runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationCode {
    /// Rest.
    T0,
    /// Left-fist cue.
    T1,
    /// Right-fist cue.
    T2,
}

impl AnnotationCode {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "T0" => Some(AnnotationCode::T0),
            "T1" => Some(AnnotationCode::T1),
            "T2" => Some(AnnotationCode::T2),
            _ => None,
        }
    }

    pub fn label(self) -> Option<Label> {
        match self {
            AnnotationCode::T0 => None,
            AnnotationCode::T1 => Some(Label::Left),
            AnnotationCode::T2 => Some(Label::Right),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationCode::T0 => "T0",
            AnnotationCode::T1 => "T1",
            AnnotationCode::T2 => "T2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    /// Seconds from record start.
    pub onset: f64,
    pub duration: f64,
    pub code: AnnotationCode,
}

/// One subject-run: equal-length channels at a single sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: u32,
    pub run_id: u32,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    /// `samples[channel][time]`, physical units.
    pub samples: Vec<Vec<f64>>,
    pub events: Vec<AnnotationEvent>,
    /// Original header and annotation payload, kept for byte-exact rewriting.
    pub header: EdfHeader,
}

impl Recording {
    pub fn sample_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

/// A labeled fixed-length trial window. Samples are stored channel-major as
/// `f32`, the precision of the epoch container.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f32>,
    pub label: Label,
    pub subject_id: u32,
    pub run_id: u32,
    pub onset_sample: usize,
}

impl Epoch {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Cache-relative archive path, e.g. `S001/S001R04.edf`.
pub fn record_path(subject: u32, run: u32) -> String {
    format!("S{subject:03}/S{subject:03}R{run:02}.edf")
}

/// Inverse of the file-name half of [`record_path`].
pub fn parse_record_name(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".edf")?;
    let rest = stem.strip_prefix('S')?;
    let (s, r) = rest.split_once('R')?;
    Some((s.parse().ok()?, r.parse().ok()?))
}

pub fn validate_record_ids(subject: u32, run: u32) -> crate::Result<()> {
    if !(1..=EEGMMI_SUBJECTS).contains(&subject) {
        return Err(crate::Error::InvalidRecord {
            subject,
            run,
            reason: format!("subject must be in 1..={EEGMMI_SUBJECTS}"),
        });
    }
    if !(1..=EEGMMI_RUNS).contains(&run) {
        return Err(crate::Error::InvalidRecord {
            subject,
            run,
            reason: format!("run must be in 1..={EEGMMI_RUNS}"),
        });
    }
    Ok(())
}

//! EDF/EDF+ decoding.
//!
//! Header fields are kept verbatim (space padding included) so that
//! [`crate::edf::write_edf`] reproduces the input byte for byte.

use std::path::Path;

use crate::edf::annotations::parse_annotation_records;
use crate::edf::{parse_record_name, Recording};
use crate::error::{Error, Result};

pub const FIXED_HEADER: usize = 256;
pub const SIGNAL_HEADER: usize = 256;
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Per-signal header, raw ASCII fields plus the decoded numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min_raw: String,
    pub physical_max_raw: String,
    pub digital_min_raw: String,
    pub digital_max_raw: String,
    pub prefilter: String,
    pub samples_per_record_raw: String,
    pub reserved: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    /// Digital → physical, exact at both digital endpoints.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let t = (digital as f64 - self.digital_min as f64)
            / (self.digital_max as f64 - self.digital_min as f64);
        self.physical_min * (1.0 - t) + self.physical_max * t
    }

    /// Physical → digital, rounding to the nearest step.
    pub fn to_digital(&self, physical: f64) -> i16 {
        let t = (physical - self.physical_min) / (self.physical_max - self.physical_min);
        let d = self.digital_min as f64 + t * (self.digital_max as f64 - self.digital_min as f64);
        d.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
}

/// Fixed header fields plus signal headers and the raw annotation payload.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes_raw: String,
    pub reserved: String,
    pub record_count_raw: String,
    pub record_duration_raw: String,
    pub signal_count_raw: String,
    pub record_count: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
    /// Annotation-signal bytes of every data record (empty for plain EDF).
    pub annotation_records: Vec<Vec<u8>>,
}

impl EdfHeader {
    pub fn annotation_index(&self) -> Option<usize> {
        self.signals.iter().position(SignalHeader::is_annotation)
    }

    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER + SIGNAL_HEADER * self.signals.len()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                offset: self.bytes.len(),
                reason: format!("{what} needs bytes {}..{}", self.pos, self.pos + n),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn field(&mut self, n: usize, what: &str) -> Result<String> {
        let raw = self.take(n, what)?;
        if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(Error::MalformedHeader(format!(
                "{what} at offset {} contains non-printable ASCII",
                self.pos - n
            )));
        }
        Ok(String::from_utf8(raw.to_vec()).expect("printable ASCII"))
    }
}

fn num<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("{what} {raw:?} is not a number")))
}

pub fn parse_edf(path: &Path) -> Result<Recording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rec = parse_edf_bytes(&bytes)?;
    if let Some((s, r)) = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_record_name)
    {
        rec.subject_id = s;
        rec.run_id = r;
    }
    Ok(rec)
}

/// Decodes an in-memory EDF file. Subject and run ids are left at 0.
pub fn parse_edf_bytes(bytes: &[u8]) -> Result<Recording> {
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.field(8, "version")?;
    let patient = c.field(80, "patient id")?;
    let recording = c.field(80, "recording id")?;
    let start_date = c.field(8, "start date")?;
    let start_time = c.field(8, "start time")?;
    let header_bytes_raw = c.field(8, "header size")?;
    let reserved = c.field(44, "reserved")?;
    let record_count_raw = c.field(8, "record count")?;
    let record_duration_raw = c.field(8, "record duration")?;
    let signal_count_raw = c.field(4, "signal count")?;

    let ns: usize = num(&signal_count_raw, "signal count")?;
    if ns == 0 {
        return Err(Error::MalformedHeader("file declares zero signals".into()));
    }
    let header_bytes: usize = num(&header_bytes_raw, "header size")?;
    if header_bytes != FIXED_HEADER + SIGNAL_HEADER * ns {
        return Err(Error::MalformedHeader(format!(
            "header size {header_bytes} inconsistent with {ns} signals (expected {})",
            FIXED_HEADER + SIGNAL_HEADER * ns
        )));
    }
    let record_duration: f64 = num(&record_duration_raw, "record duration")?;
    if !(record_duration > 0.0) {
        return Err(Error::UnsupportedLayout(format!(
            "record duration {record_duration} must be positive"
        )));
    }

    let mut cols: Vec<Vec<String>> = Vec::new();
    for (width, what) in [
        (16, "label"),
        (80, "transducer"),
        (8, "physical dimension"),
        (8, "physical min"),
        (8, "physical max"),
        (8, "digital min"),
        (8, "digital max"),
        (80, "prefilter"),
        (8, "samples per record"),
        (32, "signal reserved"),
    ] {
        cols.push((0..ns).map(|_| c.field(width, what)).collect::<Result<_>>()?);
    }
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let g = |k: usize| cols[k][i].clone();
        let s = SignalHeader {
            label: g(0),
            transducer: g(1),
            physical_dimension: g(2),
            physical_min_raw: g(3),
            physical_max_raw: g(4),
            digital_min_raw: g(5),
            digital_max_raw: g(6),
            prefilter: g(7),
            samples_per_record_raw: g(8),
            reserved: g(9),
            physical_min: num(&g(3), "physical min")?,
            physical_max: num(&g(4), "physical max")?,
            digital_min: num(&g(5), "digital min")?,
            digital_max: num(&g(6), "digital max")?,
            samples_per_record: num(&g(8), "samples per record")?,
        };
        if s.samples_per_record == 0 {
            return Err(Error::MalformedHeader(format!(
                "signal {i} has zero samples per record"
            )));
        }
        if !s.is_annotation()
            && (s.digital_max <= s.digital_min || s.physical_max == s.physical_min)
        {
            return Err(Error::MalformedHeader(format!(
                "signal {i} ({}) has a degenerate digital or physical range",
                s.label.trim()
            )));
        }
        signals.push(s);
    }

    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data_len = bytes.len() - header_bytes;
    let declared: i64 = num(&record_count_raw, "record count")?;
    let record_count = if declared < 0 {
        if data_len % record_bytes != 0 {
            return Err(Error::MalformedHeader(format!(
                "data section of {data_len} bytes is not a multiple of the {record_bytes}-byte record"
            )));
        }
        data_len / record_bytes
    } else {
        let n = declared as usize;
        let need = header_bytes + n * record_bytes;
        if bytes.len() < need {
            return Err(Error::Truncated {
                offset: bytes.len(),
                reason: format!("{n} records of {record_bytes} bytes need {need} bytes"),
            });
        }
        if bytes.len() > need {
            return Err(Error::MalformedHeader(format!(
                "file has {} bytes, header arithmetic accounts for {need}",
                bytes.len()
            )));
        }
        n
    };

    let data_signals: Vec<usize> = (0..ns).filter(|&i| !signals[i].is_annotation()).collect();
    let Some(&first) = data_signals.first() else {
        return Err(Error::UnsupportedLayout("no data signals besides annotations".into()));
    };
    let spr = signals[first].samples_per_record;
    if let Some(&bad) = data_signals
        .iter()
        .find(|&&i| signals[i].samples_per_record != spr)
    {
        return Err(Error::UnsupportedLayout(format!(
            "signal {} ({}) has {} samples per record, signal {first} has {spr}",
            bad,
            signals[bad].label.trim(),
            signals[bad].samples_per_record
        )));
    }

    let mut samples: Vec<Vec<f64>> = data_signals
        .iter()
        .map(|_| Vec::with_capacity(spr * record_count))
        .collect();
    let mut annotation_records = Vec::new();
    let data = &bytes[header_bytes..];
    let mut off = 0;
    for _ in 0..record_count {
        let mut slot = 0;
        for s in &signals {
            let len = s.samples_per_record * 2;
            let chunk = &data[off..off + len];
            if s.is_annotation() {
                annotation_records.push(chunk.to_vec());
            } else {
                let out = &mut samples[slot];
                out.extend(
                    chunk
                        .chunks_exact(2)
                        .map(|b| s.to_physical(i16::from_le_bytes([b[0], b[1]]))),
                );
                slot += 1;
            }
            off += len;
        }
    }

    let events = parse_annotation_records(&annotation_records)?;
    let header = EdfHeader {
        version,
        patient,
        recording,
        start_date,
        start_time,
        header_bytes_raw,
        reserved,
        record_count_raw,
        record_duration_raw,
        signal_count_raw,
        record_count,
        record_duration,
        signals,
        annotation_records,
    };
    Ok(Recording {
        subject_id: 0,
        run_id: 0,
        sample_rate: spr as f64 / record_duration,
        channels: data_signals
            .iter()
            .map(|&i| header.signals[i].label.trim().to_string())
            .collect(),
        samples,
        events,
        header,
    })
}

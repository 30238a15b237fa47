//! Minimal EDF writer: serializes a parsed [`Recording`] back to bytes.
//! Not a general-purpose clinical writer; it exists for round-trip testing
//! and for generating synthetic archives.

use crate::edf::parse::{FIXED_HEADER, SIGNAL_HEADER};
use crate::edf::Recording;
use crate::error::{Error, Result};

pub fn write_edf(rec: &Recording) -> Result<Vec<u8>> {
    let h = &rec.header;
    let ns = h.signals.len();
    let data_signals: Vec<usize> = (0..ns).filter(|&i| !h.signals[i].is_annotation()).collect();
    if data_signals.len() != rec.samples.len() {
        return Err(Error::Shape(format!(
            "header lists {} data signals, recording holds {}",
            data_signals.len(),
            rec.samples.len()
        )));
    }
    let has_annotations = h.annotation_index().is_some();
    if has_annotations && h.annotation_records.len() != h.record_count {
        return Err(Error::Shape(format!(
            "{} annotation records for {} data records",
            h.annotation_records.len(),
            h.record_count
        )));
    }

    let mut out = Vec::with_capacity(h.header_bytes() + h.record_count * h.record_bytes());
    let mut put = |s: &str, width: usize| -> Result<()> {
        if s.len() != width || !s.is_ascii() {
            return Err(Error::MalformedHeader(format!(
                "field {s:?} is not {width} ASCII bytes"
            )));
        }
        out.extend_from_slice(s.as_bytes());
        Ok(())
    };
    put(&h.version, 8)?;
    put(&h.patient, 80)?;
    put(&h.recording, 80)?;
    put(&h.start_date, 8)?;
    put(&h.start_time, 8)?;
    put(&h.header_bytes_raw, 8)?;
    put(&h.reserved, 44)?;
    put(&h.record_count_raw, 8)?;
    put(&h.record_duration_raw, 8)?;
    put(&h.signal_count_raw, 4)?;
    for s in &h.signals {
        put(&s.label, 16)?;
    }
    for s in &h.signals {
        put(&s.transducer, 80)?;
    }
    for s in &h.signals {
        put(&s.physical_dimension, 8)?;
    }
    for s in &h.signals {
        put(&s.physical_min_raw, 8)?;
    }
    for s in &h.signals {
        put(&s.physical_max_raw, 8)?;
    }
    for s in &h.signals {
        put(&s.digital_min_raw, 8)?;
    }
    for s in &h.signals {
        put(&s.digital_max_raw, 8)?;
    }
    for s in &h.signals {
        put(&s.prefilter, 80)?;
    }
    for s in &h.signals {
        put(&s.samples_per_record_raw, 8)?;
    }
    for s in &h.signals {
        put(&s.reserved, 32)?;
    }
    debug_assert_eq!(out.len(), FIXED_HEADER + SIGNAL_HEADER * ns);

    for r in 0..h.record_count {
        let mut slot = 0;
        for s in &h.signals {
            if s.is_annotation() {
                let raw = &h.annotation_records[r];
                if raw.len() != s.samples_per_record * 2 {
                    return Err(Error::Shape(format!(
                        "annotation record {r} has {} bytes, slot holds {}",
                        raw.len(),
                        s.samples_per_record * 2
                    )));
                }
                out.extend_from_slice(raw);
            } else {
                let n = s.samples_per_record;
                let chan = &rec.samples[slot];
                let chunk = chan.get(r * n..(r + 1) * n).ok_or_else(|| {
                    Error::Shape(format!("channel {slot} too short for record {r}"))
                })?;
                for &v in chunk {
                    out.extend_from_slice(&s.to_digital(v).to_le_bytes());
                }
                slot += 1;
            }
        }
    }
    Ok(out)
}

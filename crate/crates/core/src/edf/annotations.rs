//! EDF+ time-stamped annotation lists (TALs).
//!
//! A TAL is `±onset [0x15 duration] 0x14 (text 0x14)* 0x00`; a data record's
//! annotation signal holds one or more TALs followed by zero padding.

use crate::edf::{AnnotationCode, AnnotationEvent};
use crate::error::{Error, Result};

const DURATION_MARK: u8 = 0x15;
const TEXT_MARK: u8 = 0x14;
const END: u8 = 0x00;

/// Decodes one data record's annotation bytes. Only T0/T1/T2 texts become
/// events; time-keeping TALs and other texts are ignored.
pub fn parse_annotations(raw: &[u8]) -> Result<Vec<AnnotationEvent>> {
    let mut events = parse_record(raw, 0)?;
    sort_events(&mut events);
    Ok(events)
}

/// Decodes the annotation payload of every data record, sorted by onset.
pub fn parse_annotation_records(records: &[Vec<u8>]) -> Result<Vec<AnnotationEvent>> {
    let mut events = Vec::new();
    for (i, r) in records.iter().enumerate() {
        events.extend(parse_record(r, i)?);
    }
    sort_events(&mut events);
    Ok(events)
}

fn sort_events(events: &mut [AnnotationEvent]) {
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
}

fn parse_record(raw: &[u8], record: usize) -> Result<Vec<AnnotationEvent>> {
    let err = |reason: String| Error::Annotation { record, reason };
    let mut events = Vec::new();
    for tal in raw.split(|&b| b == END).filter(|t| !t.is_empty()) {
        let text_at = tal
            .iter()
            .position(|&b| b == TEXT_MARK)
            .ok_or_else(|| err("TAL without 0x14 terminator after the onset".into()))?;
        let timing = &tal[..text_at];
        let (onset_raw, duration_raw) = match timing.iter().position(|&b| b == DURATION_MARK) {
            Some(p) => (&timing[..p], Some(&timing[p + 1..])),
            None => (timing, None),
        };
        let onset = parse_onset(onset_raw).map_err(err)?;
        let duration = match duration_raw {
            Some(d) => Some(parse_number(d).map_err(err)?),
            None => None,
        };
        for text in tal[text_at + 1..].split(|&b| b == TEXT_MARK) {
            let text = std::str::from_utf8(text)
                .map_err(|_| err("annotation text is not UTF-8".into()))?;
            let Some(code) = AnnotationCode::parse(text) else {
                continue;
            };
            match duration {
                Some(d) if d > 0.0 && onset >= 0.0 => events.push(AnnotationEvent {
                    onset,
                    duration: d,
                    code,
                }),
                _ => log::warn!(
                    "record {record}: skipping {} at {onset} s without positive duration",
                    code.as_str()
                ),
            }
        }
    }
    Ok(events)
}

fn parse_onset(raw: &[u8]) -> std::result::Result<f64, String> {
    match raw.first() {
        Some(b'+') | Some(b'-') => parse_number(raw),
        _ => Err(format!(
            "onset {:?} must start with '+' or '-'",
            String::from_utf8_lossy(raw)
        )),
    }
}

fn parse_number(raw: &[u8]) -> std::result::Result<f64, String> {
    let s = std::str::from_utf8(raw).map_err(|_| "non-ASCII number".to_string())?;
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("cannot parse number {s:?}"))
}

/// Encodes events as TALs (one per event) after a time-keeping TAL for
/// `record_onset`. Used by the test-file writer.
pub fn encode_tals(record_onset: f64, events: &[AnnotationEvent]) -> Vec<u8> {
    let mut out = format!("+{}\x14\x14\x00", fmt_num(record_onset)).into_bytes();
    for e in events {
        out.extend(
            format!(
                "+{}\x15{}\x14{}\x14\x00",
                fmt_num(e.onset),
                fmt_num(e.duration),
                e.code.as_str()
            )
            .bytes(),
        );
    }
    out
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.to_string()
    }
}

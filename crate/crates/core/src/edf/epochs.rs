use crate::edf::{Epoch, Recording};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub epochs: Vec<Epoch>,
    /// Cue windows that would run past the end of the record.
    pub skipped: usize,
}

/// One epoch per T1/T2 cue, starting at the cue onset sample. Rest (T0)
/// events produce nothing.
pub fn extract_epochs(rec: &Recording, epoch_len: usize) -> Result<Extraction> {
    if rec.events.is_empty() {
        return Err(Error::NoEvents {
            subject: rec.subject_id,
            run: rec.run_id,
        });
    }
    if epoch_len == 0 {
        return Err(Error::Argument("epoch length must be positive".into()));
    }
    let total = rec.sample_count();
    let channels = rec.samples.len();
    let mut out = Extraction::default();
    for ev in &rec.events {
        let Some(label) = ev.code.label() else { continue };
        let start = (ev.onset * rec.sample_rate).round() as usize;
        if start + epoch_len > total {
            log::warn!(
                "S{:03}R{:02}: cue at {:.2} s overruns the record by {} samples, skipped",
                rec.subject_id,
                rec.run_id,
                ev.onset,
                start + epoch_len - total
            );
            out.skipped += 1;
            continue;
        }
        let mut data = Vec::with_capacity(channels * epoch_len);
        for ch in &rec.samples {
            data.extend(ch[start..start + epoch_len].iter().map(|&v| v as f32));
        }
        out.epochs.push(Epoch {
            channels,
            len: epoch_len,
            data,
            label,
            subject_id: rec.subject_id,
            run_id: rec.run_id,
            onset_sample: start,
        });
    }
    Ok(out)
}

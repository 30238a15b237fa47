//! Epoch container (`epochs.bin`), all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "EEGEPOCH"
//! version      u32      1
//! epoch_count  u32
//! channels     u32
//! samples      u32      per channel
//! sample_rate  f64
//! label_count  u32, then per label: u8 length + UTF-8 name
//! epochs       epoch_count blocks of
//!                u8 label index, u16 subject, u16 run, u32 onset sample,
//!                channels * samples f32 (channel-major)
//! ```

use std::io::Write;
use std::path::Path;

use crate::edf::{Epoch, Label};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EEGEPOCH";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    pub sample_rate: f64,
    pub channels: usize,
    pub samples: usize,
    pub epochs: Vec<Epoch>,
}

pub fn encode(set: &EpochSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + set.epochs.len() * (9 + 4 * set.channels * set.samples));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(set.epochs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.channels as u32).to_le_bytes());
    out.extend_from_slice(&(set.samples as u32).to_le_bytes());
    out.extend_from_slice(&set.sample_rate.to_le_bytes());
    out.extend_from_slice(&(Label::ALL.len() as u32).to_le_bytes());
    for l in Label::ALL {
        out.push(l.name().len() as u8);
        out.extend_from_slice(l.name().as_bytes());
    }
    for e in &set.epochs {
        if e.channels != set.channels || e.len != set.samples || e.data.len() != e.channels * e.len {
            return Err(Error::Container(format!(
                "epoch S{:03}R{:02}@{} is {}x{}, container holds {}x{}",
                e.subject_id, e.run_id, e.onset_sample, e.channels, e.len, set.channels, set.samples
            )));
        }
        out.push(e.label.index() as u8);
        out.extend_from_slice(&(e.subject_id as u16).to_le_bytes());
        out.extend_from_slice(&(e.run_id as u16).to_le_bytes());
        out.extend_from_slice(&(e.onset_sample as u32).to_le_bytes());
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.b.get(self.pos..self.pos + n).ok_or_else(|| {
            Error::Container(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EpochSet> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let sample_rate = r.f64()?;
    let n_labels = r.u32()? as usize;
    let mut names = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let len = r.u8()? as usize;
        names.push(String::from_utf8_lossy(r.take(len)?).into_owned());
    }
    let labels: Vec<Label> = names
        .iter()
        .map(|n| {
            Label::ALL
                .into_iter()
                .find(|l| l.name() == n)
                .ok_or_else(|| Error::Container(format!("unknown label {n:?}")))
        })
        .collect::<Result<_>>()?;
    let mut epochs = Vec::with_capacity(count);
    for _ in 0..count {
        let li = r.u8()? as usize;
        let label = *labels
            .get(li)
            .ok_or_else(|| Error::Container(format!("label index {li} out of table")))?;
        let subject_id = r.u16()? as u32;
        let run_id = r.u16()? as u32;
        let onset_sample = r.u32()? as usize;
        let raw = r.take(4 * channels * samples)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        epochs.push(Epoch {
            channels,
            len: samples,
            data,
            label,
            subject_id,
            run_id,
            onset_sample,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Container(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(EpochSet {
        sample_rate,
        channels,
        samples,
        epochs,
    })
}

/// Writes via a temporary file and rename.
pub fn write_container(path: &Path, set: &EpochSet) -> Result<()> {
    let bytes = encode(set)?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_container(path: &Path) -> Result<EpochSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl EpochSet {
    pub fn from_epochs(epochs: Vec<Epoch>, sample_rate: f64) -> Result<Self> {
        let first = epochs
            .first()
            .ok_or_else(|| Error::EmptyDataset("no epochs to store".into()))?;
        Ok(EpochSet {
            sample_rate,
            channels: first.channels,
            samples: first.len,
            epochs,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&encode(self)?)
            .map_err(|e| Error::io("<writer>", e))
    }
}

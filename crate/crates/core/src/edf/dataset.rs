use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{filter_recording, IirFilter};
use crate::edf::{extract_epochs, parse_edf, Epoch, Fetcher, EPOCH_LEN, IMAGERY_RUNS};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub runs: Vec<u32>,
    pub epoch_len: usize,
    /// Applied to every channel over the whole run before epoching.
    pub filter: Option<IirFilter>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            runs: IMAGERY_RUNS.to_vec(),
            epoch_len: EPOCH_LEN,
            filter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub subject: u32,
    pub run: u32,
    pub reason: String,
}

/// Cache file and its size, for run fingerprints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetReport {
    /// Ordered by (subject, run, onset).
    pub epochs: Vec<Epoch>,
    /// Subjects dropped because one of their runs failed.
    pub failures: Vec<RecordFailure>,
    pub files: Vec<FileEntry>,
    pub skipped_overruns: usize,
}

struct RunResult {
    subject: u32,
    run: u32,
    outcome: Result<(Vec<Epoch>, usize, FileEntry)>,
}

/// Fetches (or reuses) every requested run, filters, epochs and pools the
/// result. A subject with any failing run is reported and left out.
pub fn build_dataset(
    subjects: &[u32],
    cache_dir: &Path,
    fetcher: &Fetcher,
    opts: &DatasetOptions,
) -> Result<DatasetReport> {
    if subjects.is_empty() {
        return Err(Error::Argument("subject list is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for &s in subjects {
        if !seen.insert(s) {
            return Err(Error::DuplicateSubject(s));
        }
    }
    let mut order: Vec<u32> = subjects.to_vec();
    order.sort_unstable();
    let mut runs = opts.runs.clone();
    runs.sort_unstable();
    runs.dedup();
    let jobs: Vec<(u32, u32)> = order
        .iter()
        .flat_map(|&s| runs.iter().map(move |&r| (s, r)))
        .collect();

    let results = par::map_indices(jobs.len(), |i| {
        let (subject, run) = jobs[i];
        let outcome = (|| {
            let path = fetcher.fetch_record(subject, run, cache_dir)?;
            let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
            let mut rec = parse_edf(&path)?;
            if let Some(f) = &opts.filter {
                filter_recording(&mut rec, f)?;
            }
            let x = extract_epochs(&rec, opts.epoch_len)?;
            let rel = path
                .strip_prefix(cache_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            Ok((x.epochs, x.skipped, FileEntry { path: rel, bytes }))
        })();
        RunResult {
            subject,
            run,
            outcome,
        }
    });

    let mut report = DatasetReport::default();
    for chunk in results.chunks(runs.len()) {
        if let Some(bad) = chunk.iter().find(|r| r.outcome.is_err()) {
            let reason = bad.outcome.as_ref().err().map(|e| e.to_string()).unwrap_or_default();
            log::warn!("skipping subject {}: run {} failed: {reason}", bad.subject, bad.run);
            report.failures.push(RecordFailure {
                subject: bad.subject,
                run: bad.run,
                reason,
            });
            continue;
        }
        for r in chunk {
            let (epochs, skipped, file) = r.outcome.as_ref().ok().expect("checked above");
            report.epochs.extend(epochs.iter().cloned());
            report.skipped_overruns += skipped;
            report.files.push(file.clone());
        }
    }
    if report.epochs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no epochs from {} subject(s); {} failure(s)",
            order.len(),
            report.failures.len()
        )));
    }
    Ok(report)
}

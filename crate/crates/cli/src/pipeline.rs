//! The pipeline stages behind each subcommand.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eegmi_core::dsp::{epochs_to_features, feature_names, save_features_csv, FeatureVector};
use eegmi_core::edf::container::{read_container, write_container, EpochSet};
use eegmi_core::edf::dataset::DatasetOptions;
use eegmi_core::edf::synth::write_synthetic_archive;
use eegmi_core::edf::{build_dataset, record_path, FetchStatus, Fetcher, Label, EEGMMI_RATE, EPOCH_LEN};
use eegmi_core::io::write_atomic;
use eegmi_core::nn::{init_parameters, load_checkpoint, save_checkpoint, Checkpoint, LossKind, ModelSpec};
use eegmi_core::optim::Schedule;
use eegmi_core::train::{
    evaluate, fit, initial_state, split_indices, split_subject_holdout, standardize_features, Dataset, EvalReport,
    Holdout, StopReason, Standardizer, TrainConfig, TrainHistory, TrainState,
};
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, Variant};
use crate::exit::CliError;
use crate::manifest::Run;

pub const EPOCHS_FILE: &str = "epochs.bin";
pub const FEATURES_FILE: &str = "features.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "train_state.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "confusion.txt";
pub const FETCH_REPORT: &str = "fetch_report.json";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const COMPARISON_JSON: &str = "comparison.json";

fn json_out<T: Serialize>(run: &mut Run, path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    run.record_output(path)
}

// ---------------------------------------------------------------- fetch

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct FetchReport {
    pub fetched: Vec<String>,
    pub cached: Vec<String>,
    pub failed: Vec<FetchFailure>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FetchFailure {
    pub record: String,
    pub reason: String,
}

/// Populates the cache. With `strict`, any failure is an error; otherwise
/// only a total failure is, and partial failures are logged.
pub fn fetch(run: &mut Run, fetcher: &Fetcher, strict: bool) -> Result<FetchReport> {
    let cache = run.cfg.cache_dir.clone();
    let mut report = FetchReport::default();
    let subjects = run.cfg.subjects.resolve();
    let runs = run.cfg.runs.clone();
    for &s in &subjects {
        for &r in &runs {
            let name = record_path(s, r);
            match fetcher.fetch_record_status(s, r, &cache) {
                Ok((_, FetchStatus::Fetched)) => report.fetched.push(name),
                Ok((_, FetchStatus::Cached)) => report.cached.push(name),
                Err(e) => {
                    log::warn!("{name}: {e}");
                    report.failed.push(FetchFailure {
                        record: name,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    log::info!(
        "fetch: {} fetched, {} cached, {} failed",
        report.fetched.len(),
        report.cached.len(),
        report.failed.len()
    );
    let path = run.path(FETCH_REPORT);
    json_out(run, &path, &report)?;
    let total = subjects.len() * runs.len();
    if report.failed.len() == total {
        let first = report.failed.first().map(|f| f.reason.clone()).unwrap_or_default();
        return Err(CliError::FetchFailed(first).into());
    }
    if strict && !report.failed.is_empty() {
        return Err(CliError::PartialFetch {
            failed: report.failed.len(),
            total,
        }
        .into());
    }
    Ok(report)
}

// ---------------------------------------------------------------- epochs

pub fn epochs(run: &mut Run, fetcher: &Fetcher) -> Result<EpochSet> {
    let cfg = run.cfg.clone();
    let filter = cfg.filter.design(EEGMMI_RATE)?;
    let opts = DatasetOptions {
        runs: cfg.runs.clone(),
        epoch_len: EPOCH_LEN,
        filter,
    };
    let report = build_dataset(&cfg.subjects.resolve(), &cfg.cache_dir, fetcher, &opts)?;
    for f in &report.failures {
        log::warn!("subject {} left out, run {}: {}", f.subject, f.run, f.reason);
    }
    if report.skipped_overruns > 0 {
        log::warn!("{} cue(s) ran past the end of their recording", report.skipped_overruns);
    }
    run.record_files(report.files.clone());
    let set = EpochSet::from_epochs(report.epochs, EEGMMI_RATE)?;
    let subjects: BTreeSet<u32> = set.epochs.iter().map(|e| e.subject_id).collect();
    log::info!("epochs: {} from {} subject(s)", set.epochs.len(), subjects.len());
    let path = run.path(EPOCHS_FILE);
    write_container(&path, &set)?;
    run.record_output(&path)?;
    Ok(set)
}

fn load_epochs(run: &mut Run) -> Result<EpochSet> {
    let path = run.path(EPOCHS_FILE);
    if !path.is_file() {
        return Err(CliError::Data(format!("{} not found; run `eegmi epochs` first", path.display())).into());
    }
    let set = read_container(&path)?;
    if set.epochs.is_empty() {
        return Err(CliError::Data(format!("{} holds no epochs", path.display())).into());
    }
    run.record_input(&path)?;
    Ok(set)
}

// ---------------------------------------------------------------- features

pub fn features(run: &mut Run) -> Result<()> {
    let set = load_epochs(run)?;
    let welch = &run.cfg.welch;
    if welch.sample_rate != set.sample_rate {
        return Err(CliError::Config(format!(
            "welch.sample_rate {} differs from the data rate {}",
            welch.sample_rate, set.sample_rate
        ))
        .into());
    }
    let feats = epochs_to_features(&set.epochs, welch)?;
    let names = feature_names(set.channels, welch)?;
    let path = run.path(FEATURES_FILE);
    save_features_csv(&path, &names, &feats)?;
    run.record_output(&path)?;
    log::info!("features: {} rows x {} columns", feats.len(), names.len() + 1);
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| CliError::Data(format!("{} is empty", path.display())))?;
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let bad = |m: String| CliError::Data(format!("{} row {}: {m}", path.display(), i + 1));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(bad(format!("{} cells, header has {width}", cells.len())).into());
        }
        let (label, values) = cells.split_last().expect("width >= 1");
        let label = Label::ALL
            .into_iter()
            .find(|l| l.name() == *label)
            .ok_or_else(|| bad(format!("unknown label `{label}`")))?;
        let values = values
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(FeatureVector { values, label });
    }
    Ok(out)
}

/// Training/evaluation input for `model`, with the subject of every item.
pub fn load_dataset(run: &mut Run, model: ModelKind) -> Result<Dataset> {
    let set = load_epochs(run)?;
    match model {
        ModelKind::Convnet => Ok(Dataset::from_epochs(&set.epochs)?),
        ModelKind::Mlp => {
            let path = run.path(FEATURES_FILE);
            if !path.is_file() {
                return Err(CliError::Data(format!("{} not found; run `eegmi features` first", path.display())).into());
            }
            let feats = read_features_csv(&path)?;
            run.record_input(&path)?;
            if feats.len() != set.epochs.len() {
                return Err(CliError::Data(format!(
                    "{} has {} rows but {} holds {} epochs",
                    FEATURES_FILE,
                    feats.len(),
                    EPOCHS_FILE,
                    set.epochs.len()
                ))
                .into());
            }
            let subjects: Vec<u32> = set.epochs.iter().map(|e| e.subject_id).collect();
            Ok(Dataset::from_features(&feats, &subjects)?)
        }
    }
}

// ---------------------------------------------------------------- split

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub protocol: String,
    pub holdout: Holdout,
}

/// Subject-level holdout, or an epoch-level one when there is a single subject.
pub fn split(run: &mut Run, data: &Dataset) -> Result<Holdout> {
    let seed = run.seed("split");
    let frac = run.cfg.test_fraction;
    let distinct: BTreeSet<u32> = data.subjects.iter().copied().collect();
    let (holdout, protocol) = if distinct.len() >= 2 {
        let h = split_subject_holdout(&data.subjects, frac, seed)?;
        let p = format!(
            "subject holdout: test subjects {:?}, {} train / {} test items",
            h.test_subjects,
            h.train.len(),
            h.test.len()
        );
        (h, p)
    } else {
        let (train, test) = split_indices(data.len(), frac, seed)?;
        let subjects: Vec<u32> = distinct.into_iter().collect();
        let p = format!(
            "epoch-level holdout (single subject {:?}): {} train / {} test items",
            subjects,
            train.len(),
            test.len()
        );
        let h = Holdout {
            train,
            test,
            train_subjects: subjects.clone(),
            test_subjects: subjects,
        };
        (h, p)
    };
    log::info!("split: {protocol}");
    run.set_protocol(protocol.clone());
    let path = run.path(SPLIT_FILE);
    json_out(
        run,
        &path,
        &SplitFile {
            protocol,
            holdout: holdout.clone(),
        },
    )?;
    Ok(holdout)
}

fn load_split(run: &mut Run, items: usize) -> Result<Holdout> {
    let path = run.path(SPLIT_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}; run `eegmi train` first", path.display())))?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if file.holdout.train.iter().chain(&file.holdout.test).any(|&i| i >= items) {
        return Err(CliError::Data(format!("{} does not match a dataset of {items} items", path.display())).into());
    }
    run.record_input(&path)?;
    run.set_protocol(file.protocol);
    Ok(file.holdout)
}

// ---------------------------------------------------------------- train

/// Stored in the model checkpoint next to the weights.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub standardizer: Option<Standardizer>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn build_spec(run: &Run, model: ModelKind, data: &Dataset) -> Result<ModelSpec> {
    let classes = Label::ALL.len();
    Ok(match model {
        ModelKind::Mlp => ModelSpec::mlp(data.sample_len(), &run.cfg.model.hidden, classes)?,
        ModelKind::Convnet => match data.sample_shape.as_slice() {
            [1, c, t] => run.cfg.model.convnet.build(*c, *t, classes)?,
            s => return Err(CliError::Data(format!("epoch input of shape {s:?}")).into()),
        },
    })
}

fn describe_schedule(s: Schedule) -> String {
    match s {
        Schedule::Constant => "constant".into(),
        Schedule::StepDecay { factor, every } => format!("decay {factor}/{every} epochs"),
    }
}

/// One-line summary of what is about to be trained.
pub fn echo(v: Variant, spec: &ModelSpec, t: &TrainConfig) -> String {
    let o = &t.optimizer;
    let model = match v.model {
        ModelKind::Mlp => {
            let hidden: Vec<String> = spec
                .layers
                .iter()
                .filter_map(|l| match l {
                    eegmi_core::nn::LayerSpec::Dense { outputs, .. } => Some(outputs.to_string()),
                    _ => None,
                })
                .collect();
            format!("layers {}", hidden[..hidden.len() - 1].join("/"))
        }
        ModelKind::Convnet => format!("{} parameters", spec.parameter_count()),
    };
    let extra = match o.kind {
        eegmi_core::optim::OptimizerKind::Sgd => String::new(),
        eegmi_core::optim::OptimizerKind::Sgdm => format!(", momentum {}", o.momentum),
        eegmi_core::optim::OptimizerKind::Adam => format!(", beta=({}, {}), eps={:e}", o.beta1, o.beta2, o.epsilon),
        eegmi_core::optim::OptimizerKind::RmsProp => format!(", rho {}, eps={:e}", o.beta2, o.epsilon),
    };
    let loss = match t.loss {
        LossKind::Mse => "mse",
        LossKind::CrossEntropy => "cross_entropy",
    };
    format!(
        "{}: {model}; optimizer {} lr {}, {}{extra}; batch {}; loss {loss}; patience {}; max epochs {}; val fraction {}",
        v.title(),
        o.kind.name(),
        o.learning_rate,
        describe_schedule(o.schedule),
        t.batch_size,
        t.patience,
        t.max_epochs,
        t.val_fraction
    )
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut buf = Vec::new();
    history.write_csv(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Trains `v` on the training part of `split`, writing artifacts to `dir`.
pub fn train_variant(
    run: &mut Run,
    v: Variant,
    data: &Dataset,
    split: &Holdout,
    dir: &Path,
    resume: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = build_spec(run, v.model, data)?;
    let tcfg = run.cfg.train_config(v, run.seed("train"))?;
    run.record_training(&v.slug(), &tcfg);
    log::info!("{}", echo(v, &spec, &tcfg));

    let pool = data.subset(&split.train);
    let (tr, va) = split_indices(pool.len(), tcfg.val_fraction, tcfg.seed)?;
    let (mut train_set, mut val_set) = (pool.subset(&tr), pool.subset(&va));
    let standardizer = if tcfg.standardize_features {
        Some(standardize_features(&mut train_set, &mut [&mut val_set])?)
    } else {
        None
    };

    let state_path = dir.join(STATE_FILE);
    let history_path = dir.join(HISTORY_FILE);
    let state = if resume && state_path.is_file() {
        let ck = load_checkpoint(&state_path)?;
        if ck.spec != spec {
            return Err(CliError::Data(format!("{} was written for a different model", state_path.display())).into());
        }
        let s = TrainState::from_checkpoint(ck)?;
        log::info!("resuming {} at epoch {}", v.title(), s.next_epoch);
        s
    } else {
        initial_state(init_parameters(&spec, run.seed("init"))?, &tcfg)?
    };

    if !(resume && history_path.is_file()) {
        write_history(
            &history_path,
            &TrainHistory {
                epochs: state.history.clone(),
                best_epoch: 0,
                best_val_loss: f64::INFINITY,
                stop_reason: StopReason::MaxEpochs,
            },
        )?;
    }
    let mut save = |s: &TrainState| -> eegmi_core::Result<()> {
        save_checkpoint(&state_path, &s.to_checkpoint(&spec))?;
        let partial = TrainHistory {
            epochs: s.history.clone(),
            best_epoch: s.stopper.best_epoch.unwrap_or(0),
            best_val_loss: s.stopper.best_loss,
            stop_reason: StopReason::MaxEpochs,
        };
        let mut buf = Vec::new();
        partial
            .write_csv(&mut buf)
            .map_err(|e| eegmi_core::Error::Data(e.to_string()))?;
        write_atomic(&history_path, &buf)
    };
    let result = fit(&spec, &train_set, &val_set, &tcfg, state, &mut save);
    run.record_output(&history_path)?;
    let outcome = result?;
    write_history(&history_path, &outcome.history)?;
    run.record_output(&history_path)?;
    run.record_output(&state_path)?;

    let h = &outcome.history;
    log::info!(
        "{}: {} epochs ({:?}), best epoch {} val loss {:.5}",
        v.title(),
        h.epochs.len(),
        h.stop_reason,
        h.best_epoch,
        h.best_val_loss
    );
    let mut ck = Checkpoint::new(spec, outcome.params);
    ck.extra = serde_json::to_value(ModelMeta {
        variant: v,
        standardizer,
        best_epoch: h.best_epoch,
        best_val_loss: h.best_val_loss,
    })?;
    let model_path = dir.join(MODEL_FILE);
    save_checkpoint(&model_path, &ck)?;
    run.record_output(&model_path)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub model: String,
    pub protocol: Option<String>,
    pub test_items: usize,
    pub test_subjects: Vec<u32>,
    pub accuracy: f64,
    /// Per true class, Left then Right; null when undefined.
    pub sensitivity: [Option<f64>; 2],
    /// Per predicted class, Left then Right; null when undefined.
    pub precision: [Option<f64>; 2],
    pub report: EvalReport,
}

pub fn load_model(path: &Path) -> Result<(Checkpoint, ModelMeta)> {
    let ck = load_checkpoint(path)?;
    let meta: ModelMeta = serde_json::from_value(ck.extra.clone())
        .map_err(|e| CliError::Data(format!("{} carries no model metadata: {e}", path.display())))?;
    Ok((ck, meta))
}

/// Evaluates a checkpoint on the held-out items, writing report and table to `dir`.
pub fn eval_variant(run: &mut Run, checkpoint: &Path, dir: &Path) -> Result<ReportFile> {
    let (ck, meta) = load_model(checkpoint)?;
    run.record_input(checkpoint)?;
    let data = load_dataset(run, meta.variant.model)?;
    if ck.spec.input_shape != data.sample_shape {
        return Err(CliError::Data(format!(
            "{} expects inputs of shape {:?}, the data has {:?}",
            checkpoint.display(),
            ck.spec.input_shape,
            data.sample_shape
        ))
        .into());
    }
    let split = load_split(run, data.len())?;
    let mut test = data.subset(&split.test);
    if let Some(s) = &meta.standardizer {
        s.apply(&mut test)?;
    }
    let report = EvalReport::new(evaluate(&ck.spec, &ck.params, &test)?)?;
    let m = &report.metrics;
    let file = ReportFile {
        model: meta.variant.title(),
        protocol: run_protocol(run),
        test_items: test.len(),
        test_subjects: split.test_subjects.clone(),
        accuracy: m.accuracy.value().expect("non-empty test set"),
        sensitivity: m.sensitivity.map(|r| r.value()),
        precision: m.precision.map(|r| r.value()),
        report,
    };
    std::fs::create_dir_all(dir)?;
    let table = format!("{}\n{}", file.model, file.report.table());
    log::info!("{table}");
    let table_path = dir.join(TABLE_FILE);
    write_atomic(&table_path, table.as_bytes())?;
    run.record_output(&table_path)?;
    let report_path = dir.join(REPORT_FILE);
    json_out(run, &report_path, &file)?;
    Ok(file)
}

fn run_protocol(run: &Run) -> Option<String> {
    let p = run.path(SPLIT_FILE);
    std::fs::read_to_string(p)
        .ok()
        .and_then(|t| serde_json::from_str::<SplitFile>(&t).ok())
        .map(|s| s.protocol)
}

// ---------------------------------------------------------------- reproduce

#[derive(Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: f64,
    pub test_items: usize,
    pub dir: String,
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let w = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<w$}  {:>8}  {:>10}\n", "model", "accuracy", "test items");
    for r in rows {
        out.push_str(&format!(
            "{:<w$}  {:>7.2}%  {:>10}\n",
            r.model,
            100.0 * r.accuracy,
            r.test_items
        ));
    }
    out
}

pub fn write_comparison(run: &mut Run, rows: &[ComparisonRow]) -> Result<()> {
    let table = comparison_table(rows);
    log::info!("{table}");
    let txt = run.path(COMPARISON_TXT);
    write_atomic(&txt, table.as_bytes())?;
    run.record_output(&txt)?;
    let json = run.path(COMPARISON_JSON);
    json_out(run, &json, &rows)
}

// ---------------------------------------------------------------- synth

/// Writes generated recordings for the configured subjects and runs into the cache.
pub fn synth(cache: &Path, subjects: &[u32], runs: &[u32], seed: u64) -> Result<PathBuf> {
    write_synthetic_archive(cache, subjects, runs, seed)?;
    log::info!(
        "synth: {} recording(s) under {}",
        subjects.len() * runs.len(),
        cache.display()
    );
    Ok(cache.to_path_buf())
}

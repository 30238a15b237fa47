//! Run manifests, per-stage seeds and the output-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use eegmi_core::edf::dataset::FileEntry;
use eegmi_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{config_digest, PipelineConfig};
use crate::exit::CliError;

pub const LOCK_FILE: &str = ".eegmi.lock";
pub const STAGES: [&str; 3] = ["split", "init", "train"];

/// Seed for one stage, derived from the root seed and the stage name.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let d = Sha256::digest(format!("eegmi/{root}/{stage}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// Archive files read, relative to the cache, with sizes.
    pub files: Vec<FileEntry>,
    /// Pipeline artifacts consumed, with digests.
    pub inputs: Vec<OutputFile>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: CommandArgs,
    pub config: PipelineConfig,
    pub config_sha256: String,
    pub stage_seeds: BTreeMap<String, u64>,
    pub parallel: bool,
    /// Resolved training settings per model.
    pub training: BTreeMap<String, TrainConfig>,
    pub protocol: Option<String>,
    pub dataset: Fingerprint,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputFile>,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())).into())
    }
}

/// Bookkeeping for one command invocation; holds the lock until dropped.
pub struct Run {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    manifest: RunManifest,
    _lock: Lock,
}

impl Run {
    pub fn start(command: &str, args: CommandArgs, cfg: PipelineConfig) -> Result<Self> {
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let lock = Lock::acquire(&out)?;
        let manifest = RunManifest {
            tool: "eegmi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config_sha256: config_digest(&cfg),
            stage_seeds: STAGES.iter().map(|s| (s.to_string(), stage_seed(cfg.seed, s))).collect(),
            config: cfg.clone(),
            parallel: eegmi_core::par::is_parallel(),
            training: BTreeMap::new(),
            protocol: None,
            dataset: Fingerprint::default(),
            timings: Vec::new(),
            outputs: Vec::new(),
            status: "running".into(),
            failed_stage: None,
            error: None,
        };
        Ok(Run {
            cfg,
            out,
            manifest,
            _lock: lock,
        })
    }

    pub fn seed(&self, stage: &str) -> u64 {
        stage_seed(self.cfg.seed, stage)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Runs `f` as a named stage, timing it and tagging failures.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        log::debug!("stage {name}");
        let r = f(self);
        self.manifest.timings.push(StageTiming {
            stage: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        if r.is_err() && self.manifest.failed_stage.is_none() {
            self.manifest.failed_stage = Some(name.into());
        }
        r.with_context(|| format!("stage `{name}` failed"))
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let entry = describe(path, &self.out)?;
        self.manifest.outputs.retain(|o| o.path != entry.path);
        self.manifest.outputs.push(entry);
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let entry = describe(path, &self.out)?;
        self.manifest.dataset.inputs.push(entry);
        Ok(())
    }

    pub fn record_files(&mut self, files: Vec<FileEntry>) {
        self.manifest.dataset.files = files;
    }

    pub fn record_training(&mut self, slug: &str, cfg: &TrainConfig) {
        self.manifest.training.insert(slug.into(), cfg.clone());
    }

    pub fn set_protocol(&mut self, text: String) {
        self.manifest.protocol = Some(text);
    }

    /// Writes `<command>.manifest.json` with the final status.
    pub fn finish(mut self, result: &Result<()>) -> Result<PathBuf> {
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.path(&RunManifest::file_name(&self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest)?;
        eegmi_core::io::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

fn describe(path: &Path, base: &Path) -> Result<OutputFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(OutputFile {
        path: path
            .strip_prefix(base)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/"),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Exclusive marker file in the output directory.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = std::fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Config(format!(
                    "{} is in use by process {}; delete {} if that run is gone",
                    dir.display(),
                    owner.trim(),
                    path.display()
                ))
                .into())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

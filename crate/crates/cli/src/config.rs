//! Pipeline configuration: one JSON document merged over the defaults,
//! then dotted `key=value` overrides, then validated before any work.

use std::path::{Path, PathBuf};

use eegmi_core::dsp::{design_butterworth, FilterKind, IirFilter, WelchConfig};
use eegmi_core::edf::{validate_record_ids, EEGMMI_SUBJECTS, IMAGERY_RUNS};
use eegmi_core::nn::model::ConvNetConfig;
use eegmi_core::optim::OptimizerKind;
use eegmi_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::exit::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub cache_dir: PathBuf,
    pub subjects: Subjects,
    pub runs: Vec<u32>,
    pub filter: FilterConfig,
    pub welch: WelchConfig,
    pub model: ModelConfig,
    /// ConvNet optimizer for `train`; `reproduce` runs all three.
    pub optimizer: OptimizerKind,
    /// Overrides merged over the ConvNet training defaults.
    pub train: Map<String, Value>,
    /// Overrides merged over the MLP training defaults.
    pub mlp_train: Map<String, Value>,
    /// Share of subjects held out for testing.
    pub test_fraction: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cache_dir: PathBuf::from("data/eegmmidb"),
            subjects: Subjects::List(vec![1]),
            runs: IMAGERY_RUNS.to_vec(),
            filter: FilterConfig::default(),
            welch: WelchConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerKind::Adam,
            train: Map::new(),
            mlp_train: Map::new(),
            test_fraction: 0.2,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

/// `"all"` or an explicit list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Subjects {
    All,
    List(Vec<u32>),
}

impl Subjects {
    pub fn resolve(&self) -> Vec<u32> {
        match self {
            Subjects::All => (1..=EEGMMI_SUBJECTS).collect(),
            Subjects::List(v) => v.clone(),
        }
    }

    /// `all`, or comma-separated ids and inclusive ranges such as `1-10,12`.
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim() == "all" {
            return Ok(Subjects::All);
        }
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let num = |s: &str| s.trim().parse::<u32>().map_err(|_| format!("bad subject id `{s}`"));
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (num(a)?, num(b)?);
                    if a > b {
                        return Err(format!("empty subject range `{part}`"));
                    }
                    out.extend(a..=b);
                }
                None => out.push(num(part)?),
            }
        }
        Ok(Subjects::List(out))
    }
}

impl Serialize for Subjects {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Subjects::All => s.serialize_str("all"),
            Subjects::List(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Subjects {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) => Subjects::parse(&s).map_err(serde::de::Error::custom),
            v @ Value::Array(_) => serde_json::from_value(v)
                .map(Subjects::List)
                .map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!(
                "subjects must be \"all\", a range string or a list of ids, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    High,
    Low,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub kind: FilterChoice,
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            kind: FilterChoice::High,
            cutoff_hz: 30.0,
            order: 3,
        }
    }
}

impl FilterConfig {
    pub fn design(&self, sample_rate: f64) -> eegmi_core::Result<Option<IirFilter>> {
        let kind = match self.kind {
            FilterChoice::High => FilterKind::HighPass,
            FilterChoice::Low => FilterKind::LowPass,
            FilterChoice::None => return Ok(None),
        };
        design_butterworth(self.order, self.cutoff_hz, sample_rate, kind).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Convnet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// MLP hidden layer widths.
    pub hidden: Vec<usize>,
    pub convnet: ConvNetConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Convnet,
            hidden: vec![100, 75],
            convnet: ConvNetConfig::default(),
        }
    }
}

/// One trained model of the comparison, e.g. `convnet-adam`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub model: ModelKind,
    pub optimizer: OptimizerKind,
}

impl Variant {
    pub fn slug(self) -> String {
        match self.model {
            ModelKind::Mlp => "mlp-gd".into(),
            ModelKind::Convnet => format!("convnet-{}", self.optimizer.name()),
        }
    }

    pub fn title(self) -> String {
        match self.model {
            ModelKind::Mlp => "MLP-GD".into(),
            ModelKind::Convnet => format!(
                "ConvNet-{}",
                match self.optimizer {
                    OptimizerKind::Sgd => "SGD",
                    OptimizerKind::Sgdm => "SGDM",
                    OptimizerKind::Adam => "Adam",
                    OptimizerKind::RmsProp => "RmsPROP",
                }
            ),
        }
    }

    /// The four models of the comparison table, in table order.
    pub fn comparison() -> [Variant; 4] {
        let conv = |optimizer| Variant {
            model: ModelKind::Convnet,
            optimizer,
        };
        [
            Variant {
                model: ModelKind::Mlp,
                optimizer: OptimizerKind::Sgd,
            },
            conv(OptimizerKind::Sgdm),
            conv(OptimizerKind::RmsProp),
            conv(OptimizerKind::Adam),
        ]
    }
}

impl PipelineConfig {
    /// Defaults, then `file`, then `overrides`, then validation.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(PipelineConfig::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
            if !user.is_object() {
                return Err(CliError::Config(format!("config {} must be a JSON object", path.display())));
            }
            merge(&mut doc, user);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: PipelineConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let subjects = self.subjects.resolve();
        if subjects.is_empty() {
            return bad("subject list is empty".into());
        }
        if self.runs.is_empty() {
            return bad("run list is empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &subjects {
            if !seen.insert(s) {
                return bad(format!("subject {s} listed more than once"));
            }
            for &r in &self.runs {
                validate_record_ids(s, r).map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must lie in (0, 1)", self.test_fraction));
        }
        self.filter
            .design(self.welch.sample_rate)
            .map_err(|e| CliError::Config(format!("filter: {e}")))?;
        self.welch.validate().map_err(|e| CliError::Config(format!("welch: {e}")))?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return bad("model.hidden needs at least one non-zero width".into());
        }
        for v in Variant::comparison() {
            self.train_config(v, 0)?;
        }
        self.train_config(self.variant(), 0)?;
        Ok(())
    }

    /// The model selected by `model.kind` and `optimizer`.
    pub fn variant(&self) -> Variant {
        match self.model.kind {
            ModelKind::Mlp => Variant::comparison()[0],
            ModelKind::Convnet => Variant {
                model: ModelKind::Convnet,
                optimizer: self.optimizer,
            },
        }
    }

    /// Training defaults for `v` with the matching override section merged in.
    pub fn train_config(&self, v: Variant, seed: u64) -> Result<TrainConfig, CliError> {
        let (base, section, name) = match v.model {
            ModelKind::Mlp => (TrainConfig::mlp(), &self.mlp_train, "mlp_train"),
            ModelKind::Convnet => (TrainConfig::convnet(v.optimizer), &self.train, "train"),
        };
        if section.contains_key("seed") {
            return Err(CliError::Config(format!(
                "{name}.seed is derived from the top-level seed; set `seed` instead"
            )));
        }
        let mut doc = serde_json::to_value(base).expect("train config serializes");
        merge(&mut doc, Value::Object(section.clone()));
        let mut cfg: TrainConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        cfg.seed = seed;
        cfg.validate().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        Ok(cfg)
    }
}

/// Recursive object merge; anything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, text: &str) -> Result<(), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{text}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    for (i, part) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Stable hash of the resolved config, without the output directory.
pub fn config_digest(cfg: &PipelineConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = value.as_object_mut() {
        m.remove("output_dir");
    }
    let text = value.to_string();
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subject_ranges() {
        assert_eq!(Subjects::parse("1-3,7").unwrap(), Subjects::List(vec![1, 2, 3, 7]));
        assert_eq!(Subjects::parse("all").unwrap(), Subjects::All);
        assert!(Subjects::parse("3-1").is_err());
        assert!(Subjects::parse("x").is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::load(None, &["welch.nfft_typo=3".into()]).unwrap_err();
        assert!(err.to_string().contains("nfft_typo"), "{err}");
        let err = PipelineConfig::load(None, &["train.batchsize=3".into()]).unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        let err = PipelineConfig::load(None, &["colour=1".into()]).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn overrides_merge_into_sections() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "train.optimizer.learning_rate=0.01".into(),
                "subjects=1-3".into(),
                "filter.kind=low".into(),
            ],
        )
        .unwrap();
        let t = cfg.train_config(cfg.variant(), 5).unwrap();
        assert_eq!(t.optimizer.learning_rate, 0.01);
        assert_eq!(t.optimizer.beta2, 0.99);
        assert_eq!(t.seed, 5);
        assert_eq!(cfg.subjects.resolve(), vec![1, 2, 3]);
        assert_eq!(cfg.filter.kind, FilterChoice::Low);
    }

    #[test]
    fn mlp_defaults() {
        let cfg = PipelineConfig::default();
        let t = cfg.train_config(Variant::comparison()[0], 0).unwrap();
        assert_eq!((t.optimizer.learning_rate, t.batch_size), (0.01, 1));
        assert_eq!(cfg.model.hidden, [100, 75]);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::load(None, &["test_fraction=1.5".into()]).is_err());
        assert!(PipelineConfig::load(None, &["runs=[15]".into()]).is_err());
        assert!(PipelineConfig::load(None, &["subjects=[1,1]".into()]).is_err());
        assert!(PipelineConfig::load(None, &["train.seed=4".into()]).is_err());
        assert!(PipelineConfig::load(None, &["filter.cutoff_hz=90".into()]).is_err());
    }
}

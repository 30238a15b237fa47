//! Model checkpoint container, integers little-endian:
//!
//! ```text
//! magic         8 bytes  "EEGMCKPT"
//! version       u32      1
//! spec_len      u32, ModelSpec as JSON
//! meta_len      u32, JSON {"optimizer": {config, t, lr} | null, "extra": any}
//! tensor_count  u32, then per tensor:
//!                 u16 name length, UTF-8 name, u8 rank, rank * u32 dims,
//!                 product(dims) * f64
//! ```
//!
//! Tensor names are `param/<name>`, `best/<name>` and `optim/<slot>/<name>`,
//! where `<name>` is a [`Parameters::named_tensors`] name such as
//! `layer0.weight`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{init_parameters, ModelSpec, Parameters};
use crate::nn::Tensor;
use crate::optim::{Optimizer, OptimizerConfig, OptimizerState};

pub const MAGIC: &[u8; 8] = b"EEGMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub best: Option<Parameters>,
    pub optimizer: Option<Optimizer>,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: Parameters) -> Self {
        Checkpoint {
            spec,
            params,
            best: None,
            optimizer: None,
            extra: serde_json::Value::Null,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    config: OptimizerConfig,
    t: u64,
    lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    optimizer: Option<OptimizerMeta>,
    extra: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn slot_tensors(opt: &Optimizer, params: &Parameters) -> Vec<(String, Tensor)> {
    let names: Vec<String> = params.trainable().into_iter().map(|(n, _)| n).collect();
    let (a, b) = OptimizerState::slot_names(opt.config.kind);
    let mut out = Vec::new();
    for (slot, tensors) in [(a, &opt.state.slot_a), (b, &opt.state.slot_b)] {
        for (n, t) in names.iter().zip(tensors.iter()) {
            out.push((format!("optim/{slot}/{n}"), t.clone()));
        }
    }
    out
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = serde_json::to_vec(&ck.spec).map_err(|e| bad(e.to_string()))?;
    let meta = serde_json::to_vec(&Meta {
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerMeta {
            config: o.config.clone(),
            t: o.state.t,
            lr: o.state.lr,
        }),
        extra: ck.extra.clone(),
    })
    .map_err(|e| bad(e.to_string()))?;
    for blob in [&spec, &meta] {
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob);
    }
    let mut tensors: Vec<(String, Tensor)> = ck
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (format!("param/{n}"), t.clone()))
        .collect();
    if let Some(best) = &ck.best {
        tensors.extend(
            best.named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("best/{n}"), t.clone())),
        );
    }
    if let Some(opt) = &ck.optimizer {
        tensors.extend(slot_tensors(opt, &ck.params));
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (n, t) in &tensors {
        put_tensor(&mut out, n, t)?;
    }
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .b
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

fn fill(params: &mut Parameters, prefix: &str, found: &mut BTreeMap<String, Tensor>) -> Result<()> {
    for (name, slot) in params.named_tensors_mut() {
        let key = format!("{prefix}/{name}");
        let t = found
            .remove(&key)
            .ok_or_else(|| bad(format!("missing tensor {key}")))?;
        if t.shape() != slot.shape() {
            return Err(bad(format!(
                "{key}: stored shape {:?}, spec expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let spec: ModelSpec = serde_json::from_slice(r.blob()?).map_err(|e| bad(format!("spec: {e}")))?;
    spec.validate()?;
    let meta: Meta = serde_json::from_slice(r.blob()?).map_err(|e| bad(format!("meta: {e}")))?;
    let count = r.u32()? as usize;
    let mut found = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| bad(e.to_string()))?;
        let rank = r.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(8).ok_or_else(|| bad("tensor size overflow"))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        if found.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut params = init_parameters(&spec, 0)?;
    fill(&mut params, "param", &mut found)?;
    let best = if found.keys().any(|k| k.starts_with("best/")) {
        let mut b = init_parameters(&spec, 0)?;
        fill(&mut b, "best", &mut found)?;
        Some(b)
    } else {
        None
    };
    let optimizer = match meta.optimizer {
        None => None,
        Some(m) => {
            let mut opt = {
                let refs: Vec<&Tensor> = params.trainable().into_iter().map(|(_, t)| t).collect();
                Optimizer::new(m.config, &refs)?
            };
            opt.state.t = m.t;
            opt.state.lr = m.lr;
            let (a, b) = OptimizerState::slot_names(opt.config.kind);
            let names: Vec<String> = params.trainable().into_iter().map(|(n, _)| n).collect();
            for (slot, tensors) in [(a, &mut opt.state.slot_a), (b, &mut opt.state.slot_b)] {
                for (n, t) in names.iter().zip(tensors.iter_mut()) {
                    let key = format!("optim/{slot}/{n}");
                    let v = found
                        .remove(&key)
                        .ok_or_else(|| bad(format!("missing tensor {key}")))?;
                    if v.shape() != t.shape() {
                        return Err(bad(format!("{key}: shape {:?} vs {:?}", v.shape(), t.shape())));
                    }
                    *t = v;
                }
            }
            Some(opt)
        }
    };
    if let Some(k) = found.keys().next() {
        return Err(bad(format!("unexpected tensor {k}")));
    }
    Ok(Checkpoint {
        spec,
        params,
        best,
        optimizer,
        extra: meta.extra,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, &encode(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    fn sample() -> Checkpoint {
        let spec = ModelSpec::default_convnet(4, 256, 2).unwrap();
        let params = init_parameters(&spec, 3).unwrap();
        let mut opt = {
            let refs: Vec<&Tensor> = params.trainable().into_iter().map(|(_, t)| t).collect();
            Optimizer::new(OptimizerConfig::convnet(OptimizerKind::Adam), &refs).unwrap()
        };
        opt.state.t = 17;
        opt.state.slot_b[0].data_mut()[0] = 0.25;
        let mut ck = Checkpoint::new(spec, params.clone());
        ck.best = Some(init_parameters(&ck.spec, 4).unwrap());
        ck.optimizer = Some(opt);
        ck.extra = serde_json::json!({"epoch": 5});
        ck
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        assert_eq!(back.spec, ck.spec);
        assert_eq!(back.params, ck.params);
        assert_eq!(back.best, ck.best);
        let (a, b) = (back.optimizer.unwrap(), ck.optimizer.unwrap());
        assert_eq!(a.state, b.state);
        assert_eq!(a.config, b.config);
        assert_eq!(back.extra["epoch"], 5);
    }

    #[test]
    fn rejects_shape_mismatch_and_corruption() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());

        let mut other = Checkpoint::new(ck.spec.clone(), ck.params.clone());
        other.spec = ModelSpec::default_convnet(4, 400, 2).unwrap();
        let err = decode(&encode(&other).unwrap()).unwrap_err().to_string();
        assert!(err.contains("spec expects"), "{err}");
    }
}

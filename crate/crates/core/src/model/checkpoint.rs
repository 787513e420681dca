//! PCKP checkpoint files.
//!
//! Layout: magic `PCKP`, `u8` version, `u32` entry count, then per entry a
//! `u32` name length, the UTF-8 name and an embedded PTNS tensor; finally a
//! trailing `u32` step counter. All integers little-endian.
//!
//! Entry names are namespaced: `param/…`, `opt.m/…`, `opt.v/…`, `ema/…`,
//! plus `meta/config`, the model config JSON stored as a u32 tensor of bytes.

use std::io::Write;
use std::path::Path;

use super::{check_schema, Model, ModelConfig};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{AnyTensor, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCKP";
pub const CHECKPOINT_VERSION: u8 = 1;

const CONFIG_ENTRY: &str = "meta/config";

/// Everything needed to resume training or evaluate.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    /// AdamW first and second moments, same names as `params`.
    pub adam_m: Option<ParamStore<f32>>,
    pub adam_v: Option<ParamStore<f32>>,
    pub ema: Option<ParamStore<f32>>,
    pub step: u32,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            adam_m: None,
            adam_v: None,
            ema: None,
            step: 0,
        }
    }

    /// The model with its training weights.
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    /// The model with EMA shadow weights, or an error if none were saved.
    pub fn ema_model(&self) -> Result<Model> {
        let ema = self
            .ema
            .as_ref()
            .ok_or_else(|| Error::Schema("checkpoint has no EMA shadow".into()))?;
        Model::from_params(self.config.clone(), ema.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, AnyTensor)> = Vec::new();
        let json = serde_json::to_string(&self.config).expect("config serializes");
        let bytes: Vec<u32> = json.bytes().map(u32::from).collect();
        let n = bytes.len();
        entries.push((
            CONFIG_ENTRY.into(),
            AnyTensor::U32(Tensor::new(vec![n], bytes).expect("non-empty config")),
        ));
        let groups = [
            ("param", Some(&self.params)),
            ("opt.m", self.adam_m.as_ref()),
            ("opt.v", self.adam_v.as_ref()),
            ("ema", self.ema.as_ref()),
        ];
        for (prefix, store) in groups {
            for (name, t) in store.into_iter().flat_map(|s| s.iter()) {
                entries.push((format!("{prefix}/{name}"), AnyTensor::F32(t.clone())));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in &entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.encode(&mut out);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    /// Parses a checkpoint. Nothing is returned unless the whole file is
    /// valid and matches the architecture named by its config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected PCKP"));
        }
        let version = r.take(1, "version")?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")? as usize;

        let mut config_json = None;
        let mut stores: [ParamStore<f32>; 4] = Default::default();
        for i in 0..count {
            let name_at = r.pos;
            let len = r.u32("entry name length")? as usize;
            let raw = r.take(len, "entry name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::format(name_at + 4, format!("entry {i} name is not UTF-8")))?
                .to_string();
            let tensor_at = r.pos;
            let (tensor, used) = AnyTensor::decode(&bytes[r.pos..], r.pos)?;
            r.pos += used;

            if name == CONFIG_ENTRY {
                let AnyTensor::U32(t) = tensor else {
                    return Err(Error::format(tensor_at, "meta/config must be a u32 tensor"));
                };
                let text: Vec<u8> = t
                    .data()
                    .iter()
                    .map(|&b| u8::try_from(b))
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::format(tensor_at, "meta/config holds a non-byte value"))?;
                config_json = Some(
                    String::from_utf8(text).map_err(|_| Error::format(tensor_at, "meta/config is not UTF-8"))?,
                );
                continue;
            }
            let (prefix, param) = name
                .split_once('/')
                .ok_or_else(|| Error::Schema(format!("unknown tensor name `{name}`")))?;
            let slot = match prefix {
                "param" => 0,
                "opt.m" => 1,
                "opt.v" => 2,
                "ema" => 3,
                _ => return Err(Error::Schema(format!("unknown tensor name `{name}`"))),
            };
            let AnyTensor::F32(t) = tensor else {
                return Err(Error::Schema(format!("tensor `{name}` is {:?}, expected f32", tensor.dtype())));
            };
            stores[slot].insert(param, t)?;
        }
        let step = r.u32("step counter")?;
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let json = config_json.ok_or_else(|| Error::Schema("checkpoint has no meta/config entry".into()))?;
        let config = ModelConfig::from_json(&json)?;
        let [params, m, v, ema] = stores;
        let model = Model::from_params(config.clone(), params)?;
        let optional = |s: ParamStore<f32>| -> Result<Option<ParamStore<f32>>> {
            if s.is_empty() {
                return Ok(None);
            }
            check_schema(model.params(), &s)?;
            Ok(Some(s))
        };
        Ok(Checkpoint {
            adam_m: optional(m)?,
            adam_v: optional(v)?,
            ema: optional(ema)?,
            params: model.params().clone(),
            config,
            step,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// half-written checkpoint.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("pckp.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&checkpoint.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

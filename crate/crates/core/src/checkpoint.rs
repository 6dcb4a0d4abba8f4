//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, UTF-8 JSON
//! header (config, its SHA-256, shapes of every named array, progress
//! counters), then every array as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dag::LagrangianState;
use crate::error::{Error, Result};
use crate::model::GanfModel;
use crate::params::Module;
use crate::tensor::Tensor;
use crate::train::{Adam, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"GANFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Optimizer position at save time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub lagrangian: LagrangianState,
    pub lr: f64,
    pub epoch: usize,
    pub outer: usize,
    pub adam_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_sha256: String,
    n_series: usize,
    n_attrs: usize,
    progress: Option<Progress>,
    #[serde(default)]
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub n_series: usize,
    pub n_attrs: usize,
    pub model: GanfModel,
    pub progress: Option<Progress>,
    /// Caller-defined JSON stored alongside the arrays.
    pub meta: serde_json::Value,
    /// Adam first and second moments, when saved from a training state.
    pub moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

impl Checkpoint {
    /// Rebuilds a training state able to resume where the save left off.
    pub fn into_state(self) -> Result<TrainState> {
        let mut state = TrainState::new(self.n_series, self.n_attrs, &self.config)?;
        if let Some(p) = &self.progress {
            state.lagrangian = p.lagrangian.clone();
            state.lr = p.lr;
            state.epoch = p.epoch;
            state.outer = p.outer;
            state.adam.step = p.adam_step;
        }
        if let Some((m, v)) = self.moments {
            state.adam.m = m;
            state.adam.v = v;
        }
        state.last_good = self.model.clone();
        state.model = self.model;
        Ok(state)
    }
}

pub fn config_hash(config: &TrainConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Saves a trained model without optimizer state.
pub fn save_model(model: &GanfModel, config: &TrainConfig, meta: serde_json::Value, path: &Path) -> Result<()> {
    write(model, None, config, meta, path)
}

/// Saves a full training state.
pub fn save(state: &TrainState, config: &TrainConfig, path: &Path) -> Result<()> {
    write(&state.model, Some(state), config, serde_json::Value::Null, path)
}

fn write(
    model: &GanfModel,
    state: Option<&TrainState>,
    config: &TrainConfig,
    meta: serde_json::Value,
    path: &Path,
) -> Result<()> {
    let mut named: Vec<(String, &Tensor)> = model.params();
    let progress = state.map(|s| {
        let names: Vec<String> = named.iter().map(|(k, _)| k.clone()).collect();
        for (k, t) in names.iter().zip(&s.adam.m) {
            named.push((format!("adam.m.{k}"), t));
        }
        for (k, t) in names.iter().zip(&s.adam.v) {
            named.push((format!("adam.v.{k}"), t));
        }
        Progress { lagrangian: s.lagrangian.clone(), lr: s.lr, epoch: s.epoch, outer: s.outer, adam_step: s.adam.step }
    });
    let header = Header {
        config: config.clone(),
        config_sha256: config_hash(config)?,
        n_series: model.config.n_series,
        n_attrs: model.config.n_attrs,
        progress,
        meta,
        arrays: named.iter().map(|(k, t)| ArrayEntry { name: k.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let floats: usize = named.iter().map(|(_, t)| t.numel()).sum();
    let mut buf = Vec::with_capacity(20 + header_bytes.len() + 8 * floats);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, t) in &named {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos.checked_add(len).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => {
            let s = &bytes[*pos..e];
            *pos = e;
            Ok(s)
        }
        None => Err(Error::Checkpoint(format!("truncated file while reading {what}"))),
    }
}

/// Decodes a checkpoint, rebuilding the model from its stored config.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    if take(&bytes, &mut pos, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint (bad magic)", path.display())));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut pos, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let hlen = u64::from_le_bytes(take(&bytes, &mut pos, 8, "header length")?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| Error::Checkpoint("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(take(&bytes, &mut pos, hlen, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if config_hash(&header.config)? != header.config_sha256 {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let count: usize = entry.shape.iter().product();
        let raw = take(&bytes, &mut pos, count * 8, &format!("array {}", entry.name))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }

    let model_cfg = header.config.model_config(header.n_series, header.n_attrs);
    let mut model = GanfModel::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(String, Vec<usize>)> =
        model.params().into_iter().map(|(k, t)| (k, t.shape().to_vec())).collect();
    let k = expected.len();
    if header.arrays.len() < k {
        return Err(Error::Checkpoint(format!("expected {k} model arrays, found {}", header.arrays.len())));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.arrays) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "array {} has shape {:?}, config implies {name} with shape {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let mut rest = arrays.split_off(k);
    for (dst, src) in model.params_mut().into_iter().zip(arrays) {
        *dst = src;
    }
    let moments = match rest.len() {
        0 => None,
        r if r == 2 * k => {
            let v = rest.split_off(k);
            Some((rest, v))
        }
        r => return Err(Error::Checkpoint(format!("{r} optimizer arrays for {k} parameters"))),
    };
    Ok(Checkpoint {
        config: header.config,
        n_series: header.n_series,
        n_attrs: header.n_attrs,
        model,
        progress: header.progress,
        meta: header.meta,
        moments,
    })
}

/// [`load`] plus a check against the data the caller intends to use.
pub fn load_for(path: &Path, n_series: usize, n_attrs: usize) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.n_series != n_series {
        let s = ck.model.a.shape();
        return Err(Error::Shape(format!(
            "array A is {}x{} in the checkpoint but the data has n = {n_series}",
            s[0], s[1]
        )));
    }
    if ck.n_attrs != n_attrs {
        return Err(Error::Shape(format!(
            "array rnn.w_x expects D = {} but the data has D = {n_attrs}",
            ck.n_attrs
        )));
    }
    Ok(ck)
}

/// Fresh optimizer state shaped like `model`.
pub fn fresh_adam(model: &GanfModel) -> Adam {
    Adam::new(&model.params().into_iter().map(|(_, t)| t).collect::<Vec<_>>())
}

//! Binary parameter container: magic, header length, JSON header, raw
//! little-endian tensor data in name order.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::denoiser::denoiser_specs;
use super::{Denoiser, ModelConfig, ParamStore};
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "ckpt-v1";
const MAGIC: &[u8; 8] = b"VIMOPRM\0";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Config(format!("unsupported parameter dtype {other:?}"))),
    }
}

pub fn write_container(
    path: impl AsRef<Path>,
    schema: &str,
    meta: serde_json::Value,
    params: &ParamStore,
) -> Result<()> {
    let path = path.as_ref();
    let dname = dtype_name(params.dtype())?;
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    for (name, var) in params.iter() {
        let flat = var.as_tensor().flatten_all()?;
        let start = data.len();
        match params.dtype() {
            DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|x| data.extend_from_slice(&x.to_le_bytes())),
            _ => flat.to_vec1::<f64>()?.iter().for_each(|x| data.extend_from_slice(&x.to_le_bytes())),
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: var.dims().to_vec(),
            dtype: dname.to_string(),
            offset: start as u64,
            bytes: (data.len() - start) as u64,
        });
    }
    let header = serde_json::to_vec(&Header {
        schema: schema.to_string(),
        meta,
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>, schema: &str) -> Result<(serde_json::Value, ParamStore)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Schema(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter container"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    if header.schema != schema {
        return Err(bad(&format!("schema {:?}, expected {schema:?}", header.schema)));
    }
    let data = &bytes[body..];
    let dtype = match header.tensors.first().map(|t| t.dtype.as_str()) {
        Some("f64") => DType::F64,
        _ => DType::F32,
    };
    let mut store = ParamStore::new(dtype);
    for t in &header.tensors {
        let (start, len) = (t.offset as usize, t.bytes as usize);
        let raw = data.get(start..start + len).ok_or_else(|| bad(&format!("tensor {} out of bounds", t.name)))?;
        let n: usize = t.shape.iter().product();
        let tensor = match t.dtype.as_str() {
            "f32" if len == 4 * n => {
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
                Tensor::from_vec(v, t.shape.as_slice(), store.device())?
            }
            "f64" if len == 8 * n => {
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
                Tensor::from_vec(v, t.shape.as_slice(), store.device())?
            }
            _ => return Err(bad(&format!("tensor {} has bad dtype or size", t.name))),
        };
        store.insert(&t.name, tensor)?;
    }
    Ok((header.meta, store))
}

/// Snapshot of a ChaCha stream: seed, stream id and position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Schema("malformed rng state".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingState {
    pub step: u64,
    pub rng: Option<RngState>,
    /// Noise schedule the weights were trained with.
    #[serde(default)]
    pub schedule: Option<ScheduleKind>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: ModelConfig,
    state: TrainingState,
}

/// Denoiser checkpoint files.
pub struct Checkpoint;

impl Checkpoint {
    pub fn save(path: impl AsRef<Path>, model: &Denoiser, state: &TrainingState) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            config: model.config().clone(),
            state: state.clone(),
        })?;
        write_container(path, CHECKPOINT_SCHEMA, meta, model.params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Denoiser, TrainingState)> {
        let (meta, store) = read_container(path, CHECKPOINT_SCHEMA)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        meta.config.validate()?;
        let specs = denoiser_specs(&meta.config);
        if specs.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} tensors, config implies {}",
                store.len(),
                specs.len()
            )));
        }
        for (name, shape, _) in &specs {
            let v = store.get(name)?;
            if v.dims() != shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!("{name}: shape {:?}, expected {shape:?}", v.dims())));
            }
        }
        Ok((Denoiser::assemble(&meta.config, store, false)?, meta.state))
    }

    /// Loads and refuses a checkpoint whose config differs from `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<(Denoiser, TrainingState)> {
        let (model, state) = Self::load(path)?;
        if model.config() != expected {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint config {:?} differs from requested {:?}",
                model.config(),
                expected
            )));
        }
        Ok((model, state))
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

//! Binary checkpoints.
//!
//! ```text
//! "PFFN"  version:u32
//! config_len:u32  config (UTF-8 key=value lines)
//! tensor_count:u64
//! per tensor: name_len:u32 name rank:u32 dims:u64*rank data:f32*numel
//! adam_step:u64
//! ```
//!
//! All integers and floats are little-endian. Biases are stored with rank 1;
//! optimizer moments follow the parameters under `adam.m.` / `adam.v.`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::model::ParamStore;
use crate::tensor::{Dims, Tensor};

use super::{AdamState, TrainConfig};

pub const MAGIC: &[u8; 4] = b"PFFN";
pub const FORMAT_VERSION: u32 = 1;

/// Position in the training schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    /// Optimizer steps taken.
    pub iteration: u64,
    /// Shuffle epoch of the data stream.
    pub data_epoch: u64,
    /// Next batch within `data_epoch`.
    pub cursor: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
    pub progress: Progress,
}

fn header(ckpt: &Checkpoint) -> String {
    let mut pairs = ckpt.config.to_pairs();
    let p = ckpt.progress;
    pairs.extend([
        ("progress.iteration".to_string(), p.iteration.to_string()),
        ("progress.data_epoch".into(), p.data_epoch.to_string()),
        ("progress.cursor".into(), p.cursor.to_string()),
    ]);
    kv::render(&pairs)
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>, bias: bool) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    let d = t.dims();
    let dims: Vec<usize> = if bias { vec![d.n] } else { d.as_array().to_vec() };
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for x in dims {
        out.extend_from_slice(&(x as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = header(ckpt);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());

    let mut tensors: Vec<(String, &Tensor<f32>)> = ckpt.params.iter().map(|(k, t)| (k.clone(), t)).collect();
    if let Some(adam) = &ckpt.adam {
        tensors.extend(adam.m.iter().map(|(k, t)| (format!("adam.m.{k}"), t)));
        tensors.extend(adam.v.iter().map(|(k, t)| (format!("adam.v.{k}"), t)));
    }
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in &tensors {
        write_tensor(&mut out, name, t, name.ends_with(".bias"));
    }
    let step = ckpt.adam.as_ref().map_or(0, |a| a.step);
    out.extend_from_slice(&step.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} overflows")))
    }
}

fn read_tensor(c: &mut Cursor<'_>) -> Result<(String, Tensor<f32>)> {
    let len = c.u32("tensor name length")? as usize;
    let name = std::str::from_utf8(c.take(len, "tensor name")?)
        .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = c.u32("tensor rank")? as usize;
    let dims = (0..rank).map(|_| c.size("tensor extent")).collect::<Result<Vec<_>>>()?;
    let dims = match dims[..] {
        [n] => Dims::new(n, 1, 1, 1),
        [n, ch, h, w] => Dims::new(n, ch, h, w),
        _ => return Err(Error::Checkpoint(format!("tensor {name:?} has unsupported rank {rank}"))),
    };
    let bytes = dims
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} is too large")))?;
    let raw = c.take(bytes, &format!("data of {name:?}"))?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok((name, Tensor::from_vec(dims, data)?))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes; not a checkpoint".into()));
    }
    let version = c.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let len = c.u32("config length")? as usize;
    let text = std::str::from_utf8(c.take(len, "config")?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let mut config = TrainConfig::default();
    let mut progress = Progress::default();
    for (k, v) in kv::parse(text)? {
        match k.as_str() {
            "progress.iteration" => progress.iteration = kv::value(&k, &v)?,
            "progress.data_epoch" => progress.data_epoch = kv::value(&k, &v)?,
            "progress.cursor" => progress.cursor = kv::value(&k, &v)?,
            _ => {
                if !config.set(&k, &v)? {
                    return Err(Error::Checkpoint(format!("unknown config key {k:?}")));
                }
            }
        }
    }
    config.validate()?;

    let count = c.u64("tensor count")?;
    let mut params = ParamStore::new();
    let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
    for _ in 0..count {
        let (name, t) = read_tensor(&mut c)?;
        if let Some(k) = name.strip_prefix("adam.m.") {
            m.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("adam.v.") {
            v.insert(k.to_string(), t);
        } else {
            params.insert(name, t);
        }
    }
    let step = c.u64("optimizer step")?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    params
        .validate(&config.model)
        .map_err(|e| Error::Checkpoint(format!("parameters do not match the stored config: {e}")))?;

    let adam = if m.is_empty() && v.is_empty() {
        None
    } else {
        for (label, moments) in [("adam.m", &m), ("adam.v", &v)] {
            if !moments.keys().eq(params.keys()) {
                return Err(Error::Checkpoint(format!("{label} keys do not match the parameters")));
            }
            for (k, t) in moments {
                if t.dims() != params.get(k)?.dims() {
                    return Err(Error::Checkpoint(format!("{label}.{k} has extents {}", t.dims())));
                }
            }
        }
        Some(AdamState { m, v, step })
    };
    Ok(Checkpoint {
        config,
        params,
        adam,
        progress,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    // write then rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&encode_checkpoint(ckpt))
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

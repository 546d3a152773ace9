//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `DDSR`, format version `u32`, field count `u32`
//! followed by every [`ModelConfig`] field as `u32`, entry count `u32`, then per
//! entry: name length `u32`, UTF-8 name, dtype `u8` (0 = f32), trainable `u8`,
//! rank `u32`, extents `u32 × rank`, row-major payload.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::adaptation::{is_fda_name, is_lora_name, merge_adapters, LORA_DOWN, LORA_UP};
use crate::backbone::backbone_specs;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fda::fda_specs;
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DDSR";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn config_fields(c: &ModelConfig) -> [usize; 12] {
    [
        c.groups,
        c.units,
        c.dim,
        c.window,
        c.scale,
        c.channels,
        c.frozen_units,
        c.rank,
        c.alpha,
        c.freq_dim,
        c.freq_stages,
        c.up_dim,
    ]
}

fn config_from_fields(f: &[usize]) -> Result<ModelConfig> {
    let [groups, units, dim, window, scale, channels, frozen_units, rank, alpha, freq_dim, freq_stages, up_dim] =
        f.try_into().map_err(|_| ckpt_err(format!("expected 12 config fields, got {}", f.len())))?;
    Ok(ModelConfig {
        groups,
        units,
        dim,
        window,
        scale,
        channels,
        frozen_units,
        rank,
        alpha,
        freq_dim,
        freq_stages,
        up_dim,
    })
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ckpt_err(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let fields = config_fields(&model.config);
    put_u32(&mut buf, fields.len())?;
    for f in fields {
        put_u32(&mut buf, f)?;
    }
    put_u32(&mut buf, model.params.len())?;
    for (name, p) in model.params.iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(u8::from(p.trainable));
        put_u32(&mut buf, p.value.rank())?;
        for &e in p.value.shape() {
            put_u32(&mut buf, e)?;
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ckpt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes and validates a container.
pub fn from_bytes(buf: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ckpt_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(ckpt_err(format!("unsupported format version {version}")));
    }
    let n_fields = r.u32()?;
    let fields = (0..n_fields).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = config_from_fields(&fields)?;
    config.validate().map_err(|e| ckpt_err(format!("invalid config: {e}")))?;

    let mut params = ParamStore::new();
    let count = r.u32()?;
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| ckpt_err("entry name is not UTF-8"))?.to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(ckpt_err(format!("{name}: unsupported dtype {dtype}")));
        }
        let trainable = r.u8()? != 0;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel.checked_mul(4).ok_or_else(|| ckpt_err("payload too large"))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if params.contains(&name) {
            return Err(ckpt_err(format!("duplicate entry {name}")));
        }
        params.insert(&name, Tensor::new(&shape, data)?);
        params.set_trainable(&name, trainable)?;
    }
    if r.pos != buf.len() {
        return Err(ckpt_err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    validate_names(&config, &params)?;
    Ok(Model { config, params })
}

/// Backbone complete; branch either absent or complete; adapters paired and
/// attached to existing linears; nothing else.
pub fn validate_names(config: &ModelConfig, params: &ParamStore<f32>) -> Result<()> {
    let mut expected: Vec<_> = backbone_specs(config)?;
    if params.names().any(is_fda_name) {
        expected.extend(fda_specs(config)?);
    }
    let mut known = BTreeSet::new();
    for s in &expected {
        let t = params.get(&s.name).map_err(|_| ckpt_err(format!("missing entry {}", s.name)))?;
        if t.shape() != s.shape.as_slice() {
            return Err(ckpt_err(format!("{}: shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
        }
        known.insert(s.name.as_str());
    }
    for name in params.names().filter(|n| !known.contains(n)) {
        if !is_lora_name(name) {
            return Err(ckpt_err(format!("unexpected entry {name}")));
        }
        let (target, down) = match name.strip_suffix(&format!(".{LORA_DOWN}")) {
            Some(t) => (t, true),
            None => (name.strip_suffix(&format!(".{LORA_UP}")).unwrap_or(name), false),
        };
        let w = params.get(&format!("{target}.weight")).map_err(|_| ckpt_err(format!("adapter {name} has no base")))?;
        let partner = format!("{target}.{}", if down { LORA_UP } else { LORA_DOWN });
        if !params.contains(&partner) {
            return Err(ckpt_err(format!("adapter {name} has no partner {partner}")));
        }
        let s = params.get(name)?.shape();
        let ok = s.len() == 2
            && w.rank() == 2
            && s[if down { 1 } else { 0 }] == config.rank
            && if down { s[0] == w.shape()[0] } else { s[1] == w.shape()[1] };
        if !ok {
            return Err(ckpt_err(format!("adapter {name} shape {:?} does not fit {:?}", s, w.shape())));
        }
    }
    Ok(())
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

/// Writes `W + scale·down·up` for every adapter and omits the adapter entries.
pub fn save_merged(model: &Model<f32>, path: &Path) -> Result<()> {
    let merged = Model { config: model.config, params: merge_adapters(&model.params, &model.config)? };
    save(&merged, path)
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    from_bytes(&fs::read(path)?)
}

/// Loads and checks the architecture against `expected`.
pub fn load_compatible(path: &Path, expected: &ModelConfig) -> Result<Model<f32>> {
    let m = load(path)?;
    if config_fields(&m.config)[..6] != config_fields(expected)[..6] || m.config.up_dim != expected.up_dim {
        return Err(ckpt_err(format!("checkpoint config {:?} is incompatible with {:?}", m.config, expected)));
    }
    Ok(m)
}

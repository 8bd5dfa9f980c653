//! Binary checkpoints: named parameter arrays plus the model config hash.
//!
//! Layout, little endian:
//!
//! ```text
//! b"RPNCKPT1" | u32 version | u32 len, hash bytes | u32 count
//! count × ( u32 len, name bytes | u32 ndim | ndim × u64 dim | numel × f64 )
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use repnet_autograd::Tensor;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"RPNCKPT1";
pub const VERSION: u32 = 1;
const MAX_NDIM: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config_hash: &str) -> Self {
        Checkpoint {
            config_hash: config_hash.to_string(),
            params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Copies every array into `store`, requiring the same hash, names and
    /// shapes.
    pub fn apply(&self, store: &mut ParamStore, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {} does not match model {config_hash}",
                self.config_hash
            )));
        }
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!("{} arrays for {} parameters", self.params.len(), store.len())));
        }
        for (name, value) in &self.params {
            let id = store.find(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            if store.get(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    value.shape(),
                    store.get(id).shape()
                )));
            }
        }
        for (name, value) in &self.params {
            let id = store.find(name).expect("checked above");
            *store.get_mut(id) = value.clone();
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).expect("vec write");
    put_str(&mut out, &ckpt.config_hash);
    out.write_u32::<LittleEndian>(ckpt.params.len() as u32).expect("vec write");
    for (name, t) in &ckpt.params {
        put_str(&mut out, name);
        out.write_u32::<LittleEndian>(t.ndim() as u32).expect("vec write");
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).expect("vec write");
        }
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).expect("vec write");
        }
    }
    out
}

fn truncated<T>(_: std::io::Error) -> Result<T> {
    Err(Error::Checkpoint("truncated checkpoint".into()))
}

fn remaining(cur: &Cursor<&[u8]>) -> u64 {
    cur.get_ref().len() as u64 - cur.position()
}

fn get_str(cur: &mut Cursor<&[u8]>, what: &str) -> Result<String> {
    let len = cur.read_u32::<LittleEndian>().or_else(truncated)? as u64;
    if len > remaining(cur) {
        return Err(Error::Checkpoint(format!("{what} length {len} exceeds the remaining bytes")));
    }
    let mut buf = vec![0; len as usize];
    cur.read_exact(&mut buf).or_else(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
}

/// Parses a checkpoint; every length is checked against the input.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(MAGIC.len() as u64);
    let version = cur.read_u32::<LittleEndian>().or_else(truncated)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash = get_str(&mut cur, "hash")?;
    let count = cur.read_u32::<LittleEndian>().or_else(truncated)?;
    let mut params = Vec::new();
    for _ in 0..count {
        let name = get_str(&mut cur, "name")?;
        let ndim = cur.read_u32::<LittleEndian>().or_else(truncated)?;
        if ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("`{name}` has {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = cur.read_u64::<LittleEndian>().or_else(truncated)?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= remaining(&cur)))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` is larger than the remaining bytes")))?;
            shape.push(d as usize);
        }
        if numel * 8 > remaining(&cur) {
            return Err(Error::Checkpoint(format!("`{name}` is larger than the remaining bytes")));
        }
        let mut data = vec![0.0; numel as usize];
        cur.read_f64_into::<LittleEndian>(&mut data).or_else(truncated)?;
        params.push((name, Tensor::new(shape, data)));
    }
    if remaining(&cur) != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", remaining(&cur))));
    }
    Ok(Checkpoint { config_hash, params })
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, encode(&Checkpoint::from_store(&model.store, &model.config.hash())))?;
    Ok(())
}

/// Loads parameters into a model built from the same config.
pub fn load(path: &Path, model: &mut Model) -> Result<()> {
    let ckpt = decode(&std::fs::read(path)?)?;
    ckpt.apply(&mut model.store, &model.config.hash())
}

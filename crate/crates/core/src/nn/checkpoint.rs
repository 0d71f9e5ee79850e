//! Checkpoint files: `LLCK`, format version, a JSON header holding the encoder config and
//! free-form metadata, then every named tensor as explicit shape plus little-endian `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::params::ModelParams;
use super::tensor::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LLCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub meta: serde_json::Value,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn write_checkpoint<W: Write>(params: &ModelParams<f32>, meta: &serde_json::Value, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: params.config.clone(),
        meta: meta.clone(),
    })?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    put_u32(&mut w, VERSION).map_err(io)?;
    put_u32(&mut w, header.len() as u32).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    let named = params.named();
    put_u32(&mut w, named.len() as u32).map_err(io)?;
    for (name, m) in named {
        put_u32(&mut w, name.len() as u32).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        put_u32(&mut w, 2).map_err(io)?;
        put_u32(&mut w, m.rows() as u32).map_err(io)?;
        put_u32(&mut w, m.cols() as u32).map_err(io)?;
        let mut buf = Vec::with_capacity(m.data().len() * 4);
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if get_bytes(&mut r, 4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = get_u32(&mut r)? as usize;
    let header: Header = serde_json::from_slice(&get_bytes(&mut r, hlen)?)?;
    let mut params = ModelParams::<f32>::init(&header.config)?;
    let count = get_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = get_u32(&mut r)? as usize;
        let name = String::from_utf8(get_bytes(&mut r, nlen)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = get_u32(&mut r)?;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("tensor {name} has {ndim} dimensions")));
        }
        let rows = get_u32(&mut r)? as usize;
        let cols = get_u32(&mut r)? as usize;
        let raw = get_bytes(&mut r, rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    params.load_named(&tensors)?;
    if !params.all_finite() {
        return Err(Error::Checkpoint("checkpoint holds non-finite values".into()));
    }
    Ok(Checkpoint {
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint(params: &ModelParams<f32>, meta: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, meta, BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

//! Binary model container:
//!
//! ```text
//! "FWCK" | u32 version | u32 config_len | config JSON | u32 n_tensors
//! per tensor: u32 name_len | name | u32 ndim | u64 dims… | f64 data…
//! ```
//!
//! All integers and floats little-endian; data is always stored as f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{EstimatorConfig, Model, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FWCK";
pub const VERSION: u32 = 1;

pub fn write<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&model.config)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(model.specs.len() as u32).to_le_bytes())?;
    for s in &model.specs {
        w.write_all(&(s.name.len() as u32).to_le_bytes())?;
        w.write_all(s.name.as_bytes())?;
        w.write_all(&(s.shape.len() as u32).to_le_bytes())?;
        for &d in &s.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &model.params[s.range()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    if n > 1 << 30 {
        return Err(bad("implausible length"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(b)
}

pub fn read<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let config: EstimatorConfig = serde_json::from_slice(&read_bytes(&mut r, n)?)?;
    let mut model = Model::new(config)?;
    let count = read_u32(&mut r)? as usize;
    if count != model.specs.len() {
        return Err(bad(format!("expected {} tensors, found {count}", model.specs.len())));
    }
    for k in 0..count {
        let n = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_bytes(&mut r, n)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(bad("implausible tensor rank"));
        }
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = &model.specs[k];
        if spec.name != name || spec.shape != shape {
            return Err(bad(format!(
                "tensor {k}: found {name} {shape:?}, expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        for i in spec.range() {
            model.params[i] = f64::from_le_bytes(read_bytes(&mut r, 8)?.try_into().unwrap()) as Real;
        }
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}

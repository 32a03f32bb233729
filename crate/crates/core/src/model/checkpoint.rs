//! Binary checkpoint format for model parameters.
//!
//! Layout: magic `MZCP`, format version, a JSON model-spec header, then
//! each parameter in canonical order as name, dtype tag, shape, and
//! row-major little-endian f64 data. Round-trips are bitwise exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::{params_from_tensors, ModelParams, ModelSpec};

const MAGIC: &[u8; 4] = b"MZCP";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&params.spec)
        .map_err(|e| Error::Checkpoint(format!("could not encode spec header: {e}")))?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(params.set.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.set.iter() {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&[DTYPE_F64, 2])?;
        out.write_all(&(tensor.rows as u32).to_le_bytes())?;
        out.write_all(&(tensor.cols as u32).to_le_bytes())?;
        for v in &tensor.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, not a checkpoint file")));
    }
    let version = read_u32(&mut input, "format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = read_u32(&mut input, "header length")? as usize;
    let mut header = vec![0u8; header_len];
    read_exact(&mut input, &mut header, "spec header")?;
    let spec: ModelSpec = serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(format!("could not decode spec header: {e}")))?;

    let count = read_u32(&mut input, "parameter count")? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for index in 0..count {
        let name_len = read_u32(&mut input, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut input, &mut name_bytes, "parameter name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("parameter {index} name is not utf-8")))?;
        let mut tags = [0u8; 2];
        read_exact(&mut input, &mut tags, "dtype and rank")?;
        if tags[0] != DTYPE_F64 {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?} has unsupported dtype tag {}",
                tags[0]
            )));
        }
        if tags[1] != 2 {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?} has rank {}, expected 2",
                tags[1]
            )));
        }
        let rows = read_u32(&mut input, "rows")? as usize;
        let cols = read_u32(&mut input, "cols")? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            read_exact(&mut input, &mut buf, "tensor data")?;
            *v = f64::from_le_bytes(buf);
        }
        if tensors.insert(name.clone(), Tensor::matrix(rows, cols, data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name:?}")));
        }
    }
    let mut trailer = [0u8; 1];
    if input.read(&mut trailer)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    params_from_tensors(&spec, tensors)
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u32(input: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

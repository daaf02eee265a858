//! Checkpoint file: a fixed parameter-name -> shape -> little-endian f64
//! record per tensor plus the config hash, written atomically
//! (write-temp-then-rename).

use crate::model::ModelParams;
use crate::tape::Matrix;
use std::fs;
use std::io::{self, Read};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"ASHGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint param '{name}': {detail}")]
    BadParam { name: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save(params: &ModelParams, config_hash: &str, path: &Path) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let hash = config_hash.as_bytes();
    buf.extend_from_slice(&(hash.len() as u16).to_le_bytes());
    buf.extend_from_slice(hash);
    let list = params.params();
    buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
    for p in list {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.ncols() as u32).to_le_bytes());
        for &v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub config_hash: String,
    pub tensors: Vec<(String, Matrix)>,
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(io_err(path))?;
    let mut cur = io::Cursor::new(buf);

    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut cur, path)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let hash_len = read_u16(&mut cur, path)? as usize;
    let mut hash = vec![0u8; hash_len];
    cur.read_exact(&mut hash).map_err(io_err(path))?;
    let config_hash = String::from_utf8_lossy(&hash).into_owned();

    let count = read_u32(&mut cur, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut cur, path)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(io_err(path))?;
        let name = String::from_utf8_lossy(&name).into_owned();
        let rows = read_u32(&mut cur, path)? as usize;
        let cols = read_u32(&mut cur, path)? as usize;
        let mut data = vec![0f64; rows * cols];
        for v in data.iter_mut() {
            let mut b = [0u8; 8];
            cur.read_exact(&mut b).map_err(io_err(path))?;
            *v = f64::from_le_bytes(b);
        }
        let m = Matrix::from_shape_vec((rows, cols), data).map_err(|e| {
            CheckpointError::BadParam {
                name: name.clone(),
                detail: e.to_string(),
            }
        })?;
        tensors.push((name, m));
    }
    Ok(LoadedCheckpoint {
        config_hash,
        tensors,
    })
}

/// Copies checkpoint tensors into freshly initialized params, matching by
/// name and validating shapes.
pub fn apply(params: &mut ModelParams, ckpt: &LoadedCheckpoint) -> Result<(), CheckpointError> {
    for p in params.params_mut() {
        let Some((_, value)) = ckpt.tensors.iter().find(|(n, _)| *n == p.name) else {
            return Err(CheckpointError::BadParam {
                name: p.name.clone(),
                detail: "missing from checkpoint".into(),
            });
        };
        if value.dim() != p.value.dim() {
            return Err(CheckpointError::BadParam {
                name: p.name.clone(),
                detail: format!("shape {:?} expected {:?}", value.dim(), p.value.dim()),
            });
        }
        p.value.assign(value);
    }
    Ok(())
}

fn read_u32(cur: &mut io::Cursor<Vec<u8>>, path: &Path) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(cur: &mut io::Cursor<Vec<u8>>, path: &Path) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u16::from_le_bytes(b))
}

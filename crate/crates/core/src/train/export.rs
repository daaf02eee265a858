//! Embedding export formats: TSV (`node_id<TAB>v1..vd`, with the run
//! manifest hash on a leading comment line) and the equivalent binary
//! (magic "ASHG", u32 n, u32 d, row-major f32).

use crate::tape::Matrix;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const BIN_MAGIC: &[u8; 4] = b"ASHG";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("embedding io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad embedding file: {0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Trained embeddings with provenance.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub values: Matrix,
    pub config_hash: String,
    pub epoch: usize,
}

pub fn write_tsv(emb: &EmbeddingMatrix, path: &Path) -> Result<(), ExportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    writeln!(w, "# config_hash={}\tepoch={}", emb.config_hash, emb.epoch).map_err(io_err(path))?;
    for (i, row) in emb.values.rows().into_iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{i}\t{}", vals.join("\t")).map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_tsv(path: &Path) -> Result<Matrix, ExportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let _node: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ExportError::Format(format!("bad node id in '{line}'")))?;
        let vals: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
        rows.push(vals.map_err(|e| ExportError::Format(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(ExportError::Format("no embedding rows".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(ExportError::Format("ragged embedding rows".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    Ok(Matrix::from_shape_vec((n, d), flat).expect("consistent dims"))
}

pub fn write_bin(emb: &EmbeddingMatrix, path: &Path) -> Result<(), ExportError> {
    let (n, d) = emb.values.dim();
    let mut buf = Vec::with_capacity(12 + n * d * 4);
    buf.extend_from_slice(BIN_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in emb.values.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_bin(path: &Path) -> Result<Matrix, ExportError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(io_err(path))?;
    if buf.len() < 12 || &buf[..4] != BIN_MAGIC {
        return Err(ExportError::Format("missing ASHG magic".into()));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() != 12 + n * d * 4 {
        return Err(ExportError::Format(format!(
            "payload is {} bytes, expected {} for {n}x{d}",
            buf.len() - 12,
            n * d * 4
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    for chunk in buf[12..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok(Matrix::from_shape_vec((n, d), data).expect("size validated"))
}

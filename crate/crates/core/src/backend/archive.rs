//! Embedding archive: `C3EM`, version, count and dim as `u32` LE, then
//! `f32` LE rows; utterance ids live in a `.ids` sidecar, one per line.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"C3EM";
const VERSION: u32 = 1;

/// Embeddings addressable by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S> {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<S>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::ShapeMismatch("ids and rows".into()));
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, rows, index })
    }

    pub fn get(&self, id: &str) -> Result<&[S]> {
        self.index
            .get(id)
            .map(|&i| self.rows[i].as_slice())
            .ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_embeddings<S: Scalar>(path: &Path, table: &EmbeddingTable<S>) -> Result<()> {
    let dim = table.dim();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [VERSION, table.len() as u32, dim as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for row in &table.rows {
        if row.len() != dim {
            return Err(Error::ShapeMismatch("ragged embedding rows".into()));
        }
        for &x in row {
            w.write_all(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut ids = std::io::BufWriter::new(std::fs::File::create(sidecar_path(path))?);
    for id in &table.ids {
        writeln!(ids, "{id}")?;
    }
    ids.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{} is not an embedding archive", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let (count, dim) = (word(1) as usize, word(2) as usize);
    let payload = &bytes[16..];
    if payload.len() != count * dim * 4 {
        return Err(Error::Format("embedding payload length".into()));
    }
    let rows = payload
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|r| {
            r.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();
    let ids: Vec<String> = std::fs::read_to_string(sidecar_path(path))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if ids.len() != count {
        return Err(Error::Format("id sidecar count differs from archive".into()));
    }
    EmbeddingTable::new(ids, rows)
}

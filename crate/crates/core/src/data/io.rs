//! Dataset persistence: a text manifest (`id speaker_id T byte_offset` per
//! line after a `#` header) and a binary file of little-endian `f32` frames,
//! row-major, utterances back to back.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Mat;

const HEADER: &str = "# c3dino-dataset v1 feat_dim=";

pub fn write_dataset(ds: &Dataset, manifest: &Path, frames: &Path) -> Result<()> {
    let mut m = std::io::BufWriter::new(std::fs::File::create(manifest)?);
    let mut f = std::io::BufWriter::new(std::fs::File::create(frames)?);
    writeln!(m, "{HEADER}{}", ds.feat_dim)?;
    let mut offset = 0u64;
    for u in &ds.utterances {
        writeln!(m, "{} {} {} {}", u.id, u.speaker_id, u.len(), offset)?;
        for &v in u.frames.data() {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
        offset += (u.frames.data().len() * 4) as u64;
    }
    m.flush()?;
    f.flush()?;
    Ok(())
}

pub fn read_dataset(manifest: &Path, frames: &Path) -> Result<Dataset> {
    let mut lines = std::io::BufReader::new(std::fs::File::open(manifest)?).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let feat_dim: usize = header
        .strip_prefix(HEADER)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad manifest header `{header}`")))?;
    let mut bytes = Vec::new();
    std::fs::File::open(frames)?.read_to_end(&mut bytes)?;

    let mut utterances = Vec::new();
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("manifest line `{line}`"));
        let [id, spk, t, off] = fields.as_slice() else {
            return Err(bad());
        };
        let speaker_id: usize = spk.parse().map_err(|_| bad())?;
        let t: usize = t.parse().map_err(|_| bad())?;
        let off: usize = off.parse().map_err(|_| bad())?;
        let end = off + t * feat_dim * 4;
        let chunk = bytes
            .get(off..end)
            .ok_or_else(|| Error::Format(format!("frames for `{id}` exceed the frame file")))?;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        utterances.push(Utterance {
            id: id.to_string(),
            speaker_id,
            frames: Mat::from_vec(t, feat_dim, data)?,
            session: Vec::new(),
        });
    }
    Ok(Dataset {
        feat_dim,
        utterances,
        speakers: Vec::new(),
        mixing: None,
    })
}

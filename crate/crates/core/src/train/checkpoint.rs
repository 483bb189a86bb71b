//! Versioned binary checkpoint.
//!
//! Layout: magic `C3CK`, `u32` version, the architecture, then
//! length-prefixed little-endian `f64` arrays for both encoders, the
//! optimizer, the optional DINO heads and center, and the negative queue.
//! A SHA-256 digest of everything before it closes the file.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::Adam;
use super::Mode;
use crate::cssl::NegativeQueue;
use crate::dino::{CenterState, DinoHead};
use crate::encoder::{init_params, ArchConfig, EncoderPair, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"C3CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Heads, optimizer and center of the self-distillation branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DinoState {
    pub student: DinoHead<f64>,
    pub teacher: DinoHead<f64>,
    pub adam: Adam,
    pub center: CenterState<f64>,
}

/// Complete resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub mode: Mode,
    pub pair: EncoderPair<f64>,
    pub adam: Adam,
    pub dino: Option<DinoState>,
    pub queue: NegativeQueue<f64>,
    /// Optimizer steps taken over the whole run.
    pub step: u64,
    /// Epochs completed over the whole run.
    pub epoch: u64,
    /// Position within the current learning-rate phase and its length.
    pub phase_step: u64,
    pub phase_steps: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn arr(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn encoder(&mut self, e: &EncoderParams<f64>) {
        self.arr(&e.values);
        self.arr(&e.running_mean);
        self.arr(&e.running_var);
    }
    fn adam(&mut self, a: &Adam) {
        self.u64(a.t);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.f64(a.weight_decay);
        self.arr(&a.m);
        self.arr(&a.v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8".into()))
    }
    fn arr(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
    fn arr_of(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.arr()?;
        if v.len() != n {
            return Err(Error::Format(format!("{what}: expected {n} values, found {}", v.len())));
        }
        Ok(v)
    }
    fn encoder(&mut self, arch: &ArchConfig) -> Result<EncoderParams<f64>> {
        let mut e: EncoderParams<f64> = init_params(arch, 0)?;
        e.values = self.arr_of(e.values.len(), "encoder parameters")?;
        e.running_mean = self.arr_of(e.running_mean.len(), "running mean")?;
        e.running_var = self.arr_of(e.running_var.len(), "running variance")?;
        Ok(e)
    }
    fn adam(&mut self, n: usize) -> Result<Adam> {
        let t = self.u64()?;
        let (beta1, beta2, eps, weight_decay) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        Ok(Adam {
            t,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: self.arr_of(n, "adam m")?,
            v: self.arr_of(n, "adam v")?,
        })
    }
}

fn write_arch(w: &mut Writer, a: &ArchConfig) {
    w.u64(a.input_dim as u64);
    w.u64(a.frame_widths.len() as u64);
    a.frame_widths.iter().for_each(|&x| w.u64(x as u64));
    w.u64(a.head_hidden as u64);
    w.u64(a.embed_dim as u64);
    w.u32(a.head_norm as u32);
    w.f64(a.pool_eps);
    w.f64(a.norm_eps);
    w.f64(a.stats_momentum);
}

fn read_arch(r: &mut Reader) -> Result<ArchConfig> {
    let input_dim = r.usize()?;
    let layers = r.usize()?;
    if layers > 1024 {
        return Err(Error::Format("implausible layer count".into()));
    }
    let frame_widths = (0..layers).map(|_| r.usize()).collect::<Result<_>>()?;
    Ok(ArchConfig {
        input_dim,
        frame_widths,
        head_hidden: r.usize()?,
        embed_dim: r.usize()?,
        head_norm: r.u32()? != 0,
        pool_eps: r.f64()?,
        norm_eps: r.f64()?,
        stats_momentum: r.f64()?,
    })
}

/// Serialized checkpoint bytes, digest included.
pub fn checkpoint_bytes(s: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    write_arch(&mut w, &s.pair.student.arch);
    w.str(s.mode.name());
    for v in [s.step, s.epoch, s.phase_step, s.phase_steps] {
        w.u64(v);
    }
    w.f64(s.pair.momentum);
    w.encoder(&s.pair.student);
    w.encoder(&s.pair.teacher);
    w.adam(&s.adam);
    match &s.dino {
        None => w.u32(0),
        Some(d) => {
            w.u32(1);
            w.u64(d.student.dim as u64);
            w.u64(d.student.k as u64);
            w.arr(&d.student.values);
            w.arr(&d.teacher.values);
            w.adam(&d.adam);
            w.f64(d.center.momentum);
            w.arr(&d.center.center);
        }
    }
    w.u64(s.queue.capacity() as u64);
    w.u64(s.queue.next_slot() as u64);
    w.u64(s.queue.len() as u64);
    for i in 0..s.queue.len() {
        w.arr(&s.queue.keys()[i]);
        w.u64(s.queue.labels()[i].map_or(u64::MAX, |l| l as u64));
        w.u64(s.queue.stamps()[i]);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Hex SHA-256 of the checkpoint payload.
pub fn checkpoint_digest(s: &TrainState) -> String {
    let bytes = checkpoint_bytes(s);
    hex(&bytes[bytes.len() - 32..])
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(path: &Path, s: &TrainState) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(s))?;
    Ok(())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 40 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint digest mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let arch = read_arch(&mut r)?;
    arch.validate()?;
    let mode: Mode = r.str()?.parse()?;
    let (step, epoch, phase_step, phase_steps) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let momentum = r.f64()?;
    let student = r.encoder(&arch)?;
    let teacher = r.encoder(&arch)?;
    let adam = r.adam(student.values.len())?;
    let dino = match r.u32()? {
        0 => None,
        _ => {
            let (dim, k) = (r.usize()?, r.usize()?);
            let n = dim.checked_mul(k).and_then(|x| x.checked_add(k));
            let n = n.ok_or_else(|| Error::Format("head size overflow".into()))?;
            let student = DinoHead {
                dim,
                k,
                values: r.arr_of(n, "student head")?,
            };
            let teacher = DinoHead {
                dim,
                k,
                values: r.arr_of(n, "teacher head")?,
            };
            let adam = r.adam(n)?;
            let cm = r.f64()?;
            let center = CenterState {
                center: r.arr_of(k, "center")?,
                momentum: cm,
            };
            Some(DinoState {
                student,
                teacher,
                adam,
                center,
            })
        }
    };
    let capacity = r.usize()?;
    let next = r.usize()?;
    let count = r.usize()?;
    let (mut keys, mut labels, mut stamps) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        keys.push(r.arr()?);
        let label = r.u64()?;
        labels.push((label != u64::MAX).then_some(label as usize));
        stamps.push(r.u64()?);
    }
    let queue = NegativeQueue::from_slots(capacity, keys, labels, stamps, next)?;
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(TrainState {
        mode,
        pair: EncoderPair {
            student,
            teacher,
            momentum,
        },
        adam,
        dino,
        queue,
        step,
        epoch,
        phase_step,
        phase_steps,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    parse_checkpoint(&std::fs::read(path)?)
}

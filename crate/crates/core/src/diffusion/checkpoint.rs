//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      b"SFCK"
//! version    u32 (= 1)
//! data_dim   u32
//! temb_dim   u32
//! activation u8   (0 = silu, 1 = tanh)
//! n_hidden   u32, then n_hidden × u32 widths
//! steps      u32
//! schedule   u8   (0 = linear)
//! beta_start f64
//! beta_end   f64
//! n_values   u64
//! values     n_values × f64, parameter tensors in declaration order
//! ```

use std::fs;
use std::path::Path;

use super::denoiser::{Activation, Arch, Denoiser};
use super::schedule::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"SFCK";
const VERSION: u32 = 1;

pub fn encode(model: &Denoiser, sched: &NoiseSchedule) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.data_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.temb_dim as u32).to_le_bytes());
    out.push(match arch.activation {
        Activation::Silu => 0,
        Activation::Tanh => 1,
    });
    out.extend_from_slice(&(arch.hidden.len() as u32).to_le_bytes());
    for &h in &arch.hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(sched.steps() as u32).to_le_bytes());
    out.push(match sched.kind() {
        ScheduleKind::Linear => 0,
    });
    out.extend_from_slice(&sched.beta_start().to_le_bytes());
    out.extend_from_slice(&sched.beta_end().to_le_bytes());
    out.extend_from_slice(&(model.num_params() as u64).to_le_bytes());
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Denoiser, NoiseSchedule)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let data_dim = r.u32()? as usize;
    let temb_dim = r.u32()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Silu,
        1 => Activation::Tanh,
        other => return Err(Error::Checkpoint(format!("unknown activation tag {other}"))),
    };
    let n_hidden = r.u32()? as usize;
    let hidden = (0..n_hidden)
        .map(|_| r.u32().map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let steps = r.u32()? as usize;
    let kind = match r.u8()? {
        0 => ScheduleKind::Linear,
        other => return Err(Error::Checkpoint(format!("unknown schedule tag {other}"))),
    };
    let beta_start = r.f64()?;
    let beta_end = r.f64()?;
    let arch = Arch {
        data_dim,
        hidden,
        activation,
        temb_dim,
    };
    arch.validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_values = r.u64()? as usize;
    if n_values != arch.num_params() {
        return Err(Error::Checkpoint(format!(
            "architecture needs {} values, header declares {n_values}",
            arch.num_params()
        )));
    }
    let mut params = Vec::new();
    for shape in arch.param_shapes() {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let sched = NoiseSchedule::new(steps, beta_start, beta_end, kind)?;
    Ok((Denoiser::from_params(arch, params)?, sched))
}

pub fn save(path: &Path, model: &Denoiser, sched: &NoiseSchedule) -> Result<()> {
    fs::write(path, encode(model, sched)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Denoiser, NoiseSchedule)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

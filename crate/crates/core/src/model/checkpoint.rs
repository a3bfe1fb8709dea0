//! Binary checkpoint format.
//!
//! Little-endian layout: magic `BNFW`, format version, dtype, architecture,
//! horizon, seed, config digest, scaling constants, tool version, parameter
//! payload, then the first 8 bytes of the SHA-256 of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Arch, MlpDenoiser, Scalar, Scaling};
use crate::error::{Error, Result};
use crate::losses::Preconditioner;

pub const MAGIC: &[u8; 4] = b"BNFW";
pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header fields that travel with the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config_digest: [u8; 32],
    pub tool_version: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a model; the byte stream is a pure function of its inputs.
pub fn encode<S: Scalar>(model: &MlpDenoiser<S>, config_digest: [u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + model.params.len() * std::mem::size_of::<S>());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.push(S::DTYPE);
    let a = model.arch;
    for v in [a.input_dim, a.width, a.n_blocks, a.emb_dim] {
        put_u32(&mut out, v as u32);
    }
    put_f64(&mut out, model.final_time);
    put_u64(&mut out, model.seed);
    out.extend_from_slice(&config_digest);
    match model.scaling {
        Scaling::Standardize { mean, std } => {
            out.push(0);
            put_f64(&mut out, mean);
            put_f64(&mut out, std);
            put_f64(&mut out, 0.0);
        }
        Scaling::Precondition(p) => {
            out.push(1);
            put_f64(&mut out, p.mu_data);
            put_f64(&mut out, p.sigma2_data);
            put_f64(&mut out, p.eps_cin);
        }
    }
    let tv = TOOL_VERSION.as_bytes();
    out.extend_from_slice(&(tv.len() as u16).to_le_bytes());
    out.extend_from_slice(tv);
    put_u64(&mut out, model.params.len() as u64);
    for &p in &model.params {
        p.write_le(&mut out);
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    out
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let h = Sha256::digest(bytes);
    h[..8].try_into().expect("8 bytes")
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

/// Parses a checkpoint; `expected_dim` rejects models of another dimension.
pub fn decode<S: Scalar>(
    bytes: &[u8],
    expected_dim: Option<usize>,
) -> Result<(MlpDenoiser<S>, CheckpointMeta)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a BNFW checkpoint".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != tail {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let dtype = r.u8()?;
    if dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "stored weights are {}-byte floats, requested {}-byte",
            dtype,
            S::DTYPE
        )));
    }
    let arch = Arch {
        input_dim: r.u32()? as usize,
        width: r.u32()? as usize,
        n_blocks: r.u32()? as usize,
        emb_dim: r.u32()? as usize,
    };
    if let Some(d) = expected_dim {
        if d != arch.input_dim {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: checkpoint has d = {}, expected d = {d}",
                arch.input_dim
            )));
        }
    }
    let final_time = r.f64()?;
    let seed = r.u64()?;
    let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32");
    let tag = r.u8()?;
    let (c0, c1, c2) = (r.f64()?, r.f64()?, r.f64()?);
    let scaling = match tag {
        0 => Scaling::Standardize { mean: c0, std: c1 },
        1 => Scaling::Precondition(Preconditioner::new(c0, c1)?.with_eps_cin(c2)),
        other => return Err(Error::Checkpoint(format!("unknown scaling tag {other}"))),
    };
    let tv_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2")) as usize;
    let tool_version = String::from_utf8(r.take(tv_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("tool version is not UTF-8".into()))?;
    let n = r.u64()? as usize;
    let mut model = MlpDenoiser::<S>::new(arch, scaling, final_time, seed)
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    if n != arch.n_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match architecture ({})",
            arch.n_params()
        )));
    }
    let width = std::mem::size_of::<S>();
    let payload = r.take(n * width)?;
    model.params = payload.chunks_exact(width).map(S::read_le).collect();
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((
        model,
        CheckpointMeta {
            config_digest,
            tool_version,
        },
    ))
}

pub fn save_model<S: Scalar>(
    model: &MlpDenoiser<S>,
    config_digest: [u8; 32],
    path: &Path,
) -> Result<()> {
    std::fs::write(path, encode(model, config_digest))?;
    Ok(())
}

pub fn load_model<S: Scalar>(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<(MlpDenoiser<S>, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, expected_dim)
}

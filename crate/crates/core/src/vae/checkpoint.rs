//! Versioned binary checkpoints. Little-endian throughout:
//!
//! ```text
//! magic "SDNCKPT\0" | u32 version | [u8; 32] config digest
//! u64 config length | config text (UTF-8)
//! params block
//! u8 has_state
//!   u64 step | first-moment block | second-moment block | EMA block
//!   [u8; 32] rng seed | u64 rng stream | u128 rng word position
//! ```
//!
//! A params block is `u32 count`, then per tensor `u32 name length | name |
//! u32 ndim | u64 dims... | f64 data...` in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::Float;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer, EMA and noise-stream state needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
    pub ema: ParamStore,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub config_text: String,
    pub params: ParamStore,
    pub state: Option<TrainingState>,
}

impl Checkpoint {
    /// Parameters for evaluation: the EMA shadows when present.
    pub fn eval_params(&self) -> &ParamStore {
        self.state.as_ref().map_or(&self.params, |s| &s.ema)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        write_block(&mut out, &self.params);
        match &self.state {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.step.to_le_bytes());
                write_block(&mut out, &s.first_moment);
                write_block(&mut out, &s.second_moment);
                write_block(&mut out, &s.ema);
                out.extend_from_slice(&s.rng.seed);
                out.extend_from_slice(&s.rng.stream.to_le_bytes());
                out.extend_from_slice(&s.rng.word_pos.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {}", version)));
        }
        let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.u64()? as usize;
        let config_text =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("checkpoint", "config text is not UTF-8"))?;
        let params = read_block(&mut r)?;
        let state = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let first_moment = read_block(&mut r)?;
                let second_moment = read_block(&mut r)?;
                let ema = read_block(&mut r)?;
                let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
                Some(TrainingState { step, first_moment, second_moment, ema, rng: RngState { seed, stream, word_pos } })
            }
            t => return Err(Error::format("checkpoint", format!("bad state tag {}", t))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config_digest, config_text, params, state })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn write_block(out: &mut Vec<u8>, store: &ParamStore) {
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(*v as f64).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_block(r: &mut Reader<'_>) -> Result<ParamStore> {
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Float).collect();
        store.insert(name, Tensor::new(&shape, data)?).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    }
    Ok(store)
}

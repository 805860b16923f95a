//! Binary checkpoint: magic `EDSR`, u32 version, then little-endian fields:
//!
//! ```text
//! u32 echo_len, echo bytes (UTF-8 `key = value` lines)
//! u32 tensor_count
//!   per tensor: u32 name_len, name, u8 dtype (0 = f32, 1 = f64), u8 rank,
//!               rank × u64 dims, raw element data
//! u64 iteration
//! u32 rng_len, rng bytes (32-byte seed, u64 stream, u128 word position)
//! ```
//!
//! Optimizer moments are stored as ordinary tensors named `opt.m.<param>`
//! and `opt.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"EDSR";
pub const VERSION: u32 = 1;
pub const MOMENT1_PREFIX: &str = "opt.m.";
pub const MOMENT2_PREFIX: &str = "opt.v.";
const RNG_BLOB_LEN: usize = 32 + 8 + 16;

/// Serialisable position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.seed.to_vec();
        b.extend_from_slice(&self.stream.to_le_bytes());
        b.extend_from_slice(&self.word_pos.to_le_bytes());
        b
    }

    fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != RNG_BLOB_LEN {
            return Err(Error::Checkpoint(format!("rng state has {} bytes, expected {RNG_BLOB_LEN}", b.len())));
        }
        Ok(RngState {
            seed: b[..32].try_into().unwrap(),
            stream: u64::from_le_bytes(b[32..40].try_into().unwrap()),
            word_pos: u128::from_le_bytes(b[40..56].try_into().unwrap()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub config_echo: String,
    pub tensors: Vec<(String, Tensor<F>)>,
    pub iteration: u64,
    pub rng: RngState,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "file truncated while reading {what} (need {n} bytes at offset {}, {} left)",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

fn decode_tensor<G: Float, F: Float>(raw: &[u8], shape: [usize; 4]) -> Tensor<F> {
    let data = raw.chunks_exact(G::BYTES).map(|c| F::of(G::read_le(c).f64())).collect();
    Tensor::from_vec(shape, data).expect("length checked by caller")
}

impl<F: Float> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.config_echo.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config_echo.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(F::DTYPE_CODE);
            b.push(4);
            for d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                v.write_le(&mut b);
            }
        }
        b.extend_from_slice(&self.iteration.to_le_bytes());
        let rng = self.rng.to_bytes();
        b.extend_from_slice(&(rng.len() as u32).to_le_bytes());
        b.extend_from_slice(&rng);
        b
    }

    /// Parses a checkpoint; stored tensors of either precision are converted to `F`.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let config_echo = r.string("config echo")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let name = r.string(&format!("name of tensor {i}"))?;
            let dtype = r.u8(&format!("dtype of '{name}'"))?;
            let rank = r.u8(&format!("rank of '{name}'"))? as usize;
            if rank > 4 {
                return Err(Error::Checkpoint(format!("tensor '{name}' has rank {rank}, at most 4 supported")));
            }
            let mut shape = [1usize; 4];
            for k in 0..rank {
                shape[4 - rank + k] = r.u64(&format!("dims of '{name}'"))? as usize;
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes_per = match dtype {
                0 => 4,
                1 => 8,
                _ => return Err(Error::Checkpoint(format!("tensor '{name}' has unknown dtype code {dtype}"))),
            };
            let len = numel
                .and_then(|n| n.checked_mul(bytes_per))
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' dims overflow")))?;
            let raw = r.take(len, &format!("data of '{name}'"))?;
            let t = if dtype == 0 { decode_tensor::<f32, F>(raw, shape) } else { decode_tensor::<f64, F>(raw, shape) };
            tensors.push((name, t));
        }
        let iteration = r.u64("iteration counter")?;
        let rng_len = r.u32("rng state length")? as usize;
        let rng = RngState::from_bytes(r.take(rng_len, "rng state")?)?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after rng state", buf.len() - r.pos)));
        }
        Ok(Checkpoint { config_echo, tensors, iteration, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never clobbers the last good file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fails naming the first key whose value differs from `live`.
    pub fn check_echo(&self, live: &str) -> Result<()> {
        let stored = echo_map(&self.config_echo);
        let current = echo_map(live);
        for (key, want) in &current {
            match stored.get(key) {
                Some(have) if have == want => {}
                Some(have) => {
                    return Err(Error::Checkpoint(format!(
                        "config mismatch in field '{key}': checkpoint has {have}, live model has {want}"
                    )))
                }
                None => return Err(Error::Checkpoint(format!("config mismatch: checkpoint lacks field '{key}'"))),
            }
        }
        if let Some(extra) = stored.keys().find(|k| !current.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("config mismatch: unexpected field '{extra}' in checkpoint")));
        }
        Ok(())
    }
}

fn echo_map(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

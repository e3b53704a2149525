//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "NCSR"  magic
//! u32     format version
//! u32 n, n bytes   model config as `key = value` text
//! u64     training step
//! u8      rng state present; if 1: 32 seed bytes, u64 stream, u128 word position
//! u8      actnorm initialized
//! u32     tensor count, then per tensor:
//!         u32 name length, name bytes, u8 dtype tag (1 = f64),
//!         u8 rank, rank x u64 dims, values
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{NcsrError, Result};
use crate::model::{ModelConfig, Ncsr};
use crate::numerics::{Rng, RngState, Tensor};

pub const MAGIC: &[u8; 4] = b"NCSR";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub rng: Option<RngState>,
    pub actnorm_initialized: bool,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Ncsr, step: u64, rng: Option<&Rng>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            step,
            rng: rng.map(Rng::state),
            actnorm_initialized: model.actnorm_initialized(),
            tensors: model.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_model(&self) -> Result<Ncsr> {
        // the build rng only seeds values that are overwritten below
        let mut model = Ncsr::build(self.config.clone(), &mut Rng::seed_from_u64(0))?;
        model.params.load_named(self.tensors.clone())?;
        model.set_actnorm_initialized(self.actnorm_initialized);
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        match &self.rng {
            Some(s) => {
                b.push(1);
                b.extend_from_slice(&s.seed);
                b.extend_from_slice(&s.stream.to_le_bytes());
                b.extend_from_slice(&s.word_pos.to_le_bytes());
            }
            None => b.push(0),
        }
        b.push(self.actnorm_initialized as u8);
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(DTYPE_F64);
            b.push(4);
            for d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NcsrError::Checkpoint("bad magic, not an NCSR checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NcsrError::Checkpoint(format!("unsupported format version {version}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| NcsrError::Checkpoint("config is not UTF-8".into()))?;
        let config = ModelConfig::from_text(text)?;
        let step = r.u64()?;
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32)?);
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
                Some(RngState { seed, stream, word_pos })
            }
            t => return Err(NcsrError::Checkpoint(format!("bad rng flag {t}"))),
        };
        let actnorm_initialized = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(NcsrError::Checkpoint(format!("bad actnorm flag {t}"))),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| NcsrError::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(NcsrError::Checkpoint(format!("tensor `{name}`: unsupported dtype tag {dtype}")));
            }
            let rank = r.u8()?;
            if rank != 4 {
                return Err(NcsrError::Checkpoint(format!("tensor `{name}`: rank {rank}, expected 4")));
            }
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = usize::try_from(r.u64()?).map_err(|_| NcsrError::Checkpoint("dimension overflow".into()))?;
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| NcsrError::Checkpoint(format!("tensor `{name}`: shape overflow")))?;
            let raw = r.take(bytes)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(NcsrError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            step,
            rng,
            actnorm_initialized,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Hex SHA-256 of a byte string.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NcsrError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseBatch;

    fn small() -> ModelConfig {
        ModelConfig {
            scale_factor: 2,
            levels: 2,
            flow_steps_per_level: 1,
            ncl_blocks: vec![1],
            encoder_blocks: 1,
            encoder_width: 4,
            coupling_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut rng = Rng::seed_from_u64(1);
        let mut m = Ncsr::build(small(), &mut rng).unwrap();
        m.jitter(&mut rng, 0.1);
        m.set_actnorm_initialized(true);
        let ck = Checkpoint::from_model(&m, 42, Some(&rng));
        let mut snapshot = Rng::from_state(rng.state());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let m2 = back.to_model().unwrap();
        let x = rng.uniform_tensor([2, 3, 8, 8], 0.0, 1.0);
        let y = rng.uniform_tensor([2, 3, 4, 4], 0.0, 1.0);
        let nz = NoiseBatch::zeros(x.shape());
        let a = m.nll(&x, &y, &nz).unwrap();
        let b = m2.nll(&x, &y, &nz).unwrap();
        for (p, q) in a.nats.iter().zip(&b.nats) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
        let mut r1 = Rng::from_state(back.rng.unwrap());
        assert_eq!(r1.next_u64(), snapshot.next_u64());
        assert!(m2.actnorm_initialized());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = Ncsr::build(small(), &mut Rng::seed_from_u64(1)).unwrap();
        let bytes = Checkpoint::from_model(&m, 0, None).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

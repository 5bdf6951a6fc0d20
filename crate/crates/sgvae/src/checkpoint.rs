//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SGVAECKP" | version u32 | spec digest [u8; 32] | epoch u64
//! tensor count u32 | per tensor: name (u32 length + UTF-8), tensor
//! adam step u64 | first moments (tensor each) | second moments (tensor each)
//! ```
//!
//! A tensor is `rank u32 | extents u64 × rank | f64 × product(extents)`.

use std::path::Path;

use sgvae_core::train::AdamState;
use sgvae_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SGVAECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub epoch: u64,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub adam: AdamState,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
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
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("extent does not fit in memory".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor rank {rank} is implausible")));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (self.bytes.len() - self.pos) / 8)
            .ok_or_else(|| Error::Checkpoint(format!("tensor of shape {shape:?} overruns the file")))?;
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.params) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for t in self.adam.m.iter().chain(&self.adam.v) {
            put_tensor(&mut out, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let epoch = r.u64()?;
        let count = r.u32()? as usize;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            names.push(name.to_string());
            params.push(r.tensor()?);
        }
        let step = r.u64()?;
        let m = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let v = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        for (p, (a, b)) in params.iter().zip(m.iter().zip(&v)) {
            if a.shape() != p.shape() || b.shape() != p.shape() {
                return Err(Error::Checkpoint(
                    "optimizer state shapes disagree with parameters".into(),
                ));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            digest,
            epoch,
            names,
            params,
            adam: AdamState { m, v, step },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io(path))?)
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// Fails unless the checkpoint was written for the model with `digest`.
    pub fn check_digest(&self, digest: &str) -> Result<()> {
        if self.digest_hex() == digest {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "written for model {} but the given model is {digest}",
                self.digest_hex()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let params = vec![
            Tensor::new([2, 3], vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
            Tensor::new([1, 2], vec![0.25, -0.5]).unwrap(),
        ];
        let mut adam = AdamState::new(&params);
        adam.step = 17;
        adam.m[0].data_mut()[1] = 0.125;
        adam.v[1].data_mut()[0] = 9.0;
        Checkpoint {
            digest: [7; 32],
            epoch: 3,
            names: vec!["a.w".into(), "a.b".into()],
            params,
            adam,
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 20, 60, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }

    #[test]
    fn digest_check() {
        let c = sample();
        assert!(c.check_digest(&hex::encode([7u8; 32])).is_ok());
        assert!(c.check_digest(&hex::encode([8u8; 32])).is_err());
    }
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u64` unless noted:
//!
//! ```text
//! magic        8 bytes  "IPLLCKPT"
//! version      u32      1
//! vocab_size, embed_dim, num_classes, seed
//! n_hidden, hidden_dims[n_hidden]
//! n_params
//! per parameter: ndim, dims[ndim], values[prod(dims)] as f64 bits
//! ```
//!
//! Parameters appear in declaration order: embedding, each hidden layer's
//! weight and bias, classifier weight and bias.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IPLLCKPT";
const VERSION: u32 = 1;
const FORMAT: &str = "checkpoint";

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.vocab_size, cfg.embed_dim, cfg.num_classes] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&(cfg.hidden_dims.len() as u64).to_le_bytes());
    for &h in &cfg.hidden_dims {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.shape().len() as u64).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.values() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    field: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(FORMAT, self.field, "unexpected end of input"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        self.field += 1;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(FORMAT, self.field, "size overflows usize"))
    }

    /// A count of items that each occupy at least `unit` more bytes.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        let remaining = self.bytes.len() - self.pos;
        if n.checked_mul(unit).is_none_or(|need| need > remaining) {
            return Err(Error::format(FORMAT, self.field, format!("count {n} exceeds input")));
        }
        Ok(n)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader {
        bytes,
        pos: 0,
        field: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::format(FORMAT, 0, "bad magic"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(FORMAT, 1, format!("unsupported version {version}")));
    }
    let vocab_size = r.usize()?;
    let embed_dim = r.usize()?;
    let num_classes = r.usize()?;
    let seed = r.u64()?;
    let n_hidden = r.count(8)?;
    let hidden_dims = (0..n_hidden).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        vocab_size,
        embed_dim,
        hidden_dims,
        num_classes,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::format(FORMAT, r.field, e.to_string()))?;
    let n_params = r.count(8)?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let ndim = r.count(8)?;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(FORMAT, r.field, "tensor size overflows"))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::format(FORMAT, r.field, "tensor size overflows"))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        params.push(
            Tensor::new(shape, values).map_err(|e| Error::format(FORMAT, r.field, e.to_string()))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format(FORMAT, r.field, "trailing bytes"));
    }
    Model::from_params(config, params).map_err(|e| Error::format(FORMAT, r.field, e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::init(ModelConfig {
            vocab_size: 13,
            embed_dim: 4,
            hidden_dims: vec![6, 5],
            num_classes: 3,
            seed: 99,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert!(m.bitwise_eq(&back));
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let bytes = encode_checkpoint(&model());
        for cut in [0, 7, 12, 40, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let mut bytes = encode_checkpoint(&model());
        // n_hidden sits right after the four header words.
        let at = 8 + 4 + 8 * 4;
        bytes[at..at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_checkpoint(&bytes).is_err());
    }
}

//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "RACL" | u32 version | [u8; 32] config hash | u32 epoch | f64 val_loss
//! u32 tensor count
//! per tensor: u16 name length | name bytes | u8 rank | u64 dims[rank]
//! per tensor, same order: f64 values, row-major
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{HeadParams, Params};
use crate::error::{RaclError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RACL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub val_loss: f64,
    pub config_hash: [u8; 32],
    pub params: Params,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| RaclError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        let shapes = self.params.shapes();
        out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
        for (name, dims) in &shapes {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
        }
        self.params.for_each(|_, values| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(RaclError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(RaclError::Checkpoint(format!("unsupported format version {version}")));
        }
        let config_hash = r.array::<32>()?;
        let epoch = r.u32()?;
        let val_loss = r.f64()?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| RaclError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            table.push((name, dims));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, dims) in table {
            let n: usize = dims.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, dims, values));
        }
        if r.pos != buf.len() {
            return Err(RaclError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = params_from_tensors(tensors)?;
        if !params.is_finite() {
            return Err(RaclError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Checkpoint {
            epoch,
            val_loss,
            config_hash,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| RaclError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(RaclError::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| RaclError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn config_hash_hex(&self) -> String {
        hex::encode(self.config_hash)
    }
}

fn params_from_tensors(tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Params> {
    let mut it = tensors.into_iter();
    let mut next = |expect: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let (name, dims, values) = it
            .next()
            .ok_or_else(|| RaclError::Checkpoint(format!("missing tensor {expect}")))?;
        if name != expect || dims.len() != rank {
            return Err(RaclError::Checkpoint(format!(
                "expected rank-{rank} tensor {expect}, found rank-{} {name}",
                dims.len()
            )));
        }
        Ok((dims, values))
    };
    let vec1 = |(_, v): (Vec<usize>, Vec<f64>)| Array1::from(v);
    let mat = |(d, v): (Vec<usize>, Vec<f64>)| {
        Array2::from_shape_vec((d[0], d[1]), v).map_err(|e| RaclError::Checkpoint(e.to_string()))
    };
    let kernel = vec1(next("kernel", 1)?);
    let attention = mat(next("attention", 2)?)?;
    let w1 = mat(next("w1", 2)?)?;
    let b1 = vec1(next("b1", 1)?);
    let w2 = mat(next("w2", 2)?)?;
    let b2 = vec1(next("b2", 1)?);
    let w3 = mat(next("w3", 2)?)?;
    let b3 = vec1(next("b3", 1)?);
    if it.next().is_some() {
        return Err(RaclError::Checkpoint("unexpected extra tensor".into()));
    }
    let consistent = attention.nrows() == attention.ncols()
        && w1.nrows() == attention.ncols()
        && b1.len() == w1.ncols()
        && w2.nrows() == w1.ncols()
        && b2.len() == w2.ncols()
        && w3.nrows() == w2.ncols()
        && w3.ncols() == 2
        && b3.len() == 2
        && kernel.len() % 2 == 1;
    if !consistent {
        return Err(RaclError::Checkpoint("inconsistent tensor shapes".into()));
    }
    Ok(Params {
        kernel,
        head: HeadParams {
            attention,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        },
    })
}

/// Epoch indices averaged for the final model: the best epoch and up to
/// `window - 1` epochs before it.
pub fn averaging_window(best: usize, window: usize) -> std::ops::RangeInclusive<usize> {
    best.saturating_sub(window.saturating_sub(1))..=best
}

/// Elementwise mean of all parameters.
pub fn average_checkpoints(ckpts: &[&Checkpoint]) -> Result<Params> {
    let Some(first) = ckpts.first() else {
        return Err(RaclError::Checkpoint("cannot average an empty checkpoint list".into()));
    };
    let shapes = first.params.shapes();
    if let Some(bad) = ckpts.iter().find(|c| c.params.shapes() != shapes) {
        return Err(RaclError::Shape(format!(
            "checkpoint from epoch {} has different parameter shapes",
            bad.epoch
        )));
    }
    // offsets from the first checkpoint, so identical inputs average exactly
    let base = first.params.flatten();
    let mut acc = vec![0.0; base.len()];
    for c in ckpts {
        for ((a, v), b) in acc.iter_mut().zip(c.params.flatten()).zip(&base) {
            *a += v - b;
        }
    }
    let n = ckpts.len() as f64;
    let mean: Vec<f64> = base.iter().zip(&acc).map(|(b, a)| b + a / n).collect();
    let mut out = first.params.clone();
    out.assign_flat(&mean)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadConfig;

    fn ckpt(epoch: u32, seed: u64) -> Checkpoint {
        Checkpoint {
            epoch,
            val_loss: 0.25 + epoch as f64,
            config_hash: [7; 32],
            params: Params::init(4, &HeadConfig { hidden: 3, embedding: 2 }, 3, seed),
        }
    }

    #[test]
    fn serialization_is_bit_exact() {
        let mut c = ckpt(3, 1);
        c.params.head.b1[0] = -0.0;
        c.params.head.b2[1] = f64::MIN_POSITIVE;
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back, c);
        assert_eq!(&c.to_bytes()[..4], b"RACL");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = ckpt(0, 2).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn averaging_examples() {
        let c = ckpt(0, 3);
        let same = average_checkpoints(&[&c, &c, &c, &c, &c]).unwrap();
        assert_eq!(same, c.params);

        let scalars: Vec<Checkpoint> = (0..5)
            .map(|v| {
                let mut k = ckpt(v, 3);
                k.params.for_each_mut(|_, s| s.fill(v as f64));
                k
            })
            .collect();
        let refs: Vec<&Checkpoint> = scalars.iter().collect();
        let avg = average_checkpoints(&refs).unwrap();
        assert!(avg.flatten().iter().all(|&v| v == 2.0));

        assert!(average_checkpoints(&[]).is_err());
        let other = Checkpoint {
            params: Params::init(5, &HeadConfig { hidden: 3, embedding: 2 }, 3, 1),
            ..ckpt(1, 1)
        };
        assert!(matches!(average_checkpoints(&[&c, &other]), Err(RaclError::Shape(_))));
    }

    #[test]
    fn window_boundary() {
        assert_eq!(averaging_window(2, 5), 0..=2);
        assert_eq!(averaging_window(10, 5), 6..=10);
        assert_eq!(averaging_window(0, 5), 0..=0);
        assert_eq!(averaging_window(4, 1), 4..=4);
    }
}

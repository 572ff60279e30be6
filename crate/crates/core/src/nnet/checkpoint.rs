//! `NNCK` model checkpoints.
//!
//! Layout (little-endian): magic `NNCK`, u32 version (1), u32 header length,
//! UTF-8 header of `key=value` lines, u32 tensor count, then per tensor:
//! u32 name length, UTF-8 name, u32 rank, u64 dims, f32 data row-major.

use std::path::Path;

use ndarray::{ArrayBase, Data, Dimension};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format("NNCK", format!("missing header key {key:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::format("NNCK", format!("bad value {raw:?} for {key:?}")))
    }

    pub fn push<S: Data<Elem = f64>, D: Dimension>(&mut self, name: &str, a: &ArrayBase<S, D>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            data: a.iter().map(|&v| v as f32).collect(),
        });
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: vec![v.len()],
            data: v.iter().map(|&x| x as f32).collect(),
        });
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format("NNCK", format!("missing tensor {name:?}")))
    }

    /// Copies a tensor into `dst`, which must have the same element count and
    /// the given shape.
    pub fn load_into(&self, name: &str, shape: &[usize], dst: &mut [f64]) -> Result<()> {
        let t = self.tensor(name)?;
        if t.shape != shape || t.data.len() != dst.len() {
            return Err(Error::format(
                "NNCK",
                format!("tensor {name:?} has shape {:?}, expected {shape:?}", t.shape),
            ));
        }
        dst.iter_mut()
            .zip(&t.data)
            .for_each(|(d, &s)| *d = f64::from(s));
        Ok(())
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.tensor(name)?;
        Ok(t.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let header: String = self
            .header
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("NNCK", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("NNCK", format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::format("NNCK", "header is not UTF-8"))?;
        let mut header = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("NNCK", format!("bad header line {line:?}")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::format("NNCK", "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?).map_err(|_| Error::format("NNCK", "dimension"))?,
                );
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("NNCK", "tensor too large"))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::format("NNCK", "tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("NNCK", "trailing bytes"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
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
            .ok_or_else(|| Error::format("NNCK", "truncated"))?;
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn header_and_tensors_survive() {
        let mut ck = Checkpoint::default();
        ck.set("model", "ppg");
        ck.set("space_checksum", "abc");
        ck.set("model", "fap");
        ck.push("w", &Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.5));
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("model").unwrap(), "fap");
        assert_eq!(back.tensor("w").unwrap().shape, vec![2, 3]);
        assert!(back.get("nope").is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut ck = Checkpoint::default();
        ck.push_vec("b", &[1.0, 2.0]);
        let bytes = ck.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
        assert!(matches!(
            Checkpoint::load(Path::new("/nonexistent/model.nnck")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    proptest! {
        #[test]
        fn encoding_round_trips_bit_exactly(
            keys in proptest::collection::vec("[a-z_]{1,8}", 0..4),
            dims in proptest::collection::vec(proptest::collection::vec(0usize..4, 0..3), 0..4),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::nnet::RngStream::new(seed);
            let mut ck = Checkpoint::default();
            for (i, k) in keys.iter().enumerate() {
                ck.header.push((k.clone(), format!("v{i}")));
            }
            for (i, shape) in dims.into_iter().enumerate() {
                let n: usize = shape.iter().product();
                ck.tensors.push(NamedTensor {
                    name: format!("t{i}"),
                    data: (0..n).map(|_| rng.uniform(-10.0, 10.0) as f32).collect(),
                    shape,
                });
            }
            let bytes = ck.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}

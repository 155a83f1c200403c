//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NNCK" | u32 version
//! u32 len | model spec, canonical text
//! u32 len | metadata, key=value text
//! u32 record count
//! per record: u32 name len | name | u32 rank | rank x u64 extents | f32 values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

use super::params::ParamStore;
use super::spec::ModelSpec;

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cnn,
    Cae,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Cae => "cae",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub cycle: u32,
    pub rng_state: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub meta: TrainingMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, spec: ModelSpec, meta: TrainingMeta) -> Self {
        Checkpoint {
            kind,
            spec,
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends every tensor of `params`, names prefixed with `prefix`.
    pub fn add_params<T: Real>(&mut self, prefix: &str, params: &ParamStore<T>) {
        for (name, t) in params.iter() {
            self.tensors.push((format!("{prefix}{name}"), t.cast()));
        }
    }

    pub fn add_tensor(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix` and has no further `/`, with
    /// the prefix stripped.
    pub fn params<T: Real>(&self, prefix: &str) -> ParamStore<T> {
        let mut store = ParamStore::default();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(prefix) {
                if !rest.contains('/') {
                    store.push(rest, t.cast());
                }
            }
        }
        store
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let spec = self.spec.to_canonical_text();
        let meta = format!(
            "kind={}\nepoch={}\ncycle={}\nrng_state={}\n",
            self.kind.name(),
            self.meta.epoch,
            self.meta.cycle,
            self.meta.rng_state
        );
        for text in [spec, meta] {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(
            r.take(4)? == MAGIC,
            Error::Data("not a checkpoint (bad magic)".into())
        );
        let version = r.u32()?;
        ensure!(
            version == VERSION,
            Error::Data(format!("unsupported checkpoint version {version}"))
        );
        let spec = ModelSpec::from_canonical_text(&r.text()?)?;
        let meta_text = r.text()?;
        let mut kind = None;
        let mut meta = TrainingMeta::default();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad metadata line '{line}'")))?;
            let bad = || Error::Data(format!("bad metadata value '{line}'"));
            match k {
                "kind" => {
                    kind = Some(match v {
                        "cnn" => ModelKind::Cnn,
                        "cae" => ModelKind::Cae,
                        _ => return Err(bad()),
                    })
                }
                "epoch" => meta.epoch = v.parse().map_err(|_| bad())?,
                "cycle" => meta.cycle = v.parse().map_err(|_| bad())?,
                "rng_state" => meta.rng_state = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Data(format!("unknown metadata key '{k}'"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Data("checkpoint metadata lacks kind".into()))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        ensure!(
            r.pos == bytes.len(),
            Error::Data(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos))
        );
        Ok(Checkpoint {
            kind,
            spec,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.pos + n <= self.bytes.len(),
            Error::Data("checkpoint truncated".into())
        );
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint text block is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cnn, Variant};

    #[test]
    fn bytes_round_trip_and_truncation_is_caught() {
        let spec = ModelSpec::compact(Variant::Wfm, 3);
        let net = Cnn::<f32>::build(&spec, 2).unwrap();
        let mut ck = Checkpoint::new(
            ModelKind::Cnn,
            spec,
            TrainingMeta {
                epoch: 7,
                cycle: 2,
                rng_state: 99,
            },
        );
        ck.add_params("", net.params());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"NNCK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}

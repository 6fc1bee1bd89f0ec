//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HYPEVCKPT"  u32 version  u8 kind (0 = lm, 1 = mtl)
//! u64 len + config TOML   u64 len + vocab text
//! u64 n_tensors, then per tensor:
//!   u64 len + name   u64 ndim   u64 dims[ndim]   f64 data[prod(dims)]
//! ```

use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{CheckpointError, Error, Result};
use crate::lm::{LmConfig, LmModel};
use crate::mtl::{MtlConfig, MtlModel};
use crate::text::Vocab;

pub const MAGIC: &[u8; 9] = b"HYPEVCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lm,
    Mtl,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lm => "lm",
            ModelKind::Mtl => "mtl",
        }
    }

    fn byte(self) -> u8 {
        match self {
            ModelKind::Lm => 0,
            ModelKind::Mtl => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    /// Model configuration as TOML.
    pub config: String,
    pub vocab: Vocab,
    pub params: ParamStore,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.byte());
        put_bytes(&mut out, self.config.as_bytes());
        put_bytes(&mut out, self.vocab.to_text().as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                CheckpointError::Truncated
            } else {
                CheckpointError::BadMagic
            }
            .into());
        }
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let kind = match r.take(1)?[0] {
            0 => ModelKind::Lm,
            1 => ModelKind::Mtl,
            b => return Err(CheckpointError::Corrupt(format!("unknown model kind byte {b}")).into()),
        };
        let config = r.string()?;
        let vocab = Vocab::from_text(&r.string()?)
            .map_err(|e| CheckpointError::Corrupt(format!("vocabulary: {e}")))?;
        let n = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u64()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&m| m.checked_mul(8).is_some())
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name}: shape overflow")))?;
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params
                .add(name, t)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        Ok(Checkpoint {
            kind,
            config,
            vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(CheckpointError::KindMismatch {
                expected: kind.name(),
                found: self.kind.name(),
            }
            .into());
        }
        Ok(())
    }

    pub fn from_lm(model: &LmModel) -> Self {
        Checkpoint {
            kind: ModelKind::Lm,
            config: toml::to_string(&model.config).expect("lm config serialises"),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
        }
    }

    pub fn from_mtl(model: &MtlModel) -> Self {
        Checkpoint {
            kind: ModelKind::Mtl,
            config: toml::to_string(&model.config).expect("mtl config serialises"),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
        }
    }

    pub fn into_lm(self) -> Result<LmModel> {
        self.expect(ModelKind::Lm)?;
        let config: LmConfig = toml::from_str(&self.config)
            .map_err(|e| CheckpointError::Corrupt(format!("lm config: {e}")))?;
        LmModel::from_parts(config, self.vocab, self.params)
    }

    pub fn into_mtl(self) -> Result<MtlModel> {
        self.expect(ModelKind::Mtl)?;
        let config: MtlConfig = toml::from_str(&self.config)
            .map_err(|e| CheckpointError::Corrupt(format!("mtl config: {e}")))?;
        MtlModel::from_parts(config, self.vocab, self.params)
    }
}

pub fn save_lm(model: &LmModel, path: &Path) -> Result<()> {
    Checkpoint::from_lm(model).save(path)
}

pub fn load_lm(path: &Path) -> Result<LmModel> {
    Checkpoint::load(path)?.into_lm()
}

pub fn save_mtl(model: &MtlModel, path: &Path) -> Result<()> {
    Checkpoint::from_mtl(model).save(path)
}

pub fn load_mtl(path: &Path) -> Result<MtlModel> {
    Checkpoint::load(path)?.into_mtl()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated.into());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid utf-8".into()).into())
    }
}

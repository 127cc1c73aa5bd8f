//! Binary checkpoint files.
//!
//! Layout: the magic bytes `LRKT`, a little-endian `u32` format version, a
//! little-endian `u64` header length followed by that many bytes of JSON
//! header, the parameters as little-endian `f32` in manifest order, and a
//! trailing SHA-256 digest of header and payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::data::{DatasetSpec, GlobalVocab};
use crate::error::{Error, Result};
use crate::model::{LoReKTModel, ModelConfig, ParamStore};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"LRKT";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Stage that produced the parameters, e.g. `pretrain` or `finetune`.
    pub stage: String,
    /// Epoch of the retained parameters (1-based; 0 if untrained).
    pub epoch: usize,
    pub best_val_auc: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: GlobalVocab,
    datasets: Vec<DatasetSpec>,
    metadata: TrainingMetadata,
    manifest: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: GlobalVocab,
    pub datasets: Vec<DatasetSpec>,
    pub metadata: TrainingMetadata,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &LoReKTModel<T>, datasets: Vec<DatasetSpec>, metadata: TrainingMetadata) -> Self {
        let mut params = ParamStore::default();
        for (_, name, t) in model.params().iter() {
            params.push(name.to_string(), t.cast());
        }
        Checkpoint { config: model.config().clone(), vocab: model.vocab().clone(), datasets, metadata, params }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<LoReKTModel<T>> {
        let mut params = ParamStore::default();
        for (_, name, t) in self.params.iter() {
            params.push(name.to_string(), t.cast());
        }
        LoReKTModel::from_parts(self.config.clone(), self.vocab.clone(), params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let manifest = self
            .params
            .iter()
            .map(|(_, name, t)| {
                let e = ManifestEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            datasets: self.datasets.clone(),
            metadata: self.metadata.clone(),
            manifest,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 4 * offset + DIGEST_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out[PREFIX_LEN..]);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let actual = bytes.len() as u64;
        if bytes.len() < 4 {
            return Err(Error::Truncated { expected: PREFIX_LEN as u64, actual });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(Error::BadMagic { found });
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated { expected: PREFIX_LEN as u64, actual });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        if bytes.len() < PREFIX_LEN {
            return Err(Error::Truncated { expected: PREFIX_LEN as u64, actual });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = (PREFIX_LEN as u64).saturating_add(header_len);
        if header_end.saturating_add(DIGEST_LEN as u64) > actual {
            return Err(Error::Truncated { expected: header_end + DIGEST_LEN as u64, actual });
        }
        let header_end = header_end as usize;
        let header: Header = match serde_json::from_slice(&bytes[PREFIX_LEN..header_end]) {
            Ok(h) => h,
            Err(e) => {
                check_digest(bytes)?;
                return Err(Error::Checkpoint(format!("unreadable header: {e}")));
            }
        };
        let elements: usize = header.manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        let expected = (header_end + 4 * elements + DIGEST_LEN) as u64;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", actual - expected)));
        }
        check_digest(bytes)?;

        let payload = &bytes[header_end..bytes.len() - DIGEST_LEN];
        let mut params = ParamStore::default();
        let mut cursor = 0;
        for e in header.manifest {
            let n: usize = e.shape.iter().product();
            if e.offset != cursor {
                return Err(Error::Checkpoint(format!("parameter {} has offset {} (expected {cursor})", e.name, e.offset)));
            }
            let data = payload[4 * cursor..4 * (cursor + n)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(e.name, Tensor::new(e.shape, data)?);
            cursor += n;
        }
        let ckpt = Checkpoint {
            config: header.config,
            vocab: header.vocab,
            datasets: header.datasets,
            metadata: header.metadata,
            params,
        };
        // reject payloads that do not match the declared model
        ckpt.to_model::<f32>()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn check_digest(bytes: &[u8]) -> Result<()> {
    let body = &bytes[PREFIX_LEN..bytes.len() - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - DIGEST_LEN..] {
        return Err(Error::DigestMismatch);
    }
    Ok(())
}

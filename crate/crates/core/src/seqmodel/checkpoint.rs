//! Checkpoint container.
//!
//! ```text
//! remi-checkpoint v1\n
//! {"config": {...}, "representation": "REMI", "encode": {...}, "tensors": [{"name": ..., "shape": [r, c]}, ...]}\n
//! <every tensor, in listed order, as little-endian f64>
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use super::ModelError;
use crate::codec::EncodeOptions;
use crate::tokens::Representation;

pub const CHECKPOINT_HEADER: &str = "remi-checkpoint v1";

/// Trained parameters plus what is needed to tokenize prompts for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub representation: Representation,
    pub encode: EncodeOptions,
}

#[derive(Serialize, Deserialize)]
struct EncodeMeta {
    with_tempo: bool,
    with_chord: bool,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    representation: String,
    encode: EncodeMeta,
    tensors: Vec<TensorMeta>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let meta = Meta {
            config: self.params.config,
            representation: self.representation.tag().to_string(),
            encode: EncodeMeta { with_tempo: self.encode.with_tempo, with_chord: self.encode.with_chord },
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| TensorMeta { name, shape: [m.rows, m.cols] })
                .collect(),
        };
        let json = serde_json::to_string(&meta).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 32 + self.params.n_params() * 8);
        out.extend_from_slice(CHECKPOINT_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        for (_, m) in self.params.tensors() {
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let header = lines.next().unwrap_or_default();
        if header != CHECKPOINT_HEADER.as_bytes() {
            return Err(bad(format!("expected header {CHECKPOINT_HEADER:?}")));
        }
        let json = lines.next().ok_or_else(|| bad("missing metadata line"))?;
        let data = lines.next().ok_or_else(|| bad("missing tensor data"))?;
        let meta: Meta = serde_json::from_slice(json).map_err(|e| bad(format!("metadata: {e}")))?;
        let representation: Representation =
            meta.representation.parse().map_err(|e: crate::tokens::TokenError| bad(e.to_string()))?;
        if representation.vocab().size() as usize != meta.config.vocab_size {
            return Err(bad(format!(
                "vocab_size {} does not match representation {}",
                meta.config.vocab_size, representation
            )));
        }
        let mut params = ModelParams::zeros(meta.config).map_err(|e| bad(e.to_string()))?;
        let expected = params.tensors().len();
        if meta.tensors.len() != expected {
            return Err(bad(format!("{} tensors listed, config implies {expected}", meta.tensors.len())));
        }
        let total: usize = params.n_params();
        if data.len() != total * 8 {
            return Err(bad(format!("{} data bytes, config implies {}", data.len(), total * 8)));
        }
        let mut chunks = data.chunks_exact(8);
        for ((name, m), listed) in params.tensors_mut().into_iter().zip(&meta.tensors) {
            if listed.name != name || listed.shape != [m.rows, m.cols] {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    listed.name,
                    listed.shape,
                    name,
                    [m.rows, m.cols]
                )));
            }
            for x in m.data.iter_mut() {
                let c = chunks.next().expect("length checked");
                *x = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
        }
        if !params.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Checkpoint {
            params,
            representation,
            encode: EncodeOptions { with_tempo: meta.encode.with_tempo, with_chord: meta.encode.with_chord },
        })
    }
}

/// Write atomically: a temporary file in the same directory is renamed
/// over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let bytes = ckpt.to_bytes()?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let config = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            vocab_size: 364,
            segment_len: 4,
            memory_len: 4,
            tie_embeddings: false,
            seed: 3,
        };
        Checkpoint {
            params: ModelParams::init(config).unwrap(),
            representation: Representation::Remi,
            encode: EncodeOptions::default(),
        }
    }

    #[test]
    fn round_trip_bytes_and_file() {
        let ck = tiny();
        let bytes = ck.to_bytes().unwrap();
        assert!(bytes.starts_with(b"remi-checkpoint v1\n"));
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_damage() {
        let bytes = tiny().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"remi-checkpoint v2\n{}\n").is_err());
        let pos = bytes.windows(9).position(|w| w == b"\"shape\":[").unwrap();
        let mut swapped = bytes.clone();
        swapped[pos + 9] = b'9';
        assert!(Checkpoint::from_bytes(&swapped).is_err());
    }
}

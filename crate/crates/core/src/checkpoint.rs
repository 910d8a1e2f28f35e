//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "LCNMTCKP"
//! version    u32
//! header_len u64
//! header     JSON: model config, both vocabularies, run config,
//!            and the parameter list [{name, shape}] in storage order
//! values     f64 per parameter entry, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, RESERVED};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tape::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LCNMTCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct VocabEntries {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl VocabEntries {
    fn of(v: &Vocabulary) -> Self {
        VocabEntries {
            tokens: v.tokens().to_vec(),
            counts: v.counts().to_vec(),
        }
    }

    fn into_vocab(self, which: &str) -> Result<Vocabulary> {
        if self.tokens.len() != self.counts.len() {
            return Err(Error::Checkpoint(format!("{which} vocabulary has mismatched counts")));
        }
        if self.tokens.len() < RESERVED.len() || self.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Checkpoint(format!("{which} vocabulary lacks the reserved tokens")));
        }
        Ok(Vocabulary::from_entries(self.tokens.into_iter().zip(self.counts)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    source_vocab: VocabEntries,
    target_vocab: VocabEntries,
    run_config: serde_json::Value,
    params: Vec<ParamEntry>,
}

/// A model together with the vocabularies and the run configuration that
/// produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config.clone(),
            source_vocab: VocabEntries::of(&self.source_vocab),
            target_vocab: VocabEntries::of(&self.target_vocab),
            run_config: self.run_config.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|(_, name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.model.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.model.params.iter() {
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        if len > r.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        let mut params = ParamStore::new();
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            if n * 8 > r.len() {
                return Err(Error::Checkpoint(format!("truncated values for {}", entry.name)));
            }
            let values = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            let tensor = Tensor::new(entry.shape, values)
                .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", entry.name)))?;
            if params.id(&entry.name).is_some() {
                return Err(Error::Checkpoint(format!("parameter {} stored twice", entry.name)));
            }
            params.insert(entry.name, tensor);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        let model = Model::from_params(header.config, params)?;
        let source_vocab = header.source_vocab.into_vocab("source")?;
        let target_vocab = header.target_vocab.into_vocab("target")?;
        if source_vocab.len() != model.config.src_vocab || target_vocab.len() != model.config.tgt_vocab {
            return Err(Error::Checkpoint("vocabulary sizes disagree with the model".into()));
        }
        Ok(Checkpoint {
            model,
            source_vocab,
            target_vocab,
            run_config: header.run_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint(mode: Mode) -> Checkpoint {
        let mut v = Vocabulary::reserved_only();
        v.ensure("hello");
        let cfg = ModelConfig {
            mode,
            word_dim: 3,
            enc_hidden: 4,
            dec_hidden: 4,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(2),
            attn_hidden: 3,
            dropout_rate: 0.1,
            src_vocab: v.len(),
            tgt_vocab: v.len(),
        };
        Checkpoint {
            model: Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap(),
            source_vocab: v.clone(),
            target_vocab: v,
            run_config: serde_json::json!({"seed": 3}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for mode in [Mode::Nmt, Mode::LcNmt] {
            let c = checkpoint(mode);
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.model.config, c.model.config);
            assert_eq!(back.source_vocab, c.source_vocab);
            assert_eq!(back.run_config, c.run_config);
            assert_eq!(back.model.params.names(), c.model.params.names());
            for ((_, _, a), (_, _, b)) in back.model.params.iter().zip(c.model.params.iter()) {
                assert_eq!(a.values(), b.values());
                assert_eq!(a.shape(), b.shape());
            }
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn header_is_little_endian() {
        let bytes = checkpoint(Mode::Nmt).to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = checkpoint(Mode::LcNmt).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut c = checkpoint(Mode::Nmt);
        let id = c.model.params.id("out.b").unwrap();
        c.model.params.get_mut(id).values_mut()[0] = f64::NAN;
        let bytes = c.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Numeric(_))));
    }
}

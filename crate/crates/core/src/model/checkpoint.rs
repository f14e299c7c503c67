//! Binary checkpoint container.
//!
//! Layout: 8 magic bytes, a little-endian u32 header length, a JSON header,
//! then every tensor as contiguous little-endian f32.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::params::Params;
use crate::codecs::{BpeModel, Codecs, Palette, PatchCodebook};
use crate::error::{Error, Result};
use crate::vocab::{VocabCounts, VocabLayout};

pub const MAGIC: &[u8; 8] = b"ISQCKPT1";
const CODEBOOK: &str = "codec.codebook";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: VocabCounts,
    tensors: Vec<TensorEntry>,
    classes: usize,
    patch_size: usize,
    merges: Vec<(u32, u32)>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A trained model together with the codecs its vocabulary depends on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub codecs: Codecs,
    /// Free-form provenance (step count, seed and the like).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, codecs: Codecs) -> Result<Self> {
        if model.config.vocab != codecs.layout.counts() {
            return Err(Error::LayoutMismatch {
                found: format!("{:?}", model.config.vocab),
                expected: format!("{:?}", codecs.layout.counts()),
            });
        }
        Ok(Checkpoint { model, codecs, meta: serde_json::Value::Null })
    }

    /// Serializes into the container format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, data: &[f32]| {
            tensors.push(TensorEntry { name, shape, offset });
            offset += data.len();
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in self.model.params.named() {
            push(name, t.shape.clone(), &t.data);
        }
        let cb = &self.codecs.codebook;
        push(CODEBOOK.into(), vec![cb.len(), cb.dim()], cb.entries());
        let header = Header {
            config: self.model.config.clone(),
            vocab: self.codecs.layout.counts(),
            tensors,
            classes: self.codecs.palette.class_count(),
            patch_size: cb.patch_size(),
            merges: self.codecs.bpe.merges().to_vec(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses a container. With `expected` set, the stored vocabulary layout
    /// must equal it.
    pub fn from_bytes(bytes: &[u8], expected: Option<VocabCounts>) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(if MAGIC.starts_with(bytes) { Error::Truncated("missing magic".into()) } else { Error::BadMagic });
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(Error::Truncated("missing header length".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(Error::Truncated(format!("header needs {hlen} bytes, {} present", body.len())));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        if let Some(exp) = expected {
            if exp != header.vocab {
                return Err(Error::LayoutMismatch { found: format!("{:?}", header.vocab), expected: format!("{exp:?}") });
            }
        }
        if header.config.vocab != header.vocab {
            return Err(Error::LayoutMismatch {
                found: format!("{:?}", header.config.vocab),
                expected: format!("{:?}", header.vocab),
            });
        }
        header.config.validate()?;
        let read = |e: &TensorEntry| -> Result<Vec<f32>> {
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * 4, (e.offset + n) * 4);
            if end > payload.len() {
                return Err(Error::Truncated(format!("tensor {} ends at byte {end}, payload has {}", e.name, payload.len())));
            }
            Ok(payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        // shapes come from the config; the table must agree with them
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut params = Params::<f32>::init(&header.config, &mut rng);
        let mut table: std::collections::HashMap<&str, &TensorEntry> =
            header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
        for (name, t) in params.named_mut() {
            let e = table
                .remove(name.as_str())
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {name}")))?;
            if e.shape != t.shape {
                return Err(Error::LayoutMismatch {
                    found: format!("{name} {:?}", e.shape),
                    expected: format!("{name} {:?}", t.shape),
                });
            }
            t.data = read(e)?;
        }
        let cb_entry = table.remove(CODEBOOK).ok_or_else(|| Error::invalid("checkpoint lacks the patch codebook"))?;
        if let Some(extra) = table.keys().next() {
            return Err(Error::invalid(format!("unexpected tensor {extra} in checkpoint")));
        }
        let codebook = PatchCodebook::from_entries(header.patch_size, read(cb_entry)?)?;
        if codebook.dim() != cb_entry.shape.get(1).copied().unwrap_or(0) {
            return Err(Error::invalid("codebook shape disagrees with its patch size"));
        }
        let codecs = Codecs::new(
            VocabLayout::new(header.vocab)?,
            Palette::for_classes(header.classes)?,
            codebook,
            BpeModel::from_merges(header.merges)?,
        )?;
        let model = Model { config: header.config, params };
        Ok(Checkpoint { model, codecs, meta: header.meta })
    }
}

/// Writes a checkpoint atomically (temp file then rename).
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<VocabCounts>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Prerequisite(format!("cannot read checkpoint {}: {e} (run train first)", path.display())))?;
    Checkpoint::from_bytes(&bytes, expected)
}

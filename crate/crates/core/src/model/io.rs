//! `TrainedModel` persistence.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic  b"PVIGMODL"
//! u32    format version
//! u64    header length, then the header as JSON (shapes, registry, featurizer)
//! f64*   loss trace, w1, b1, then each head's weight and bias
//! ```
//!
//! Floats are stored as raw bits, so a binary round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{InputMode, TrainedModel};
use super::{Head, ModelParams};
use crate::error::{Error, Result};
use crate::features::FeaturizerConfig;

pub const FORMAT_TAG: &str = "pvig-model";
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PVIGMODL";

#[derive(Serialize, Deserialize)]
struct JsonEnvelope {
    format: String,
    version: u32,
    model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    dim: usize,
    hidden: usize,
    heads: Vec<(String, usize)>,
    featurizer: FeaturizerConfig,
    input_mode: InputMode,
    best_epoch: Option<usize>,
    epochs: usize,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        let env = JsonEnvelope {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&env).map_err(|e| Error::data(e.to_string()))
    }

    pub fn from_json(src: &str) -> Result<TrainedModel> {
        let env: JsonEnvelope = serde_json::from_str(src).map_err(|e| Error::data(format!("model JSON: {e}")))?;
        check_tag(&env.format, env.version)?;
        Ok(env.model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let header = BinaryHeader {
            dim: p.dim,
            hidden: p.hidden,
            heads: p.heads.iter().map(|h| (h.task_id.clone(), h.classes)).collect(),
            featurizer: self.featurizer.clone(),
            input_mode: self.input_mode,
            best_epoch: self.best_epoch,
            epochs: self.loss_trace.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * (p.num_params() + self.loss_trace.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(&self.loss_trace);
        for t in p.tensors() {
            put(t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::data("not a pvig binary model (bad magic)"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        check_tag(FORMAT_TAG, version)?;
        let header_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let header: BinaryHeader =
            serde_json::from_slice(cur.take(header_len)?).map_err(|e| Error::data(format!("model header: {e}")))?;

        let loss_trace = cur.floats(header.epochs)?;
        let w1 = cur.floats(header.dim * header.hidden)?;
        let b1 = cur.floats(header.hidden)?;
        let mut heads = Vec::with_capacity(header.heads.len());
        for (task_id, classes) in header.heads {
            let weight = cur.floats(header.hidden * classes)?;
            let bias = cur.floats(classes)?;
            heads.push(Head {
                task_id,
                classes,
                weight,
                bias,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::data("trailing bytes after model payload"));
        }
        Ok(TrainedModel {
            params: ModelParams {
                dim: header.dim,
                hidden: header.hidden,
                w1,
                b1,
                heads,
            },
            featurizer: header.featurizer,
            input_mode: header.input_mode,
            loss_trace,
            best_epoch: header.best_epoch,
        })
    }

    /// Writes JSON when the extension is `.json`, binary otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if is_json(path) {
            self.to_json()?.into_bytes()
        } else {
            self.to_bytes()
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if is_json(path) {
            let text = String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))?;
            TrainedModel::from_json(&text)
        } else {
            TrainedModel::from_bytes(&bytes)
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn check_tag(tag: &str, version: u32) -> Result<()> {
    if tag != FORMAT_TAG {
        return Err(Error::data(format!("unexpected model format `{tag}`")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::data(format!("unsupported model format version {version}")));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("truncated model file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::data("model shape overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

//! Model file: `CTSRFENC`, u32 format version, u64 metadata length, JSON
//! metadata, then the four weight tensors as little-endian f64.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderParams, PARAMS_VERSION};
use super::{EncoderError, Featurizer, TrainConfig};

const MAGIC: &[u8; 8] = b"CTSRFENC";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub version: String,
    pub featurizer: Featurizer,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EncoderError + '_ {
    move |source| EncoderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], EncoderError> {
    if buf.len() < n {
        return Err(EncoderError::Format("truncated file".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

impl EncoderParams {
    pub fn save(&self, path: &Path, train_config: Option<&TrainConfig>) -> Result<(), EncoderError> {
        self.validate()?;
        let meta = ModelMeta {
            version: self.version.clone(),
            featurizer: self.featurizer,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            rng_seed: self.rng_seed,
            train_config: train_config.cloned(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| EncoderError::Format(e.to_string()))?;
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            for tensor in [&self.w1, &self.b1, &self.w2, &self.b2] {
                for v in tensor.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()
        };
        write().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<(EncoderParams, ModelMeta), EncoderError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        let mut buf = bytes.as_slice();
        if take(&mut buf, 8)? != MAGIC {
            return Err(EncoderError::Format("not an encoder model file".into()));
        }
        let format = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes"));
        if format != MODEL_FORMAT_VERSION {
            return Err(EncoderError::Format(format!(
                "format version {format}, this build reads {MODEL_FORMAT_VERSION}"
            )));
        }
        let meta_len = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")) as usize;
        let meta: ModelMeta =
            serde_json::from_slice(take(&mut buf, meta_len)?).map_err(|e| EncoderError::Format(e.to_string()))?;
        if meta.version != PARAMS_VERSION {
            return Err(EncoderError::Format(format!(
                "model version `{}`, this build reads `{PARAMS_VERSION}`",
                meta.version
            )));
        }
        let (f, h, e) = (meta.featurizer.dim, meta.hidden_dim, meta.output_dim);
        let mut tensor = |n: usize| -> Result<Vec<f64>, EncoderError> {
            let raw = take(&mut buf, n.checked_mul(8).ok_or_else(|| EncoderError::Format("size overflow".into()))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let w1 = tensor(f * h)?;
        let b1 = tensor(h)?;
        let w2 = tensor(h * e)?;
        let b2 = tensor(e)?;
        if !buf.is_empty() {
            return Err(EncoderError::Format("trailing bytes after weights".into()));
        }
        let params = EncoderParams {
            featurizer: meta.featurizer,
            hidden_dim: h,
            output_dim: e,
            w1,
            b1,
            w2,
            b2,
            version: meta.version.clone(),
            rng_seed: meta.rng_seed,
        };
        params.validate()?;
        Ok((params, meta))
    }
}

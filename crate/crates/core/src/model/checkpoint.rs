//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes   "CMCK"
//! version        u32       currently 1
//! manifest_len   u64
//! manifest       UTF-8 JSON {format_version, config, language, min_freq, vocab}
//! tensor_count   u64
//! per tensor:
//!   name_len     u32
//!   name         UTF-8 bytes
//!   rows, cols   u32 each
//!   values       rows·cols f64, row-major
//! ```
//!
//! Values round-trip bit-exactly, so save → load → forward reproduces
//! outputs identically.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Language;
use crate::nn::Matrix;

use super::classifier::{ClassifierModel, ModelConfig};
use super::vocab::Vocab;
use super::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CMCK";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    language: Language,
    min_freq: usize,
    vocab: Vec<String>,
}

pub fn save_checkpoint(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config,
        language: model.language,
        min_freq: model.vocab.min_freq(),
        vocab: model.vocab.tokens().to_vec(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| ModelError::Checkpoint(format!("manifest encode: {e}")))?;

    let mut tensors: Vec<(String, &Matrix)> = Vec::new();
    model.params.visit(&mut |name, m| tensors.push((name, m)));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, m) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierModel, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let manifest_len = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| ModelError::Checkpoint(format!("manifest decode: {e}")))?;

    let tensor_count = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
    let mut tensors: HashMap<String, Matrix> = HashMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let cols = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
        }
        let m = Matrix::from_vec(rows, cols, data)
            .map_err(|e| ModelError::Checkpoint(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), m).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }

    let vocab = Vocab::from_token_list(manifest.vocab, manifest.min_freq)?;
    let mut model = ClassifierModel::new(vocab, manifest.config, manifest.language)?;
    let mut missing: Option<String> = None;
    let mut mismatch: Option<String> = None;
    model.params.visit_mut(&mut |name, param| {
        match tensors.remove(&name) {
            Some(loaded) if loaded.same_shape(param) => *param = loaded,
            Some(loaded) => {
                mismatch.get_or_insert(format!(
                    "{name}: checkpoint has {}x{}, model expects {}x{}",
                    loaded.rows(),
                    loaded.cols(),
                    param.rows(),
                    param.cols()
                ));
            }
            None => {
                missing.get_or_insert(name);
            }
        }
    });
    if let Some(m) = mismatch {
        return Err(ModelError::Checkpoint(format!("shape mismatch: {m}")));
    }
    if let Some(name) = missing {
        return Err(ModelError::Checkpoint(format!("missing tensor {name}")));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

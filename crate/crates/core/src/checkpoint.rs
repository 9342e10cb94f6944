//! Checkpoint directories.
//!
//! ```text
//! <dir>/vocab.txt               one token per line
//! <dir>/selector.safetensors    selector parameters, manifest in the header
//! <dir>/generator.safetensors   generator parameters (optional)
//! <dir>/history.jsonl           per-epoch training history (optional)
//! ```
//!
//! Every tensor file carries a single `manifest` metadata entry holding a JSON
//! object with the format name, version and the architecture needed to rebuild
//! the module.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cet2Model, ModelConfig};
use crate::text::Vocab;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SELECTOR_FILE: &str = "selector.safetensors";
pub const GENERATOR_FILE: &str = "generator.safetensors";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_KEY: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: C,
}

fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F64 => "f64",
        DType::F32 => "f32",
        DType::F16 => "f16",
        DType::BF16 => "bf16",
        _ => "other",
    }
}

fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f64" => Ok(DType::F64),
        "f32" => Ok(DType::F32),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    }
}

pub fn write_tensors<C: Serialize>(
    path: &Path,
    format: &str,
    dtype: DType,
    config: &C,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let manifest = Manifest {
        format: format.to_string(),
        version: FORMAT_VERSION,
        dtype: dtype_name(dtype).to_string(),
        config,
    };
    let meta = HashMap::from([(MANIFEST_KEY.to_string(), serde_json::to_string(&manifest)?)]);
    let bytes = safetensors::serialize(tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(meta))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors<C: for<'de> Deserialize<'de>>(
    path: &Path,
    format: &str,
) -> Result<(Manifest<C>, BTreeMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, meta) =
        safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let raw = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| bad("missing manifest".into()))?;
    let manifest: Manifest<C> =
        serde_json::from_str(raw).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != format {
        return Err(bad(format!(
            "expected a {format} checkpoint, found {}",
            manifest.format
        )));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok((manifest, tensors.into_iter().collect()))
}

pub fn selector_path(dir: &Path) -> PathBuf {
    dir.join(SELECTOR_FILE)
}

pub fn save_selector(dir: &Path, model: &Cet2Model) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.vocab().save(&dir.join(VOCAB_FILE))?;
    write_tensors(
        &selector_path(dir),
        "cet2-selector",
        model.dtype(),
        model.config(),
        &model.store().snapshot()?,
    )
}

pub fn load_selector(dir: &Path) -> Result<Cet2Model> {
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let (manifest, tensors) = read_tensors::<ModelConfig>(&selector_path(dir), "cet2-selector")?;
    let model = Cet2Model::new(manifest.config, vocab, parse_dtype(&manifest.dtype)?, 0)?;
    model.store().restore(&tensors)?;
    Ok(model)
}

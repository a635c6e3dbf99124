//! Checkpoints: `model.toml` holds the configuration and the ordered list
//! of parameter names and shapes; `model.bin` holds the parameters as
//! consecutive little-endian f64 in that order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, SaesModel};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.toml";
pub const PARAMS_FILE: &str = "model.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save(model: &SaesModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let named = model.named_params();
    let manifest = Manifest {
        format_version: 1,
        config: model.config.clone(),
        tensors: named.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    let mut w = BufWriter::new(std::fs::File::create(dir.join(PARAMS_FILE))?);
    for (_, t) in &named {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<SaesModel> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Data(format!("bad checkpoint manifest: {e}")))?;
    let mut model = SaesModel::init(manifest.config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model.named_params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let listed: Vec<(String, Vec<usize>)> = manifest.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
    if expected != listed {
        return Err(Error::Data("checkpoint tensor list does not match its configuration".into()));
    }
    let mut r = BufReader::new(std::fs::File::open(dir.join(PARAMS_FILE))?);
    let mut b8 = [0u8; 8];
    for t in model.params_mut() {
        for v in t.data_mut() {
            r.read_exact(&mut b8).map_err(|_| Error::Data("checkpoint parameter file is truncated".into()))?;
            *v = f64::from_le_bytes(b8);
        }
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::Data("checkpoint parameter file has trailing bytes".into()));
    }
    Ok(model)
}

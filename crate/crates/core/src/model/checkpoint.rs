//! Model checkpoints: a JSON header plus a flat little-endian `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub shapes: Vec<Vec<usize>>,
    /// Payload file name, relative to the header.
    pub payload: String,
    pub payload_bytes: u64,
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `<path>` (JSON header) and `<path>.bin` with extension replaced.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, seed: u64, params: &ModelParams) -> Result<()> {
    let flat = params.to_flat();
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = payload_path(path);
    let header = Checkpoint {
        config: cfg.clone(),
        seed,
        shapes: cfg.param_shapes(),
        payload: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_bytes: bytes.len() as u64,
    };
    fs::write(&bin, &bytes).map_err(io_err(&bin))?;
    fs::write(path, serde_json::to_vec_pretty(&header)?).map_err(io_err(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams)> {
    let header: Checkpoint =
        serde_json::from_slice(&fs::read(path).map_err(io_err(path))?)?;
    if header.shapes != header.config.param_shapes() {
        return Err(Error::Malformed(format!(
            "{}: parameter shapes do not match the model config",
            path.display()
        )));
    }
    let bin = path.with_file_name(&header.payload);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let expected = 8 * header.config.num_params() as u64;
    if bytes.len() as u64 != expected || header.payload_bytes != expected {
        return Err(Error::Corrupt {
            path: bin,
            expected,
            found: bytes.len() as u64,
        });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_flat(&header.config, &flat)?;
    Ok((header, params))
}

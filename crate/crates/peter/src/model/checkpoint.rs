//! Versioned binary checkpoint: config as a JSON blob followed by every
//! named parameter tensor as raw little-endian f64 values. Save → load is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelError, ModelParams, PeterConfig};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 8] = b"PETERCKP";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &PeterConfig,
    params: &ModelParams,
) -> Result<(), ModelError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let werr = |e: std::io::Error| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    };

    w.write_all(MAGIC).map_err(werr)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(werr)?;
    let config_json =
        serde_json::to_vec(config).map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())
        .map_err(werr)?;
    w.write_all(&config_json).map_err(werr)?;

    let named = params.named();
    w.write_all(&(named.len() as u64).to_le_bytes()).map_err(werr)?;
    for (name, tensor) in named {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u64).to_le_bytes())
            .map_err(werr)?;
        w.write_all(name_bytes).map_err(werr)?;
        w.write_all(&(tensor.shape().len() as u64).to_le_bytes())
            .map_err(werr)?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(werr)?;
        }
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)?;
    Ok(())
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, ModelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    Ok(u64::from_le_bytes(buf))
}

/// Load a checkpoint, reconstructing both config and parameters.
pub fn load_checkpoint(path: &Path) -> Result<(PeterConfig, ModelParams), ModelError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic bytes".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(io_err(path))?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(ModelError::CheckpointFormat(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }

    let config_len = read_u64(&mut r, path)? as usize;
    let mut config_buf = vec![0u8; config_len];
    r.read_exact(&mut config_buf).map_err(io_err(path))?;
    let config: PeterConfig = serde_json::from_slice(&config_buf)
        .map_err(|e| ModelError::CheckpointFormat(format!("config blob: {e}")))?;
    config.validate()?;

    let n_tensors = read_u64(&mut r, path)? as usize;
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = read_u64(&mut r, path)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(io_err(path))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| ModelError::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let ndim = read_u64(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf).map_err(io_err(path))?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push((name, Tensor::new(shape, values)));
    }

    // Materialize a parameter set of the right structure, then fill it.
    let mut params = ModelParams::init(&config, 0);
    {
        let mut named = params.named_mut();
        if named.len() != tensors.len() {
            return Err(ModelError::CheckpointFormat(format!(
                "expected {} tensors, found {}",
                named.len(),
                tensors.len()
            )));
        }
        for (name, tensor) in tensors {
            let slot = named
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| ModelError::CheckpointFormat(format!("unexpected tensor '{name}'")))?;
            if slot.1.shape() != tensor.shape() {
                return Err(ModelError::CheckpointFormat(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.1.shape()
                )));
            }
            *slot.1 = tensor;
        }
    }
    Ok((config, params))
}

/// Load a checkpoint and reject it unless its config equals the requested
/// one.
pub fn load_checkpoint_matching(
    path: &Path,
    requested: &PeterConfig,
) -> Result<ModelParams, ModelError> {
    let (config, params) = load_checkpoint(path)?;
    if &config != requested {
        return Err(ModelError::CheckpointMismatch(format!(
            "stored {config:?} vs requested {requested:?}"
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MaskMode, PeterConfig};

    fn config() -> PeterConfig {
        PeterConfig {
            n_users: 3,
            n_items: 4,
            vocab_size: 12,
            max_seq_len: 12,
            d: 8,
            ffn_dim: 16,
            n_layers: 2,
            n_heads: 2,
            word_budget: 5,
            mask_mode: MaskMode::Peter,
            use_features: true,
            lambda_e: 1.0,
            lambda_c: 1.0,
            lambda_r: 0.1,
            scale_full_d: false,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 123);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (loaded_cfg, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for ((na, ta), (nb, tb)) in params.named().iter().zip(loaded.named().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u64> = ta.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = tb.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na}");
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let other = PeterConfig {
            d: 16,
            ..config()
        };
        assert!(matches!(
            load_checkpoint_matching(&path, &other),
            Err(ModelError::CheckpointMismatch(_))
        ));
        assert!(load_checkpoint_matching(&path, &cfg).is_ok());
    }

    #[test]
    fn truncated_file_is_a_format_or_io_error() {
        let cfg = config();
        let params = ModelParams::init(&cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

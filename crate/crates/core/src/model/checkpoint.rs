//! Checkpoint directories: `manifest.json` plus one little-endian f32 blob.

use super::{Layout, Mat, ModelConfig, ModelError, ModelState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: &str = "commitbart-ckpt/1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: [usize; 2],
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: ModelConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `state` into directory `dir`, creating it if needed. Files are
/// written to temporaries and renamed into place.
pub fn save_checkpoint(state: &ModelState, dir: &Path) -> Result<(), ModelError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let groups: [(&str, &[Mat<f32>]); 3] = [("", &state.params), ("adam_m.", &state.adam_m), ("adam_v.", &state.adam_v)];
    for (prefix, mats) in groups {
        for (spec, m) in state.layout().specs.iter().zip(mats) {
            let offset = blob.len() as u64;
            let bytes: Vec<u8> = m.data.iter().flat_map(|x| x.to_le_bytes()).collect();
            tensors.push(TensorEntry {
                name: format!("{prefix}{}", spec.name),
                dtype: "f32".into(),
                shape: [m.rows, m.cols],
                offset,
                len: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
            blob.extend_from_slice(&bytes);
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION.into(),
        config: state.config.clone(),
        step: state.step,
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    write_atomic(&dir.join(BLOB), &blob)?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ModelError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelState, ModelError> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelError::CorruptFile(format!("manifest: {e}")))?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or_default();
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version.to_string(),
        });
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| ModelError::CorruptFile(format!("manifest: {e}")))?;
    manifest.config.validate()?;
    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(io_err(&bpath))?;
    let expected: u64 = manifest.tensors.iter().map(|t| t.len).sum();
    if blob.len() as u64 != expected {
        return Err(ModelError::CorruptFile(format!(
            "tensor blob has {} bytes, manifest lists {expected}",
            blob.len()
        )));
    }
    let layout = Layout::new(&manifest.config);
    let n = layout.specs.len();
    if manifest.tensors.len() != 3 * n {
        return Err(ModelError::CorruptFile(format!(
            "{} tensors listed, configuration needs {}",
            manifest.tensors.len(),
            3 * n
        )));
    }
    let mut mats = Vec::with_capacity(3 * n);
    for (k, entry) in manifest.tensors.iter().enumerate() {
        let spec = &layout.specs[k % n];
        let prefix = ["", "adam_m.", "adam_v."][k / n];
        if entry.name != format!("{prefix}{}", spec.name) || entry.shape != [spec.rows, spec.cols] || entry.dtype != "f32"
        {
            return Err(ModelError::CorruptFile(format!("unexpected tensor entry {}", entry.name)));
        }
        let (start, end) = (entry.offset as usize, (entry.offset + entry.len) as usize);
        if end > blob.len() || entry.len as usize != 4 * spec.rows * spec.cols {
            return Err(ModelError::CorruptFile(format!("tensor {} out of bounds", entry.name)));
        }
        let bytes = &blob[start..end];
        if hex::encode(Sha256::digest(bytes)) != entry.sha256 {
            return Err(ModelError::CorruptFile(format!("checksum mismatch for {}", entry.name)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        mats.push(Mat::from_vec(spec.rows, spec.cols, data));
    }
    let adam_v = mats.split_off(2 * n);
    let adam_m = mats.split_off(n);
    Ok(ModelState::from_parts(manifest.config, mats, adam_m, adam_v, manifest.step))
}

//! Checkpoint directories: `manifest.toml` (architecture, tensor table with
//! shapes and byte offsets, free-form metadata) next to `tensors.bin`, the raw
//! little-endian `f32` weights followed by the momentum buffers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, PredictorParams, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "ief-checkpoint";
const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const BLOB: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PredictorParams<f32>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    update_count: u64,
    architecture: Architecture,
    tensor: Vec<TensorEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let params = &checkpoint.params;
    let mut blob = Vec::with_capacity(8 * params.num_params());
    let mut entries = Vec::new();
    let momentum_tensors = params.tensors().iter().zip(params.momentum()).map(|(t, m)| (format!("momentum.{}", t.name), &t.shape, m));
    let weight_tensors = params.tensors().iter().map(|t| (t.name.clone(), &t.shape, &t.data));
    for (name, shape, data) in weight_tensors.chain(momentum_tensors) {
        let offset = blob.len() as u64;
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry { name, shape: shape.clone(), offset, bytes: blob.len() as u64 - offset });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        architecture: params.arch().clone(),
        update_count: params.version,
        tensor: entries,
        metadata: checkpoint.metadata.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
    fs::write(dir.join(BLOB), &blob)?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let blob_path = dir.join(BLOB);
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::format(&manifest_path, format!("not a checkpoint manifest: {}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::VersionMismatch { path: manifest_path, expected: VERSION, found: manifest.version });
    }
    let blob = fs::read(&blob_path)?;
    let read = |entry: &TensorEntry| -> Result<Vec<f32>> {
        let end = entry.offset + entry.bytes;
        if end > blob.len() as u64 {
            return Err(Error::Truncated { path: blob_path.clone(), expected: end, found: blob.len() as u64 });
        }
        let count: usize = entry.shape.iter().product();
        if entry.bytes != 4 * count as u64 {
            return Err(Error::format(&manifest_path, format!("tensor {} byte count disagrees with its shape", entry.name)));
        }
        Ok(blob[entry.offset as usize..end as usize].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    };

    let shapes = manifest.architecture.tensor_shapes();
    let find = |name: &str| {
        manifest.tensor.iter().find(|e| e.name == name).ok_or_else(|| Error::format(&manifest_path, format!("missing tensor {name}")))
    };
    let mut tensors = Vec::with_capacity(shapes.len());
    let mut momentum = Vec::with_capacity(shapes.len());
    for (name, _) in &shapes {
        let entry = find(name)?;
        tensors.push(Tensor { name: name.to_string(), shape: entry.shape.clone(), data: read(entry)? });
        let m = read(find(&format!("momentum.{name}"))?)?;
        momentum.push(m);
    }
    let mut params = PredictorParams::from_tensors(manifest.architecture, tensors)?;
    for (slot, m) in params.momentum.iter_mut().zip(momentum) {
        if slot.len() != m.len() {
            return Err(Error::mismatch("momentum tensor", slot.len(), m.len()));
        }
        *slot = m;
    }
    params.version = manifest.update_count;
    Ok(Checkpoint { params, metadata: manifest.metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tests::{random_input, tiny_arch};
    use crate::net::{loss_and_grad, sgd_update, SgdConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = tiny_arch();
        let mut params = PredictorParams::<f32>::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (out, cache) = params.forward(&random_input(&arch, 1)).unwrap();
        let (_, d) = loss_and_grad(&out, &[1.0, 2.0, 3.0, 4.0], &[true, true]).unwrap();
        let grads = params.backward(&cache, &d).unwrap();
        sgd_update(&mut params, &grads, &SgdConfig { learning_rate: 0.01, momentum: 0.9 }).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut metadata = BTreeMap::new();
        metadata.insert("regime".to_string(), "ief".to_string());
        let ckpt = Checkpoint { params, metadata };
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncated_blob_is_reported() {
        let arch = tiny_arch();
        let params = PredictorParams::<f32>::init(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &Checkpoint { params, metadata: BTreeMap::new() }).unwrap();
        let blob = dir.path().join(BLOB);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Truncated { .. })));
    }
}

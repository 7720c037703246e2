//! Parameter checkpoints: a flat little-endian f64 blob plus a text manifest
//! (name, shape, byte offset, element count). Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PARAMS_FILE: &str = "params.bin";
const MANIFEST_HEADER: &str = "feederlab-params\tv1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("parameter blob is {got} bytes, manifest expects {want}")]
    BlobSize { got: usize, want: usize },
}

/// Write every parameter of the store under `dir`.
pub fn save(store: &ParamStore, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in store.iter() {
        let offset = blob.len();
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let shape = tensor
            .shape()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!("{name}\t{shape}\t{offset}\t{}\n", tensor.len()));
    }
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(manifest.as_bytes())?;
    fs::write(dir.join(PARAMS_FILE), blob)?;
    Ok(())
}

/// Load a checkpoint directory into a fresh store (registration order equals
/// manifest order).
pub fn load(dir: &Path) -> Result<ParamStore, CheckpointError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let mut store = ParamStore::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if lineno == 0 {
            if line != MANIFEST_HEADER {
                return Err(CheckpointError::Manifest {
                    line: 0,
                    reason: format!("unexpected header `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CheckpointError::Manifest {
                line: lineno,
                reason: "expected 4 tab-separated fields".into(),
            });
        }
        let shape: Vec<usize> = fields[1]
            .split('x')
            .map(|d| {
                d.parse().map_err(|_| CheckpointError::Manifest {
                    line: lineno,
                    reason: format!("bad shape `{}`", fields[1]),
                })
            })
            .collect::<Result<_, _>>()?;
        let offset: usize = fields[2].parse().map_err(|_| CheckpointError::Manifest {
            line: lineno,
            reason: "bad offset".into(),
        })?;
        let count: usize = fields[3].parse().map_err(|_| CheckpointError::Manifest {
            line: lineno,
            reason: "bad element count".into(),
        })?;
        let end = offset + count * 8;
        if end > blob.len() {
            return Err(CheckpointError::BlobSize {
                got: blob.len(),
                want: end,
            });
        }
        let data: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Manifest {
            line: lineno,
            reason: e.to_string(),
        })?;
        store.add(fields[0], tensor);
    }
    Ok(store)
}

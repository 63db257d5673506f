use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::shapes::{crosses_modality, expected_shapes, modality_isolated};
use super::store::WeightStore;
use super::LoadError;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EMSF";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;
/// Magic, version and manifest length.
pub const HEADER_LEN: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Absolute byte offset of the little-endian f32 data.
    pub offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

/// Serializes a store. Tensors are laid out in name order.
pub fn to_bytes(config: &ModelConfig, store: &WeightStore) -> Result<Vec<u8>, LoadError> {
    let layout = |manifest_len: u64| {
        let mut offset = align_up(HEADER_LEN + manifest_len);
        store
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset = align_up(offset + e.byte_len());
                e
            })
            .collect::<Vec<_>>()
    };
    let manifest_json = |tensors| {
        serde_json::to_vec(&WeightManifest {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            tensors,
        })
        .map_err(|e| LoadError::ManifestParse(e.to_string()))
    };
    // Offsets depend on the manifest length, which depends on the offsets.
    // Iterate until the length settles; it only grows, so this terminates.
    let mut len = 0u64;
    let json = loop {
        let json = manifest_json(layout(len))?;
        if json.len() as u64 == len {
            break json;
        }
        len = json.len() as u64;
    };
    let entries = layout(len);
    let end = entries.last().map_or(align_up(HEADER_LEN + len), |e| e.offset + e.byte_len());
    let mut out = Vec::with_capacity(end as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (e, (_, t)) in entries.iter().zip(store.iter()) {
        out.resize(e.offset as usize, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, config: &ModelConfig, store: &WeightStore) -> Result<(), LoadError> {
    let bytes = to_bytes(config, store)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, WeightStore), LoadError> {
    from_bytes(&std::fs::read(path)?)
}

/// Parses the header and manifest without validating tensors.
pub fn read_manifest(bytes: &[u8]) -> Result<WeightManifest, LoadError> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(LoadError::Truncated {
            needed: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(LoadError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LoadError::UnsupportedVersion(version));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = HEADER_LEN.checked_add(len).ok_or(LoadError::Truncated {
        needed: u64::MAX,
        actual: bytes.len() as u64,
    })?;
    if end > bytes.len() as u64 {
        return Err(LoadError::Truncated {
            needed: end,
            actual: bytes.len() as u64,
        });
    }
    let manifest: WeightManifest = serde_json::from_slice(&bytes[HEADER_LEN as usize..end as usize])
        .map_err(|e| LoadError::ManifestParse(e.to_string()))?;
    if manifest.format_version != version {
        return Err(LoadError::VersionMismatch {
            header: version,
            manifest: manifest.format_version,
        });
    }
    Ok(manifest)
}

/// Fully validates a container and returns its configuration and weights.
///
/// Checks run in a fixed order: header, manifest, configuration, tensor
/// names, shapes, layout, bounds, values, modality isolation.
pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, WeightStore), LoadError> {
    let manifest = read_manifest(bytes)?;
    let config = manifest.config;
    let expected = expected_shapes(&config).map_err(|e| LoadError::InvalidConfig(e.to_string()))?;

    let mut seen = BTreeSet::new();
    for e in &manifest.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(LoadError::DuplicateTensor(e.name.clone()));
        }
    }
    if let Some(e) = manifest.tensors.iter().find(|e| !expected.contains_key(&e.name)) {
        return Err(LoadError::UnexpectedTensor(e.name.clone()));
    }
    if let Some(name) = expected.keys().find(|n| !seen.contains(n.as_str())) {
        return Err(LoadError::MissingTensor(name.clone()));
    }
    for e in &manifest.tensors {
        let want = &expected[&e.name];
        if &e.shape != want {
            return Err(LoadError::ShapeMismatch {
                name: e.name.clone(),
                expected: want.clone(),
                found: e.shape.clone(),
            });
        }
    }

    let data_start = align_up(HEADER_LEN + u64::from_le_bytes(bytes[8..16].try_into().unwrap()));
    let mut by_offset: Vec<&TensorEntry> = manifest.tensors.iter().collect();
    by_offset.sort_by_key(|e| e.offset);
    let mut cursor = data_start;
    for e in &by_offset {
        if e.offset % ALIGN != 0 {
            return Err(LoadError::Misaligned {
                name: e.name.clone(),
                offset: e.offset,
            });
        }
        if e.offset < cursor {
            return Err(LoadError::Overlap(e.name.clone()));
        }
        cursor = e.offset + e.byte_len();
    }
    if cursor > bytes.len() as u64 {
        return Err(LoadError::Truncated {
            needed: cursor,
            actual: bytes.len() as u64,
        });
    }

    let mut store = WeightStore::new();
    let mut decoded = BTreeMap::new();
    for e in &manifest.tensors {
        let raw = &bytes[e.offset as usize..(e.offset + e.byte_len()) as usize];
        let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LoadError::NonFinite {
                name: e.name.clone(),
                index,
            });
        }
        let t = Tensor::new(&e.shape, data).map_err(|err| LoadError::InvalidConfig(err.to_string()))?;
        decoded.insert(e.name.clone(), t);
    }
    for (name, split) in modality_isolated(&config) {
        let t = &decoded[&name];
        let cols = t.shape()[1];
        let leak = t
            .data()
            .iter()
            .enumerate()
            .any(|(i, &v)| v != 0.0 && crosses_modality(i / cols, i % cols, cols, split));
        if leak {
            return Err(LoadError::ModalityLeak(name));
        }
    }
    for (name, t) in decoded {
        store.insert(name, t);
    }
    Ok((config, store))
}

/// Rewrites the manifest of a container in place, keeping every blob where
/// it is. The new manifest must fit in the space before the first blob; the
/// remainder is filled with JSON whitespace.
pub fn replace_manifest(bytes: &[u8], manifest: &WeightManifest) -> Result<Vec<u8>, LoadError> {
    let old_len = u64::from_le_bytes(
        bytes
            .get(8..16)
            .ok_or(LoadError::Truncated {
                needed: HEADER_LEN,
                actual: bytes.len() as u64,
            })?
            .try_into()
            .unwrap(),
    );
    let room = align_up(HEADER_LEN + old_len) - HEADER_LEN;
    let mut json = serde_json::to_vec(manifest).map_err(|e| LoadError::ManifestParse(e.to_string()))?;
    if json.len() as u64 > room {
        return Err(LoadError::ManifestParse(format!("manifest of {} bytes exceeds {room}", json.len())));
    }
    json.resize(room as usize, b' ');
    let mut out = bytes.to_vec();
    out[8..16].copy_from_slice(&room.to_le_bytes());
    out[HEADER_LEN as usize..(HEADER_LEN + room) as usize].copy_from_slice(&json);
    Ok(out)
}

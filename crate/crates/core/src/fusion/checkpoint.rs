//! Parameter checkpoints: a single archive holding a JSON manifest (kind,
//! variant tag, array shapes, seed) followed by raw little-endian float32
//! payloads. Field names are documented in `docs/schemas.md`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autodiff::TensorD;
use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::params::{FusionBlockParams, FusionDims};
use super::FusionVariant;

const MAGIC: &[u8; 4] = b"VLCF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the f32 payload.
    pub offset: usize,
    /// Element count.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    /// What the archive holds, e.g. "fusion_block" or "detector".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Kind-specific structure needed to rebuild the parameter containers.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub arrays: Vec<ArchiveEntry>,
}

/// Write named tensors into a single archive file.
pub fn save_archive(
    path: &Path,
    kind: &str,
    variant: Option<&str>,
    seed: Option<u64>,
    meta: serde_json::Value,
    arrays: &[(String, &TensorD)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0usize;
    for (name, t) in arrays {
        entries.push(ArchiveEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        variant: variant.map(str::to_string),
        seed,
        meta,
        arrays: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut bytes =
        Vec::with_capacity(16 + manifest_bytes.len() + offset * std::mem::size_of::<f32>());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_bytes);
    for (_, t) in arrays {
        for &v in t.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

/// Read an archive back into named f64 tensors.
pub fn load_archive(path: &Path) -> Result<(ArchiveManifest, HashMap<String, TensorD>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::schema(&file, "not a parameter archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::schema(
            &file,
            format!("unsupported format_version {version}"),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(Error::schema(&file, "truncated manifest"));
    }
    let manifest: ArchiveManifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| Error::schema(&file, format!("manifest: {e}")))?;
    let payload = &bytes[16 + manifest_len..];

    let mut arrays = HashMap::new();
    for entry in &manifest.arrays {
        let start = entry.offset * 4;
        let end = start + entry.len * 4;
        if end > payload.len() {
            return Err(Error::schema(
                &file,
                format!("array {} extends past payload", entry.name),
            ));
        }
        let expected: usize = entry.shape.iter().product();
        if expected != entry.len {
            return Err(Error::schema(
                &file,
                format!(
                    "array {}: shape {:?} disagrees with len {}",
                    entry.name, entry.shape, entry.len
                ),
            ));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let tensor = TensorD::from_shape_vec(IxDyn(&entry.shape), data)
            .map_err(|e| Error::schema(&file, format!("array {}: {e}", entry.name)))?;
        arrays.insert(entry.name.clone(), tensor);
    }
    Ok((manifest, arrays))
}

#[derive(Debug, Serialize, Deserialize)]
struct FusionMeta {
    c_a: usize,
    c_b: usize,
    c_out: usize,
    reduction: usize,
    k_conditions: usize,
    cbam_conv_depth: usize,
}

impl FusionBlockParams {
    /// Serialize this block to a checkpoint archive.
    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let meta = FusionMeta {
            c_a: self.dims.c_a,
            c_b: self.dims.c_b,
            c_out: self.dims.c_out,
            reduction: self.dims.reduction,
            k_conditions: self.dims.k_conditions,
            cbam_conv_depth: self.dims.cbam_conv_depth,
        };
        let mut arrays = Vec::new();
        self.for_each(&mut |name, t| arrays.push((name, t.clone())));
        let borrowed: Vec<(String, &TensorD)> =
            arrays.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_archive(
            path,
            "fusion_block",
            Some(self.variant.tag()),
            seed,
            serde_json::to_value(&meta)?,
            &borrowed,
        )
    }

    /// Load a block from a checkpoint archive, validating names and shapes.
    pub fn load(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let (manifest, mut arrays) = load_archive(path)?;
        if manifest.kind != "fusion_block" {
            return Err(Error::schema(
                &file,
                format!("expected kind fusion_block, got {}", manifest.kind),
            ));
        }
        let variant: FusionVariant = manifest
            .variant
            .as_deref()
            .ok_or_else(|| Error::schema(&file, "missing variant tag"))?
            .parse()?;
        let meta: FusionMeta = serde_json::from_value(manifest.meta.clone())
            .map_err(|e| Error::schema(&file, format!("meta: {e}")))?;
        let dims = FusionDims::new(meta.c_a, meta.c_b)
            .with_c_out(meta.c_out)
            .with_reduction(meta.reduction)
            .with_conditions(meta.k_conditions)
            .with_cbam_conv_depth(meta.cbam_conv_depth);
        let mut params = FusionBlockParams::seeded(variant, dims, 0)?;
        let mut missing = Vec::new();
        params.for_each_mut(&mut |name, t| match arrays.remove(&name) {
            Some(loaded) => {
                if loaded.shape() == t.shape() {
                    *t = loaded;
                } else {
                    missing.push(format!(
                        "{name}: shape {:?} != expected {:?}",
                        loaded.shape(),
                        t.shape()
                    ));
                }
            }
            None => missing.push(format!("{name}: absent from archive")),
        });
        if !missing.is_empty() {
            return Err(Error::schema(&file, missing.join("; ")));
        }
        if !arrays.is_empty() {
            let extra: Vec<_> = arrays.keys().cloned().collect();
            return Err(Error::schema(
                &file,
                format!("unexpected arrays: {}", extra.join(", ")),
            ));
        }
        Ok(params)
    }
}

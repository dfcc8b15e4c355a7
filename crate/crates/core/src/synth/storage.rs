//! Dataset persistence: a JSON manifest plus one binary tensor record per
//! scene (header + little-endian f32 payloads). Directory writes stage into
//! a temp dir and rename, so a failed run leaves no partial dataset.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::io::{read_json, sha256_hex, write_json_atomic};

use super::scene::{
    generate_dataset, DatasetManifest, SceneMeta, SceneSpec, SyntheticScene,
    MODALITY_CHANNELS,
};

const SCENE_MAGIC: &[u8; 4] = b"VLCS";
const SCENE_VERSION: u32 = 1;

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn encode_scene(scene: &SyntheticScene) -> Vec<u8> {
    let g = scene.modality_a.shape()[1];
    let mut bytes = Vec::with_capacity(24 + 2 * MODALITY_CHANNELS * g * g * 4);
    bytes.extend_from_slice(SCENE_MAGIC);
    bytes.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(MODALITY_CHANNELS as u32).to_le_bytes());
    bytes.extend_from_slice(&(g as u32).to_le_bytes());
    bytes.extend_from_slice(&(g as u32).to_le_bytes());
    for t in [&scene.modality_a, &scene.modality_b] {
        for &v in t.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

fn decode_scene(bytes: &[u8], meta: &SceneMeta, file: &str) -> Result<SyntheticScene> {
    if bytes.len() < 20 || &bytes[0..4] != SCENE_MAGIC {
        return Err(Error::schema(file, "not a scene record (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCENE_VERSION {
        return Err(Error::schema(file, format!("unsupported scene version {version}")));
    }
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = 20 + 2 * c * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::schema(
            file,
            format!("payload length {} != expected {expected}", bytes.len()),
        ));
    }
    let mut values = bytes[20..]
        .chunks_exact(4)
        .map(|chunk| f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    let mut read_tensor = || -> Array3<f64> {
        Array3::from_shape_vec((c, h, w), (&mut values).take(c * h * w).collect()).unwrap()
    };
    let modality_a = read_tensor();
    let modality_b = read_tensor();
    Ok(SyntheticScene {
        id: meta.id.clone(),
        modality_a,
        modality_b,
        latent: meta.latent.clone(),
        boxes: meta.boxes.clone(),
    })
}

/// Generate and persist a dataset under `dir`, returning the manifest and a
/// content hash over every artifact.
pub fn generate_and_store(dir: &Path, spec: &SceneSpec, seed: u64) -> Result<(DatasetManifest, String)> {
    spec.validate()?;
    let scenes = generate_dataset(spec, seed)?;

    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let staging = parent.join(format!(
        ".{}.tmp-{}",
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into()),
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(staging.join("scenes")).map_err(|e| Error::io(&staging, e))?;

    let mut metas = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let file = format!("scenes/{}.bin", scene.id);
        fs::write(staging.join(&file), encode_scene(scene))
            .map_err(|e| Error::io(staging.join(&file), e))?;
        metas.push(SceneMeta {
            id: scene.id.clone(),
            file,
            latent: scene.latent.clone(),
            boxes: scene.boxes.clone(),
        });
    }
    let manifest = DatasetManifest { spec: *spec, seed, scenes: metas };
    write_json_atomic(&staging.join("manifest.json"), &manifest)?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;

    let hash = dataset_hash(dir, &manifest)?;
    Ok((manifest, hash))
}

/// Content hash over the manifest and every scene record, in manifest order.
pub fn dataset_hash(dir: &Path, manifest: &DatasetManifest) -> Result<String> {
    let mut acc = Vec::new();
    let manifest_bytes =
        fs::read(manifest_path(dir)).map_err(|e| Error::io(manifest_path(dir), e))?;
    acc.extend_from_slice(&sha256_hex(&manifest_bytes).into_bytes());
    for meta in &manifest.scenes {
        let bytes = fs::read(dir.join(&meta.file)).map_err(|e| Error::io(dir.join(&meta.file), e))?;
        acc.extend_from_slice(&sha256_hex(&bytes).into_bytes());
    }
    Ok(sha256_hex(&acc))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    read_json(&manifest_path(dir))
}

pub fn load_scene(dir: &Path, meta: &SceneMeta) -> Result<SyntheticScene> {
    let path = dir.join(&meta.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_scene(&bytes, meta, &path.display().to_string())
}

/// A dataset held fully in memory, indexed by scene id.
pub struct SceneStore {
    pub manifest: DatasetManifest,
    scenes: std::collections::BTreeMap<String, SyntheticScene>,
}

impl SceneStore {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let mut scenes = std::collections::BTreeMap::new();
        for meta in &manifest.scenes {
            scenes.insert(meta.id.clone(), load_scene(dir, meta)?);
        }
        Ok(SceneStore { manifest, scenes })
    }

    pub fn from_scenes(manifest: DatasetManifest, scenes: Vec<SyntheticScene>) -> Self {
        SceneStore {
            manifest,
            scenes: scenes.into_iter().map(|s| (s.id.clone(), s)).collect(),
        }
    }

    /// Build an in-memory store directly from a spec, bypassing disk.
    pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Self> {
        let scenes = generate_dataset(spec, seed)?;
        let metas = scenes
            .iter()
            .map(|s| SceneMeta {
                id: s.id.clone(),
                file: format!("scenes/{}.bin", s.id),
                latent: s.latent.clone(),
                boxes: s.boxes.clone(),
            })
            .collect();
        Ok(SceneStore::from_scenes(
            DatasetManifest { spec: *spec, seed, scenes: metas },
            scenes,
        ))
    }

    pub fn get(&self, id: &str) -> Result<&SyntheticScene> {
        self.scenes
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene id {id}")))
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&SyntheticScene>> {
        ids.iter().map(|id| self.get(id)).collect()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

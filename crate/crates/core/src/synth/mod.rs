//! Synthetic two-modality detection benchmark: scene generation with latent
//! environmental conditions, seen/unseen splits over condition combinations,
//! a toy anchor-free detector, a deterministic trainer, and a latent-flag
//! oracle backend for condition responses.

mod detector;
mod eval;
mod oracle;
mod scene;
mod splits;
mod storage;
mod train;

pub use detector::{
    batch_inputs, decode_outputs, forward_detector, DecodeConfig, DetectorArch, DetectorConfig,
    DetectorParams, RawOutputs, MAX_PARAMS,
};
pub use eval::evaluate_detector;
pub use oracle::{BoundCondition, ConditionBinding, SyntheticConditionSpec, SyntheticOracleVlm};
pub use scene::{
    generate_dataset, generate_scene, scene_id, DatasetManifest, LatentConditions, SceneMeta,
    SceneSpec, SyntheticScene, DARK_CONTRAST, DARK_NOISE_STD, HEAD_STRIDE, MODALITY_CHANNELS,
    RAIN_DROPOUT,
};
pub use splits::{build_splits, load_splits, save_splits, DegradationCombo, SplitPlan, Splits};
pub use storage::{
    dataset_hash, generate_and_store, load_manifest, load_scene, manifest_path, SceneStore,
};
pub use train::{
    detect_scenes, train, ConditionsSource, EpochLog, TrainConfig, TrainOutcome,
};

//! Condition-aware multimodal feature fusion and its experiment harness.
//!
//! The crate has five subsystems:
//!
//! - [`fusion`]: the conditioned fusion block (concat → CBAM attention →
//!   FiLM modulation driven by boolean scene conditions) plus four baseline
//!   fusion blocks, all with forward evaluation and analytic gradients.
//! - [`conditions`]: the offline condition-mining pipeline (caption →
//!   extract → generate), deduplication, consistency ranking and top-k
//!   selection, with JSON persistence.
//! - [`vlm`]: vision-language backends behind one trait — deterministic
//!   mocks for tests, a configurable-noise mock for consistency
//!   experiments, and an HTTP chat-completions client.
//! - [`synth`]: a synthetic two-modality detection benchmark with latent
//!   scene conditions, a tiny detector, a trainer and seen/unseen splits.
//! - [`metrics`]: COCO-style detection metrics (IoU, greedy matching,
//!   101-point AP, mAP over an IoU sweep, mAR at 100 detections).

pub mod autodiff;
pub mod conditions;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod vlm;

pub use error::{Error, Result, VlmError};

//! Joint audio-video generative adversarial training at desk scale.
//!
//! The crate couples a raw-waveform audio generator/discriminator pair, a
//! motion/content-decomposed video generator with per-frame and per-clip
//! discriminators, and a pair of joint discriminators over (audio, video)
//! pairs that push generated cross-modal pairs toward the real joint
//! distribution. A procedurally generated dataset with a known pitch-motion
//! correspondence makes the cross-modal claims checkable by machine, and a
//! metric suite (inception score, Fréchet distance, statistically-different
//! bins, pitch entropy, audio-video consistency) quantifies them.
//!
//! Everything is deterministic: a counter-based RNG, ordered parallel
//! collection, and f32-grid training state give byte-identical artifacts for
//! a fixed seed regardless of thread count.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod graph;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod rng;
pub mod trainer;
pub mod tensor;

pub use error::{JavgError, Result};
pub use exec::ExecMode;
pub use rng::Rng;
pub use tensor::Tensor;

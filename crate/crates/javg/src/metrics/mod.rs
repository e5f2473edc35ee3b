//! Quantitative evaluation: inception score, Fréchet distance,
//! statistically-different bins, pitch entropy, and the audio-video
//! consistency oracle for the synthetic dataset.

mod pitch;

pub use pitch::{detect_pitch, Pitch, PITCH_MAX_HZ, PITCH_MIN_HZ, VOICED_THRESHOLD};

//! Paired audio-video clips: domain types, a procedurally generated
//! correlated dataset, and the on-disk layout (WAV + PPM frames + JSON meta).
//!
//! The synthetic generator stands in for recorded instrument data. Each class
//! pairs a sine pitch with a disc oscillating vertically at a class-specific
//! motion frequency, and the audio envelope follows the disc speed, so the
//! cross-modal correspondence is exact by construction and recoverable by the
//! pitch and centroid oracles in the metrics module.

mod layout;
mod ppm;
mod synth;
mod wav;

pub use layout::{list_splits, read_split, write_split};
pub use ppm::{decode_ppm, encode_ppm};
pub use synth::{generate_split, generate_synthetic_pair};
pub use wav::{decode_wav, encode_wav};

use crate::error::{JavgError, Result};
use crate::tensor::Tensor;

/// 1-D waveform with unit-range samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(JavgError::invalid("audio sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(JavgError::invalid("audio clip must contain samples"));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(JavgError::invalid(format!(
                "audio sample {bad} outside [-1, 1]"
            )));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Shape [1, len] tensor for the 1-D conv stacks.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.samples.len()], self.samples.clone())
            .expect("validated audio samples")
    }

    pub fn from_tensor(t: &Tensor, sample_rate: u32) -> Result<Self> {
        AudioClip::new(t.data().to_vec(), sample_rate)
    }
}

/// One RGB frame, interleaved rows of [0, 1] values.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    /// height * width * 3 values, row-major, RGB interleaved.
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(JavgError::invalid("frame extents must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(JavgError::invalid(format!(
                "frame data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(JavgError::invalid(format!(
                "frame value {bad} outside [0, 1]"
            )));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-first [3, H, W] tensor for the 2-D conv stacks.
    pub fn to_chw_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                data[c * h * w + p] = self.data[p * 3 + c];
            }
        }
        Tensor::new(vec![3, h, w], data).expect("validated frame values")
    }

    /// Inverse of [`to_chw_tensor`], clamping into [0, 1].
    pub fn from_chw_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(JavgError::invalid(format!(
                "expected [3, h, w] tensor, got {s:?}"
            )));
        }
        let (h, w) = (s[1], s[2]);
        let mut data = vec![0.0; h * w * 3];
        for p in 0..h * w {
            for c in 0..3 {
                data[p * 3 + c] = t.data()[c * h * w + p].clamp(0.0, 1.0);
            }
        }
        Frame::new(h, w, data)
    }
}

/// Ordered frame sequence at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: u32,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: u32) -> Result<Self> {
        if fps == 0 {
            return Err(JavgError::invalid("fps must be positive"));
        }
        if frames.is_empty() {
            return Err(JavgError::invalid("video clip must contain frames"));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        if frames.iter().any(|f| f.height() != h || f.width() != w) {
            return Err(JavgError::invalid("all frames must share one size"));
        }
        Ok(VideoClip { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps as f64
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Channel-first [3, T, H, W] tensor for the 3-D conv stacks.
    pub fn to_cthw_tensor(&self) -> Tensor {
        let (t_len, h, w) = (self.frames.len(), self.height(), self.width());
        let hw = h * w;
        let mut data = vec![0.0; 3 * t_len * hw];
        for (t, frame) in self.frames.iter().enumerate() {
            for p in 0..hw {
                for c in 0..3 {
                    data[(c * t_len + t) * hw + p] = frame.data()[p * 3 + c];
                }
            }
        }
        Tensor::new(vec![3, t_len, h, w], data).expect("validated frame values")
    }
}

/// A paired clip. Audio and video durations must agree to within one audio
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AVPair {
    pub audio: AudioClip,
    pub video: VideoClip,
    /// Class index; -1 marks generated pairs with no ground-truth class.
    pub class_id: i64,
    pub clip_id: String,
}

impl AVPair {
    pub fn new(audio: AudioClip, video: VideoClip, class_id: i64, clip_id: String) -> Result<Self> {
        let tolerance = 1.0 / audio.sample_rate() as f64;
        let mismatch = (audio.duration() - video.duration()).abs();
        if mismatch > tolerance + 1e-12 {
            return Err(JavgError::invalid(format!(
                "clip {clip_id:?}: audio duration {:.6}s and video duration {:.6}s disagree by more than one audio sample",
                audio.duration(),
                video.duration()
            )));
        }
        Ok(AVPair {
            audio,
            video,
            class_id,
            clip_id,
        })
    }
}

/// Configuration of the synthetic correlated dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Pitch per class in Hz, strictly increasing, below Nyquist.
    pub class_pitches: Vec<f64>,
    /// Clip length in seconds.
    pub duration: f64,
    pub fps: u32,
    pub sample_rate: u32,
    pub image_size: usize,
    /// Uniform noise amplitude mixed into the audio.
    pub noise_floor: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 5,
            class_pitches: vec![220.0, 277.0, 330.0, 392.0, 440.0],
            duration: 1.0,
            fps: 25,
            sample_rate: 16_000,
            image_size: 64,
            noise_floor: 0.02,
            train_per_class: 200,
            test_per_class: 50,
        }
    }
}

impl SynthConfig {
    /// Motion frequency of a class in Hz.
    pub fn motion_freq(class_id: usize) -> f64 {
        1.0 + class_id as f64
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(JavgError::invalid("n_classes must be positive"));
        }
        if self.class_pitches.len() != self.n_classes {
            return Err(JavgError::invalid(format!(
                "class_pitches has {} entries for {} classes",
                self.class_pitches.len(),
                self.n_classes
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for w in self.class_pitches.windows(2) {
            if w[1] <= w[0] {
                return Err(JavgError::invalid(
                    "class_pitches must be strictly increasing",
                ));
            }
        }
        if self
            .class_pitches
            .iter()
            .any(|&p| p <= 0.0 || p >= nyquist)
        {
            return Err(JavgError::invalid(format!(
                "class pitches must lie in (0, {nyquist}) Hz"
            )));
        }
        if self.duration <= 0.0 {
            return Err(JavgError::invalid("duration must be positive"));
        }
        let exact_samples = self.duration * self.sample_rate as f64;
        if (exact_samples - exact_samples.round()).abs() > 1e-9 {
            return Err(JavgError::invalid(
                "duration * sample_rate must be an integer sample count",
            ));
        }
        let exact_frames = self.duration * self.fps as f64;
        if (exact_frames - exact_frames.round()).abs() > 1e-9 {
            return Err(JavgError::invalid(
                "duration * fps must be an integer frame count",
            ));
        }
        let max_motion = Self::motion_freq(self.n_classes - 1);
        if max_motion >= self.fps as f64 / 2.0 {
            return Err(JavgError::invalid(format!(
                "motion frequency {max_motion} Hz of the top class reaches Nyquist at {} fps",
                self.fps
            )));
        }
        if !(0.0..0.1).contains(&self.noise_floor) {
            return Err(JavgError::invalid("noise_floor must lie in [0, 0.1)"));
        }
        if self.image_size < 8 {
            return Err(JavgError::invalid("image_size must be at least 8"));
        }
        Ok(())
    }
}

/// Snap to the 16-bit PCM grid so WAV roundtrips are bit-exact.
pub fn snap_pcm16(x: f64) -> f64 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() / 32767.0
}

/// Snap to the 8-bit grid so PPM roundtrips are bit-exact.
pub fn snap_u8(x: f64) -> f64 {
    (x.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

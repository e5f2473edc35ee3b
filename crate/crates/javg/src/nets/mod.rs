//! Network definitions: the audio generator/discriminator pair, the
//! motion/content video generator with its per-frame and per-clip
//! discriminators, and the two joint discriminators over (audio, video)
//! pairs.
//!
//! Conventions shared by every net:
//!
//! - Parameter names are `<net>.<layer>.<w|b>`; a final segment starting
//!   with `b` is a bias (initialized to zero), everything else is a weight
//!   (Normal(0, sigma)).
//! - Discriminator activations are leaky rectifiers (slope 0.2), generator
//!   activations are plain rectifiers, probabilities come from a logistic
//!   head, and probabilities are clamped to [1e-7, 1 - 1e-7] before any log.

pub mod audio;
pub mod joint;
pub mod video;

use serde::{Deserialize, Serialize};

use crate::error::{JavgError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probability clamp bound used by every value function.
pub const PROB_EPS: f64 = 1e-7;

/// Default weight initialization scale.
pub const INIT_SIGMA: f64 = 0.02;

/// Architecture hyperparameters. Channel counts are per-net base widths;
/// ladders double (discriminators) or halve (generators) per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Audio latent dimension (noise fed to the audio generator).
    pub audio_latent_dim: usize,
    /// Content code dimension shared by all frames of a clip.
    pub content_dim: usize,
    /// Per-frame motion code dimension.
    pub motion_dim: usize,
    /// Generated/real waveform length; must be 16 * 4^k.
    pub audio_len: usize,
    /// Frame height and width; must be 4 * 2^k.
    pub image_size: usize,
    /// Frames per clip.
    pub n_frames: usize,
    pub audio_gen_channels: usize,
    pub audio_disc_channels: usize,
    pub image_gen_channels: usize,
    pub image_disc_channels: usize,
    pub video_disc_channels: usize,
    pub joint_audio_channels: usize,
    pub joint_video_channels: usize,
    /// Per-modality embedding width inside the joint discriminators.
    pub joint_embed_dim: usize,
    /// Maximum phase-shuffle shift in the audio discriminator.
    pub phase_shuffle: usize,
    /// Leaky-rectifier slope in all discriminators.
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            audio_latent_dim: 100,
            content_dim: 50,
            motion_dim: 10,
            audio_len: 4096,
            image_size: 32,
            n_frames: 12,
            audio_gen_channels: 4,
            audio_disc_channels: 4,
            image_gen_channels: 8,
            image_disc_channels: 8,
            video_disc_channels: 4,
            joint_audio_channels: 4,
            joint_video_channels: 4,
            joint_embed_dim: 32,
            phase_shuffle: 2,
            leaky_slope: 0.2,
        }
    }
}

/// Audio conv ladders start from a 16-sample seed with stride-4 layers.
pub const AUDIO_SEED_LEN: usize = 16;
pub const AUDIO_STRIDE: usize = 4;
pub const AUDIO_KERNEL: usize = 25;

/// Image ladders start from a 4x4 seed with stride-2, kernel-4 layers.
pub const IMAGE_SEED: usize = 4;
pub const IMAGE_STRIDE: usize = 2;
pub const IMAGE_KERNEL: usize = 4;

impl ModelConfig {
    /// Number of stride-4 audio layers mapping the 16-sample seed to
    /// `audio_len`.
    pub fn audio_layers(&self) -> Result<usize> {
        let mut len = AUDIO_SEED_LEN;
        let mut layers = 0;
        while len < self.audio_len {
            len *= AUDIO_STRIDE;
            layers += 1;
        }
        if len != self.audio_len || layers == 0 {
            return Err(JavgError::invalid(format!(
                "audio_len {} is not {AUDIO_SEED_LEN} * {AUDIO_STRIDE}^k for k >= 1",
                self.audio_len
            )));
        }
        Ok(layers)
    }

    /// Number of stride-2 image layers mapping the 4x4 seed to `image_size`.
    pub fn image_layers(&self) -> Result<usize> {
        let mut size = IMAGE_SEED;
        let mut layers = 0;
        while size < self.image_size {
            size *= IMAGE_STRIDE;
            layers += 1;
        }
        if size != self.image_size || layers == 0 {
            return Err(JavgError::invalid(format!(
                "image_size {} is not {IMAGE_SEED} * 2^k for k >= 1",
                self.image_size
            )));
        }
        Ok(layers)
    }

    pub fn frame_latent_dim(&self) -> usize {
        self.content_dim + self.motion_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.audio_layers()?;
        self.image_layers()?;
        if self.audio_latent_dim == 0 || self.content_dim == 0 || self.motion_dim == 0 {
            return Err(JavgError::invalid("latent dimensions must be positive"));
        }
        if self.n_frames < 2 {
            return Err(JavgError::invalid("n_frames must be at least 2"));
        }
        if self.phase_shuffle >= AUDIO_SEED_LEN {
            return Err(JavgError::invalid(format!(
                "phase_shuffle {} too large for the {AUDIO_SEED_LEN}-sample deepest layer",
                self.phase_shuffle
            )));
        }
        let widths = [
            self.audio_gen_channels,
            self.audio_disc_channels,
            self.image_gen_channels,
            self.image_disc_channels,
            self.video_disc_channels,
            self.joint_audio_channels,
            self.joint_video_channels,
            self.joint_embed_dim,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(JavgError::invalid("channel widths must be positive"));
        }
        Ok(())
    }
}

/// Zero-valued parameter tensor registered under `name`.
pub(crate) fn add_param(set: &mut ParamSet, name: String, shape: Vec<usize>) -> Result<()> {
    set.insert(name, Tensor::zeros(shape))
}

/// Whether a parameter name denotes a bias under the naming convention.
pub fn is_bias_name(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|seg| seg.starts_with('b'))
}

/// DCGAN-style init: weights Normal(0, sigma), biases zero, in name order.
pub fn init_gan_params(set: &mut ParamSet, sigma: f64, rng: &mut Rng) {
    for (name, tensor) in set.iter_mut() {
        if is_bias_name(name) {
            for v in tensor.data_mut() {
                *v = 0.0;
            }
        } else {
            for v in tensor.data_mut() {
                *v = sigma * rng.normal();
            }
        }
    }
}

/// ln(clamp(p)) with the crate-wide probability clamp.
pub fn log_prob(g: &mut Graph, p: NodeId) -> Result<NodeId> {
    let clamped = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    g.ln(clamped)
}

/// ln(1 - clamp(p)).
pub fn log_one_minus(g: &mut Graph, p: NodeId) -> Result<NodeId> {
    let clamped = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let flipped = g.one_minus(clamped)?;
    g.ln(flipped)
}

/// Clamp probabilities for the scalar (non-graph) loss paths, counting how
/// many values actually hit the clamp.
pub(crate) fn clamp_probs(probs: &[f64], clamped: &mut usize) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| {
            let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if c != p {
                *clamped += 1;
            }
            c
        })
        .collect()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Which loss the generators descend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// The printed min-max form: G minimizes the value function itself.
    Saturating,
    /// G maximizes log D(fake); standard practice for trainability.
    NonSaturating,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn audio_layer_count() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.audio_layers().unwrap(), 4); // 16 * 4^4 = 4096
        let bad = ModelConfig {
            audio_len: 16_000,
            ..ModelConfig::default()
        };
        assert!(bad.audio_layers().is_err());
    }

    #[test]
    fn bias_naming_convention() {
        assert!(is_bias_name("audio_gen.proj.b"));
        assert!(is_bias_name("video_gen.rnn.b_r"));
        assert!(!is_bias_name("audio_gen.proj.w"));
        assert!(!is_bias_name("video_gen.rnn.u_r"));
    }
}

//! Raw-waveform audio GAN: generator, discriminator with phase shuffle, and
//! the audio value function.

use crate::dataset::AudioClip;
use crate::error::{JavgError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{
    add_param, clamp_probs, log_one_minus, log_prob, mean, LossForm, ModelConfig, AUDIO_KERNEL,
    AUDIO_SEED_LEN, AUDIO_STRIDE,
};

/// Generator: dense projection to a 16-sample seed, then stride-4 transposed
/// convolutions up to `audio_len`, rectifiers between layers and tanh at the
/// output so samples stay inside (-1, 1).
#[derive(Debug, Clone)]
pub struct AudioGenNet {
    pub latent_dim: usize,
    pub output_len: usize,
    /// Channel at the input of each transposed conv; the last layer emits 1.
    channels: Vec<usize>,
}

impl AudioGenNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg.audio_layers()?;
        let channels = (0..layers)
            .map(|i| cfg.audio_gen_channels << (layers - 1 - i))
            .collect();
        Ok(AudioGenNet {
            latent_dim: cfg.audio_latent_dim,
            output_len: cfg.audio_len,
            channels,
        })
    }

    fn out_channels(&self, layer: usize) -> usize {
        self.channels.get(layer + 1).copied().unwrap_or(1)
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let seed = self.channels[0] * AUDIO_SEED_LEN;
        add_param(&mut set, "audio_gen.proj.w".into(), vec![seed, self.latent_dim])?;
        add_param(&mut set, "audio_gen.proj.b".into(), vec![seed])?;
        for (i, &c_in) in self.channels.iter().enumerate() {
            let c_out = self.out_channels(i);
            add_param(
                &mut set,
                format!("audio_gen.up{i}.w"),
                vec![c_out, c_in, AUDIO_KERNEL],
            )?;
            add_param(&mut set, format!("audio_gen.up{i}.b"), vec![c_out])?;
        }
        Ok(set)
    }

    /// Build the generator forward pass; `z` is a [latent_dim] leaf.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, z: NodeId) -> Result<NodeId> {
        if g.value(z).shape() != [self.latent_dim] {
            return Err(JavgError::invalid(format!(
                "audio generator expects latent of shape [{}], got {:?}",
                self.latent_dim,
                g.value(z).shape()
            )));
        }
        let w = bound.id("audio_gen.proj.w")?;
        let b = bound.id("audio_gen.proj.b")?;
        let mut h = g.dense(z, w, b)?;
        h = g.reshape(h, vec![self.channels[0], AUDIO_SEED_LEN])?;
        h = g.relu(h)?;
        for i in 0..self.channels.len() {
            let w = bound.id(&format!("audio_gen.up{i}.w"))?;
            let b = bound.id(&format!("audio_gen.up{i}.b"))?;
            h = g.conv_transpose1d(h, w, AUDIO_STRIDE)?;
            h = g.add_bias(h, b)?;
            h = if i + 1 == self.channels.len() {
                g.tanh(h)?
            } else {
                g.relu(h)?
            };
        }
        Ok(h)
    }
}

/// Eval-mode generator forward: z -> waveform.
pub fn audio_generator_forward(
    net: &AudioGenNet,
    params: &ParamSet,
    z: &Tensor,
    sample_rate: u32,
) -> Result<AudioClip> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let zn = g.leaf(z.clone());
    let out = net.forward(&mut g, &bound, zn)?;
    AudioClip::from_tensor(g.value(out), sample_rate)
}

/// Discriminator: stride-4 convolutions with leaky rectifiers, phase shuffle
/// after every conv except the last, then a dense head to one logistic unit.
#[derive(Debug, Clone)]
pub struct AudioDiscNet {
    pub input_len: usize,
    pub phase_shuffle_n: usize,
    pub leaky_slope: f64,
    channels: Vec<usize>,
}

impl AudioDiscNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg.audio_layers()?;
        let channels = (0..layers).map(|i| cfg.audio_disc_channels << i).collect();
        Ok(AudioDiscNet {
            input_len: cfg.audio_len,
            phase_shuffle_n: cfg.phase_shuffle,
            leaky_slope: cfg.leaky_slope,
            channels,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.channels.len()
    }

    /// Shuffle shifts consumed per forward pass (one per layer except last).
    pub fn shift_count(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let mut c_in = 1;
        for (i, &c_out) in self.channels.iter().enumerate() {
            add_param(
                &mut set,
                format!("audio_disc.conv{i}.w"),
                vec![c_out, c_in, AUDIO_KERNEL],
            )?;
            add_param(&mut set, format!("audio_disc.conv{i}.b"), vec![c_out])?;
            c_in = c_out;
        }
        let flat = c_in * AUDIO_SEED_LEN;
        add_param(&mut set, "audio_disc.head.w".into(), vec![1, flat])?;
        add_param(&mut set, "audio_disc.head.b".into(), vec![1])?;
        Ok(set)
    }

    /// Probability that `clip` ([1, input_len]) is real. `shifts` holds one
    /// phase-shuffle shift per layer except the last; pass zeros (or draw
    /// them with [`draw_shifts`]) for eval and train respectively.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        clip: NodeId,
        shifts: &[i64],
    ) -> Result<NodeId> {
        if g.value(clip).shape() != [1, self.input_len] {
            return Err(JavgError::invalid(format!(
                "audio discriminator expects [1, {}], got {:?}",
                self.input_len,
                g.value(clip).shape()
            )));
        }
        if shifts.len() != self.shift_count() {
            return Err(JavgError::invalid(format!(
                "expected {} phase-shuffle shifts, got {}",
                self.shift_count(),
                shifts.len()
            )));
        }
        let mut h = clip;
        for i in 0..self.channels.len() {
            let w = bound.id(&format!("audio_disc.conv{i}.w"))?;
            let b = bound.id(&format!("audio_disc.conv{i}.b"))?;
            h = g.conv1d(h, w, AUDIO_STRIDE)?;
            h = g.add_bias(h, b)?;
            h = g.leaky_relu(h, self.leaky_slope)?;
            if i + 1 < self.channels.len() {
                h = apply_phase_shuffle(g, h, shifts[i])?;
            }
        }
        let flat = self.channels[self.channels.len() - 1] * AUDIO_SEED_LEN;
        h = g.reshape(h, vec![flat])?;
        let w = bound.id("audio_disc.head.w")?;
        let b = bound.id("audio_disc.head.b")?;
        let logit = g.dense(h, w, b)?;
        g.sigmoid(logit)
    }
}

/// Eval-mode discriminator probability (no shuffle randomness).
pub fn audio_discriminator_prob(
    net: &AudioDiscNet,
    params: &ParamSet,
    clip: &AudioClip,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let x = g.leaf(clip.to_tensor());
    let p = net.forward(&mut g, &bound, x, &vec![0; net.shift_count()])?;
    g.value(p).item()
}

/// Reflection index map for a time shift: out[t] = in[t - n] with indices
/// reflected at the boundaries.
pub fn shuffle_map(time: usize, shift: i64) -> Vec<usize> {
    (0..time as i64)
        .map(|t| {
            let mut idx = t - shift;
            loop {
                if idx < 0 {
                    idx = -idx;
                } else if idx >= time as i64 {
                    idx = 2 * (time as i64 - 1) - idx;
                } else {
                    break;
                }
            }
            idx as usize
        })
        .collect()
}

/// In-graph phase shuffle with a fixed (pre-drawn) shift.
pub fn apply_phase_shuffle(g: &mut Graph, x: NodeId, shift: i64) -> Result<NodeId> {
    if shift == 0 {
        return Ok(x);
    }
    let time = *g.value(x).shape().last().unwrap();
    if shift.unsigned_abs() as usize >= time {
        return Err(JavgError::invalid(format!(
            "phase shuffle shift {shift} out of range for time extent {time}"
        )));
    }
    g.gather_last(x, shuffle_map(time, shift))
}

/// Draw one shift uniform in [-n_max, n_max].
pub fn draw_shift(rng: &mut Rng, n_max: usize) -> i64 {
    if n_max == 0 {
        0
    } else {
        rng.uniform_int(-(n_max as i64), n_max as i64)
    }
}

/// Draw the full shift vector for one discriminator forward pass.
pub fn draw_shifts(rng: &mut Rng, net: &AudioDiscNet) -> Vec<i64> {
    (0..net.shift_count())
        .map(|_| draw_shift(rng, net.phase_shuffle_n))
        .collect()
}

/// Standalone phase shuffle of a [channels, time] tensor, drawing the shift.
pub fn phase_shuffle(x: &Tensor, n_max: usize, rng: &mut Rng) -> Result<Tensor> {
    let time = *x
        .shape()
        .last()
        .ok_or_else(|| JavgError::invalid("phase shuffle on empty shape"))?;
    if n_max >= time {
        return Err(JavgError::invalid(format!(
            "phase shuffle n_max {n_max} must be below time extent {time}"
        )));
    }
    let shift = draw_shift(rng, n_max);
    let mut g = Graph::new();
    let id = g.leaf(x.clone());
    let out = apply_phase_shuffle(&mut g, id, shift)?;
    Ok(g.value(out).clone())
}

/// Value function and per-player losses computed from probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioGanLosses {
    /// The two-term value: mean log D(real) + mean log(1 - D(fake)).
    pub value_v: f64,
    /// Discriminator loss (D ascends the value, so its loss is -value).
    pub loss_d: f64,
    /// Generator loss in the requested form.
    pub loss_g: f64,
    /// How many probabilities hit the clamp; nonzero means saturation.
    pub clamped: usize,
}

pub fn audio_gan_value(d_real: &[f64], d_fake: &[f64], form: LossForm) -> Result<AudioGanLosses> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(JavgError::invalid("value function needs non-empty batches"));
    }
    let mut clamped = 0;
    let real = clamp_probs(d_real, &mut clamped);
    let fake = clamp_probs(d_fake, &mut clamped);
    if clamped > 0 {
        log::warn!("audio value function clamped {clamped} saturated probabilities");
    }
    let real_term = mean(&real.iter().map(|p| p.ln()).collect::<Vec<_>>());
    let fake_term = mean(&fake.iter().map(|p| (1.0 - p).ln()).collect::<Vec<_>>());
    let value_v = real_term + fake_term;
    let loss_g = match form {
        LossForm::Saturating => value_v,
        LossForm::NonSaturating => -mean(&fake.iter().map(|p| p.ln()).collect::<Vec<_>>()),
    };
    Ok(AudioGanLosses {
        value_v,
        loss_d: -value_v,
        loss_g,
        clamped,
    })
}

/// Per-sample value term of the audio game, built in-graph:
/// `ln D(real) + ln(1 - D(G(noise)))`. Averaging this over a batch gives the
/// value function; both players' gradients flow through it according to how
/// their parameters were bound.
#[allow(clippy::too_many_arguments)]
pub fn audio_value_term(
    g: &mut Graph,
    gen: &AudioGenNet,
    disc: &AudioDiscNet,
    gen_bound: &BoundParams,
    disc_bound: &BoundParams,
    real: &Tensor,
    noise: &Tensor,
    real_shifts: &[i64],
    fake_shifts: &[i64],
) -> Result<NodeId> {
    let real_in = g.leaf(real.clone());
    let d_real = disc.forward(g, disc_bound, real_in, real_shifts)?;
    let z = g.leaf(noise.clone());
    let fake = gen.forward(g, gen_bound, z)?;
    let d_fake = disc.forward(g, disc_bound, fake, fake_shifts)?;
    let lr = log_prob(g, d_real)?;
    let lf = log_one_minus(g, d_fake)?;
    g.add(lr, lf)
}

/// Per-sample generator loss term for the audio game.
pub fn audio_gen_loss_term(
    g: &mut Graph,
    gen: &AudioGenNet,
    disc: &AudioDiscNet,
    gen_bound: &BoundParams,
    disc_bound: &BoundParams,
    noise: &Tensor,
    fake_shifts: &[i64],
    form: LossForm,
) -> Result<NodeId> {
    let z = g.leaf(noise.clone());
    let fake = gen.forward(g, gen_bound, z)?;
    let d_fake = disc.forward(g, disc_bound, fake, fake_shifts)?;
    match form {
        LossForm::Saturating => log_one_minus(g, d_fake),
        LossForm::NonSaturating => {
            let lp = log_prob(g, d_fake)?;
            g.affine(lp, -1.0, 0.0)
        }
    }
}

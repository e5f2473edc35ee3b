//! Alternating min-max training of all five discriminators and both
//! generators, with a baseline mode that removes the joint discriminators
//! for the ablation comparison.
//!
//! One training step runs, in order: (1) audio discriminator ascent, (2)
//! frame and clip discriminator ascent, (3) joint discriminator ascent (in
//! joint mode), (4) one generator descent step on
//! `loss_G = loss_g(audio) + loss_g(video) + lambda * loss_g(joint)`.
//!
//! Determinism contract: all random draws come from the state's counter RNG
//! in a fixed order (audio noise, then video content, then motion noise,
//! then shuffle shifts, then sampling indices); per-sample work runs data
//! parallel but is collected and reduced in index order; parameters and
//! optimizer moments are rounded to the f32 grid after every update so the
//! 32-bit checkpoint format is lossless. Batch indices come from a per-step
//! derived stream, so resuming from a checkpoint replays the identical
//! trajectory.
//!
//! In baseline mode the joint phase is skipped entirely: joint parameters
//! receive no updates and no random draws are consumed on their behalf, so
//! the audio/video trajectory is bit-identical to a build with no joint
//! module at all. Each net's parameters are initialized from a substream
//! derived from its own name for the same reason.


use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{AVPair, AudioClip, VideoClip};
use crate::error::{JavgError, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::graph::Graph;
use crate::nets::audio::{audio_value_term, draw_shift, AudioDiscNet, AudioGenNet};
use crate::nets::joint::{
    joint_value_term, JointDiscNet, JointHead, JointSampleDraws,
};
use crate::nets::video::{
    latent_from_noise, sample_frame_index, sample_window_start, video_value_term, ImageDiscNet,
    ImageGenNet, MotionRnn, VideoDiscNet, VideoLatent, VideoSampleDraws,
};
use crate::nets::{log_prob, log_one_minus, init_gan_params, LossForm, ModelConfig, INIT_SIGMA};
use crate::params::{BoundParams, GradMap, ParamSet};
use crate::rng::{fnv1a, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Joint,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// One base noise per pair; the audio latent is the base and the video
    /// content code is its leading slice.
    Shared,
    /// Independent draws for the audio latent and the content code.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the joint generator loss; forced to 0 in baseline mode.
    pub lambda_joint: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Discriminator-only sub-steps before each full step.
    pub d_steps: usize,
    pub steps: u64,
    pub seed: u64,
    /// Checkpoint cadence in steps (0 = final checkpoint only).
    pub checkpoint_every: u64,
    pub loss_form: LossForm,
    pub noise_mode: NoiseMode,
    /// Sample rate of the audio clips this model trains on and generates.
    pub sample_rate: u32,
    /// Frame rate of the video clips.
    pub fps: u32,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Joint,
            lambda_joint: 1.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            d_steps: 1,
            steps: 500,
            seed: 7,
            checkpoint_every: 100,
            loss_form: LossForm::NonSaturating,
            noise_mode: NoiseMode::Shared,
            sample_rate: 4096,
            fps: 12,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Effective joint weight: baseline mode forces zero.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TrainMode::Joint => self.lambda_joint,
            TrainMode::Baseline => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.lambda_joint < 0.0 {
            return Err(JavgError::invalid("lambda_joint must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(JavgError::invalid("batch_size must be at least 2"));
        }
        if self.d_steps == 0 {
            return Err(JavgError::invalid("d_steps must be at least 1"));
        }
        if self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(JavgError::invalid("invalid optimizer settings"));
        }
        if self.sample_rate == 0 || self.fps == 0 {
            return Err(JavgError::invalid("sample_rate and fps must be positive"));
        }
        Ok(())
    }
}

/// All nets of the model, constructed once from the config.
pub struct Nets {
    pub audio_gen: AudioGenNet,
    pub audio_disc: AudioDiscNet,
    pub image_gen: ImageGenNet,
    pub rnn: MotionRnn,
    pub image_disc: ImageDiscNet,
    pub video_disc: VideoDiscNet,
    pub joint_d1: JointDiscNet,
    pub joint_d2: JointDiscNet,
}

impl Nets {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Nets {
            audio_gen: AudioGenNet::new(cfg)?,
            audio_disc: AudioDiscNet::new(cfg)?,
            image_gen: ImageGenNet::new(cfg)?,
            rnn: MotionRnn::new(cfg),
            image_disc: ImageDiscNet::new(cfg)?,
            video_disc: VideoDiscNet::new(cfg)?,
            joint_d1: JointDiscNet::new(cfg, JointHead::D1)?,
            joint_d2: JointDiscNet::new(cfg, JointHead::D2)?,
        })
    }

    /// Combined parameter set; each net initializes from a substream derived
    /// from its own name so the presence of one net never shifts another's
    /// draws.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let root = Rng::new(seed);
        let mut all = ParamSet::new();
        let mut add = |template: Result<ParamSet>, tag: &str| -> Result<()> {
            let mut set = template?;
            let mut rng = root.derive(fnv1a(tag.as_bytes()));
            init_gan_params(&mut set, INIT_SIGMA, &mut rng);
            set.round_to_f32();
            for (name, tensor) in set.iter() {
                all.insert(name.to_string(), tensor.clone())?;
            }
            Ok(())
        };
        add(self.audio_gen.param_template(), "audio_gen")?;
        add(self.audio_disc.param_template(), "audio_disc")?;
        add(
            self.image_gen.param_template().and_then(|mut s| {
                s.extend_prefixed("", &self.rnn.param_template()?)?;
                Ok(s)
            }),
            "video_gen",
        )?;
        add(self.image_disc.param_template(), "image_disc")?;
        add(self.video_disc.param_template(), "video_disc")?;
        add(self.joint_d1.param_template(), "joint_d1")?;
        add(self.joint_d2.param_template(), "joint_d2")?;
        Ok(all)
    }
}

/// Adam moments plus per-player step counts (for bias correction).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: GradMap,
    pub v: GradMap,
    pub t: BTreeMap<String, u64>,
}

const ADAM_EPS: f64 = 1e-8;

/// One Adam update over exactly the parameters named in `grads`. Updated
/// parameters and moments are rounded to the f32 grid.
pub fn adam_update(
    params: &mut ParamSet,
    opt: &mut AdamState,
    player: &str,
    grads: &GradMap,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> Result<()> {
    let t = opt.t.entry(player.to_string()).or_insert(0);
    *t += 1;
    let bc1 = 1.0 - beta1.powi(*t as i32);
    let bc2 = 1.0 - beta2.powi(*t as i32);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = opt
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = opt
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        if m.shape() != g.shape() || p.shape() != g.shape() {
            return Err(JavgError::invalid(format!(
                "gradient shape mismatch for {name:?}"
            )));
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..g.len() {
            let gi = g.data()[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            pd[i] = pd[i] as f32 as f64;
            md[i] = md[i] as f32 as f64;
            vd[i] = vd[i] as f32 as f64;
        }
        p.check_finite(&format!("adam update of {name}"))?;
    }
    Ok(())
}

/// Full training state; checkpoint(restore(s)) is bit-exact.
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ParamSet,
    pub opt: AdamState,
    pub step: u64,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig, nets: &Nets) -> Result<Self> {
        config.validate()?;
        let params = nets.init_params(config.seed)?;
        let rng = Rng::new(config.seed).derive(fnv1a(b"train_stream"));
        Ok(TrainState {
            config,
            params,
            opt: AdamState::default(),
            step: 0,
            rng,
        })
    }
}

/// Losses of one training step, serialized as one JSON-lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "C_v")]
    pub c_v: f64,
    #[serde(rename = "C_M")]
    pub c_m: Option<f64>,
    #[serde(rename = "loss_G")]
    pub loss_g: f64,
    pub wallclock_ms: u64,
}

// ── batch plumbing ──────────────────────────────────────────────────

/// Real tensors of one batch, precomputed once.
struct RealBatch {
    audio: Vec<Tensor>,
    video: Vec<Tensor>,
    clips: Vec<VideoClip>,
}

impl RealBatch {
    fn from_pairs(pairs: &[AVPair]) -> Self {
        RealBatch {
            audio: pairs.iter().map(|p| p.audio.to_tensor()).collect(),
            video: pairs.iter().map(|p| p.video.to_cthw_tensor()).collect(),
            clips: pairs.iter().map(|p| p.video.clone()).collect(),
        }
    }
}

/// Map per-sample (value, grads) jobs and reduce in index order.
fn batch_grads<F>(exec: ExecMode, n: usize, f: F) -> Result<(f64, GradMap)>
where
    F: Fn(usize) -> Result<(f64, GradMap)> + Sync + Send,
{
    let per = try_map_indexed(exec, n, f)?;
    let mut value = 0.0;
    let mut acc = GradMap::new();
    for (v, grads) in per {
        value += v;
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(t) => t.add_assign(&g)?,
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    let scale = 1.0 / n as f64;
    value *= scale;
    for t in acc.values_mut() {
        t.scale_in_place(scale);
    }
    Ok((value, acc))
}

fn bind_players<'a>(
    g: &mut Graph,
    params: &ParamSet,
    use_prefixes: &[&str],
    train_prefixes: &[&str],
) -> BoundParams {
    BoundParams::bind_filtered(g, params, |name| {
        if !use_prefixes.iter().any(|p| name.starts_with(p)) {
            return None;
        }
        Some(train_prefixes.iter().any(|p| name.starts_with(p)))
    })
}

/// Per-sample draws for the audio phase.
struct AudioDraws {
    noise: Vec<Tensor>,
    real_shifts: Vec<Vec<i64>>,
    fake_shifts: Vec<Vec<i64>>,
}

fn draw_audio_phase(state: &mut TrainState, nets: &Nets, n: usize) -> Result<AudioDraws> {
    let latent = nets.audio_gen.latent_dim;
    let n_shifts = nets.audio_disc.shift_count();
    let n_max = nets.audio_disc.phase_shuffle_n;
    let noise = (0..n)
        .map(|_| crate::params::sample_noise(&mut state.rng, latent))
        .collect::<Result<_>>()?;
    let mut shifts = |rng: &mut Rng| -> Vec<Vec<i64>> {
        (0..n)
            .map(|_| (0..n_shifts).map(|_| draw_shift(rng, n_max)).collect())
            .collect()
    };
    let real_shifts = shifts(&mut state.rng);
    let fake_shifts = shifts(&mut state.rng);
    Ok(AudioDraws {
        noise,
        real_shifts,
        fake_shifts,
    })
}

/// Per-sample draws for the video phase.
struct VideoDraws {
    latents: Vec<VideoLatent>,
    s1_real: Vec<usize>,
    s1_fake: Vec<usize>,
    st_real: Vec<usize>,
    st_fake: Vec<usize>,
}

fn draw_video_latent(state: &mut TrainState, nets: &Nets) -> Result<VideoLatent> {
    let model = &state.config.model;
    let content = crate::params::sample_noise(&mut state.rng, model.content_dim)?;
    let motion = (0..model.n_frames)
        .map(|_| crate::params::sample_noise(&mut state.rng, model.motion_dim))
        .collect::<Result<Vec<_>>>()?;
    latent_from_noise(&nets.rnn, &state.params, content, motion)
}

fn draw_video_phase(state: &mut TrainState, nets: &Nets, n: usize) -> Result<VideoDraws> {
    let frames = state.config.model.n_frames;
    let window = nets.video_disc.window;
    let latents = (0..n)
        .map(|_| draw_video_latent(state, nets))
        .collect::<Result<_>>()?;
    let s1_real = (0..n)
        .map(|_| sample_frame_index(&mut state.rng, frames))
        .collect();
    let s1_fake = (0..n)
        .map(|_| sample_frame_index(&mut state.rng, frames))
        .collect();
    let st_real = (0..n)
        .map(|_| sample_window_start(&mut state.rng, frames, window))
        .collect::<Result<_>>()?;
    let st_fake = (0..n)
        .map(|_| sample_window_start(&mut state.rng, frames, window))
        .collect::<Result<_>>()?;
    Ok(VideoDraws {
        latents,
        s1_real,
        s1_fake,
        st_real,
        st_fake,
    })
}

/// Per-sample draws for the joint phase (fresh fakes).
struct JointDraws {
    fa_noise: Vec<Tensor>,
    fv_latents: Vec<VideoLatent>,
}

fn draw_joint_phase(state: &mut TrainState, nets: &Nets, n: usize) -> Result<JointDraws> {
    let latent = nets.audio_gen.latent_dim;
    let fa_noise = (0..n)
        .map(|_| crate::params::sample_noise(&mut state.rng, latent))
        .collect::<Result<_>>()?;
    let fv_latents = (0..n)
        .map(|_| draw_video_latent(state, nets))
        .collect::<Result<_>>()?;
    Ok(JointDraws { fa_noise, fv_latents })
}

/// Per-sample draws for the generator phase. Under the shared protocol the
/// audio latent is the base draw and the content code is its leading slice.
struct GenDraws {
    audio_noise: Vec<Tensor>,
    latents: Vec<VideoLatent>,
    fake_shifts: Vec<Vec<i64>>,
    s1_fake: Vec<usize>,
    st_fake: Vec<usize>,
}

fn draw_gen_pair_noise(
    rng: &mut Rng,
    nets: &Nets,
    model: &ModelConfig,
    params: &ParamSet,
    noise_mode: NoiseMode,
) -> Result<(Tensor, VideoLatent)> {
    let base = crate::params::sample_noise(rng, model.audio_latent_dim)?;
    let content = match noise_mode {
        NoiseMode::Shared => Tensor::from_vec(base.data()[..model.content_dim].to_vec()),
        NoiseMode::Independent => crate::params::sample_noise(rng, model.content_dim)?,
    };
    let motion = (0..model.n_frames)
        .map(|_| crate::params::sample_noise(rng, model.motion_dim))
        .collect::<Result<Vec<_>>>()?;
    let latent = latent_from_noise(&nets.rnn, params, content, motion)?;
    Ok((base, latent))
}

fn draw_gen_phase(state: &mut TrainState, nets: &Nets, n: usize) -> Result<GenDraws> {
    let model = state.config.model.clone();
    let noise_mode = state.config.noise_mode;
    let mut audio_noise = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let (base, latent) = draw_gen_pair_noise(
            &mut state.rng,
            nets,
            &model,
            &state.params,
            noise_mode,
        )?;
        audio_noise.push(base);
        latents.push(latent);
    }
    let n_shifts = nets.audio_disc.shift_count();
    let n_max = nets.audio_disc.phase_shuffle_n;
    let fake_shifts = (0..n)
        .map(|_| (0..n_shifts).map(|_| draw_shift(&mut state.rng, n_max)).collect())
        .collect();
    let frames = model.n_frames;
    let window = nets.video_disc.window;
    let s1_fake = (0..n)
        .map(|_| sample_frame_index(&mut state.rng, frames))
        .collect();
    let st_fake = (0..n)
        .map(|_| sample_window_start(&mut state.rng, frames, window))
        .collect::<Result<_>>()?;
    Ok(GenDraws {
        audio_noise,
        latents,
        fake_shifts,
        s1_fake,
        st_fake,
    })
}

// ── phases ──────────────────────────────────────────────────────────

fn audio_disc_phase(
    state: &mut TrainState,
    nets: &Nets,
    real: &RealBatch,
    exec: ExecMode,
) -> Result<f64> {
    let n = real.audio.len();
    let draws = draw_audio_phase(state, nets, n)?;
    let params = &state.params;
    let (value, grads) = batch_grads(exec, n, |i| {
        let mut g = Graph::new();
        let bound = bind_players(
            &mut g,
            params,
            &["audio_gen.", "audio_disc."],
            &["audio_disc."],
        );
        let term = audio_value_term(
            &mut g,
            &nets.audio_gen,
            &nets.audio_disc,
            &bound,
            &bound,
            &real.audio[i],
            &draws.noise[i],
            &draws.real_shifts[i],
            &draws.fake_shifts[i],
        )
        .map_err(|e| JavgError::numeric(format!("audio value term: {e}")))?;
        let loss = g.affine(term, -1.0, 0.0)?;
        let v = g.value(term).item()?;
        let back = g.backward(loss)?;
        Ok((v, bound.collect_bound_grads(&g, &back)))
    })?;
    adam_update(
        &mut state.params,
        &mut state.opt,
        "audio_disc",
        &grads,
        state.config.lr,
        state.config.beta1,
        state.config.beta2,
    )?;
    Ok(value)
}

fn video_disc_phase(
    state: &mut TrainState,
    nets: &Nets,
    real: &RealBatch,
    exec: ExecMode,
) -> Result<f64> {
    let n = real.video.len();
    let draws = draw_video_phase(state, nets, n)?;
    let params = &state.params;
    let (value, grads) = batch_grads(exec, n, |i| {
        let mut g = Graph::new();
        let bound = bind_players(
            &mut g,
            params,
            &["video_gen.", "image_disc.", "video_disc."],
            &["image_disc.", "video_disc."],
        );
        let sample = VideoSampleDraws {
            real: &real.clips[i],
            latent: &draws.latents[i],
            s1_real: draws.s1_real[i],
            s1_fake: draws.s1_fake[i],
            st_real: draws.st_real[i],
            st_fake: draws.st_fake[i],
        };
        let term = video_value_term(
            &mut g,
            &nets.image_gen,
            &nets.rnn,
            &nets.image_disc,
            &nets.video_disc,
            &bound,
            &bound,
            &bound,
            &sample,
        )
        .map_err(|e| JavgError::numeric(format!("video value term: {e}")))?;
        let loss = g.affine(term, -1.0, 0.0)?;
        let v = g.value(term).item()?;
        let back = g.backward(loss)?;
        Ok((v, bound.collect_bound_grads(&g, &back)))
    })?;
    adam_update(
        &mut state.params,
        &mut state.opt,
        "video_disc",
        &grads,
        state.config.lr,
        state.config.beta1,
        state.config.beta2,
    )?;
    Ok(value)
}

fn joint_disc_phase(
    state: &mut TrainState,
    nets: &Nets,
    real: &RealBatch,
    exec: ExecMode,
) -> Result<f64> {
    let n = real.audio.len();
    let draws = draw_joint_phase(state, nets, n)?;
    let params = &state.params;
    let (value, grads) = batch_grads(exec, n, |i| {
        let mut g = Graph::new();
        let bound = bind_players(
            &mut g,
            params,
            &["audio_gen.", "video_gen.", "joint_d1.", "joint_d2."],
            &["joint_d1.", "joint_d2."],
        );
        let sample = JointSampleDraws {
            real_audio: &real.audio[i],
            real_video: &real.video[i],
            fake_audio_noise: &draws.fa_noise[i],
            fake_video_latent: &draws.fv_latents[i],
        };
        let term = joint_value_term(
            &mut g,
            &nets.joint_d1,
            &nets.joint_d2,
            &nets.audio_gen,
            &nets.image_gen,
            &nets.rnn,
            &bound,
            &bound,
            &bound,
            &bound,
            &sample,
        )
        .map_err(|e| JavgError::numeric(format!("joint value term: {e}")))?;
        let loss = g.affine(term, -1.0, 0.0)?;
        let v = g.value(term).item()?;
        let back = g.backward(loss)?;
        Ok((v, bound.collect_bound_grads(&g, &back)))
    })?;
    adam_update(
        &mut state.params,
        &mut state.opt,
        "joint_disc",
        &grads,
        state.config.lr,
        state.config.beta1,
        state.config.beta2,
    )?;
    Ok(value)
}

fn generator_phase(
    state: &mut TrainState,
    nets: &Nets,
    real: &RealBatch,
    exec: ExecMode,
) -> Result<f64> {
    let n = real.audio.len();
    let draws = draw_gen_phase(state, nets, n)?;
    let lambda = state.config.effective_lambda();
    let joint_on = state.config.mode == TrainMode::Joint;
    let form = state.config.loss_form;
    let params = &state.params;
    let window = nets.video_disc.window;

    let (value, grads) = batch_grads(exec, n, |i| {
        let mut g = Graph::new();
        let mut use_prefixes = vec![
            "audio_gen.",
            "video_gen.",
            "audio_disc.",
            "image_disc.",
            "video_disc.",
        ];
        if joint_on {
            use_prefixes.push("joint_d1.");
        }
        let bound = bind_players(
            &mut g,
            params,
            &use_prefixes,
            &["audio_gen.", "video_gen."],
        );

        // Generate once, reuse across the audio, video and joint terms.
        let z = g.leaf(draws.audio_noise[i].clone());
        let fake_audio = nets.audio_gen.forward(&mut g, &bound, z)?;
        let fake_frames =
            nets.image_gen
                .forward_clip(&mut g, &bound, &nets.rnn, &draws.latents[i])?;

        let p_audio = nets
            .audio_disc
            .forward(&mut g, &bound, fake_audio, &draws.fake_shifts[i])?;
        let p_frame = nets
            .image_disc
            .forward(&mut g, &bound, fake_frames[draws.s1_fake[i]])?;
        let st = draws.st_fake[i];
        let fake_window = g.stack_axis1(&fake_frames[st..st + window])?;
        let p_clip = nets.video_disc.forward(&mut g, &bound, fake_window)?;

        let mut loss = match form {
            LossForm::Saturating => {
                let a = log_one_minus(&mut g, p_audio)?;
                let b = log_one_minus(&mut g, p_frame)?;
                let c = log_one_minus(&mut g, p_clip)?;
                let ab = g.add(a, b)?;
                g.add(ab, c)?
            }
            LossForm::NonSaturating => {
                let a = log_prob(&mut g, p_audio)?;
                let b = log_prob(&mut g, p_frame)?;
                let c = log_prob(&mut g, p_clip)?;
                let ab = g.add(a, b)?;
                let s = g.add(ab, c)?;
                g.affine(s, -1.0, 0.0)?
            }
        };

        if joint_on && lambda != 0.0 {
            let a_real = g.leaf(real.audio[i].clone());
            let v_real = g.leaf(real.video[i].clone());
            let fake_clip = g.stack_axis1(&fake_frames)?;
            let p1_fa = nets.joint_d1.forward(&mut g, &bound, fake_audio, v_real)?;
            let p1_fv = nets.joint_d1.forward(&mut g, &bound, a_real, fake_clip)?;
            let joint_loss = match form {
                LossForm::Saturating => {
                    let a = log_one_minus(&mut g, p1_fa)?;
                    let b = log_one_minus(&mut g, p1_fv)?;
                    g.add(a, b)?
                }
                LossForm::NonSaturating => {
                    let a = log_prob(&mut g, p1_fa)?;
                    let b = log_prob(&mut g, p1_fv)?;
                    let s = g.add(a, b)?;
                    g.affine(s, -1.0, 0.0)?
                }
            };
            let weighted = g.affine(joint_loss, lambda, 0.0)?;
            loss = g.add(loss, weighted)?;
        }

        let v = g.value(loss).item()?;
        let back = g
            .backward(loss)
            .map_err(|e| JavgError::numeric(format!("generator loss: {e}")))?;
        Ok((v, bound.collect_bound_grads(&g, &back)))
    })?;
    adam_update(
        &mut state.params,
        &mut state.opt,
        "generators",
        &grads,
        state.config.lr,
        state.config.beta1,
        state.config.beta2,
    )?;
    Ok(value)
}

fn validate_batch(state: &TrainState, batch: &[AVPair]) -> Result<()> {
    if batch.len() < 2 {
        return Err(JavgError::invalid("training batch must have at least 2 pairs"));
    }
    let model = &state.config.model;
    for pair in batch {
        if pair.audio.samples().len() != model.audio_len {
            return Err(JavgError::invalid(format!(
                "clip {:?}: audio length {} does not match model audio_len {}",
                pair.clip_id,
                pair.audio.samples().len(),
                model.audio_len
            )));
        }
        if pair.video.frame_count() != model.n_frames
            || pair.video.height() != model.image_size
            || pair.video.width() != model.image_size
        {
            return Err(JavgError::invalid(format!(
                "clip {:?}: video {}x{}x{} does not match model {}x{}x{}",
                pair.clip_id,
                pair.video.frame_count(),
                pair.video.height(),
                pair.video.width(),
                model.n_frames,
                model.image_size,
                model.image_size
            )));
        }
    }
    Ok(())
}

/// Discriminator-only phases (1)-(3) on one batch.
pub fn d_only_step(
    state: &mut TrainState,
    nets: &Nets,
    batch: &[AVPair],
    exec: ExecMode,
) -> Result<(f64, f64, Option<f64>)> {
    validate_batch(state, batch)?;
    let real = RealBatch::from_pairs(batch);
    let v = audio_disc_phase(state, nets, &real, exec)?;
    let c_v = video_disc_phase(state, nets, &real, exec)?;
    let c_m = match state.config.mode {
        TrainMode::Joint => Some(joint_disc_phase(state, nets, &real, exec)?),
        TrainMode::Baseline => None,
    };
    Ok((v, c_v, c_m))
}

/// One full training step on one batch: discriminator phases then one
/// generator step. Deterministic given (state, batch).
pub fn train_step(
    state: &mut TrainState,
    nets: &Nets,
    batch: &[AVPair],
    exec: ExecMode,
) -> Result<StepRecord> {
    let started = Instant::now();
    let (v, c_v, c_m) = d_only_step(state, nets, batch, exec)?;
    let real = RealBatch::from_pairs(batch);
    let loss_g = generator_phase(state, nets, &real, exec)?;
    state.step += 1;
    Ok(StepRecord {
        step: state.step,
        v,
        c_v,
        c_m,
        loss_g,
        wallclock_ms: started.elapsed().as_millis() as u64,
    })
}

// ── checkpointing ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    step: u64,
    rng_key: u64,
    rng_counter: u64,
    opt_t: BTreeMap<String, u64>,
    config: TrainConfig,
}

/// Write `<stem>.javg` (params + optimizer moments) and `<stem>.json`.
pub fn save_checkpoint(state: &TrainState, stem: &Path) -> Result<()> {
    let mut all = state.params.clone();
    for (name, t) in state.opt.m.iter() {
        all.insert(format!("opt.m.{name}"), t.clone())?;
    }
    for (name, t) in state.opt.v.iter() {
        all.insert(format!("opt.v.{name}"), t.clone())?;
    }
    checkpoint::save(&all, &stem.with_extension("javg"))?;
    let (rng_key, rng_counter) = state.rng.state();
    let meta = CheckpointMeta {
        step: state.step,
        rng_key,
        rng_counter,
        opt_t: state.opt.t.clone(),
        config: state.config.clone(),
    };
    let path = stem.with_extension("json");
    let body = serde_json::to_string_pretty(&meta)
        .map_err(|e| JavgError::format(path.display().to_string(), e.to_string()))?;
    fs::write(&path, body).map_err(|e| JavgError::io(path.display().to_string(), e))
}

/// Load a checkpoint from its `.javg` path (or the bare stem).
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let stem = path.with_extension("");
    let all = checkpoint::load(&stem.with_extension("javg"))?;
    let meta_path = stem.with_extension("json");
    let body = fs::read_to_string(&meta_path)
        .map_err(|e| JavgError::io(meta_path.display().to_string(), e))?;
    let meta: CheckpointMeta = serde_json::from_str(&body)
        .map_err(|e| JavgError::format(meta_path.display().to_string(), e.to_string()))?;

    let mut params = ParamSet::new();
    let mut opt = AdamState {
        t: meta.opt_t,
        ..AdamState::default()
    };
    for (name, tensor) in all.iter() {
        if let Some(rest) = name.strip_prefix("opt.m.") {
            opt.m.insert(rest.to_string(), tensor.clone());
        } else if let Some(rest) = name.strip_prefix("opt.v.") {
            opt.v.insert(rest.to_string(), tensor.clone());
        } else {
            params.insert(name.to_string(), tensor.clone())?;
        }
    }
    meta.config.validate()?;
    Ok(TrainState {
        config: meta.config,
        params,
        opt,
        step: meta.step,
        rng: Rng::from_state(meta.rng_key, meta.rng_counter),
    })
}

// ── training loop ───────────────────────────────────────────────────

/// Batch indices for one sub-step, from a stream derived from (seed, step,
/// sub); uniform with replacement.
fn batch_indices(seed: u64, step: u64, sub: u64, n_data: usize, batch: usize) -> Vec<usize> {
    let mut rng = Rng::new(seed)
        .derive(fnv1a(b"data_loader"))
        .derive(step.wrapping_mul(1000) + sub);
    (0..batch)
        .map(|_| rng.uniform_int(0, n_data as i64 - 1) as usize)
        .collect()
}

fn gather<'a>(pairs: &'a [AVPair], idx: &[usize]) -> Vec<AVPair> {
    idx.iter().map(|&i| pairs[i].clone()).collect()
}

pub struct RunOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub records: Vec<StepRecord>,
}

/// Run (or resume) training, writing checkpoints and a JSON-lines loss log
/// under `out_dir`.
pub fn run_training(
    config: &TrainConfig,
    dataset: &[AVPair],
    out_dir: &Path,
    resume_from: Option<&Path>,
    exec: ExecMode,
) -> Result<RunOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(JavgError::invalid("training dataset is empty"));
    }
    fs::create_dir_all(out_dir).map_err(|e| JavgError::io(out_dir.display().to_string(), e))?;

    let nets = Nets::new(&config.model)?;
    let mut state = match resume_from {
        Some(path) => {
            let mut state = load_checkpoint(path)?;
            // The step target and checkpoint cadence may change on resume;
            // everything that shapes the trajectory must match.
            let mut normalized = state.config.clone();
            normalized.steps = config.steps;
            normalized.checkpoint_every = config.checkpoint_every;
            if normalized != *config {
                return Err(JavgError::invalid(
                    "resume config does not match checkpoint config",
                ));
            }
            state.config = config.clone();
            state
        }
        None => TrainState::new(config.clone(), &nets)?,
    };
    validate_batch(&state, &dataset[..2.min(dataset.len())])?;

    let log_path = out_dir.join("losses.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| JavgError::io(log_path.display().to_string(), e))?;

    if state.step == 0 {
        save_checkpoint(&state, &out_dir.join("ckpt_init"))?;
    }

    let mut records = Vec::new();
    while state.step < config.steps {
        let step = state.step;
        for sub in 1..config.d_steps as u64 {
            let idx = batch_indices(config.seed, step, sub, dataset.len(), config.batch_size);
            let batch = gather(dataset, &idx);
            d_only_step(&mut state, &nets, &batch, exec)?;
        }
        let idx = batch_indices(config.seed, step, 0, dataset.len(), config.batch_size);
        let batch = gather(dataset, &idx);
        let record = train_step(&mut state, &nets, &batch, exec)?;

        let line = serde_json::to_string(&record)
            .map_err(|e| JavgError::format(log_path.display().to_string(), e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| JavgError::io(log_path.display().to_string(), e))?;

        if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 {
            save_checkpoint(&state, &out_dir.join(format!("ckpt_step_{:06}", state.step)))?;
        }
        records.push(record);
    }
    let final_stem = out_dir.join("ckpt_final");
    save_checkpoint(&state, &final_stem)?;
    Ok(RunOutcome {
        final_checkpoint: final_stem.with_extension("javg"),
        log_path,
        records,
    })
}

// ── generation ──────────────────────────────────────────────────────

/// Generate one pair from a per-pair substream using the checkpoint's noise
/// protocol.
fn generate_pair(
    state: &TrainState,
    nets: &Nets,
    pair_rng: &mut Rng,
    clip_id: String,
) -> Result<AVPair> {
    let model = &state.config.model;
    let (base, latent) = draw_gen_pair_noise(
        pair_rng,
        nets,
        model,
        &state.params,
        state.config.noise_mode,
    )?;
    let audio_raw = crate::nets::audio::audio_generator_forward(
        &nets.audio_gen,
        &state.params,
        &base,
        state.config.sample_rate,
    )?;
    // Snap to the PCM grid so on-disk roundtrips are bit-exact.
    let samples = audio_raw
        .samples()
        .iter()
        .map(|&s| crate::dataset::snap_pcm16(s))
        .collect();
    let audio = AudioClip::new(samples, state.config.sample_rate)?;
    let video_raw = crate::nets::video::video_generator_forward(
        &nets.image_gen,
        &nets.rnn,
        &state.params,
        &latent,
        state.config.fps,
    )?;
    let frames = video_raw
        .frames()
        .iter()
        .map(|f| {
            crate::dataset::Frame::new(
                f.height(),
                f.width(),
                f.data().iter().map(|&v| crate::dataset::snap_u8(v)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let video = VideoClip::new(frames, state.config.fps)?;
    AVPair::new(audio, video, -1, clip_id)
}

/// Generate `n` pairs from a checkpoint and write them under
/// `out_dir/generated/`.
pub fn generate_samples(
    ckpt: &Path,
    n: usize,
    seed: u64,
    out_dir: &Path,
    exec: ExecMode,
) -> Result<Vec<AVPair>> {
    let state = load_checkpoint(ckpt)?;
    let nets = Nets::new(&state.config.model)?;
    let pairs = generate_pairs_in_memory(&state, &nets, n, seed, exec)?;
    let split_dir = out_dir.join("generated");
    fs::create_dir_all(&split_dir)
        .map_err(|e| JavgError::io(split_dir.display().to_string(), e))?;
    crate::dataset::write_split(out_dir, "generated", &pairs)?;
    Ok(pairs)
}

/// Generation core, shared by the CLI path and in-process evaluation.
pub fn generate_pairs_in_memory(
    state: &TrainState,
    nets: &Nets,
    n: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Vec<AVPair>> {
    let root = Rng::new(seed).derive(fnv1a(b"generate"));
    try_map_indexed(exec, n, |i| {
        let mut pair_rng = root.derive(i as u64);
        generate_pair(state, nets, &mut pair_rng, format!("gen_{i:05}"))
    })
}

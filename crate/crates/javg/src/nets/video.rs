//! Motion/content-decomposed video GAN.
//!
//! A clip latent is one content code shared by all frames plus a per-frame
//! motion code produced by a gated recurrent cell over i.i.d. noise, so
//! motion codes carry history. The image generator renders each frame from
//! concat(content, motion[t]); a per-frame discriminator judges single
//! frames sampled by S1 and a 3-D conv discriminator judges T consecutive
//! frames sampled by ST.

use crate::dataset::{Frame, VideoClip};
use crate::error::{JavgError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{
    add_param, clamp_probs, log_one_minus, log_prob, mean, LossForm, ModelConfig, IMAGE_KERNEL,
    IMAGE_SEED, IMAGE_STRIDE,
};

/// Clip latent: content code, raw motion noise, and the motion codes the
/// recurrent cell produced from that noise at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    pub z_content: Tensor,
    /// One `motion_dim` noise vector per frame, the recurrent cell's input.
    pub motion_noise: Vec<Tensor>,
    /// One `motion_dim` code per frame, the recurrent cell's output.
    pub z_motion: Vec<Tensor>,
}

impl VideoLatent {
    pub fn n_frames(&self) -> usize {
        self.motion_noise.len()
    }

    /// Per-frame generator input: concat(content, motion[t]).
    pub fn z_frame(&self, t: usize) -> Tensor {
        let mut data = self.z_content.data().to_vec();
        data.extend_from_slice(self.z_motion[t].data());
        Tensor::from_vec(data)
    }
}

/// Single gated recurrent cell mapping motion noise to motion codes.
#[derive(Debug, Clone)]
pub struct MotionRnn {
    pub dim: usize,
}

impl MotionRnn {
    pub fn new(cfg: &ModelConfig) -> Self {
        MotionRnn {
            dim: cfg.motion_dim,
        }
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let d = self.dim;
        for gate in ["r", "z", "n"] {
            add_param(&mut set, format!("video_gen.rnn.w_{gate}"), vec![d, d])?;
            add_param(&mut set, format!("video_gen.rnn.u_{gate}"), vec![d, d])?;
            add_param(&mut set, format!("video_gen.rnn.b_{gate}"), vec![d])?;
        }
        Ok(set)
    }

    /// Unroll the cell over noise leaves; returns one hidden node per frame.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        noise: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let w_r = bound.id("video_gen.rnn.w_r")?;
        let u_r = bound.id("video_gen.rnn.u_r")?;
        let b_r = bound.id("video_gen.rnn.b_r")?;
        let w_z = bound.id("video_gen.rnn.w_z")?;
        let u_z = bound.id("video_gen.rnn.u_z")?;
        let b_z = bound.id("video_gen.rnn.b_z")?;
        let w_n = bound.id("video_gen.rnn.w_n")?;
        let u_n = bound.id("video_gen.rnn.u_n")?;
        let b_n = bound.id("video_gen.rnn.b_n")?;

        let mut h = g.leaf(Tensor::zeros(vec![self.dim]));
        let mut out = Vec::with_capacity(noise.len());
        for &x in noise {
            let wx = g.matvec(w_r, x)?;
            let uh = g.matvec(u_r, h)?;
            let s = g.add(wx, uh)?;
            let s = g.add(s, b_r)?;
            let r = g.sigmoid(s)?;

            let wx = g.matvec(w_z, x)?;
            let uh = g.matvec(u_z, h)?;
            let s = g.add(wx, uh)?;
            let s = g.add(s, b_z)?;
            let z = g.sigmoid(s)?;

            let rh = g.mul(r, h)?;
            let wx = g.matvec(w_n, x)?;
            let uh = g.matvec(u_n, rh)?;
            let s = g.add(wx, uh)?;
            let s = g.add(s, b_n)?;
            let n = g.tanh(s)?;

            // h' = (1 - z) * n + z * h
            let one_minus_z = g.one_minus(z)?;
            let a = g.mul(one_minus_z, n)?;
            let b = g.mul(z, h)?;
            h = g.add(a, b)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Draw a clip latent: content noise once, then per-frame motion noise, each
/// from the uniform prior, with motion codes computed by the current cell.
pub fn sample_video_latent(
    rng: &mut Rng,
    n_frames: usize,
    rnn: &MotionRnn,
    params: &ParamSet,
    content_dim: usize,
) -> Result<VideoLatent> {
    if n_frames == 0 {
        return Err(JavgError::invalid("n_frames must be at least 1"));
    }
    let z_content = crate::params::sample_noise(rng, content_dim)?;
    let motion_noise: Vec<Tensor> = (0..n_frames)
        .map(|_| crate::params::sample_noise(rng, rnn.dim))
        .collect::<Result<_>>()?;
    let z_motion = motion_codes(rnn, params, &motion_noise)?;
    Ok(VideoLatent {
        z_content,
        motion_noise,
        z_motion,
    })
}

/// Build a latent from pre-drawn content and motion noise.
pub fn latent_from_noise(
    rnn: &MotionRnn,
    params: &ParamSet,
    z_content: Tensor,
    motion_noise: Vec<Tensor>,
) -> Result<VideoLatent> {
    let z_motion = motion_codes(rnn, params, &motion_noise)?;
    Ok(VideoLatent {
        z_content,
        motion_noise,
        z_motion,
    })
}

fn motion_codes(rnn: &MotionRnn, params: &ParamSet, noise: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let ids: Vec<NodeId> = noise.iter().map(|t| g.leaf(t.clone())).collect();
    let hs = rnn.forward(&mut g, &bound, &ids)?;
    Ok(hs.into_iter().map(|h| g.value(h).clone()).collect())
}

/// Image generator: dense projection to a 4x4 seed, stride-2 transposed
/// convolutions up to `image_size`, logistic output into [0, 1].
#[derive(Debug, Clone)]
pub struct ImageGenNet {
    pub latent_dim: usize,
    pub image_size: usize,
    channels: Vec<usize>,
}

impl ImageGenNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg.image_layers()?;
        let channels = (0..layers)
            .map(|i| cfg.image_gen_channels << (layers - 1 - i))
            .collect();
        Ok(ImageGenNet {
            latent_dim: cfg.frame_latent_dim(),
            image_size: cfg.image_size,
            channels,
        })
    }

    fn out_channels(&self, layer: usize) -> usize {
        self.channels.get(layer + 1).copied().unwrap_or(3)
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let seed = self.channels[0] * IMAGE_SEED * IMAGE_SEED;
        add_param(&mut set, "video_gen.proj.w".into(), vec![seed, self.latent_dim])?;
        add_param(&mut set, "video_gen.proj.b".into(), vec![seed])?;
        for (i, &c_in) in self.channels.iter().enumerate() {
            let c_out = self.out_channels(i);
            add_param(
                &mut set,
                format!("video_gen.up{i}.w"),
                vec![c_out, c_in, IMAGE_KERNEL, IMAGE_KERNEL],
            )?;
            add_param(&mut set, format!("video_gen.up{i}.b"), vec![c_out])?;
        }
        Ok(set)
    }

    /// One frame from a [latent_dim] frame code: [3, size, size] in [0, 1].
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, z_frame: NodeId) -> Result<NodeId> {
        if g.value(z_frame).shape() != [self.latent_dim] {
            return Err(JavgError::invalid(format!(
                "image generator expects latent [{}], got {:?}",
                self.latent_dim,
                g.value(z_frame).shape()
            )));
        }
        let w = bound.id("video_gen.proj.w")?;
        let b = bound.id("video_gen.proj.b")?;
        let mut h = g.dense(z_frame, w, b)?;
        h = g.reshape(h, vec![self.channels[0], IMAGE_SEED, IMAGE_SEED])?;
        h = g.relu(h)?;
        for i in 0..self.channels.len() {
            let w = bound.id(&format!("video_gen.up{i}.w"))?;
            let b = bound.id(&format!("video_gen.up{i}.b"))?;
            h = g.conv_transpose2d(h, w, (IMAGE_STRIDE, IMAGE_STRIDE))?;
            h = g.add_bias(h, b)?;
            h = if i + 1 == self.channels.len() {
                g.sigmoid(h)?
            } else {
                g.relu(h)?
            };
        }
        Ok(h)
    }

    /// All frame nodes of a clip, recomputing motion codes in-graph so
    /// gradients reach the recurrent cell.
    pub fn forward_clip(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        rnn: &MotionRnn,
        latent: &VideoLatent,
    ) -> Result<Vec<NodeId>> {
        let content = g.leaf(latent.z_content.clone());
        let noise_ids: Vec<NodeId> = latent
            .motion_noise
            .iter()
            .map(|t| g.leaf(t.clone()))
            .collect();
        let motions = rnn.forward(g, bound, &noise_ids)?;
        let mut frames = Vec::with_capacity(motions.len());
        for m in motions {
            let z = g.concat(&[content, m])?;
            frames.push(self.forward(g, bound, z)?);
        }
        Ok(frames)
    }
}

/// Eval-mode video generation: latent -> clip.
pub fn video_generator_forward(
    gen: &ImageGenNet,
    rnn: &MotionRnn,
    params: &ParamSet,
    latent: &VideoLatent,
    fps: u32,
) -> Result<VideoClip> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let ids = gen.forward_clip(&mut g, &bound, rnn, latent)?;
    let frames: Vec<Frame> = ids
        .into_iter()
        .map(|id| Frame::from_chw_tensor(g.value(id)))
        .collect::<Result<_>>()?;
    VideoClip::new(frames, fps)
}

/// Per-frame discriminator: stride-2 convolutions to a 4x4 map, dense head.
#[derive(Debug, Clone)]
pub struct ImageDiscNet {
    pub image_size: usize,
    pub leaky_slope: f64,
    channels: Vec<usize>,
}

impl ImageDiscNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg.image_layers()?;
        let channels = (0..layers).map(|i| cfg.image_disc_channels << i).collect();
        Ok(ImageDiscNet {
            image_size: cfg.image_size,
            leaky_slope: cfg.leaky_slope,
            channels,
        })
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let mut c_in = 3;
        for (i, &c_out) in self.channels.iter().enumerate() {
            add_param(
                &mut set,
                format!("image_disc.conv{i}.w"),
                vec![c_out, c_in, IMAGE_KERNEL, IMAGE_KERNEL],
            )?;
            add_param(&mut set, format!("image_disc.conv{i}.b"), vec![c_out])?;
            c_in = c_out;
        }
        let flat = c_in * IMAGE_SEED * IMAGE_SEED;
        add_param(&mut set, "image_disc.head.w".into(), vec![1, flat])?;
        add_param(&mut set, "image_disc.head.b".into(), vec![1])?;
        Ok(set)
    }

    /// Probability that a [3, size, size] frame is real.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, frame: NodeId) -> Result<NodeId> {
        let expect = [3, self.image_size, self.image_size];
        if g.value(frame).shape() != expect {
            return Err(JavgError::invalid(format!(
                "image discriminator expects {expect:?}, got {:?}",
                g.value(frame).shape()
            )));
        }
        let mut h = frame;
        for i in 0..self.channels.len() {
            let w = bound.id(&format!("image_disc.conv{i}.w"))?;
            let b = bound.id(&format!("image_disc.conv{i}.b"))?;
            h = g.conv2d(h, w, (IMAGE_STRIDE, IMAGE_STRIDE))?;
            h = g.add_bias(h, b)?;
            h = g.leaky_relu(h, self.leaky_slope)?;
        }
        let flat = self.channels[self.channels.len() - 1] * IMAGE_SEED * IMAGE_SEED;
        h = g.reshape(h, vec![flat])?;
        let w = bound.id("image_disc.head.w")?;
        let b = bound.id("image_disc.head.b")?;
        let logit = g.dense(h, w, b)?;
        g.sigmoid(logit)
    }
}

/// Per-clip discriminator: 3-D convolutions with kernel (3, 4, 4) and stride
/// (1, 2, 2), preserving time, then a dense head over the flattened map.
#[derive(Debug, Clone)]
pub struct VideoDiscNet {
    pub image_size: usize,
    pub window: usize,
    pub leaky_slope: f64,
    channels: Vec<usize>,
}

/// Upper bound on 3-D conv depth; smaller images get fewer layers.
pub const VIDEO_DISC_MAX_LAYERS: usize = 3;

impl VideoDiscNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg.image_layers()?.min(VIDEO_DISC_MAX_LAYERS);
        let channels = (0..layers).map(|i| cfg.video_disc_channels << i).collect();
        Ok(VideoDiscNet {
            image_size: cfg.image_size,
            window: cfg.n_frames,
            leaky_slope: cfg.leaky_slope,
            channels,
        })
    }

    fn head_flat(&self) -> usize {
        let spatial = self.image_size >> self.channels.len();
        self.channels[self.channels.len() - 1] * self.window * spatial * spatial
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        let mut c_in = 3;
        for (i, &c_out) in self.channels.iter().enumerate() {
            add_param(
                &mut set,
                format!("video_disc.conv{i}.w"),
                vec![c_out, c_in, 3, IMAGE_KERNEL, IMAGE_KERNEL],
            )?;
            add_param(&mut set, format!("video_disc.conv{i}.b"), vec![c_out])?;
            c_in = c_out;
        }
        add_param(&mut set, "video_disc.head.w".into(), vec![1, self.head_flat()])?;
        add_param(&mut set, "video_disc.head.b".into(), vec![1])?;
        Ok(set)
    }

    /// Probability that a [3, window, size, size] clip is real.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, clip: NodeId) -> Result<NodeId> {
        let expect = [3, self.window, self.image_size, self.image_size];
        if g.value(clip).shape() != expect {
            return Err(JavgError::invalid(format!(
                "video discriminator expects {expect:?}, got {:?}",
                g.value(clip).shape()
            )));
        }
        let mut h = clip;
        for i in 0..self.channels.len() {
            let w = bound.id(&format!("video_disc.conv{i}.w"))?;
            let b = bound.id(&format!("video_disc.conv{i}.b"))?;
            h = g.conv3d(h, w, (1, IMAGE_STRIDE, IMAGE_STRIDE))?;
            h = g.add_bias(h, b)?;
            h = g.leaky_relu(h, self.leaky_slope)?;
        }
        h = g.reshape(h, vec![self.head_flat()])?;
        let w = bound.id("video_disc.head.w")?;
        let b = bound.id("video_disc.head.b")?;
        let logit = g.dense(h, w, b)?;
        g.sigmoid(logit)
    }
}

/// Eval-mode frame probability.
pub fn image_disc_prob(net: &ImageDiscNet, params: &ParamSet, frame: &Frame) -> Result<f64> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let x = g.leaf(frame.to_chw_tensor());
    let p = net.forward(&mut g, &bound, x)?;
    g.value(p).item()
}

/// Eval-mode clip probability over the discriminator's window starting at 0.
pub fn video_disc_prob(net: &VideoDiscNet, params: &ParamSet, clip: &VideoClip) -> Result<f64> {
    let window = sample_st(clip, 0, net.window)?;
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let x = g.leaf(window.to_cthw_tensor());
    let p = net.forward(&mut g, &bound, x)?;
    g.value(p).item()
}

/// S1: index of one uniformly chosen frame.
pub fn sample_frame_index(rng: &mut Rng, n_frames: usize) -> usize {
    rng.uniform_int(0, n_frames as i64 - 1) as usize
}

/// S1 applied to a real clip.
pub fn sample_s1<'v>(video: &'v VideoClip, rng: &mut Rng) -> &'v Frame {
    &video.frames()[sample_frame_index(rng, video.frame_count())]
}

/// ST window start: uniform over valid positions. With T = N the only valid
/// start is 0 and no randomness is consumed.
pub fn sample_window_start(rng: &mut Rng, n_frames: usize, window: usize) -> Result<usize> {
    if window > n_frames || window == 0 {
        return Err(JavgError::invalid(format!(
            "window {window} invalid for a {n_frames}-frame clip"
        )));
    }
    if window == n_frames {
        return Ok(0);
    }
    Ok(rng.uniform_int(0, (n_frames - window) as i64) as usize)
}

/// ST: T consecutive frames starting at t0.
pub fn sample_st(video: &VideoClip, t0: usize, window: usize) -> Result<VideoClip> {
    if t0 + window > video.frame_count() || window == 0 {
        return Err(JavgError::invalid(format!(
            "window [{t0}, {t0}+{window}) out of range for {} frames",
            video.frame_count()
        )));
    }
    VideoClip::new(video.frames()[t0..t0 + window].to_vec(), video.fps())
}

/// Video value function from the four probability batches.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoGanLosses {
    pub c_v: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub clamped: usize,
}

pub fn video_gan_value(
    di_real: &[f64],
    di_fake: &[f64],
    dv_real: &[f64],
    dv_fake: &[f64],
    form: LossForm,
) -> Result<VideoGanLosses> {
    if di_real.is_empty() || di_fake.is_empty() || dv_real.is_empty() || dv_fake.is_empty() {
        return Err(JavgError::invalid("value function needs non-empty batches"));
    }
    let mut clamped = 0;
    let di_r = clamp_probs(di_real, &mut clamped);
    let di_f = clamp_probs(di_fake, &mut clamped);
    let dv_r = clamp_probs(dv_real, &mut clamped);
    let dv_f = clamp_probs(dv_fake, &mut clamped);
    if clamped > 0 {
        log::warn!("video value function clamped {clamped} saturated probabilities");
    }
    let c_v = mean(&di_r.iter().map(|p| p.ln()).collect::<Vec<_>>())
        + mean(&di_f.iter().map(|p| (1.0 - p).ln()).collect::<Vec<_>>())
        + mean(&dv_r.iter().map(|p| p.ln()).collect::<Vec<_>>())
        + mean(&dv_f.iter().map(|p| (1.0 - p).ln()).collect::<Vec<_>>());
    let loss_g = match form {
        LossForm::Saturating => c_v,
        LossForm::NonSaturating => {
            -mean(&di_f.iter().map(|p| p.ln()).collect::<Vec<_>>())
                - mean(&dv_f.iter().map(|p| p.ln()).collect::<Vec<_>>())
        }
    };
    Ok(VideoGanLosses {
        c_v,
        loss_d: -c_v,
        loss_g,
        clamped,
    })
}

/// Everything the per-sample video value term needs besides parameters.
pub struct VideoSampleDraws<'a> {
    pub real: &'a VideoClip,
    pub latent: &'a VideoLatent,
    /// S1 frame index into the real clip.
    pub s1_real: usize,
    /// S1 frame index into the generated clip.
    pub s1_fake: usize,
    /// ST window starts.
    pub st_real: usize,
    pub st_fake: usize,
}

/// Per-sample C_v term:
/// `ln D_I(S1(v)) + ln(1-D_I(S1(v̂))) + ln D_V(ST(v)) + ln(1-D_V(ST(v̂)))`.
#[allow(clippy::too_many_arguments)]
pub fn video_value_term(
    g: &mut Graph,
    gen: &ImageGenNet,
    rnn: &MotionRnn,
    d_img: &ImageDiscNet,
    d_vid: &VideoDiscNet,
    gen_bound: &BoundParams,
    di_bound: &BoundParams,
    dv_bound: &BoundParams,
    draws: &VideoSampleDraws<'_>,
) -> Result<NodeId> {
    let window = d_vid.window;

    let real_frame = g.leaf(draws.real.frames()[draws.s1_real].to_chw_tensor());
    let p_i_real = d_img.forward(g, di_bound, real_frame)?;

    let real_window = sample_st(draws.real, draws.st_real, window)?;
    let real_clip = g.leaf(real_window.to_cthw_tensor());
    let p_v_real = d_vid.forward(g, dv_bound, real_clip)?;

    let fake_frames = gen.forward_clip(g, gen_bound, rnn, draws.latent)?;
    let p_i_fake = d_img.forward(g, di_bound, fake_frames[draws.s1_fake])?;
    let fake_clip = g.stack_axis1(&fake_frames[draws.st_fake..draws.st_fake + window])?;
    let p_v_fake = d_vid.forward(g, dv_bound, fake_clip)?;

    let a = log_prob(g, p_i_real)?;
    let b = log_one_minus(g, p_i_fake)?;
    let c = log_prob(g, p_v_real)?;
    let d = log_one_minus(g, p_v_fake)?;
    let ab = g.add(a, b)?;
    let cd = g.add(c, d)?;
    g.add(ab, cd)
}

/// Per-sample generator loss term for the video game.
#[allow(clippy::too_many_arguments)]
pub fn video_gen_loss_term(
    g: &mut Graph,
    gen: &ImageGenNet,
    rnn: &MotionRnn,
    d_img: &ImageDiscNet,
    d_vid: &VideoDiscNet,
    gen_bound: &BoundParams,
    di_bound: &BoundParams,
    dv_bound: &BoundParams,
    latent: &VideoLatent,
    s1_fake: usize,
    st_fake: usize,
    form: LossForm,
) -> Result<NodeId> {
    let window = d_vid.window;
    let fake_frames = gen.forward_clip(g, gen_bound, rnn, latent)?;
    let p_i = d_img.forward(g, di_bound, fake_frames[s1_fake])?;
    let fake_clip = g.stack_axis1(&fake_frames[st_fake..st_fake + window])?;
    let p_v = d_vid.forward(g, dv_bound, fake_clip)?;
    match form {
        LossForm::Saturating => {
            let a = log_one_minus(g, p_i)?;
            let b = log_one_minus(g, p_v)?;
            g.add(a, b)
        }
        LossForm::NonSaturating => {
            let a = log_prob(g, p_i)?;
            let b = log_prob(g, p_v)?;
            let s = g.add(a, b)?;
            g.affine(s, -1.0, 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_gan_params;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            n_frames: 4,
            content_dim: 6,
            motion_dim: 3,
            image_gen_channels: 2,
            image_disc_channels: 2,
            video_disc_channels: 2,
            ..ModelConfig::default()
        }
    }

    fn video_params(cfg: &ModelConfig) -> (ImageGenNet, MotionRnn, ParamSet) {
        let gen = ImageGenNet::new(cfg).unwrap();
        let rnn = MotionRnn::new(cfg);
        let mut params = gen.param_template().unwrap();
        params
            .extend_prefixed("", &rnn.param_template().unwrap())
            .unwrap();
        (gen, rnn, params)
    }

    #[test]
    fn zero_rnn_collapses_motion() {
        let cfg = tiny_cfg();
        let rnn = MotionRnn::new(&cfg);
        let params = rnn.param_template().unwrap();
        let mut rng = Rng::new(3);
        let latent = sample_video_latent(&mut rng, 4, &rnn, &params, 6).unwrap();
        for t in 1..4 {
            assert_eq!(latent.z_motion[t], latent.z_motion[0]);
        }
        // Content is bit-identical across frames by construction.
        for t in 0..4 {
            let zf = latent.z_frame(t);
            assert_eq!(&zf.data()[..6], latent.z_content.data());
            assert_eq!(zf.shape(), &[9]);
        }
    }

    #[test]
    fn latent_sampling_deterministic() {
        let cfg = tiny_cfg();
        let rnn = MotionRnn::new(&cfg);
        let params = rnn.param_template().unwrap();
        let mut a = Rng::new(4);
        let mut b = Rng::new(4);
        let la = sample_video_latent(&mut a, 5, &rnn, &params, 6).unwrap();
        let lb = sample_video_latent(&mut b, 5, &rnn, &params, 6).unwrap();
        assert_eq!(la, lb);
        let mut c = Rng::new(5);
        assert!(sample_video_latent(&mut c, 0, &rnn, &params, 6).is_err());
    }

    #[test]
    fn frame_latent_dims_concatenate() {
        let cfg = ModelConfig {
            content_dim: 50,
            motion_dim: 10,
            ..tiny_cfg()
        };
        let rnn = MotionRnn::new(&cfg);
        let params = rnn.param_template().unwrap();
        let mut rng = Rng::new(6);
        let latent = sample_video_latent(&mut rng, 10, &rnn, &params, 50).unwrap();
        assert_eq!(latent.z_frame(3).shape(), &[60]);
    }

    #[test]
    fn zero_generator_gives_half_gray_frames() {
        let cfg = tiny_cfg();
        let (gen, rnn, params) = video_params(&cfg);
        let mut rng = Rng::new(7);
        let latent = sample_video_latent(&mut rng, 4, &rnn, &params, 6).unwrap();
        let clip = video_generator_forward(&gen, &rnn, &params, &latent, 4).unwrap();
        for frame in clip.frames() {
            assert!(frame.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_rnn_makes_temporally_constant_clips() {
        let cfg = tiny_cfg();
        let (gen, rnn, mut params) = video_params(&cfg);
        // Give the image path real weights but keep the rnn at zero.
        let mut rng = Rng::new(8);
        init_gan_params(&mut params, 0.3, &mut rng);
        for gate in ["r", "z", "n"] {
            for kind in ["w", "u"] {
                let name = format!("video_gen.rnn.{kind}_{gate}");
                for v in params.get_mut(&name).unwrap().data_mut() {
                    *v = 0.0;
                }
            }
            let name = format!("video_gen.rnn.b_{gate}");
            for v in params.get_mut(&name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let mut lrng = Rng::new(9);
        let latent = sample_video_latent(&mut lrng, 4, &rnn, &params, 6).unwrap();
        let clip = video_generator_forward(&gen, &rnn, &params, &latent, 4).unwrap();
        let first = &clip.frames()[0];
        for frame in clip.frames() {
            let max_diff = frame
                .data()
                .iter()
                .zip(first.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert_eq!(max_diff, 0.0);
        }
    }

    #[test]
    fn shared_content_different_motion() {
        let cfg = tiny_cfg();
        let rnn = MotionRnn::new(&cfg);
        let mut params = rnn.param_template().unwrap();
        let mut rng = Rng::new(10);
        init_gan_params(&mut params, 0.5, &mut rng);
        let mut r1 = Rng::new(11);
        let mut r2 = Rng::new(12);
        let a = sample_video_latent(&mut r1, 4, &rnn, &params, 6).unwrap();
        let mut b = sample_video_latent(&mut r2, 4, &rnn, &params, 6).unwrap();
        b.z_content = a.z_content.clone();
        // Content codes agree, motion codes differ.
        assert_eq!(a.z_frame(0).data()[..6], b.z_frame(0).data()[..6]);
        assert_ne!(a.z_motion[0], b.z_motion[0]);
    }

    #[test]
    fn zero_discriminators_output_half() {
        let cfg = tiny_cfg();
        let di = ImageDiscNet::new(&cfg).unwrap();
        let dv = VideoDiscNet::new(&cfg).unwrap();
        let dip = di.param_template().unwrap();
        let dvp = dv.param_template().unwrap();

        let mut g = Graph::new();
        let dib = BoundParams::bind(&mut g, &dip, false);
        let dvb = BoundParams::bind(&mut g, &dvp, false);
        let frame = g.leaf(Tensor::filled(vec![3, 8, 8], 0.3));
        let clip = g.leaf(Tensor::filled(vec![3, 4, 8, 8], 0.7));
        let pi = di.forward(&mut g, &dib, frame).unwrap();
        let pv = dv.forward(&mut g, &dvb, clip).unwrap();
        assert_eq!(g.value(pi).item().unwrap(), 0.5);
        assert_eq!(g.value(pv).item().unwrap(), 0.5);
    }

    #[test]
    fn sampling_edges() {
        let cfg = tiny_cfg();
        let (gen, rnn, params) = video_params(&cfg);
        let mut rng = Rng::new(13);
        let latent = sample_video_latent(&mut rng, 4, &rnn, &params, 6).unwrap();
        let clip = video_generator_forward(&gen, &rnn, &params, &latent, 4).unwrap();

        // ST with the full window is forced to start at 0.
        assert_eq!(sample_window_start(&mut rng, 4, 4).unwrap(), 0);
        let whole = sample_st(&clip, 0, 4).unwrap();
        assert_eq!(whole, clip);
        assert!(sample_st(&clip, 1, 4).is_err());
        assert!(sample_window_start(&mut rng, 4, 5).is_err());

        // S1 on a single-frame clip returns that frame.
        let single = VideoClip::new(vec![clip.frames()[2].clone()], 4).unwrap();
        let picked = sample_s1(&single, &mut rng);
        assert_eq!(picked, &clip.frames()[2]);
    }

    #[test]
    fn window_start_uniformity() {
        // Starts 0..=2 for an 8-window in a 10-frame clip, each about 1/3.
        let mut rng = Rng::new(14);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_window_start(&mut rng, 10, 8).unwrap()] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.05, "freq {freq}");
        }
    }

    #[test]
    fn st_output_consecutive_order_preserving() {
        let cfg = tiny_cfg();
        let (gen, rnn, params) = video_params(&cfg);
        let mut rng = Rng::new(15);
        let latent = sample_video_latent(&mut rng, 4, &rnn, &params, 6).unwrap();
        let clip = video_generator_forward(&gen, &rnn, &params, &latent, 4).unwrap();
        let win = sample_st(&clip, 1, 2).unwrap();
        assert_eq!(win.frames()[0], clip.frames()[1]);
        assert_eq!(win.frames()[1], clip.frames()[2]);
    }

    #[test]
    fn value_fixed_points_and_oracle() {
        let half = [0.5, 0.5];
        let l = video_gan_value(&half, &half, &half, &half, LossForm::Saturating).unwrap();
        assert!((l.c_v - (-4.0 * std::f64::consts::LN_2)).abs() < 1e-9);

        let hi = [1.0 - 1e-9];
        let lo = [1e-9];
        let l = video_gan_value(&hi, &lo, &hi, &lo, LossForm::Saturating).unwrap();
        assert!(l.c_v.abs() < 1e-5);

        // ln .8 + ln .8 + ln .6 + ln .6, frozen from the scalar computation.
        let l = video_gan_value(&[0.8], &[0.2], &[0.6], &[0.4], LossForm::Saturating).unwrap();
        let expect = 2.0 * 0.8f64.ln() + 2.0 * 0.6f64.ln();
        assert!((l.c_v - expect).abs() < 1e-12);
        assert!((l.c_v - (-1.467_938)).abs() < 1e-5);
    }
}

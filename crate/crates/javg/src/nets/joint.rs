//! Joint discriminators over (audio, video) pairs.
//!
//! Two independent discriminators share nothing: each owns an audio encoder,
//! a video encoder, and a dense head on the concatenated embeddings. D1
//! separates real pairs from the two generated kinds; D2 separates
//! fake-audio pairs (â, v) from fake-video pairs (a, v̂). Together they act
//! as one ternary classifier.
//!
//! The pair value function, with the product reading of the two fake terms:
//!
//! ```text
//! C_M = E[ln D1(a,v)] + E[ln((1-D1(â,v)) D2(â,v))]
//!     + E[ln((1-D1(a,v̂))(1-D2(a,v̂)))]
//! ```

use crate::error::{JavgError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::Tensor;

use super::audio::AudioGenNet;
use super::video::{ImageGenNet, MotionRnn, VideoLatent};
use super::{
    add_param, clamp_probs, log_one_minus, log_prob, mean, LossForm, ModelConfig, AUDIO_KERNEL,
    AUDIO_SEED_LEN, AUDIO_STRIDE, IMAGE_KERNEL, IMAGE_STRIDE,
};

/// Which of the two joint heads to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointHead {
    D1,
    D2,
}

impl JointHead {
    pub fn prefix(&self) -> &'static str {
        match self {
            JointHead::D1 => "joint_d1",
            JointHead::D2 => "joint_d2",
        }
    }
}

/// One joint discriminator (one head plus its own two encoders).
#[derive(Debug, Clone)]
pub struct JointDiscNet {
    pub head: JointHead,
    pub audio_len: usize,
    pub image_size: usize,
    pub n_frames: usize,
    pub embed_dim: usize,
    pub leaky_slope: f64,
    audio_channels: Vec<usize>,
    video_channels: Vec<usize>,
    /// Per-layer time stride of the video encoder (2 while the extent is
    /// even, 1 otherwise, fixed at construction).
    video_time_strides: Vec<usize>,
}

/// Upper bound on joint video encoder depth; smaller images get fewer.
pub const JOINT_VIDEO_MAX_LAYERS: usize = 3;

impl JointDiscNet {
    pub fn new(cfg: &ModelConfig, head: JointHead) -> Result<Self> {
        let audio_layers = cfg.audio_layers()?;
        let video_layers = cfg.image_layers()?.min(JOINT_VIDEO_MAX_LAYERS);
        let audio_channels = (0..audio_layers)
            .map(|i| cfg.joint_audio_channels << i)
            .collect();
        let video_channels: Vec<usize> = (0..video_layers)
            .map(|i| cfg.joint_video_channels << i)
            .collect();
        let mut t = cfg.n_frames;
        let video_time_strides = (0..video_layers)
            .map(|_| {
                let s = if t % 2 == 0 { 2 } else { 1 };
                t /= s;
                s
            })
            .collect();
        Ok(JointDiscNet {
            head,
            audio_len: cfg.audio_len,
            image_size: cfg.image_size,
            n_frames: cfg.n_frames,
            embed_dim: cfg.joint_embed_dim,
            leaky_slope: cfg.leaky_slope,
            audio_channels,
            video_channels,
            video_time_strides,
        })
    }

    fn audio_flat(&self) -> usize {
        self.audio_channels[self.audio_channels.len() - 1] * AUDIO_SEED_LEN
    }

    fn video_out_extents(&self) -> (usize, usize) {
        let t = self
            .video_time_strides
            .iter()
            .fold(self.n_frames, |t, s| t / s);
        let spatial = self.image_size >> self.video_channels.len();
        (t, spatial)
    }

    fn video_flat(&self) -> usize {
        let (t, spatial) = self.video_out_extents();
        self.video_channels[self.video_channels.len() - 1] * t * spatial * spatial
    }

    pub fn param_template(&self) -> Result<ParamSet> {
        let p = self.head.prefix();
        let mut set = ParamSet::new();
        let mut c_in = 1;
        for (i, &c_out) in self.audio_channels.iter().enumerate() {
            add_param(
                &mut set,
                format!("{p}.aenc.conv{i}.w"),
                vec![c_out, c_in, AUDIO_KERNEL],
            )?;
            add_param(&mut set, format!("{p}.aenc.conv{i}.b"), vec![c_out])?;
            c_in = c_out;
        }
        add_param(
            &mut set,
            format!("{p}.aenc.embed.w"),
            vec![self.embed_dim, self.audio_flat()],
        )?;
        add_param(&mut set, format!("{p}.aenc.embed.b"), vec![self.embed_dim])?;

        let mut c_in = 3;
        for (i, &c_out) in self.video_channels.iter().enumerate() {
            add_param(
                &mut set,
                format!("{p}.venc.conv{i}.w"),
                vec![c_out, c_in, 3, IMAGE_KERNEL, IMAGE_KERNEL],
            )?;
            add_param(&mut set, format!("{p}.venc.conv{i}.b"), vec![c_out])?;
            c_in = c_out;
        }
        add_param(
            &mut set,
            format!("{p}.venc.embed.w"),
            vec![self.embed_dim, self.video_flat()],
        )?;
        add_param(&mut set, format!("{p}.venc.embed.b"), vec![self.embed_dim])?;

        add_param(
            &mut set,
            format!("{p}.head0.w"),
            vec![self.embed_dim, 2 * self.embed_dim],
        )?;
        add_param(&mut set, format!("{p}.head0.b"), vec![self.embed_dim])?;
        add_param(&mut set, format!("{p}.head1.w"), vec![1, self.embed_dim])?;
        add_param(&mut set, format!("{p}.head1.b"), vec![1])?;
        Ok(set)
    }

    fn audio_embed(&self, g: &mut Graph, bound: &BoundParams, audio: NodeId) -> Result<NodeId> {
        let p = self.head.prefix();
        let mut h = audio;
        for i in 0..self.audio_channels.len() {
            let w = bound.id(&format!("{p}.aenc.conv{i}.w"))?;
            let b = bound.id(&format!("{p}.aenc.conv{i}.b"))?;
            h = g.conv1d(h, w, AUDIO_STRIDE)?;
            h = g.add_bias(h, b)?;
            h = g.leaky_relu(h, self.leaky_slope)?;
        }
        h = g.reshape(h, vec![self.audio_flat()])?;
        let w = bound.id(&format!("{p}.aenc.embed.w"))?;
        let b = bound.id(&format!("{p}.aenc.embed.b"))?;
        let e = g.dense(h, w, b)?;
        g.leaky_relu(e, self.leaky_slope)
    }

    fn video_embed(&self, g: &mut Graph, bound: &BoundParams, video: NodeId) -> Result<NodeId> {
        let p = self.head.prefix();
        let mut h = video;
        for i in 0..self.video_channels.len() {
            let w = bound.id(&format!("{p}.venc.conv{i}.w"))?;
            let b = bound.id(&format!("{p}.venc.conv{i}.b"))?;
            h = g.conv3d(h, w, (self.video_time_strides[i], IMAGE_STRIDE, IMAGE_STRIDE))?;
            h = g.add_bias(h, b)?;
            h = g.leaky_relu(h, self.leaky_slope)?;
        }
        h = g.reshape(h, vec![self.video_flat()])?;
        let w = bound.id(&format!("{p}.venc.embed.w"))?;
        let b = bound.id(&format!("{p}.venc.embed.b"))?;
        let e = g.dense(h, w, b)?;
        g.leaky_relu(e, self.leaky_slope)
    }

    /// Probability for an ([1, audio_len], [3, n_frames, size, size]) pair.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        audio: NodeId,
        video: NodeId,
    ) -> Result<NodeId> {
        if g.value(audio).shape() != [1, self.audio_len] {
            return Err(JavgError::invalid(format!(
                "joint discriminator expects audio [1, {}], got {:?}",
                self.audio_len,
                g.value(audio).shape()
            )));
        }
        let expect_v = [3, self.n_frames, self.image_size, self.image_size];
        if g.value(video).shape() != expect_v {
            return Err(JavgError::invalid(format!(
                "joint discriminator expects video {expect_v:?}, got {:?}",
                g.value(video).shape()
            )));
        }
        let e_a = self.audio_embed(g, bound, audio)?;
        let e_v = self.video_embed(g, bound, video)?;
        let joint = g.concat(&[e_a, e_v])?;
        let p = self.head.prefix();
        let w = bound.id(&format!("{p}.head0.w"))?;
        let b = bound.id(&format!("{p}.head0.b"))?;
        let h = g.dense(joint, w, b)?;
        let h = g.leaky_relu(h, self.leaky_slope)?;
        let w = bound.id(&format!("{p}.head1.w"))?;
        let b = bound.id(&format!("{p}.head1.b"))?;
        let logit = g.dense(h, w, b)?;
        g.sigmoid(logit)
    }
}

/// Eval-mode joint probability for a concrete pair.
pub fn joint_disc_prob(
    net: &JointDiscNet,
    params: &ParamSet,
    audio: &Tensor,
    video: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let a = g.leaf(audio.clone());
    let v = g.leaf(video.clone());
    let p = net.forward(&mut g, &bound, a, v)?;
    g.value(p).item()
}

/// Three-way verdict of the collective (D1, D2) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TernaryClass {
    Real,
    FakeAudio,
    FakeVideo,
}

/// D1 gates real vs fake; D2 routes between the two fake kinds.
pub fn ternary_decision(d1: f64, d2: f64) -> TernaryClass {
    if d1 > 0.5 {
        TernaryClass::Real
    } else if d2 > 0.5 {
        TernaryClass::FakeAudio
    } else {
        TernaryClass::FakeVideo
    }
}

/// Pair value function and per-player losses.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLosses {
    pub c_m: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub clamped: usize,
}

/// C_M from the five probability batches: D1 on real pairs, D1 and D2 on
/// fake-audio pairs, D1 and D2 on fake-video pairs.
pub fn joint_value(
    d1_real: &[f64],
    d1_fa: &[f64],
    d2_fa: &[f64],
    d1_fv: &[f64],
    d2_fv: &[f64],
    form: LossForm,
) -> Result<JointLosses> {
    if d1_real.is_empty() || d1_fa.is_empty() || d1_fv.is_empty() {
        return Err(JavgError::invalid("value function needs non-empty batches"));
    }
    if d1_fa.len() != d2_fa.len() || d1_fv.len() != d2_fv.len() {
        return Err(JavgError::invalid(
            "fake-pair batches must agree between the two heads",
        ));
    }
    let mut clamped = 0;
    let d1_real = clamp_probs(d1_real, &mut clamped);
    let d1_fa = clamp_probs(d1_fa, &mut clamped);
    let d2_fa = clamp_probs(d2_fa, &mut clamped);
    let d1_fv = clamp_probs(d1_fv, &mut clamped);
    let d2_fv = clamp_probs(d2_fv, &mut clamped);
    if clamped > 0 {
        log::warn!("joint value function clamped {clamped} saturated probabilities");
    }
    let real_term = mean(&d1_real.iter().map(|p| p.ln()).collect::<Vec<_>>());
    let fa_term = mean(
        &d1_fa
            .iter()
            .zip(&d2_fa)
            .map(|(p1, p2)| ((1.0 - p1) * p2).ln())
            .collect::<Vec<_>>(),
    );
    let fv_term = mean(
        &d1_fv
            .iter()
            .zip(&d2_fv)
            .map(|(p1, p2)| ((1.0 - p1) * (1.0 - p2)).ln())
            .collect::<Vec<_>>(),
    );
    let c_m = real_term + fa_term + fv_term;
    let loss_g = match form {
        LossForm::Saturating => c_m,
        LossForm::NonSaturating => {
            -mean(&d1_fa.iter().map(|p| p.ln()).collect::<Vec<_>>())
                - mean(&d1_fv.iter().map(|p| p.ln()).collect::<Vec<_>>())
        }
    };
    Ok(JointLosses {
        c_m,
        loss_d: -c_m,
        loss_g,
        clamped,
    })
}

/// Pre-drawn inputs for one sample of the joint game. Both fake pairs reuse
/// the same real pair: (â_i, v_i) and (a_i, v̂_i).
pub struct JointSampleDraws<'a> {
    pub real_audio: &'a Tensor,
    pub real_video: &'a Tensor,
    pub fake_audio_noise: &'a Tensor,
    pub fake_video_latent: &'a VideoLatent,
}

/// Per-sample C_M term built in-graph, generating â and v̂ through the bound
/// generators:
/// `ln D1(a,v) + ln(1-D1(â,v)) + ln D2(â,v) + ln(1-D1(a,v̂)) + ln(1-D2(a,v̂))`.
#[allow(clippy::too_many_arguments)]
pub fn joint_value_term(
    g: &mut Graph,
    d1: &JointDiscNet,
    d2: &JointDiscNet,
    audio_gen: &AudioGenNet,
    image_gen: &ImageGenNet,
    rnn: &MotionRnn,
    d1_bound: &BoundParams,
    d2_bound: &BoundParams,
    audio_gen_bound: &BoundParams,
    video_gen_bound: &BoundParams,
    draws: &JointSampleDraws<'_>,
) -> Result<NodeId> {
    let a = g.leaf(draws.real_audio.clone());
    let v = g.leaf(draws.real_video.clone());

    let z = g.leaf(draws.fake_audio_noise.clone());
    let fake_a = audio_gen.forward(g, audio_gen_bound, z)?;
    let fake_frames = image_gen.forward_clip(g, video_gen_bound, rnn, draws.fake_video_latent)?;
    let fake_v = g.stack_axis1(&fake_frames)?;

    let p1_real = d1.forward(g, d1_bound, a, v)?;
    let p1_fa = d1.forward(g, d1_bound, fake_a, v)?;
    let p2_fa = d2.forward(g, d2_bound, fake_a, v)?;
    let p1_fv = d1.forward(g, d1_bound, a, fake_v)?;
    let p2_fv = d2.forward(g, d2_bound, a, fake_v)?;

    let t_real = log_prob(g, p1_real)?;
    let a1 = log_one_minus(g, p1_fa)?;
    let a2 = log_prob(g, p2_fa)?;
    let b1 = log_one_minus(g, p1_fv)?;
    let b2 = log_one_minus(g, p2_fv)?;

    let fa = g.add(a1, a2)?;
    let fv = g.add(b1, b2)?;
    let s = g.add(t_real, fa)?;
    let s = g.add(s, fv)?;
    Ok(s)
}

/// Per-sample joint generator loss term.
#[allow(clippy::too_many_arguments)]
pub fn joint_gen_loss_term(
    g: &mut Graph,
    d1: &JointDiscNet,
    audio_gen: &AudioGenNet,
    image_gen: &ImageGenNet,
    rnn: &MotionRnn,
    d1_bound: &BoundParams,
    audio_gen_bound: &BoundParams,
    video_gen_bound: &BoundParams,
    draws: &JointSampleDraws<'_>,
    form: LossForm,
) -> Result<NodeId> {
    let a = g.leaf(draws.real_audio.clone());
    let v = g.leaf(draws.real_video.clone());
    let z = g.leaf(draws.fake_audio_noise.clone());
    let fake_a = audio_gen.forward(g, audio_gen_bound, z)?;
    let fake_frames = image_gen.forward_clip(g, video_gen_bound, rnn, draws.fake_video_latent)?;
    let fake_v = g.stack_axis1(&fake_frames)?;

    let p1_fa = d1.forward(g, d1_bound, fake_a, v)?;
    let p1_fv = d1.forward(g, d1_bound, a, fake_v)?;
    match form {
        LossForm::Saturating => {
            let a1 = log_one_minus(g, p1_fa)?;
            let b1 = log_one_minus(g, p1_fv)?;
            g.add(a1, b1)
        }
        LossForm::NonSaturating => {
            let a1 = log_prob(g, p1_fa)?;
            let b1 = log_prob(g, p1_fv)?;
            let s = g.add(a1, b1)?;
            g.affine(s, -1.0, 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_gan_params;
    use crate::rng::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            audio_len: 64,
            audio_latent_dim: 8,
            image_size: 8,
            n_frames: 4,
            content_dim: 6,
            motion_dim: 3,
            joint_audio_channels: 2,
            joint_video_channels: 2,
            joint_embed_dim: 8,
            ..ModelConfig::default()
        }
    }

    fn pair_tensors() -> (Tensor, Tensor) {
        let a = Tensor::new(vec![1, 64], (0..64).map(|i| (i as f64 / 10.0).sin() * 0.5).collect())
            .unwrap();
        let v = Tensor::new(
            vec![3, 4, 8, 8],
            (0..3 * 4 * 64).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        (a, v)
    }

    #[test]
    fn zero_params_give_half_on_both_heads() {
        let cfg = tiny_cfg();
        let (a, v) = pair_tensors();
        for head in [JointHead::D1, JointHead::D2] {
            let net = JointDiscNet::new(&cfg, head).unwrap();
            let params = net.param_template().unwrap();
            let p = joint_disc_prob(&net, &params, &a, &v).unwrap();
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn heads_share_no_parameters() {
        let cfg = tiny_cfg();
        let d1 = JointDiscNet::new(&cfg, JointHead::D1).unwrap();
        let d2 = JointDiscNet::new(&cfg, JointHead::D2).unwrap();
        let n1: Vec<_> = d1.param_template().unwrap().names().map(String::from).collect();
        let n2: Vec<_> = d2.param_template().unwrap().names().map(String::from).collect();
        assert!(n1.iter().all(|n| n.starts_with("joint_d1.")));
        assert!(n2.iter().all(|n| n.starts_with("joint_d2.")));
        assert!(n1.iter().all(|n| !n2.contains(n)));
    }

    #[test]
    fn repeated_forward_is_deterministic() {
        let cfg = tiny_cfg();
        let net = JointDiscNet::new(&cfg, JointHead::D1).unwrap();
        let mut params = net.param_template().unwrap();
        let mut rng = Rng::new(21);
        init_gan_params(&mut params, 0.2, &mut rng);
        let (a, v) = pair_tensors();
        let p1 = joint_disc_prob(&net, &params, &a, &v).unwrap();
        let p2 = joint_disc_prob(&net, &params, &a, &v).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn output_depends_on_both_inputs() {
        // Gradient probe: the input gradients through a random net are
        // nonzero for both modalities.
        let cfg = tiny_cfg();
        let net = JointDiscNet::new(&cfg, JointHead::D1).unwrap();
        let mut params = net.param_template().unwrap();
        let mut rng = Rng::new(22);
        init_gan_params(&mut params, 0.3, &mut rng);
        let (a, v) = pair_tensors();

        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, false);
        let an = g.param(a);
        let vn = g.param(v);
        let p = net.forward(&mut g, &bound, an, vn).unwrap();
        let grads = g.backward(p).unwrap();
        let ga = g.grad_of(&grads, an).unwrap().max_abs();
        let gv = g.grad_of(&grads, vn).unwrap().max_abs();
        assert!(ga > 0.0, "audio gradient vanished");
        assert!(gv > 0.0, "video gradient vanished");
    }

    #[test]
    fn ternary_rule_order() {
        assert_eq!(ternary_decision(0.9, 0.1), TernaryClass::Real);
        assert_eq!(ternary_decision(0.9, 0.9), TernaryClass::Real);
        assert_eq!(ternary_decision(0.1, 0.8), TernaryClass::FakeAudio);
        assert_eq!(ternary_decision(0.1, 0.2), TernaryClass::FakeVideo);
    }

    #[test]
    fn value_fixed_points() {
        // Constant-half heads: ln 1/2 + ln 1/4 + ln 1/4 = -5 ln 2.
        let half = [0.5];
        let l = joint_value(&half, &half, &half, &half, &half, LossForm::Saturating).unwrap();
        assert!((l.c_m - (-5.0 * std::f64::consts::LN_2)).abs() < 1e-9);
        assert_eq!(l.loss_d, -l.c_m);

        // Perfect D1, indifferent D2: 0 + ln 1/2 + ln 1/2.
        let l = joint_value(
            &[1.0 - 1e-9],
            &[1e-9],
            &[0.5],
            &[1e-9],
            &[0.5],
            LossForm::Saturating,
        )
        .unwrap();
        assert!((l.c_m - (-2.0 * std::f64::consts::LN_2)).abs() < 1e-5);
    }

    #[test]
    fn value_arithmetic_oracle() {
        // ln .9 + ln(.8 * .7) + ln(.7 * .8), frozen from the scalar path.
        let l = joint_value(&[0.9], &[0.2], &[0.7], &[0.3], &[0.2], LossForm::Saturating).unwrap();
        let expect = 0.9f64.ln() + (0.8 * 0.7f64).ln() + (0.7 * 0.8f64).ln();
        assert!((l.c_m - expect).abs() < 1e-12);
        assert!((l.c_m - (-1.264_996_6)).abs() < 1e-6);
    }

    #[test]
    fn c_m_never_positive() {
        // Every term is a log of a value in (0, 1].
        let mut rng = Rng::new(23);
        for _ in 0..200 {
            let p: Vec<f64> = (0..5).map(|_| rng.uniform01()).collect();
            let l = joint_value(&[p[0]], &[p[1]], &[p[2]], &[p[3]], &[p[4]], LossForm::Saturating)
                .unwrap();
            assert!(l.c_m <= 0.0, "C_M {} from {p:?}", l.c_m);
        }
    }

    #[test]
    fn batch_permutation_invariance() {
        let r = [0.7, 0.4, 0.9];
        let fa1 = [0.2, 0.5, 0.3];
        let fa2 = [0.6, 0.8, 0.1];
        let fv1 = [0.3, 0.2, 0.4];
        let fv2 = [0.1, 0.3, 0.2];
        let l = joint_value(&r, &fa1, &fa2, &fv1, &fv2, LossForm::Saturating).unwrap();
        // Reverse every batch (fake pairs permute together).
        let rev = |s: &[f64]| s.iter().rev().cloned().collect::<Vec<_>>();
        let l2 = joint_value(
            &rev(&r),
            &rev(&fa1),
            &rev(&fa2),
            &rev(&fv1),
            &rev(&fv2),
            LossForm::Saturating,
        )
        .unwrap();
        assert!((l.c_m - l2.c_m).abs() < 1e-12);
    }
}

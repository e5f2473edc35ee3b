//! Acceptance suite. Each test implements one numbered criterion at its
//! stated tolerance and prints one pass line; the test name carries the
//! criterion number.

use std::f64::consts::LN_2;

use javg::dataset::{generate_split, AVPair, SynthConfig};
use javg::exec::ExecMode;
use javg::graph::Graph;
use javg::nets::audio::{
    apply_phase_shuffle, audio_gan_value, audio_value_term, shuffle_map, AudioDiscNet, AudioGenNet,
};
use javg::nets::joint::{joint_value, joint_value_term, JointDiscNet, JointHead, JointSampleDraws};
use javg::nets::video::{
    latent_from_noise, video_gan_value, video_value_term, ImageDiscNet, ImageGenNet, MotionRnn,
    VideoDiscNet, VideoSampleDraws,
};
use javg::nets::{LossForm, ModelConfig};
use javg::params::{finite_diff_check, init_normal, sample_noise, BoundParams, FdCheckConfig, ParamSet};
use javg::rng::Rng;
use javg::tensor::Tensor;
use javg::Result;

/// Small-net model used by the gradient certification.
fn fd_model() -> ModelConfig {
    ModelConfig {
        audio_len: 256,
        audio_latent_dim: 12,
        image_size: 8,
        n_frames: 4,
        content_dim: 8,
        motion_dim: 4,
        audio_gen_channels: 2,
        audio_disc_channels: 2,
        image_gen_channels: 2,
        image_disc_channels: 2,
        video_disc_channels: 2,
        joint_audio_channels: 2,
        joint_video_channels: 2,
        joint_embed_dim: 8,
        ..ModelConfig::default()
    }
}

struct FdNets {
    model: ModelConfig,
    audio_gen: AudioGenNet,
    audio_disc: AudioDiscNet,
    image_gen: ImageGenNet,
    rnn: MotionRnn,
    image_disc: ImageDiscNet,
    video_disc: VideoDiscNet,
    joint_d1: JointDiscNet,
    joint_d2: JointDiscNet,
}

impl FdNets {
    fn new() -> Self {
        let model = fd_model();
        FdNets {
            model: model.clone(),
            audio_gen: AudioGenNet::new(&model).unwrap(),
            audio_disc: AudioDiscNet::new(&model).unwrap(),
            image_gen: ImageGenNet::new(&model).unwrap(),
            rnn: MotionRnn::new(&model),
            image_disc: ImageDiscNet::new(&model).unwrap(),
            video_disc: VideoDiscNet::new(&model).unwrap(),
            joint_d1: JointDiscNet::new(&model, JointHead::D1).unwrap(),
            joint_d2: JointDiscNet::new(&model, JointHead::D2).unwrap(),
        }
    }

    /// All parameters of every net in one set. Every value, biases
    /// included, is drawn Normal(0, 0.35): healthy gradients keep the
    /// finite-difference comparison well above roundoff, and non-zero
    /// biases keep pre-activations off the rectifier kink (black synthetic
    /// pixels would otherwise put them exactly at zero, where a central
    /// difference straddles the kink).
    fn random_params(&self, seed: u64) -> ParamSet {
        let mut all = ParamSet::new();
        let mut push = |set: Result<ParamSet>| {
            for (name, t) in set.unwrap().iter() {
                all.insert(name.to_string(), t.clone()).unwrap();
            }
        };
        push(self.audio_gen.param_template());
        push(self.audio_disc.param_template());
        push(self.image_gen.param_template());
        push(self.rnn.param_template());
        push(self.image_disc.param_template());
        push(self.video_disc.param_template());
        push(self.joint_d1.param_template());
        push(self.joint_d2.param_template());
        let mut rng = Rng::new(seed);
        init_normal(&mut all, 0.35, &mut rng);
        all
    }
}

/// Fixed inputs for one seed of the certification.
struct FdInputs {
    real_audio: Vec<Tensor>,
    real_video: Vec<Tensor>,
    real_clips: Vec<javg::dataset::VideoClip>,
    noise: Vec<Tensor>,
    content: Vec<Tensor>,
    motion: Vec<Vec<Tensor>>,
    real_shifts: Vec<Vec<i64>>,
    fake_shifts: Vec<Vec<i64>>,
}

fn fd_inputs(model: &ModelConfig, shift_count: usize, seed: u64, batch: usize) -> FdInputs {
    let mut rng = Rng::new(seed ^ 0xabcd);
    let synth = SynthConfig {
        n_classes: 1,
        class_pitches: vec![60.0],
        duration: 1.0,
        fps: model.n_frames as u32,
        sample_rate: model.audio_len as u32,
        image_size: model.image_size,
        noise_floor: 0.02,
        train_per_class: batch,
        test_per_class: 0,
    };
    let mut real_audio = Vec::new();
    let mut real_video = Vec::new();
    let mut real_clips = Vec::new();
    for i in 0..batch {
        let p =
            javg::dataset::generate_synthetic_pair(&synth, 0, &format!("fd{i}"), &mut rng).unwrap();
        real_audio.push(p.audio.to_tensor());
        real_video.push(p.video.to_cthw_tensor());
        real_clips.push(p.video);
    }
    let noise = (0..batch)
        .map(|_| sample_noise(&mut rng, model.audio_latent_dim).unwrap())
        .collect();
    let content = (0..batch)
        .map(|_| sample_noise(&mut rng, model.content_dim).unwrap())
        .collect();
    let motion = (0..batch)
        .map(|_| {
            (0..model.n_frames)
                .map(|_| sample_noise(&mut rng, model.motion_dim).unwrap())
                .collect()
        })
        .collect();
    let mut shifts = |n: usize| -> Vec<Vec<i64>> {
        (0..batch)
            .map(|_| (0..n).map(|_| rng.uniform_int(-2, 2)).collect())
            .collect()
    };
    let real_shifts = shifts(shift_count);
    let fake_shifts = shifts(shift_count);
    FdInputs {
        real_audio,
        real_video,
        real_clips,
        noise,
        content,
        motion,
        real_shifts,
        fake_shifts,
    }
}

/// Mean of per-sample value terms over the fixed two-sample batch.
fn batch_mean_loss<F>(params: &ParamSet, batch: usize, build: F) -> Result<(f64, javg::params::GradMap)>
where
    F: Fn(&mut Graph, &BoundParams, usize) -> Result<javg::graph::NodeId>,
{
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, true);
    let mut terms = Vec::new();
    for i in 0..batch {
        terms.push(build(&mut g, &bound, i)?);
    }
    let stacked = g.concat(&terms)?;
    let loss = g.mean(stacked)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    Ok((value, bound.collect_grads(&g, &grads, params)?))
}

/// Finite-difference estimate of one partial derivative.
///
/// Central differences at h and h/2 combine by Richardson extrapolation,
/// which cancels the h^2 truncation term; their disagreement is the
/// oracle's own error estimate, and the scale with the best self-estimate
/// wins. The ladder spans both failure modes of the oracle: forward passes
/// accumulate rounding noise near 1e-12 which a small h amplifies by 1/h
/// (weak-gradient coordinates need the large scales), while rectifier
/// kinks contaminate wide stencils (those coordinates need the small
/// ones). A genuinely wrong analytic gradient disagrees at every scale and
/// still fails.
fn fd_estimate<F>(eval: &F, work: &mut ParamSet, name: &str, idx: usize) -> f64
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    let original = work.get(name).unwrap().data()[idx];
    let mut riches: Vec<f64> = Vec::new();
    for scale in [1e-3, 1e-4, 1e-5, 1e-6] {
        let h = scale * (1.0 + original.abs());
        let mut probe = |delta: f64| -> f64 {
            work.get_mut(name).unwrap().data_mut()[idx] = original + delta;
            let v = eval(work).unwrap();
            work.get_mut(name).unwrap().data_mut()[idx] = original;
            v
        };
        let wide = (probe(h) - probe(-h)) / (2.0 * h);
        let narrow = (probe(0.5 * h) - probe(-0.5 * h)) / h;
        riches.push((4.0 * narrow - wide) / 3.0);
        // Two adjacent scales agreeing pins the estimate: noise does not
        // reproduce across scales and kink contamination shifts with the
        // stencil, so agreement means both effects are below it.
        if riches.len() >= 2 {
            let a = riches[riches.len() - 2];
            let b = riches[riches.len() - 1];
            if (a - b).abs() <= 1e-6 * (b.abs() + 1e-8) {
                return 0.5 * (a + b);
            }
        }
    }
    let mut best = (f64::INFINITY, riches[0]);
    for pair in riches.windows(2) {
        let agree = (pair[0] - pair[1]).abs();
        if agree < best.0 {
            best = (agree, 0.5 * (pair[0] + pair[1]));
        }
    }
    best.1
}

fn certify_loss<F>(params: &ParamSet, batch: usize, build: F) -> f64
where
    F: Fn(&mut Graph, &BoundParams, usize) -> Result<javg::graph::NodeId>,
{
    let (_, analytic) = batch_mean_loss(params, batch, &build).unwrap();
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, ps, false);
        let mut terms = Vec::new();
        for i in 0..batch {
            terms.push(build(&mut g, &bound, i)?);
        }
        let stacked = g.concat(&terms)?;
        let loss = g.mean(stacked)?;
        g.value(loss).item()
    };

    // Coordinate sampling mirrors the core finite-difference oracle.
    let mut coord_rng = Rng::new(17);
    let mut work = params.clone();
    let mut max_err = 0.0f64;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        let coords: Vec<usize> = if n <= 4 {
            (0..n).collect()
        } else {
            (0..4)
                .map(|_| coord_rng.uniform_int(0, n as i64 - 1) as usize)
                .collect()
        };
        for idx in coords {
            let a = analytic[&name].data()[idx];
            let central = fd_estimate(&eval, &mut work, &name, idx);
            let err = (a - central).abs() / (central.abs() + 1e-8);
            if err > max_err {
                max_err = err;
                if err > 1e-4 {
                    eprintln!(
                        "worst so far: {name}[{idx}] analytic {a:.6e} central {central:.6e} err {err:.3e}"
                    );
                }
            }
        }
    }
    max_err
}

#[test]
fn c1_gradient_certification() {
    let started = std::time::Instant::now();
    let nets = FdNets::new();
    let batch = 2;
    for seed in 0..5u64 {
        let params = nets.random_params(1000 + seed);
        let inputs = fd_inputs(&nets.model, nets.audio_disc.shift_count(), seed, batch);

        // Audio value function through both players.
        let err_audio = certify_loss(&params, batch, |g, bound, i| {
            audio_value_term(
                g,
                &nets.audio_gen,
                &nets.audio_disc,
                bound,
                bound,
                &inputs.real_audio[i],
                &inputs.noise[i],
                &inputs.real_shifts[i],
                &inputs.fake_shifts[i],
            )
        });
        assert!(err_audio < 1e-4, "seed {seed}: audio value error {err_audio}");

        // Video value function through the generator and both video critics.
        let latents: Vec<_> = (0..batch)
            .map(|i| {
                latent_from_noise(
                    &nets.rnn,
                    &params,
                    inputs.content[i].clone(),
                    inputs.motion[i].clone(),
                )
                .unwrap()
            })
            .collect();
        let err_video = certify_loss(&params, batch, |g, bound, i| {
            let draws = VideoSampleDraws {
                real: &inputs.real_clips[i],
                latent: &latents[i],
                s1_real: i % nets.model.n_frames,
                s1_fake: (i + 1) % nets.model.n_frames,
                st_real: 0,
                st_fake: 0,
            };
            video_value_term(
                g,
                &nets.image_gen,
                &nets.rnn,
                &nets.image_disc,
                &nets.video_disc,
                bound,
                bound,
                bound,
                &draws,
            )
        });
        assert!(err_video < 1e-4, "seed {seed}: video value error {err_video}");

        // Joint value function through both joint discriminators and both
        // generators.
        let err_joint = certify_loss(&params, batch, |g, bound, i| {
            let draws = JointSampleDraws {
                real_audio: &inputs.real_audio[i],
                real_video: &inputs.real_video[i],
                fake_audio_noise: &inputs.noise[i],
                fake_video_latent: &latents[i],
            };
            joint_value_term(
                g,
                &nets.joint_d1,
                &nets.joint_d2,
                &nets.audio_gen,
                &nets.image_gen,
                &nets.rnn,
                bound,
                bound,
                bound,
                bound,
                &draws,
            )
        });
        assert!(err_joint < 1e-4, "seed {seed}: joint value error {err_joint}");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "certification took {elapsed:?}, budget is 2 minutes"
    );
    println!(
        "criterion 1 PASS: audio/video/joint gradients within 1e-4 over 5 seeds in {elapsed:?}"
    );
}

#[test]
fn c2_loss_fixed_points() {
    let tol = 1e-9;
    let half = [0.5, 0.5, 0.5];
    let v = audio_gan_value(&half, &half, LossForm::Saturating).unwrap();
    assert!((v.value_v - (-2.0 * LN_2)).abs() < tol, "V = {}", v.value_v);

    let cv = video_gan_value(&half, &half, &half, &half, LossForm::Saturating).unwrap();
    assert!((cv.c_v - (-4.0 * LN_2)).abs() < tol, "C_v = {}", cv.c_v);

    let cm = joint_value(&half, &half, &half, &half, &half, LossForm::Saturating).unwrap();
    assert!((cm.c_m - (-5.0 * LN_2)).abs() < tol, "C_M = {}", cm.c_m);
    println!(
        "criterion 2 PASS: V = -2 ln 2, C_v = -4 ln 2, C_M = -5 ln 2 within 1e-9 at constant half"
    );
}

#[test]
fn c3_phase_shuffle() {
    // Identity at n_max = 0.
    let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut rng = Rng::new(3);
    let y = javg::nets::audio::phase_shuffle(&x, 0, &mut rng).unwrap();
    assert_eq!(x, y);

    // Hand-traced reflection shifts on [1,2,3,4].
    let mut g = Graph::new();
    let id = g.leaf(x.clone());
    let plus = apply_phase_shuffle(&mut g, id, 1).unwrap();
    assert_eq!(g.value(plus).data(), &[2.0, 1.0, 2.0, 3.0]);
    let minus = apply_phase_shuffle(&mut g, id, -1).unwrap();
    assert_eq!(g.value(minus).data(), &[2.0, 3.0, 4.0, 3.0]);

    // Length preserved for every legal shift over assorted extents.
    for time in [4usize, 7, 16, 33] {
        for shift in -3i64..=3 {
            if shift.unsigned_abs() as usize >= time {
                continue;
            }
            assert_eq!(shuffle_map(time, shift).len(), time);
        }
    }
    println!("criterion 3 PASS: identity at 0, hand-traced +-1 shifts, length preserved");
}

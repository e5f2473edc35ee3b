//! Temporary bisection of the video-path gradient mismatch.

use javg::graph::Graph;
use javg::nets::video::*;
use javg::nets::{init_gan_params, ModelConfig};
use javg::params::{finite_diff_check, sample_noise, BoundParams, FdCheckConfig, ParamSet};
use javg::rng::Rng;
use javg::Result;

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

fn check<F>(params: &ParamSet, build: F) -> f64
where
    F: Fn(&mut Graph, &BoundParams) -> Result<javg::graph::NodeId>,
{
    let analytic = {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, params, true);
        let loss = build(&mut g, &bound).unwrap();
        let grads = g.backward(loss).unwrap();
        bound.collect_grads(&g, &grads, params).unwrap()
    };
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, ps, false);
        let loss = build(&mut g, &bound)?;
        g.value(loss).item()
    };
    finite_diff_check(
        eval,
        params,
        &analytic,
        &FdCheckConfig {
            h: 1e-5,
            coords_per_param: 6,
            seed: 5,
        },
    )
    .unwrap()
}

#[test]
fn bisect_video_path() {
    let model = fd_model();
    let gen = ImageGenNet::new(&model).unwrap();
    let rnn = MotionRnn::new(&model);
    let d_img = ImageDiscNet::new(&model).unwrap();
    let d_vid = VideoDiscNet::new(&model).unwrap();

    let mut params = ParamSet::new();
    for set in [
        gen.param_template().unwrap(),
        rnn.param_template().unwrap(),
        d_img.param_template().unwrap(),
        d_vid.param_template().unwrap(),
    ] {
        for (n, t) in set.iter() {
            params.insert(n.to_string(), t.clone()).unwrap();
        }
    }
    let mut rng = Rng::new(77);
    init_gan_params(&mut params, 0.35, &mut rng);

    let content = sample_noise(&mut rng, model.content_dim).unwrap();
    let motion: Vec<_> = (0..model.n_frames)
        .map(|_| sample_noise(&mut rng, model.motion_dim).unwrap())
        .collect();
    let latent = latent_from_noise(&rnn, &params, content.clone(), motion.clone()).unwrap();

    // 1. generator clip -> mean pixel
    let err = check(&params, |g, b| {
        let frames = gen.forward_clip(g, b, &rnn, &latent)?;
        let all = g.stack_axis1(&frames)?;
        let t = g.tanh(all)?;
        g.mean(t)
    });
    println!("gen clip mean: {err:.3e}");

    // 2. D_I on generated frame
    let err = check(&params, |g, b| {
        let frames = gen.forward_clip(g, b, &rnn, &latent)?;
        let p = d_img.forward(g, b, frames[1])?;
        javg::nets::log_prob(g, p)
    });
    println!("D_I(fake frame): {err:.3e}");

    // 3. D_V on generated clip
    let err = check(&params, |g, b| {
        let frames = gen.forward_clip(g, b, &rnn, &latent)?;
        let clip = g.stack_axis1(&frames)?;
        let p = d_vid.forward(g, b, clip)?;
        javg::nets::log_prob(g, p)
    });
    println!("D_V(fake clip): {err:.3e}");

    // 4. D_I on constant leaf frame
    let err = check(&params, |g, b| {
        let frame = g.leaf(javg::tensor::Tensor::filled(vec![3, 8, 8], 0.4));
        let p = d_img.forward(g, b, frame)?;
        javg::nets::log_prob(g, p)
    });
    println!("D_I(leaf frame): {err:.3e}");

    // 5. D_V on leaf clip
    let err = check(&params, |g, b| {
        let clip = g.leaf(javg::tensor::Tensor::filled(vec![3, 4, 8, 8], 0.4));
        let p = d_vid.forward(g, b, clip)?;
        javg::nets::log_prob(g, p)
    });
    println!("D_V(leaf clip): {err:.3e}");

    // 6. image generator single frame from leaf latent
    let err = check(&params, |g, b| {
        let z = g.leaf(latent.z_frame(0));
        let frame = gen.forward(g, b, z)?;
        let t = g.tanh(frame)?;
        g.mean(t)
    });
    println!("gen single frame: {err:.3e}");

    // 7. the full video value term against a synthetic real clip
    let synth = javg::dataset::SynthConfig {
        n_classes: 1,
        class_pitches: vec![60.0],
        duration: 1.0,
        fps: 4,
        sample_rate: 256,
        image_size: 8,
        noise_floor: 0.02,
        train_per_class: 1,
        test_per_class: 0,
    };
    let mut srng = Rng::new(0xabcd);
    let pair = javg::dataset::generate_synthetic_pair(&synth, 0, "fd", &mut srng).unwrap();
    let err = check(&params, |g, b| {
        let draws = VideoSampleDraws {
            real: &pair.video,
            latent: &latent,
            s1_real: 0,
            s1_fake: 1,
            st_real: 0,
            st_fake: 0,
        };
        video_value_term(g, &gen, &rnn, &d_img, &d_vid, b, b, b, &draws)
    });
    println!("full video term: {err:.3e}");

    // 8. the same with a constant fake-side only
    let err = check(&params, |g, b| {
        let frames = gen.forward_clip(g, b, &rnn, &latent)?;
        let p_i_fake = d_img.forward(g, b, frames[1])?;
        let clip = g.stack_axis1(&frames)?;
        let p_v_fake = d_vid.forward(g, b, clip)?;
        let a = javg::nets::log_one_minus(g, p_i_fake)?;
        let c = javg::nets::log_one_minus(g, p_v_fake)?;
        g.add(a, c)
    });
    println!("fake-side only: {err:.3e}");

    // 9b. GRU alone with random biases and a generator-style readout
    {
        let mut p2 = ParamSet::new();
        for (n, t) in rnn.param_template().unwrap().iter() {
            p2.insert(n.to_string(), t.clone()).unwrap();
        }
        let mut r2 = Rng::new(555);
        javg::params::init_normal(&mut p2, 0.35, &mut r2);
        let noise2: Vec<_> = (0..4)
            .map(|_| sample_noise(&mut r2, model.motion_dim).unwrap())
            .collect();
        let err = check(&p2, |g, b| {
            let ids: Vec<_> = noise2.iter().map(|t| g.leaf(t.clone())).collect();
            let hs = rnn.forward(g, b, &ids)?;
            let cat = g.concat(&hs)?;
            let t = g.tanh(cat)?;
            let sq = g.mul(t, t)?;
            g.mean(sq)
        });
        println!("gru random biases: {err:.3e}");
    }

    // 9c. GRU -> image generator -> mean, random biases everywhere
    {
        let mut p3 = ParamSet::new();
        for set in [gen.param_template().unwrap(), rnn.param_template().unwrap()] {
            for (n, t) in set.iter() {
                p3.insert(n.to_string(), t.clone()).unwrap();
            }
        }
        let mut r3 = Rng::new(556);
        javg::params::init_normal(&mut p3, 0.35, &mut r3);
        let content3 = sample_noise(&mut r3, model.content_dim).unwrap();
        let motion3: Vec<_> = (0..4)
            .map(|_| sample_noise(&mut r3, model.motion_dim).unwrap())
            .collect();
        let lat3 = latent_from_noise(&rnn, &p3, content3, motion3).unwrap();
        let err = check(&p3, |g, b| {
            let frames = gen.forward_clip(g, b, &rnn, &lat3)?;
            let all = g.stack_axis1(&frames)?;
            let t = g.tanh(all)?;
            g.mean(t)
        });
        println!("gru+gen random biases: {err:.3e}");
    }

    // 9. real-side only on the synthetic clip
    let err = check(&params, |g, b| {
        let frame = g.leaf(pair.video.frames()[0].to_chw_tensor());
        let p_i = d_img.forward(g, b, frame)?;
        let clip = g.leaf(pair.video.to_cthw_tensor());
        let p_v = d_vid.forward(g, b, clip)?;
        let a = javg::nets::log_prob(g, p_i)?;
        let c = javg::nets::log_prob(g, p_v)?;
        g.add(a, c)
    });
    println!("real-side only: {err:.3e}");
}

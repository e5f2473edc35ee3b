//! Procedural generator for correlated audio-video pairs.
//!
//! Class `c` moves a bright disc up and down at `1 + c` Hz and plays a sine
//! at `class_pitches[c]`; the audio amplitude follows the normalized disc
//! speed, so sound is a direct outcome of the visible motion.
//!
//! Random draws per clip, in order: motion phase, disc horizontal position,
//! audio carrier phase, then one uniform noise value per audio sample.
//! Samples snap to the 16-bit grid and pixels to the 8-bit grid at
//! generation time, so writing a pair to disk and reading it back reproduces
//! it bit-exactly.

use std::f64::consts::TAU;

use crate::error::{JavgError, Result};
use crate::rng::Rng;

use super::{snap_pcm16, snap_u8, AVPair, AudioClip, Frame, SynthConfig, VideoClip};

pub fn generate_synthetic_pair(
    cfg: &SynthConfig,
    class_id: usize,
    clip_id: &str,
    rng: &mut Rng,
) -> Result<AVPair> {
    cfg.validate()?;
    if class_id >= cfg.n_classes {
        return Err(JavgError::invalid(format!(
            "class_id {class_id} out of range for {} classes",
            cfg.n_classes
        )));
    }

    let motion_freq = SynthConfig::motion_freq(class_id);
    let pitch = cfg.class_pitches[class_id];

    let motion_phase = rng.uniform01() * TAU;
    let disc_x = 0.3 + 0.4 * rng.uniform01();
    let audio_phase = rng.uniform01() * TAU;

    let video = render_video(cfg, motion_freq, motion_phase, disc_x)?;
    let audio = render_audio(cfg, pitch, motion_freq, motion_phase, audio_phase, rng)?;

    AVPair::new(audio, video, class_id as i64, clip_id.to_string())
}

/// Vertical disc center in normalized [0, 1] image coordinates.
fn disc_y(motion_freq: f64, motion_phase: f64, t: f64) -> f64 {
    0.5 + 0.3 * (TAU * motion_freq * t + motion_phase).sin()
}

fn render_video(
    cfg: &SynthConfig,
    motion_freq: f64,
    motion_phase: f64,
    disc_x: f64,
) -> Result<VideoClip> {
    let size = cfg.image_size;
    let radius = size as f64 / 8.0;
    let n_frames = cfg.n_frames();
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 / cfg.fps as f64;
        let cy = disc_y(motion_freq, motion_phase, t) * size as f64;
        let cx = disc_x * size as f64;
        let mut data = vec![0.0; size * size * 3];
        for row in 0..size {
            let dy = row as f64 + 0.5 - cy;
            for col in 0..size {
                let dx = col as f64 + 0.5 - cx;
                let d = (dx * dx + dy * dy).sqrt();
                // One-pixel soft edge.
                let v = snap_u8((radius + 0.5 - d).clamp(0.0, 1.0));
                if v > 0.0 {
                    let i = (row * size + col) * 3;
                    data[i] = v;
                    data[i + 1] = v;
                    data[i + 2] = v;
                }
            }
        }
        frames.push(Frame::new(size, size, data)?);
    }
    VideoClip::new(frames, cfg.fps)
}

fn render_audio(
    cfg: &SynthConfig,
    pitch: f64,
    motion_freq: f64,
    motion_phase: f64,
    audio_phase: f64,
    rng: &mut Rng,
) -> Result<AudioClip> {
    let n = cfg.n_samples();
    let sr = cfg.sample_rate as f64;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        // |d/dt disc_y| normalized to peak 1: the envelope follows disc speed.
        let envelope = (TAU * motion_freq * t + motion_phase).cos().abs();
        let tone = (1.0 - cfg.noise_floor - 0.05) * envelope * (TAU * pitch * t + audio_phase).sin();
        let noise = cfg.noise_floor * rng.uniform_pm1();
        samples.push(snap_pcm16(tone + noise));
    }
    AudioClip::new(samples, cfg.sample_rate)
}

/// Generate a whole split deterministically. Clip `i` of class `c` draws
/// from the substream `derive(c * 2^32 + i + salt)`, so any clip can be
/// regenerated independently and in parallel.
pub fn generate_split(
    cfg: &SynthConfig,
    per_class: usize,
    salt: u64,
    root_rng: &Rng,
    mode: crate::exec::ExecMode,
) -> Result<Vec<AVPair>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_classes)
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .collect();
    crate::exec::try_map_indexed(mode, jobs.len(), |j| {
        let (c, i) = jobs[j];
        let clip_id = format!("clip_{c:02}_{i:05}");
        let mut rng = root_rng.derive(((c as u64) << 32) | (i as u64) ^ salt);
        generate_synthetic_pair(cfg, c, &clip_id, &mut rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecMode;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            image_size: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identical_seed_identical_pair() {
        let cfg = small_cfg();
        let mut a = Rng::new(1);
        let mut b = Rng::new(1);
        let pa = generate_synthetic_pair(&cfg, 0, "c", &mut a).unwrap();
        let pb = generate_synthetic_pair(&cfg, 0, "c", &mut b).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn class_out_of_range_rejected() {
        let cfg = small_cfg();
        let mut rng = Rng::new(1);
        assert!(generate_synthetic_pair(&cfg, 5, "c", &mut rng).is_err());
    }

    #[test]
    fn clip_lengths_match_config() {
        let cfg = small_cfg();
        let mut rng = Rng::new(2);
        let p = generate_synthetic_pair(&cfg, 1, "c", &mut rng).unwrap();
        assert_eq!(p.audio.samples().len(), 16_000);
        assert_eq!(p.video.frame_count(), 25);
        assert!(p.audio.samples().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn nyquist_guard_rejects_too_many_classes_for_fps() {
        let cfg = SynthConfig {
            fps: 10,
            ..SynthConfig::default()
        };
        // Top class moves at 5 Hz, exactly Nyquist for 10 fps.
        assert!(cfg.validate().is_err());
        let ok = SynthConfig {
            fps: 10,
            n_classes: 3,
            class_pitches: vec![220.0, 330.0, 440.0],
            ..SynthConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn detected_pitch_matches_class_pitch() {
        // Class 2 with pitches [220, 330, 440] must sound at 440 Hz.
        let cfg = SynthConfig {
            n_classes: 3,
            class_pitches: vec![220.0, 330.0, 440.0],
            image_size: 16,
            ..SynthConfig::default()
        };
        let mut rng = Rng::new(11);
        let pair = generate_synthetic_pair(&cfg, 2, "c", &mut rng).unwrap();
        let f = crate::metrics::detect_pitch(&pair.audio)
            .frequency()
            .expect("tone should be voiced");
        assert!((f - 440.0).abs() < 1.0, "detected {f}");
    }

    #[test]
    fn pitch_within_one_semitone_for_every_class() {
        let cfg = small_cfg();
        let mut rng = Rng::new(12);
        for class in 0..cfg.n_classes {
            let pair = generate_synthetic_pair(&cfg, class, "c", &mut rng).unwrap();
            let truth = cfg.class_pitches[class];
            let f = crate::metrics::detect_pitch(&pair.audio)
                .frequency()
                .expect("voiced");
            let semitones = 12.0 * (f / truth).log2();
            assert!(semitones.abs() < 1.0, "class {class}: {f} vs {truth}");
        }
    }

    /// Test-side motion oracle: luminance centroid per frame, then the
    /// strongest naive-DFT bin of the (mean-removed) trajectory.
    fn centroid_motion_freq(video: &crate::dataset::VideoClip) -> f64 {
        let n = video.frame_count();
        let ys: Vec<f64> = video
            .frames()
            .iter()
            .map(|f| {
                let mut num = 0.0;
                let mut den = 0.0;
                for row in 0..f.height() {
                    for col in 0..f.width() {
                        let [r, g, b] = f.pixel(row, col);
                        let w = (r + g + b) / 3.0;
                        num += w * row as f64;
                        den += w;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let duration = n as f64 / video.fps() as f64;
        let mut best = (0.0, 0.0);
        for k in 1..=(n / 2) {
            let f = k as f64 / duration;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, y) in ys.iter().enumerate() {
                let ang = TAU * f * (t as f64 / video.fps() as f64);
                re += (y - mean) * ang.cos();
                im += (y - mean) * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (f, mag);
            }
        }
        best.0
    }

    #[test]
    fn centroid_motion_matches_class_frequency() {
        // Class 2 oscillates at 3 Hz.
        let cfg = small_cfg();
        let mut rng = Rng::new(13);
        let pair = generate_synthetic_pair(&cfg, 2, "c", &mut rng).unwrap();
        let f = centroid_motion_freq(&pair.video);
        assert!((f - 3.0).abs() < 0.5, "motion frequency {f}");
    }

    #[test]
    fn motion_recovered_for_every_class() {
        let cfg = small_cfg();
        let mut rng = Rng::new(14);
        for class in 0..cfg.n_classes {
            let pair = generate_synthetic_pair(&cfg, class, "c", &mut rng).unwrap();
            let truth = SynthConfig::motion_freq(class);
            let f = centroid_motion_freq(&pair.video);
            assert!((f - truth).abs() < 0.5, "class {class}: {f} vs {truth}");
        }
    }

    #[test]
    fn split_generation_is_order_independent() {
        let cfg = SynthConfig {
            image_size: 16,
            sample_rate: 4096,
            fps: 16,
            train_per_class: 2,
            ..SynthConfig::default()
        };
        let root = Rng::new(9);
        let seq = generate_split(&cfg, 2, 0, &root, ExecMode::Sequential).unwrap();
        let par = generate_split(&cfg, 2, 0, &root, ExecMode::Parallel).unwrap();
        assert_eq!(seq, par);
    }
}

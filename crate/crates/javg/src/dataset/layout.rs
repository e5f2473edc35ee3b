//! On-disk dataset layout.
//!
//! ```text
//! root/<split>/<category>/<clip_id>/
//!   audio.wav        PCM16 mono
//!   frame_0000.ppm   one P6 file per frame
//!   ...
//!   meta.json        {"class_id", "fps", "sample_rate", "duration"}
//! ```
//!
//! Categories are `class_NN` for labeled pairs and `unlabeled` for generated
//! ones (class_id -1). Reads walk entries in sorted order, so a read is
//! deterministic regardless of filesystem enumeration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{JavgError, Result};

use super::{decode_ppm, decode_wav, encode_ppm, encode_wav, AVPair, VideoClip};

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    class_id: i64,
    fps: u32,
    sample_rate: u32,
    duration: f64,
}

fn category_name(class_id: i64) -> String {
    if class_id >= 0 {
        format!("class_{class_id:02}")
    } else {
        "unlabeled".to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JavgError + '_ {
    move |e| JavgError::io(path.display().to_string(), e)
}

/// Write pairs under `root/<split>/`. Existing clip directories are
/// overwritten file by file.
pub fn write_split(root: &Path, split: &str, pairs: &[AVPair]) -> Result<()> {
    for pair in pairs {
        let dir = root
            .join(split)
            .join(category_name(pair.class_id))
            .join(&pair.clip_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let wav_path = dir.join("audio.wav");
        fs::write(&wav_path, encode_wav(&pair.audio)).map_err(io_err(&wav_path))?;

        for (i, frame) in pair.video.frames().iter().enumerate() {
            let frame_path = dir.join(format!("frame_{i:04}.ppm"));
            fs::write(&frame_path, encode_ppm(frame)).map_err(io_err(&frame_path))?;
        }

        let meta = ClipMeta {
            class_id: pair.class_id,
            fps: pair.video.fps(),
            sample_rate: pair.audio.sample_rate(),
            duration: pair.video.duration(),
        };
        let meta_path = dir.join("meta.json");
        let body = serde_json::to_string_pretty(&meta)
            .map_err(|e| JavgError::format(meta_path.display().to_string(), e.to_string()))?;
        fs::write(&meta_path, body).map_err(io_err(&meta_path))?;
    }
    Ok(())
}

/// Read every clip of a split, sorted by (category, clip_id).
pub fn read_split(root: &Path, split: &str) -> Result<Vec<AVPair>> {
    let split_dir = root.join(split);
    let mut pairs = Vec::new();
    for category in sorted_dirs(&split_dir)? {
        for clip_dir in sorted_dirs(&category)? {
            pairs.push(read_clip(&clip_dir)?);
        }
    }
    if pairs.is_empty() {
        return Err(JavgError::format(
            split_dir.display().to_string(),
            "split contains no clips",
        ));
    }
    Ok(pairs)
}

/// Names of the split directories under a dataset root, sorted.
pub fn list_splits(root: &Path) -> Result<Vec<String>> {
    Ok(sorted_dirs(root)?
        .into_iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(path).map_err(io_err(path))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn read_clip(dir: &Path) -> Result<AVPair> {
    let meta_path = dir.join("meta.json");
    let meta_body = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    // Unknown keys in meta.json are ignored.
    let meta: ClipMeta = serde_json::from_str(&meta_body)
        .map_err(|e| JavgError::format(meta_path.display().to_string(), e.to_string()))?;

    let wav_path = dir.join("audio.wav");
    let wav_bytes = fs::read(&wav_path).map_err(io_err(&wav_path))?;
    let audio = decode_wav(&wav_bytes, &wav_path.display().to_string())?;
    if audio.sample_rate() != meta.sample_rate {
        return Err(JavgError::format(
            wav_path.display().to_string(),
            format!(
                "sample rate {} disagrees with meta.json ({})",
                audio.sample_rate(),
                meta.sample_rate
            ),
        ));
    }

    let expected_frames = (meta.duration * meta.fps as f64).round() as usize;
    if expected_frames == 0 {
        return Err(JavgError::format(
            meta_path.display().to_string(),
            "meta.json implies zero frames",
        ));
    }
    let mut frames = Vec::with_capacity(expected_frames);
    for i in 0..expected_frames {
        let frame_path = dir.join(format!("frame_{i:04}.ppm"));
        let bytes = fs::read(&frame_path).map_err(|_| {
            JavgError::format(
                frame_path.display().to_string(),
                format!("missing frame {i} of {expected_frames}"),
            )
        })?;
        frames.push(decode_ppm(&bytes, &frame_path.display().to_string())?);
    }
    let extra = dir.join(format!("frame_{expected_frames:04}.ppm"));
    if extra.exists() {
        return Err(JavgError::format(
            extra.display().to_string(),
            format!("unexpected frame beyond the {expected_frames} implied by meta.json"),
        ));
    }
    let video = VideoClip::new(frames, meta.fps)?;

    let clip_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    AVPair::new(audio, video, meta.class_id, clip_id).map_err(|e| {
        JavgError::format(dir.display().to_string(), e.to_string())
    })
}

//! Minimal RIFF/WAVE codec: 16-bit PCM, mono, little-endian.

use crate::error::{JavgError, Result};

use super::AudioClip;

/// Encode as PCM16 mono WAV. Samples quantize as `round(x * 32767)`.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples().len();
    let data_size = (n * 2) as u32;
    let sample_rate = clip.sample_rate();
    let byte_rate = sample_rate * 2;

    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in clip.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Decode a PCM16 mono WAV. Anything else is an unsupported format.
pub fn decode_wav(bytes: &[u8], origin: &str) -> Result<AudioClip> {
    let ferr = |message: String| JavgError::format(origin, message);

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(ferr("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| ferr("chunk size overflow".into()))?;
        if body_end > bytes.len() {
            return Err(ferr(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(ferr("fmt chunk too short".into()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, sample_rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned; skip the pad byte for odd sizes.
        pos = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| ferr("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(ferr(format!(
            "unsupported format: audio format tag {format}, only PCM (1) is supported"
        )));
    }
    if channels != 1 {
        return Err(ferr(format!(
            "unsupported format: {channels} channels, only mono is supported"
        )));
    }
    if bits != 16 {
        return Err(ferr(format!(
            "unsupported format: {bits}-bit samples, only 16-bit is supported"
        )));
    }
    let data = data.ok_or_else(|| ferr("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(ferr("data chunk has odd byte length".into()));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| {
            let q = i16::from_le_bytes([b[0], b[1]]);
            (q as f64 / 32767.0).clamp(-1.0, 1.0)
        })
        .collect();
    if samples.is_empty() {
        return Err(ferr("data chunk is empty".into()));
    }
    AudioClip::new(samples, sample_rate)
}

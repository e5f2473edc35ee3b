//! Binary PPM (P6) frame codec, 8 bits per channel.

use crate::error::{JavgError, Result};

use super::Frame;

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + frame.data().len());
    out.extend_from_slice(header.as_bytes());
    for &v in frame.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

pub fn decode_ppm(bytes: &[u8], origin: &str) -> Result<Frame> {
    let ferr = |message: String| JavgError::format(origin, message);

    let mut pos = 0;
    let mut next_token = |what: &str| -> Result<&[u8]> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ferr(format!("truncated header, missing {what}")));
        }
        Ok(&bytes[start..pos])
    };

    if next_token("magic")? != b"P6" {
        return Err(ferr("not a binary PPM (P6) file".into()));
    }
    let width: usize = parse_int(next_token("width")?, "width", origin)?;
    let height: usize = parse_int(next_token("height")?, "height", origin)?;
    let maxval: usize = parse_int(next_token("maxval")?, "maxval", origin)?;
    if maxval != 255 {
        return Err(ferr(format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height * 3;
    let raster = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| ferr(format!("raster truncated, expected {expected} bytes")))?;
    if pos + expected != bytes.len() {
        return Err(ferr("trailing bytes after raster".into()));
    }
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::new(height, width, data)
}

fn parse_int(token: &[u8], what: &str, origin: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| JavgError::format(origin, format!("invalid {what} in header")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::snap_u8;

    #[test]
    fn roundtrip_snapped_frame_is_bit_exact() {
        let data: Vec<f64> = (0..4 * 6 * 3).map(|i| snap_u8(i as f64 / 71.0)).collect();
        let frame = Frame::new(4, 6, data).unwrap();
        let back = decode_ppm(&encode_ppm(&frame), "mem").unwrap();
        assert_eq!(frame, back);
    }

    #[test]
    fn header_layout() {
        let frame = Frame::new(2, 3, vec![0.0; 18]).unwrap();
        let bytes = encode_ppm(&frame);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn rejects_truncated_raster() {
        let frame = Frame::new(2, 2, vec![0.5; 12]).unwrap();
        let bytes = encode_ppm(&frame);
        let err = decode_ppm(&bytes[..bytes.len() - 1], "cut.ppm").unwrap_err();
        assert!(err.to_string().contains("cut.ppm"));
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(decode_ppm(b"P3\n1 1\n255\n...", "ascii.ppm").is_err());
    }
}

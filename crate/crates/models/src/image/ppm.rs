use std::path::Path;

use clipsight_tensor::Tensor;

use crate::error::{ModelError, Result};

fn io_err(op: &'static str, path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Io {
        op,
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads a binary PPM (P6, maxval 255) into an [H, W, 3] tensor in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| io_err("ppm read", path, e.to_string()))?;
    decode_ppm(&bytes).map_err(|reason| io_err("ppm read", path, reason))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0usize;

    let next_token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if next_token(&mut pos)? != "P6" {
        return Err("not a P6 PPM".into());
    }
    let width: usize = next_token(&mut pos)?.parse().map_err(|_| "bad width")?;
    let height: usize = next_token(&mut pos)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = next_token(&mut pos)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(format!("raster too short: need {need} bytes"));
    }
    let data: Vec<f64> = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![height, width, 3], data).map_err(|e| e.to_string())
}

/// Writes an [H, W, 3] tensor as binary PPM, clamping values into [0, 1].
pub fn write_ppm(path: &Path, frame: &Tensor) -> Result<()> {
    let bytes = encode_ppm(frame)?;
    std::fs::write(path, bytes).map_err(|e| io_err("ppm write", path, e.to_string()))
}

pub fn encode_ppm(frame: &Tensor) -> Result<Vec<u8>> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(ModelError::bad_input(
            "ppm encode",
            format!("expected [H, W, 3], got {shape:?}"),
        ));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_on_byte_grid() {
        let data: Vec<f64> = (0..4 * 5 * 3).map(|i| (i % 256) as f64 / 255.0).collect();
        let frame = Tensor::new(vec![4, 5, 3], data).unwrap();
        let bytes = encode_ppm(&frame).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.shape(), &[4, 5, 3]);
        for (a, b) in frame.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 255, 255]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert_eq!(t.data()[3], 1.0);
    }

    #[test]
    fn rejects_wrong_magic_and_short_raster() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
    }
}

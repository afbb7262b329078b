//! Binary PPM (P6) and PGM (P5) files with maxval 255.

use std::fs;
use std::path::Path;

use gonogo_tensor::Tensor;

use crate::error::{io_err, Result, SceneError};

/// Maps `[0, 1]` to a byte, rounding to nearest and clamping.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    f32::from(b) / 255.0
}

/// A single-channel byte image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_ppm(img: &Tensor) -> Vec<u8> {
    let [c, h, w] = chw(img);
    assert_eq!(c, 3, "PPM needs three channels");
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(d[ch * plane + p]));
        }
    }
    out
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|reason| SceneError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, String> {
    let (w, h, body) = parse_header(bytes, b"P6")?;
    let plane = w * h;
    if body.len() < plane * 3 {
        return Err(format!("expected {} pixel bytes, found {}", plane * 3, body.len()));
    }
    let mut data = vec![0.0; plane * 3];
    for p in 0..plane {
        for ch in 0..3 {
            data[ch * plane + p] = from_byte(body[p * 3 + ch]);
        }
    }
    Tensor::new(&[3, h, w], data).map_err(|e| e.to_string())
}

pub fn encode_pgm(img: &GrayImage, comment: Option<&str>) -> Vec<u8> {
    let mut header = String::from("P5\n");
    if let Some(c) = comment {
        for line in c.lines() {
            header.push_str(&format!("# {line}\n"));
        }
    }
    header.push_str(&format!("{} {}\n255\n", img.width, img.height));
    let mut out = header.into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage, comment: Option<&str>) -> Result<()> {
    fs::write(path, encode_pgm(img, comment)).map_err(io_err(path))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes).map_err(|reason| SceneError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, String> {
    let (width, height, body) = parse_header(bytes, b"P5")?;
    if body.len() < width * height {
        return Err(format!("expected {} pixel bytes, found {}", width * height, body.len()));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: body[..width * height].to_vec(),
    })
}

fn chw(img: &Tensor) -> [usize; 3] {
    match img.shape() {
        [c, h, w] => [*c, *h, *w],
        s => panic!("expected a [C, H, W] image, got {s:?}"),
    }
}

/// Returns width, height and the pixel bytes following the header.
fn parse_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8]), String> {
    if !bytes.starts_with(magic) {
        return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("bad header number")?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after header".into());
    }
    Ok((w, h, &bytes[pos + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_quantized_values() {
        let img = Tensor::from_fn(&[3, 2, 3], |i| from_byte((i * 13) as u8));
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_with_comment_round_trips() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 253, 254, 255],
        };
        let bytes = encode_pgm(&img, Some("free = 254\nlethal = 0"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        let err = decode_ppm(b"P6\n2 2\n255\n\0\0\0").unwrap_err();
        assert!(err.contains("expected 12"), "{err}");
    }
}

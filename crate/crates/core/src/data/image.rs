//! Binary PPM (P6, 8-bit) images.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Decodes a P6 image into a `[3, H, W]` tensor scaled by 1/255.
pub fn decode_ppm<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        ensure!(pos > start, Error::Data("PPM header truncated".into()));
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    ensure!(
        fields[0] == "P6",
        Error::Data(format!("bad PPM magic '{}' (expected P6)", fields[0]))
    );
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Data(format!("PPM {what} '{s}' is not a number")))
    };
    let (w, h, maxval) = (
        num(&fields[1], "width")?,
        num(&fields[2], "height")?,
        num(&fields[3], "maxval")?,
    );
    ensure!(
        maxval == 255,
        Error::Data(format!("PPM maxval {maxval} unsupported (need 255)"))
    );
    ensure!(w > 0 && h > 0, Error::Data("PPM has a zero extent".into()));
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 3;
    ensure!(
        bytes.len() >= pos + need,
        Error::Data(format!(
            "PPM payload truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ))
    );
    let raster = &bytes[pos..pos + need];
    let scale = T::of(1.0 / 255.0);
    let mut data = vec![T::zero(); need];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = if px[c] == 255 {
                T::one()
            } else {
                T::of(px[c] as f64) * scale
            };
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Encodes interleaved RGB bytes as P6.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn save_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    fs::write(path, encode_ppm(width, height, rgb)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_image_is_zero() {
        let t = decode_ppm::<f32>(&encode_ppm(50, 50, &[0; 7500])).unwrap();
        assert_eq!(t.shape(), &[3, 50, 50]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_intensity_is_exactly_one() {
        let t = decode_ppm::<f64>(&encode_ppm(1, 1, &[255, 0, 128])).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn channels_are_planar() {
        let t = decode_ppm::<f64>(&encode_ppm(2, 1, &[255, 0, 0, 0, 255, 0])).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 255, 255]);
        assert_eq!(decode_ppm::<f32>(&bytes).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let mut p3 = encode_ppm(1, 1, &[0, 0, 0]);
        p3[1] = b'3';
        assert!(decode_ppm::<f32>(&p3).unwrap_err().to_string().contains("magic"));
        let truncated = encode_ppm(2, 2, &[0; 12]);
        assert!(decode_ppm::<f32>(&truncated[..truncated.len() - 1])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        let mut deep = b"P6\n1 1\n65535\n".to_vec();
        deep.extend_from_slice(&[0; 6]);
        assert!(decode_ppm::<f32>(&deep).unwrap_err().to_string().contains("maxval"));
    }
}

//! Image files: 16-bit grayscale PNG and the lossless `ECF1` raw format.
//!
//! `ECF1` layout: the four bytes `ECF1`, `u32` height, `u32` width (both
//! little-endian), then `height · width` little-endian `f32` values, row-major.

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};
use image::{ImageBuffer, Luma};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ECF1";

fn plane_dims<T: Real>(img: &Tensor<T>, what: &'static str) -> Result<(usize, usize)> {
    match img.shape() {
        &[1, 1, h, w] | &[h, w] => Ok((h, w)),
        s => Err(Error::shape(what, format!("expected one [1, 1, H, W] image, got {s:?}"))),
    }
}

/// Encodes one image as `ECF1` bytes.
pub fn encode_raw<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(img, "write_raw")?;
    let (hh, ww) = (u32::try_from(h), u32::try_from(w));
    let (Ok(hh), Ok(ww)) = (hh, ww) else {
        return Err(Error::format("ECF1", format!("{h}×{w} does not fit the u32 header")));
    };
    let mut out = Vec::with_capacity(12 + 4 * h * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&hh.to_le_bytes());
    out.extend_from_slice(&ww.to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes `ECF1` bytes into a `[1, 1, H, W]` tensor.
pub fn decode_raw(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format("ECF1", "missing `ECF1` magic"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(12));
    match expected {
        None => return Err(Error::format("ECF1", format!("size {h}×{w} overflows"))),
        Some(n) if n != bytes.len() => {
            return Err(Error::format("ECF1", format!("header says {h}×{w} ({n} bytes) but file has {} bytes", bytes.len())));
        }
        _ => {}
    }
    if h == 0 || w == 0 {
        return Err(Error::format("ECF1", "empty image"));
    }
    let data = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(&[1, 1, h, w], data)
}

pub fn write_raw<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raw(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_raw(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes a 16-bit grayscale PNG storing `round(clamp(v, 0, 1) · 65535)`.
pub fn write_png16<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let (h, w) = plane_dims(img, "write_png16")?;
    let pixels: Vec<u16> = img.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, pixels).ok_or_else(|| Error::format("PNG", "buffer size mismatch"))?;
    buf.save(path.as_ref())?;
    Ok(())
}

/// Reads any grayscale or colour PNG as luminance in `[0, 1]`, shape `[1, 1, H, W]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = image::open(path.as_ref())?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
    Tensor::new(&[1, 1, h as usize, w as usize], data)
}

/// Reads an image by extension: `.png`, or `ECF1` raw otherwise.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_png(path),
        _ => read_raw(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let img = Tensor::<f32>::from_fn(&[1, 1, 5, 7], |i| (i as f32 * 1.37).sin() * 1e3);
        assert_eq!(decode_raw(&encode_raw(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn malformed_raw_is_rejected() {
        let good = encode_raw(&Tensor::<f32>::zeros(&[1, 1, 2, 2])).unwrap();
        assert!(decode_raw(&good[..good.len() - 1]).is_err());
        assert!(decode_raw(b"ECF2\0\0\0\0\0\0\0\0").is_err());
        let mut huge = b"ECF1".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_raw(&huge), Err(Error::Format { .. })));
    }

    #[test]
    fn png_quantisation_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let ramp = Tensor::<f32>::from_fn(&[1, 1, 16, 16], |i| i as f32 / 255.0);
        let path = dir.path().join("ramp.png");
        write_png16(&path, &ramp).unwrap();
        let back = read_png(&path).unwrap();
        assert!(back.max_abs_diff(&ramp) <= 1.0 / 65535.0);
        let black = dir.path().join("black.png");
        write_png16(&black, &Tensor::<f32>::zeros(&[1, 1, 4, 4])).unwrap();
        assert!(read_image(&black).unwrap().data().iter().all(|&v| v == 0.0));
    }
}

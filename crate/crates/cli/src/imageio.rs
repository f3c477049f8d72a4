//! PNG / PGM / raw-f32 image I/O.
//!
//! Pixels load as `value / 255` into `[0, 1]`; saving quantizes with
//! `round(255 * clamp(v, 0, 1))`. Raw `.f32` sidecars carry exact 32-bit
//! floats (little-endian, per-channel planar, row-major) wherever 8-bit
//! quantization would break round trips.

use crate::{CliError, Result};
use freqseg_core::tensor::Tensor;
use std::path::Path;

/// Decode an 8-bit PNG to `(1, C, H, W)` in `[0, 1]`, `C` 1 or 3.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| CliError::Io(format!("cannot read image {}: {e}", path.display())))?;
    let tensor = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let raw = g.into_raw();
            Tensor::from_fn([1, 1, h as usize, w as usize], |_, _, y, x| {
                raw[y * w as usize + x] as f64 / 255.0
            })
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let raw = rgb.into_raw();
            Tensor::from_fn([1, 3, h as usize, w as usize], |_, c, y, x| {
                raw[(y * w as usize + x) * 3 + c] as f64 / 255.0
            })
        }
    };
    Ok(tensor)
}

/// Decode to three channels, replicating grayscale.
pub fn load_image_rgb(path: &Path) -> Result<Tensor> {
    let t = load_image(path)?;
    let (_, c, h, w) = t.dims();
    if c == 3 {
        return Ok(t);
    }
    Ok(Tensor::from_fn([1, 3, h, w], |_, _, y, x| t.at(0, 0, y, x)))
}

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Save `(1, C, H, W)` as PNG (grayscale for C = 1, RGB for C = 3).
pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    let (n, c, h, w) = t.dims();
    if n != 1 || (c != 1 && c != 3) {
        return Err(CliError::Io(format!(
            "save_png expects (1, 1|3, H, W), got {:?}",
            t.shape()
        )));
    }
    let mut bytes = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                bytes.push(quantize(t.at(0, ci, y, x)));
            }
        }
    }
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &bytes, w as u32, h as u32, color)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Save a binary mask as a P5 PGM with values {0, 255}.
pub fn save_pgm(path: &Path, mask: &Tensor) -> Result<()> {
    let (n, c, h, w) = mask.dims();
    if n != 1 || c != 1 {
        return Err(CliError::Io(format!(
            "save_pgm expects (1, 1, H, W), got {:?}",
            mask.shape()
        )));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in mask.data() {
        out.push(if v != 0.0 { 255 } else { 0 });
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a P5 PGM back to a `(1, 1, H, W)` tensor of raw byte values / 255.
pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| CliError::Io(format!("{}: truncated PGM header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..text_end])
        .map_err(|_| CliError::Io("PGM header is not ASCII".into()))?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("P5") {
        return Err(CliError::Io(format!("{}: not a P5 PGM", path.display())));
    }
    let w: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let h: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = &bytes[text_end + 1..];
    if data.len() != w * h {
        return Err(CliError::Io(format!("{}: PGM payload size mismatch", path.display())));
    }
    Ok(Tensor::from_fn([1, 1, h, w], |_, _, y, x| data[y * w + x] as f64 / 255.0))
}

/// Write exact 32-bit floats, planar, row-major, little-endian.
pub fn save_f32(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a `.f32` sidecar produced by [`save_f32`].
pub fn load_f32(path: &Path, shape: [usize; 4]) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let numel: usize = shape.iter().product();
    if bytes.len() != numel * 4 {
        return Err(CliError::Io(format!(
            "{}: expected {} bytes for shape {:?}, found {}",
            path.display(),
            numel * 4,
            shape,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data).map_err(CliError::from)
}

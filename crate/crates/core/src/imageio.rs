//! PNG in/out, PGM heatmaps and image ↔ tensor conversion.

use std::io::Write;
use std::path::Path;

use image::{ImageFormat, Luma, Rgb};
pub use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `3×H×W` tensor with values `v/255 − 0.5`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f32 / 255.0 - 0.5;
        }
    }
    Tensor::new([3, h, w], data).expect("extent matches buffer")
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png_rgb(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Min-max normalizes a map to 8 bits. A constant map renders black.
pub fn heatmap_gray(values: &[f32], h: usize, w: usize) -> Result<GrayImage> {
    if values.len() != h * w {
        return Err(Error::shape("heatmap", format!("{} values for {h}×{w}", values.len())));
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let mut img = GrayImage::new(w as u32, h as u32);
    for (idx, v) in values.iter().enumerate() {
        let level = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
        img.put_pixel((idx % w) as u32, (idx / w) as u32, Luma([level]));
    }
    Ok(img)
}

/// Binary (P5) PGM.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(file, "P5\n{} {}\n255\n", img.width(), img.height()).map_err(|e| Error::io(path, e))?;
    file.write_all(img.as_raw()).map_err(|e| Error::io(path, e))
}

/// Parses a binary PGM written by [`write_pgm`].
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |detail: &str| Error::Format { what: "pgm", detail: detail.to_string() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected 8-bit P5"));
    }
    let w: u32 = fields[1].parse().map_err(|_| bad("width"))?;
    let h: u32 = fields[2].parse().map_err(|_| bad("height"))?;
    let payload = bytes.get(pos + 1..).ok_or_else(|| bad("missing payload"))?;
    GrayImage::from_raw(w, h, payload.to_vec()).ok_or_else(|| bad("payload size"))
}

/// Draws a box of side `size` and a cross centered at `p` (pixels).
pub fn annotate(img: &mut RgbImage, p: (f64, f64), size: u32, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (p.0.round() as i64, p.1.round() as i64);
    let half = size as i64 / 2;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    };
    for d in -half..=half {
        put(cx - half, cy + d);
        put(cx + half, cy + d);
        put(cx + d, cy - half);
        put(cx + d, cy + half);
    }
    for d in -2..=2 {
        put(cx + d, cy);
        put(cx, cy + d);
    }
}

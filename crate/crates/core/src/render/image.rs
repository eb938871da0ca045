//! Rendered image buffers and their on-disk encodings: 8-bit PNG and PFM
//! for RGB, and a raw float format for latent images.
//!
//! Latent file layout (little-endian): `b"CNRF"`, `u16` version, `u32`
//! height, `u32` width, `u16` channels (16 bytes), then `H·W·C` `f32`
//! values, row-major with channels innermost.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const LATENT_MAGIC: &[u8; 4] = b"CNRF";
pub const LATENT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewTag {
    Global,
    Local(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `height · width · channels`, row-major, channels innermost.
    pub pixels: Vec<f32>,
    /// Accumulated rendering weight per ray, `height · width`.
    pub weight_sum: Vec<f32>,
    pub tag: ViewTag,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Format(String),
    #[error("png encoding failed: {0}")]
    Png(String),
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, tag: ViewTag) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![0.0; height * width * channels],
            weight_sum: vec![0.0; height * width],
            tag,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Bitwise equality of pixels and weights.
    pub fn bit_eq(&self, other: &ImageBuffer) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.pixels.iter().zip(&other.pixels).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.weight_sum.iter().zip(&other.weight_sum).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Opacity-weighted centroid `(row, col)` in pixel-center coordinates.
    pub fn weight_centroid(&self) -> Option<(f64, f64)> {
        let mut total = 0.0;
        let (mut r, mut c) = (0.0, 0.0);
        for row in 0..self.height {
            for col in 0..self.width {
                let w = self.weight_sum[row * self.width + col] as f64;
                total += w;
                r += w * (row as f64 + 0.5);
                c += w * (col as f64 + 0.5);
            }
        }
        (total > 0.0).then(|| (r / total, c / total))
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        if self.channels != 3 {
            return Err(ImageError::Format(format!("PNG needs 3 channels, image has {}", self.channels)));
        }
        let bytes: Vec<u8> = self.pixels.iter().map(|v| to_u8(*v)).collect();
        write_png_bytes(path, &bytes, self.width, self.height, image::ExtendedColorType::Rgb8)
    }

    /// Grayscale PNG of the weight map.
    pub fn write_weights_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes: Vec<u8> = self.weight_sum.iter().map(|v| to_u8(*v)).collect();
        write_png_bytes(path, &bytes, self.width, self.height, image::ExtendedColorType::L8)
    }

    /// Portable float map (bottom-to-top rows, little-endian).
    pub fn write_pfm(&self, path: &Path) -> Result<(), ImageError> {
        if self.channels != 3 {
            return Err(ImageError::Format(format!("PFM needs 3 channels, image has {}", self.channels)));
        }
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            let start = row * self.width * 3;
            for v in &self.pixels[start..start + self.width * 3] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(path, &out)?;
        Ok(())
    }

    pub fn encode_latent(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len() * 4);
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u16).to_le_bytes());
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_latent(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
        if bytes.len() < 16 || &bytes[..4] != LATENT_MAGIC {
            return Err(ImageError::Format("not a latent image file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != LATENT_VERSION {
            return Err(ImageError::Format(format!("unsupported latent image version {version}")));
        }
        let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let c = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
        let body = &bytes[16..];
        if body.len() != h * w * c * 4 {
            return Err(ImageError::Format(format!(
                "latent payload is {} bytes, header says {}x{}x{}",
                body.len(),
                h,
                w,
                c
            )));
        }
        let mut img = ImageBuffer::new(h, w, c, ViewTag::Global);
        for (dst, chunk) in img.pixels.iter_mut().zip(body.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(img)
    }

    pub fn write_latent(&self, path: &Path) -> Result<(), ImageError> {
        write_atomic(path, &self.encode_latent())?;
        Ok(())
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png_bytes(
    path: &Path,
    bytes: &[u8],
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
) -> Result<(), ImageError> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Peak signal-to-noise ratio for values in `[0, 1]`.
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a.iter().zip(b).map(|(x, y)| ((*x - *y) as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

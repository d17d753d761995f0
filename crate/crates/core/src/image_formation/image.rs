use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value range of a [`RasterImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    /// 8-bit style samples in `[0, 255]`.
    Raw,
    /// Samples in `[-1, +1]`; black is -1, white is +1.
    Normalized,
}

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub space: ColorSpace,
    pub data: Vec<f64>,
}

impl RasterImage {
    /// Black image in the given space.
    pub fn black(width: usize, height: usize, space: ColorSpace) -> Self {
        let v = match space {
            ColorSpace::Raw => 0.0,
            ColorSpace::Normalized => -1.0,
        };
        RasterImage {
            width,
            height,
            space,
            data: vec![v; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::length("image data", width * height * 3, data.len()));
        }
        Ok(RasterImage {
            width,
            height,
            space,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &RasterImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ImageSizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Bilinear lookup at a continuous pixel position (pixel centers at
    /// half-integers), clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + ax * (p10[c] - p00[c]);
            let bottom = p01[c] + ax * (p11[c] - p01[c]);
            out[c] = top + ay * (bottom - top);
        }
        out
    }

    /// Separable Gaussian blur with clamped borders; `sigma <= 0` copies.
    pub fn gaussian_blur(&self, sigma: f64) -> RasterImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (w, h) = (self.width as i64, self.height as i64);
        let pass = |src: &[f64], horizontal: bool| {
            let mut out = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = [0.0; 3];
                    for (k, kv) in kernel.iter().enumerate() {
                        let o = k as i64 - radius;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        let i = 3 * (sy * w + sx) as usize;
                        for c in 0..3 {
                            acc[c] += kv * src[i + c];
                        }
                    }
                    let i = 3 * (y * w + x) as usize;
                    out[i..i + 3].copy_from_slice(&acc);
                }
            }
            out
        };
        let data = pass(&pass(&self.data, true), false);
        RasterImage { data, ..self.clone() }
    }

    /// Map `[0, 255]` samples to `[-1, +1]` via `x / 127.5 - 1`.
    pub fn normalized(&self) -> Result<RasterImage> {
        if self.space != ColorSpace::Raw {
            return Err(Error::InvalidArgument("image is already normalized".into()));
        }
        if let Some(&v) = self.data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::OutOfRange {
                value: v,
                lo: 0.0,
                hi: 255.0,
            });
        }
        Ok(RasterImage {
            width: self.width,
            height: self.height,
            space: ColorSpace::Normalized,
            data: self.data.iter().map(|v| v / 127.5 - 1.0).collect(),
        })
    }

    /// Inverse of [`RasterImage::normalized`], rounded to whole levels.
    pub fn denormalized(&self) -> Result<RasterImage> {
        if self.space != ColorSpace::Normalized {
            return Err(Error::InvalidArgument("image is not normalized".into()));
        }
        if let Some(&v) = self.data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                value: v,
                lo: -1.0,
                hi: 1.0,
            });
        }
        Ok(RasterImage {
            width: self.width,
            height: self.height,
            space: ColorSpace::Raw,
            data: self
                .data
                .iter()
                .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
                .collect(),
        })
    }

    /// 8-bit samples, rounding and clamping raw values.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let raw = match self.space {
            ColorSpace::Raw => std::borrow::Cow::Borrowed(&self.data),
            ColorSpace::Normalized => std::borrow::Cow::Owned(
                self.data
                    .iter()
                    .map(|v| (v.clamp(-1.0, 1.0) + 1.0) * 127.5)
                    .collect::<Vec<_>>(),
            ),
        };
        raw.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_data(
            width,
            height,
            ColorSpace::Raw,
            bytes.iter().map(|&b| b as f64).collect(),
        )
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_png_rgb8(path, self.width, self.height, &self.to_rgb8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        encode_png_into(&mut buf, self.width, self.height, &self.to_rgb8())?;
        Ok(buf)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let decoder = png::Decoder::new(file);
        let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format("only 8-bit PNG is supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(Error::Format(format!("unsupported PNG color type {other:?}"))),
        };
        Self::from_rgb8(w, h, &rgb)
    }
}

fn encode_png_into<W: std::io::Write>(w: W, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer.finish().map_err(|e| Error::Format(format!("png: {e}")))?;
    Ok(())
}

pub fn write_png_rgb8(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    encode_png_into(file, width, height, rgb)
}

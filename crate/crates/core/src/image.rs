//! RGB images shared by the encoders, the model input pipeline and GradCAM.
//!
//! Pixels are stored row-major with interleaved channels (`[r, g, b]` per
//! pixel), every value in `[0, 1]`. Two on-disk forms exist: 8-bit PNG for
//! inspection and the `CVIM` float tensor file for training input.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

pub type Rgb = [f32; 3];

pub const WHITE: Rgb = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{CHANNELS} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("image values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, color: Rgb) {
        let i = (row * self.width + col) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&color);
    }

    pub fn channel_value(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    /// Channel-planar copy (`[c][row][col]`), the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for p in 0..plane {
            for c in 0..CHANNELS {
                out[c * plane + p] = self.data[p * CHANNELS + c];
            }
        }
        out
    }

    /// Places images side by side, top-aligned, padding short ones with white.
    pub fn hstack(images: &[&Image]) -> Image {
        let height = images.iter().map(|im| im.height).max().unwrap_or(0);
        let width = images.iter().map(|im| im.width).sum();
        let mut out = Image::filled(height, width, WHITE);
        let mut left = 0;
        for im in images {
            for r in 0..im.height {
                for c in 0..im.width {
                    out.set_pixel(r, left + c, im.pixel(r, c));
                }
            }
            left += im.width;
        }
        out
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut bytes, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            let raw: Vec<u8> = self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            writer.write_image_data(&raw)?;
            writer.finish()?;
        }
        Ok(bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// `CVIM` tensor: magic, then `u32` height, width, channels (little-endian),
    /// then the interleaved `f32` data.
    pub fn to_cvim_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(b"CVIM");
        for dim in [self.height, self.width, CHANNELS] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_cvim_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            kind: "CVIM",
            message: message.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != b"CVIM" {
            return Err(bad("missing CVIM header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (h, w, c) = (dim(0) as usize, dim(1) as usize, dim(2) as usize);
        if c != CHANNELS {
            return Err(bad("only 3-channel images are supported"));
        }
        let body = &bytes[16..];
        if body.len() != h * w * c * 4 {
            return Err(bad("payload length does not match header"));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Image::from_data(h, w, data)
    }

    pub fn write_cvim(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        file.write_all(&self.to_cvim_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_cvim(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_cvim_bytes(&bytes)
    }
}

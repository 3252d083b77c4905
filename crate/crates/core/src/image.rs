//! RGB image buffer with 8-bit PNG and float32 NPY I/O.
//!
//! Pixel values are raw [0,1] doubles (no color management). PNG output
//! quantizes with round-half-up; NPY output is a standard version-1.0 header
//! with dtype `<f4` and shape (height, width, 3), so external tools can load
//! the lossless buffers directly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png error: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("unsupported png layout (need 8-bit RGB or RGBA)")]
    UnsupportedPng,
    #[error("bad npy header")]
    BadNpy,
    #[error("buffer size {got} does not match {width}x{height}x3")]
    SizeMismatch { got: usize, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB, length width*height*3.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() != width * height * 3 {
            return Err(ImageError::SizeMismatch { got: bytes.len(), width, height });
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = File::create(path)?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&self.to_rgb8())?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0u8; reader.output_buffer_size().ok_or(ImageError::UnsupportedPng)?];
        let info = reader.next_frame(&mut buf)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::UnsupportedPng);
        }
        let (w, h) = (info.width as usize, info.height as usize);
        match info.color_type {
            png::ColorType::Rgb => Image::from_rgb8(w, h, &buf[..w * h * 3]),
            png::ColorType::Rgba => {
                let rgb: Vec<u8> = buf[..w * h * 4]
                    .chunks_exact(4)
                    .flat_map(|px| [px[0], px[1], px[2]])
                    .collect();
                Image::from_rgb8(w, h, &rgb)
            }
            _ => Err(ImageError::UnsupportedPng),
        }
    }

    /// Writes a numpy v1.0 `.npy` file, dtype `<f4`, shape (H, W, 3).
    pub fn save_npy(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        let dict = format!(
            "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, 3), }}",
            self.height, self.width
        );
        // Pad so magic + length + header is a multiple of 64 bytes.
        let base = 10 + dict.len() + 1;
        let pad = (64 - base % 64) % 64;
        let header = format!("{dict}{}\n", " ".repeat(pad));
        w.write_all(b"\x93NUMPY\x01\x00")?;
        w.write_all(&(header.len() as u16).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_npy(path: &Path) -> Result<Self, ImageError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic[..6] != b"\x93NUMPY" {
            return Err(ImageError::BadNpy);
        }
        let mut len_bytes = [0u8; 2];
        r.read_exact(&mut len_bytes)?;
        let hlen = u16::from_le_bytes(len_bytes) as usize;
        let mut header = vec![0u8; hlen];
        r.read_exact(&mut header)?;
        let header = String::from_utf8_lossy(&header);
        if !header.contains("'<f4'") {
            return Err(ImageError::BadNpy);
        }
        let shape_part = header.split("'shape':").nth(1).ok_or(ImageError::BadNpy)?;
        let open = shape_part.find('(').ok_or(ImageError::BadNpy)?;
        let close = shape_part.find(')').ok_or(ImageError::BadNpy)?;
        let dims: Vec<usize> = shape_part[open + 1..close]
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect();
        if dims.len() != 3 || dims[2] != 3 {
            return Err(ImageError::BadNpy);
        }
        let (h, w) = (dims[0], dims[1]);
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != h * w * 3 * 4 {
            return Err(ImageError::SizeMismatch { got: raw.len() / 12, width: w, height: h });
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self { width: w, height: h, data })
    }
}

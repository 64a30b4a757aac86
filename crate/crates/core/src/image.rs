//! RGB images stored row-major as `H x W x 3` floats in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(height, width);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(height * width * 3, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Quantizes to 8 bits per channel with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Inverse of [`Image::to_u8`]; values are scaled by exactly `1/255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::shape(height * width * 3, bytes.len()));
        }
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self { height, width, data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let img_err = |e: png::EncodingError| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut writer = enc.write_header().map_err(img_err)?;
        writer.write_image_data(&self.to_u8()).map_err(img_err)?;
        writer.finish().map_err(img_err)
    }

    /// Loads an 8-bit RGB or RGBA PNG; alpha is dropped.
    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let img_err = |reason: String| Error::Image {
            path: path.to_path_buf(),
            reason,
        };
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| img_err(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| img_err("image too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(img_err(format!("unsupported bit depth {:?}", info.bit_depth)));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            other => return Err(img_err(format!("unsupported color type {other:?}"))),
        };
        Self::from_u8(h, w, &rgb)
    }
}

/// Packs images into a `[N, 3, 1, H, W]` tensor for the convolution stack.
pub fn batch_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Precondition("empty image batch".into()))?;
    let (h, w) = first.dims();
    let plane = h * w;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::shape((h, w), img.dims()));
        }
        let base = n * 3 * plane;
        for (p, px) in img.data.chunks(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = px[c];
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, 1, h, w], data)
}

/// Inverse of [`batch_to_tensor`] for a `[N, 3, 1, H, W]` tensor.
pub fn tensor_to_batch(t: &Tensor) -> Result<Vec<Image>> {
    let s = t.shape();
    if s.len() != 5 || s[1] != 3 || s[2] != 1 {
        return Err(Error::shape("[N, 3, 1, H, W]", s.to_vec()));
    }
    let (h, w) = (s[3], s[4]);
    let plane = h * w;
    Ok(t
        .data()
        .chunks(3 * plane)
        .map(|chw| {
            let mut img = Image::new(h, w);
            for p in 0..plane {
                for c in 0..3 {
                    img.data[p * 3 + c] = chw[c * plane + p];
                }
            }
            img
        })
        .collect())
}

//! Linear-radiometry image buffers and PNG preview export.

use std::path::Path;

use super::error::{Error, Result};
use super::math::{srgb_encode, Vec3};
use super::tensor::{tensor_read, tensor_write, Tensor};

/// Row-major H x W x C buffer of linear radiometric values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn zeros(height: usize, width: usize, channels: usize) -> ImageBuffer {
        ImageBuffer {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    pub fn get_rgb(&self, row: usize, col: usize) -> Vec3 {
        debug_assert!(self.channels >= 3);
        let i = self.index(row, col, 0);
        Vec3 {
            x: self.data[i],
            y: self.data[i + 1],
            z: self.data[i + 2],
        }
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, v: Vec3) {
        debug_assert!(self.channels >= 3);
        let i = self.index(row, col, 0);
        self.data[i] = v.x;
        self.data[i + 1] = v.y;
        self.data[i + 2] = v.z;
    }

    pub fn pixel_slice(&self, row: usize, col: usize) -> &[f64] {
        let i = self.index(row, col, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Store as a TNSR file (f32 payload, H x W x C).
    pub fn write_tnsr(&self, path: impl AsRef<Path>) -> Result<()> {
        let dims = [
            self.height as u32,
            self.width as u32,
            self.channels as u32,
        ];
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        tensor_write(path, &dims, &data)
    }

    pub fn read_tnsr(path: impl AsRef<Path>) -> Result<ImageBuffer> {
        let t = tensor_read(&path)?;
        ImageBuffer::from_tensor(&t).map_err(|mut e| {
            if let Error::ShapeMismatch { context, .. } = &mut e {
                *context = format!("{}", path.as_ref().display());
            }
            e
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<ImageBuffer> {
        if t.dims.len() != 3 {
            return Err(Error::ShapeMismatch {
                expected: "3 dims (H, W, C)".into(),
                got: format!("{:?}", t.dims),
                context: "image tensor".into(),
            });
        }
        Ok(ImageBuffer {
            height: t.dims[0] as usize,
            width: t.dims[1] as usize,
            channels: t.dims[2] as usize,
            data: t.data.iter().map(|&v| v as f64).collect(),
        })
    }

    /// 8-bit sRGB-encoded PNG preview. Grayscale buffers are replicated to RGB.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for row in 0..self.height {
            for col in 0..self.width {
                let rgb = if self.channels >= 3 {
                    self.get_rgb(row, col)
                } else {
                    Vec3::splat(self.get(row, col, 0))
                };
                let px = image::Rgb([
                    (srgb_encode(rgb.x) * 255.0).round() as u8,
                    (srgb_encode(rgb.y) * 255.0).round() as u8,
                    (srgb_encode(rgb.z) * 255.0).round() as u8,
                ]);
                out.put_pixel(col as u32, row as u32, px);
            }
        }
        out.save(path).map_err(|e| Error::Io {
            context: format!("writing {}", path.display()),
            source: std::io::Error::other(e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let mut img = ImageBuffer::zeros(2, 3, 3);
        img.set(1, 2, 0, 7.0);
        assert_eq!(img.data[(1 * 3 + 2) * 3], 7.0);
    }

    #[test]
    fn tnsr_roundtrip() {
        let mut img = ImageBuffer::zeros(4, 5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f64 * 0.125;
        }
        let path = std::env::temp_dir().join(format!("pir-img-{}.tnsr", std::process::id()));
        img.write_tnsr(&path).unwrap();
        let back = ImageBuffer::read_tnsr(&path).unwrap();
        assert!(img.same_dims(&back));
        assert_eq!(img.data, back.data);
    }
}

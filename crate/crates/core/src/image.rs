use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageSize;

/// Interleaved `f32` image with 1 or 3 channels, values nominally in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(Error::InvalidConfig(format!(
                "image buffer of {} values does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_raw(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f32).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width as u32, self.height as u32)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Rounded, clamped 8-bit copy of the pixels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`; single-channel images are copied.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// 3x3 box filter with edge clamping.
    pub fn box3(&self) -> Image {
        let (w, h, ch) = (self.width, self.height, self.channels);
        let mut out = Image::new(w, h, ch);
        for y in 0..h {
            let ys = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
            for x in 0..w {
                let xs = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
                for c in 0..ch {
                    let mut s = 0.0;
                    for &yy in &ys {
                        for &xx in &xs {
                            s += self.at(xx, yy, c);
                        }
                    }
                    out.set(x, y, c, s / 9.0);
                }
            }
        }
        out
    }

    /// Nearest-neighbour-free area resize by bilinear sampling at pixel centres.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + 0.5) * sx - 0.5;
                let v = (y as f64 + 0.5) * sy - 0.5;
                for c in 0..self.channels {
                    out.set(x, y, c, self.sample(u, v, c));
                }
            }
        }
        out
    }

    /// Halves resolution by 2x2 averaging (odd trailing rows/cols dropped).
    pub fn downsample2(&self) -> Image {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::new(w.max(1), h.max(1), self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let s = self.at(2 * x, 2 * y, c)
                        + self.at(2 * x + 1, 2 * y, c)
                        + self.at(2 * x, 2 * y + 1, c)
                        + self.at(2 * x + 1, 2 * y + 1, c);
                    out.set(x, y, c, s * 0.25);
                }
            }
        }
        out
    }

    /// Bilinear sample with edge clamping; pixel `(i, j)` sits at integer coordinates.
    #[inline]
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f32 {
        let (x0, y0, fx, fy) = self.cell(x, y);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.at(x0, y0, c);
        let b = self.at(x1, y0, c);
        let d = self.at(x0, y1, c);
        let e = self.at(x1, y1, c);
        let fx = fx as f32;
        let fy = fy as f32;
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy
    }

    /// Bilinear sample of channel `c` and its partial derivatives in x and y.
    #[inline]
    pub fn sample_grad(&self, x: f64, y: f64, c: usize) -> (f64, f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0, fx, fy) = self.cell(xc, yc);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.at(x0, y0, c) as f64;
        let b = self.at(x1, y0, c) as f64;
        let d = self.at(x0, y1, c) as f64;
        let e = self.at(x1, y1, c) as f64;
        let v = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy;
        // derivative is zero along an axis where the sample was clamped
        let gx = if x < 0.0 || x > (self.width - 1) as f64 {
            0.0
        } else {
            (b - a) * (1.0 - fy) + (e - d) * fy
        };
        let gy = if y < 0.0 || y > (self.height - 1) as f64 {
            0.0
        } else {
            (d - a) * (1.0 - fx) + (e - b) * fx
        };
        (v, gx, gy)
    }

    #[inline]
    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        // truncation is floor for the clamped, non-negative coordinates
        let x0 = (xc as usize).min(self.width.saturating_sub(2));
        let y0 = (yc as usize).min(self.height.saturating_sub(2));
        (x0, y0, xc - x0 as f64, yc - y0 as f64)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Image::from_u8(w, h, 1, g.as_raw()),
            other => Image::from_u8(w, h, 3, other.to_rgb8().as_raw()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color).map_err(
            |e| match e {
                image::ImageError::IoError(io) => Error::Io(io),
                other => Error::Decode {
                    path: path.to_path_buf(),
                    message: other.to_string(),
                },
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Reference,
    Target,
}

/// One decoded video frame of one view; `index` starts at 1.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub index: usize,
    pub view: View,
}

impl Frame {
    pub const MIN_SIDE: usize = 64;

    pub fn new(image: Image, index: usize, view: View) -> Result<Self> {
        if image.width() < Self::MIN_SIDE || image.height() < Self::MIN_SIDE {
            return Err(Error::InvalidConfig(format!(
                "frames must be at least {0}x{0}, got {1}x{2}",
                Self::MIN_SIDE,
                image.width(),
                image.height()
            )));
        }
        Ok(Self { image, index, view })
    }

    pub fn size(&self) -> ImageSize {
        self.image.size()
    }
}

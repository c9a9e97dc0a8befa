use alloc::vec::Vec;

use super::DirdError;

/// Smallest accepted image side, in pixels.
pub const MIN_IMAGE_SIDE: usize = 64;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DirdError> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(DirdError::ImageTooSmall {
                width,
                height,
                required: MIN_IMAGE_SIDE,
            });
        }
        if pixels.len() != width * height {
            return Err(DirdError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self, DirdError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// Real-valued working image.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear resample to `width × height` (pixel centres aligned).
    ///
    /// A same-size request copies the pixels unchanged.
    pub fn resampled(img: &GrayImage, width: usize, height: usize) -> Self {
        if img.width == width && img.height == height {
            return Self {
                width,
                height,
                data: img.pixels.iter().map(|&p| p as f64).collect(),
            };
        }
        let sx = img.width as f64 / width as f64;
        let sy = img.height as f64 / height as f64;
        let max_x = (img.width - 1) as f64;
        let max_y = (img.height - 1) as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(img.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(img.width - 1);
                let tx = fx - x0 as f64;
                let p = |xx: usize, yy: usize| img.get(xx, yy) as f64;
                let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                data.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        Self { width, height, data }
    }
}

/// Summed-area table with a zero guard row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    stride: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &FloatImage) -> Self {
        let stride = img.width + 1;
        let mut sums = alloc::vec![0.0; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row = 0.0;
            for x in 0..img.width {
                row += img.get(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.stride;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0] + self.sums[y0 * s + x0]
    }
}

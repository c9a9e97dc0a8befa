//! Illumination-robust Haar descriptor.
//!
//! For every sample pixel the filter bank is evaluated at a small set of
//! neighbouring offsets; each response vector is L2-normalized, the vectors
//! are summed, the sum is normalized again and the per-sample blocks are
//! concatenated. Zero-sum kernels remove any additive bias, and the
//! normalization removes any positive gain.

mod filters;
mod image;

use alloc::vec::Vec;

pub use filters::{default_filter_bank, HaarKernel, HaarShape, DEFAULT_SUPPORTS};
pub use image::{FloatImage, GrayImage, IntegralImage, MIN_IMAGE_SIDE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DirdError {
    #[error("image is {width}x{height}, at least {required}x{required} is required")]
    ImageTooSmall { width: usize, height: usize, required: usize },
    #[error("expected {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel ({x}, {y}) is too close to the border: a margin of {margin} px is required")]
    BorderTooClose { x: usize, y: usize, margin: usize },
    #[error("invalid descriptor configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("descriptor dimensions differ ({a} vs {b})")]
    DimensionMismatch { a: usize, b: usize },
    #[error("descriptor quantization modes differ")]
    ModeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Quantization {
    Bit,
    #[default]
    Byte,
}

impl Quantization {
    pub fn code(self) -> u8 {
        match self {
            Quantization::Bit => 0,
            Quantization::Byte => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Quantization::Bit),
            1 => Some(Quantization::Byte),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DirdConfig {
    /// Cell grid (columns, rows) of every kernel in the default bank.
    pub segment_grid: (usize, usize),
    /// Kernel table; empty means the default bank for `segment_grid`.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Vec::is_empty"))]
    pub filters: Vec<HaarKernel>,
    /// Sample pixels (columns, rows), spread uniformly over the interior.
    pub sample_grid: (usize, usize),
    /// Pixel offsets whose normalized responses are summed per sample.
    pub offsets: Vec<(i32, i32)>,
    pub quantization: Quantization,
    pub logistic_steepness: f64,
    /// Logistic midpoint in normalized-distance units.
    pub logistic_midpoint: f64,
    /// Images are resampled to this size before extraction.
    pub working_size: (usize, usize),
}

impl Default for DirdConfig {
    fn default() -> Self {
        let mut offsets = Vec::with_capacity(9);
        for dy in [-2, 0, 2] {
            for dx in [-2, 0, 2] {
                offsets.push((dx, dy));
            }
        }
        Self {
            segment_grid: (4, 4),
            filters: Vec::new(),
            sample_grid: (8, 8),
            offsets,
            quantization: Quantization::Byte,
            logistic_steepness: 10.0,
            logistic_midpoint: 0.5,
            working_size: (256, 256),
        }
    }
}

/// A validated configuration with the kernel table materialized.
#[derive(Debug, Clone)]
pub struct DirdExtractor {
    cfg: DirdConfig,
    kernels: Vec<HaarKernel>,
    support: (i64, i64, i64, i64),
    samples: Vec<(usize, usize)>,
}

impl DirdConfig {
    pub fn kernels(&self) -> Vec<HaarKernel> {
        if self.filters.is_empty() {
            default_filter_bank(self.segment_grid.0, self.segment_grid.1)
        } else {
            self.filters.clone()
        }
    }

    pub fn filter_count(&self) -> usize {
        if self.filters.is_empty() {
            HaarShape::ALL.len() * DEFAULT_SUPPORTS.len() * 3
        } else {
            self.filters.len()
        }
    }

    pub fn sample_count(&self) -> usize {
        self.sample_grid.0 * self.sample_grid.1
    }

    pub fn dimension(&self) -> usize {
        self.filter_count() * self.sample_count()
    }

    pub fn extractor(&self) -> Result<DirdExtractor, DirdError> {
        DirdExtractor::new(self.clone())
    }

    pub fn validate(&self) -> Result<(), DirdError> {
        self.extractor().map(|_| ())
    }
}

fn kernel_support(kernels: &[HaarKernel], offsets: &[(i32, i32)]) -> (i64, i64, i64, i64) {
    let (mut x0, mut y0, mut x1, mut y1) = (0i64, 0i64, 1i64, 1i64);
    for k in kernels {
        let (a, b, c, d) = k.extent();
        for &(ox, oy) in offsets {
            x0 = x0.min(a + ox as i64);
            y0 = y0.min(b + oy as i64);
            x1 = x1.max(c + ox as i64);
            y1 = y1.max(d + oy as i64);
        }
    }
    (x0, y0, x1, y1)
}

fn kernel_margin(kernels: &[HaarKernel]) -> (i64, i64, i64, i64) {
    kernel_support(kernels, &[(0, 0)])
}

impl DirdExtractor {
    pub fn new(cfg: DirdConfig) -> Result<Self, DirdError> {
        let (cols, rows) = cfg.segment_grid;
        if cfg.filters.is_empty() && (cols < 4 || rows < 4 || cols % 4 != 0 || rows % 4 != 0) {
            return Err(DirdError::InvalidConfig("segment grid must be a positive multiple of 4"));
        }
        let kernels = cfg.kernels();
        if !kernels.iter().all(HaarKernel::is_valid) {
            return Err(DirdError::InvalidConfig("every kernel must be a zero-sum ±1 cell pattern"));
        }
        if cfg.sample_count() == 0 || cfg.offsets.is_empty() {
            return Err(DirdError::InvalidConfig("sample grid and offset set must be nonempty"));
        }
        if !(cfg.logistic_steepness > 0.0 && cfg.logistic_midpoint > 0.0) {
            return Err(DirdError::InvalidConfig("logistic steepness and midpoint must be positive"));
        }
        let support = kernel_support(&kernels, &cfg.offsets);
        let (w, h) = cfg.working_size;
        let inset_x = (-support.0).max(support.2) as usize;
        let inset_y = (-support.1).max(support.3) as usize;
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE || w < 2 * inset_x + cfg.sample_grid.0 || h < 2 * inset_y + cfg.sample_grid.1 {
            return Err(DirdError::InvalidConfig("working size cannot hold the sample grid and filter support"));
        }
        let axis = |n: usize, len: usize, inset: usize| -> Vec<usize> {
            let span = len - 2 * inset;
            (0..n).map(|i| inset + ((2 * i + 1) * span) / (2 * n)).collect()
        };
        let xs = axis(cfg.sample_grid.0, w, inset_x);
        let ys = axis(cfg.sample_grid.1, h, inset_y);
        let mut samples = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                samples.push((x, y));
            }
        }
        Ok(Self {
            cfg,
            kernels,
            support,
            samples,
        })
    }

    pub fn config(&self) -> &DirdConfig {
        &self.cfg
    }

    pub fn kernels(&self) -> &[HaarKernel] {
        &self.kernels
    }

    /// Sample pixels in working-image coordinates, row-major.
    pub fn sample_points(&self) -> &[(usize, usize)] {
        &self.samples
    }

    pub fn dimension(&self) -> usize {
        self.kernels.len() * self.samples.len()
    }

    /// Raw (pre-quantization) descriptor.
    pub fn compute_raw(&self, img: &GrayImage) -> Vec<f64> {
        let (w, h) = self.cfg.working_size;
        let work = FloatImage::resampled(img, w, h);
        let ii = IntegralImage::new(&work);
        let n = self.kernels.len();
        let mut out = Vec::with_capacity(self.dimension());
        let mut aux = alloc::vec![0.0; n];
        let mut block = alloc::vec![0.0; n];
        for &(sx, sy) in &self.samples {
            block.iter_mut().for_each(|v| *v = 0.0);
            for &(ox, oy) in &self.cfg.offsets {
                let x = (sx as i64 + ox as i64) as usize;
                let y = (sy as i64 + oy as i64) as usize;
                for (slot, k) in aux.iter_mut().zip(&self.kernels) {
                    *slot = k.respond(&ii, x, y);
                }
                l2_normalize(&mut aux);
                for (b, a) in block.iter_mut().zip(&aux) {
                    *b += a;
                }
            }
            l2_normalize(&mut block);
            out.extend_from_slice(&block);
        }
        out
    }

    pub fn extract(&self, img: &GrayImage) -> DirdDescriptor {
        DirdDescriptor::from_raw(self.compute_raw(img), self.cfg.quantization)
    }

    /// Largest offset/kernel reach in pixels: `[x0, x1) × [y0, y1)` around a sample.
    pub fn support(&self) -> (i64, i64, i64, i64) {
        self.support
    }
}

/// Normalize in place; the zero vector stays zero.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Auxiliary vector of kernel responses at one pixel of `img` (native resolution).
pub fn filter_bank_response(img: &GrayImage, pixel: (usize, usize), cfg: &DirdConfig) -> Result<Vec<f64>, DirdError> {
    let kernels = cfg.kernels();
    let (x0, y0, x1, y1) = kernel_margin(&kernels);
    let (x, y) = (pixel.0 as i64, pixel.1 as i64);
    if x + x0 < 0 || y + y0 < 0 || x + x1 > img.width() as i64 || y + y1 > img.height() as i64 {
        let margin = (-x0).max(-y0).max(x1).max(y1) as usize;
        return Err(DirdError::BorderTooClose {
            x: pixel.0,
            y: pixel.1,
            margin,
        });
    }
    let work = FloatImage::resampled(img, img.width(), img.height());
    let ii = IntegralImage::new(&work);
    Ok(kernels.iter().map(|k| k.respond(&ii, pixel.0, pixel.1)).collect())
}

/// Raw descriptor of `img` under `cfg`.
pub fn compute_descriptor(img: &GrayImage, cfg: &DirdConfig) -> Result<Vec<f64>, DirdError> {
    Ok(cfg.extractor()?.compute_raw(img))
}

/// Byte mode: `clamp(round((v + 1) / 2 · 255), 0, 255) + 1`; bit mode: `v > 0`.
pub fn quantize_value(v: f64, mode: Quantization) -> u16 {
    match mode {
        Quantization::Byte => (libm::round((v + 1.0) * 0.5 * 255.0).clamp(0.0, 255.0) as u16) + 1,
        Quantization::Bit => u16::from(v > 0.0),
    }
}

pub fn quantize(raw: &[f64], mode: Quantization) -> Vec<u16> {
    raw.iter().map(|&v| quantize_value(v, mode)).collect()
}

/// Descriptor with its quantization; `raw` is absent for cache-loaded descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DirdDescriptor {
    pub raw: Option<Vec<f64>>,
    pub quantized: Vec<u16>,
    pub mode: Quantization,
}

impl DirdDescriptor {
    pub fn from_raw(raw: Vec<f64>, mode: Quantization) -> Self {
        let quantized = quantize(&raw, mode);
        Self {
            raw: Some(raw),
            quantized,
            mode,
        }
    }

    pub fn from_quantized(quantized: Vec<u16>, mode: Quantization) -> Self {
        Self {
            raw: None,
            quantized,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.quantized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantized.is_empty()
    }

    /// Approximate raw values recovered from the quantization. Bits map to
    /// `±1/√block` so a fully quantized block keeps unit norm.
    pub fn dequantized(&self, block: usize) -> Vec<f64> {
        let f = dequantizer(self, block);
        self.quantized.iter().map(|&q| f(q)).collect()
    }
}

/// Euclidean distance on raw vectors, or on dequantized values when either
/// side lacks its raw part.
pub fn descriptor_distance(a: &DirdDescriptor, b: &DirdDescriptor, block: usize) -> Result<f64, DirdError> {
    if a.len() != b.len() {
        return Err(DirdError::DimensionMismatch { a: a.len(), b: b.len() });
    }
    if a.mode != b.mode {
        return Err(DirdError::ModeMismatch);
    }
    let sq = match (&a.raw, &b.raw) {
        (Some(x), Some(y)) => squared_distance(x, y),
        _ => {
            let (da, db) = (dequantizer(a, block), dequantizer(b, block));
            a.quantized
                .iter()
                .zip(&b.quantized)
                .map(|(&x, &y)| {
                    let d = da(x) - db(y);
                    d * d
                })
                .sum()
        }
    };
    Ok(libm::sqrt(sq))
}

fn dequantizer(d: &DirdDescriptor, block: usize) -> impl Fn(u16) -> f64 {
    let (mode, s) = (d.mode, 1.0 / libm::sqrt(block.max(1) as f64));
    move |q| match mode {
        Quantization::Byte => (q as f64 - 1.0) / 255.0 * 2.0 - 1.0,
        Quantization::Bit if q > 0 => s,
        Quantization::Bit => -s,
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Logistic similarity of a descriptor distance.
///
/// The distance is divided by the square root of the number of
/// normalized blocks, which maps raw descriptors to `[0, 2]`.
pub fn similarity(dist: f64, cfg: &DirdConfig) -> f64 {
    let normalized = dist / libm::sqrt(cfg.sample_count().max(1) as f64);
    logistic(normalized, cfg.logistic_steepness, cfg.logistic_midpoint)
}

pub fn logistic(x: f64, steepness: f64, midpoint: f64) -> f64 {
    1.0 / (1.0 + libm::exp(steepness * (x - midpoint)))
}

//! The Haar filter bank.
//!
//! Every kernel is a grid of equally sized cells, each weighted +1 or −1, with
//! the weights summing to zero. The default bank crosses six shapes with three
//! support sizes and three placements relative to the evaluated pixel:
//!
//! ```text
//!  horizontal edge   vertical edge   diagonal        horizontal line   vertical line   center-surround
//!  + + - -           + + + +         + + - -         - - - -           - + + -         + - - +
//!  + + - -           + + + +         + + - -         + + + +           - + + -         - + + -
//!  + + - -           - - - -         - - + +         + + + +           - + + -         - + + -
//!  + + - -           - - - -         - - + +         - - - -           - + + -         + - - +
//! ```

use alloc::vec::Vec;

use super::image::IntegralImage;

/// Kernel shapes of the default bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HaarShape {
    HorizontalEdge,
    VerticalEdge,
    Diagonal,
    HorizontalLine,
    VerticalLine,
    CenterSurround,
}

impl HaarShape {
    pub const ALL: [HaarShape; 6] = [
        HaarShape::HorizontalEdge,
        HaarShape::VerticalEdge,
        HaarShape::Diagonal,
        HaarShape::HorizontalLine,
        HaarShape::VerticalLine,
        HaarShape::CenterSurround,
    ];

    /// Weight of cell `(cx, cy)` on a `cols × rows` grid (both even).
    pub fn weight(self, cx: usize, cy: usize, cols: usize, rows: usize) -> i8 {
        let left = cx < cols / 2;
        let top = cy < rows / 2;
        let inner_col = cx >= cols / 4 && cx < cols - cols / 4;
        let inner_row = cy >= rows / 4 && cy < rows - rows / 4;
        let positive = match self {
            HaarShape::HorizontalEdge => left,
            HaarShape::VerticalEdge => top,
            HaarShape::Diagonal => left == top,
            HaarShape::HorizontalLine => inner_row,
            HaarShape::VerticalLine => inner_col,
            HaarShape::CenterSurround => inner_col == inner_row,
        };
        if positive {
            1
        } else {
            -1
        }
    }

    /// True when the kernel compares left against right, i.e. it responds to
    /// a vertical step edge.
    pub fn is_horizontal_contrast(self) -> bool {
        matches!(self, HaarShape::HorizontalEdge | HaarShape::VerticalLine)
    }
}

/// One kernel: a ±1 cell pattern, its cell size and its centre offset.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HaarKernel {
    /// Row-major cell weights, `rows × cols` entries of ±1.
    pub pattern: Vec<i8>,
    pub cols: usize,
    pub rows: usize,
    /// Cell side length in pixels.
    pub cell: usize,
    /// Offset of the kernel centre from the evaluated pixel.
    pub offset: (i32, i32),
}

impl HaarKernel {
    pub fn from_shape(shape: HaarShape, cols: usize, rows: usize, cell: usize, offset: (i32, i32)) -> Self {
        let mut pattern = Vec::with_capacity(cols * rows);
        for cy in 0..rows {
            for cx in 0..cols {
                pattern.push(shape.weight(cx, cy, cols, rows));
            }
        }
        Self {
            pattern,
            cols,
            rows,
            cell,
            offset,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cell > 0
            && self.cols > 0
            && self.rows > 0
            && self.pattern.len() == self.cols * self.rows
            && self.pattern.iter().all(|&w| w == 1 || w == -1)
            && self.pattern.iter().map(|&w| w as i32).sum::<i32>() == 0
    }

    /// Pixel extent relative to the evaluated pixel: `[x0, x1) × [y0, y1)`.
    pub fn extent(&self) -> (i64, i64, i64, i64) {
        let w = (self.cols * self.cell) as i64;
        let h = (self.rows * self.cell) as i64;
        let x0 = self.offset.0 as i64 - w / 2;
        let y0 = self.offset.1 as i64 - h / 2;
        (x0, y0, x0 + w, y0 + h)
    }

    /// Signed response at `(x, y)`; the caller guarantees the support fits.
    pub fn respond(&self, ii: &IntegralImage, x: usize, y: usize) -> f64 {
        let (ex0, ey0, _, _) = self.extent();
        let left = (x as i64 + ex0) as usize;
        let top = (y as i64 + ey0) as usize;
        let mut acc = 0.0;
        for cy in 0..self.rows {
            let y0 = top + cy * self.cell;
            for cx in 0..self.cols {
                let x0 = left + cx * self.cell;
                let s = ii.rect_sum(x0, y0, x0 + self.cell, y0 + self.cell);
                if self.pattern[cy * self.cols + cx] > 0 {
                    acc += s;
                } else {
                    acc -= s;
                }
            }
        }
        acc
    }
}

/// Kernel support sizes of the default bank, in pixels.
pub const DEFAULT_SUPPORTS: [usize; 3] = [8, 16, 32];

/// The 54-kernel default bank: shape-major, then support size, then
/// placement (centred, shifted up-left by a quarter support, shifted
/// down-right by a quarter support).
pub fn default_filter_bank(cols: usize, rows: usize) -> Vec<HaarKernel> {
    let mut bank = Vec::with_capacity(HaarShape::ALL.len() * DEFAULT_SUPPORTS.len() * 3);
    for shape in HaarShape::ALL {
        for support in DEFAULT_SUPPORTS {
            let cell = (support / cols.max(1)).max(1);
            let q = (support / 4) as i32;
            for offset in [(0, 0), (-q, -q), (q, q)] {
                bank.push(HaarKernel::from_shape(shape, cols, rows, cell, offset));
            }
        }
    }
    bank
}

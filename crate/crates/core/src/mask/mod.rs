//! Binary pixel masks and the geometric primitives built on them.
//!
//! [`BinaryMask`] stores pixels row-major. [`RleMask`] is the COCO
//! uncompressed run-length form, which scans column-major and always starts
//! with a (possibly empty) run of zeros.

mod components;
mod morphology;
mod rle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use components::{connected_components, Components};
pub use morphology::{dilate, erode, open, DEFAULT_RADIUS};
pub use rle::{rle_decode, rle_encode, RleJson, RleMask};

use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("malformed RLE: counts sum to {actual}, expected {expected}")]
    MalformedRle { expected: u64, actual: u64 },
    #[error("malformed RLE: zero-length run at position {index}")]
    ZeroRun { index: usize },
    #[error("dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimensionMismatch {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },
    #[error("bit buffer holds {actual} pixels, expected {expected}")]
    BitsLength { expected: usize, actual: usize },
    #[error("invalid mask dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },
    #[error("box {bbox:?} does not fit in a {height}x{width} frame")]
    InvalidBox {
        bbox: BBox,
        height: usize,
        width: usize,
    },
}

/// Row-major boolean pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(height: usize, width: usize) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            bits: vec![false; height * width],
        })
    }

    /// All-one mask, the "entire image" correction.
    pub fn full(height: usize, width: usize) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            bits: vec![true; height * width],
        })
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        if bits.len() != height * width {
            return Err(MaskError::BitsLength {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Builds a mask from a closure over `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Ok(Self {
            height,
            width,
            bits,
        })
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

    pub fn pixel_count(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Area of the mask relative to the whole frame.
    pub fn area_ratio(&self) -> f64 {
        self.area() as f64 / self.bits.len() as f64
    }

    pub fn invert(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Pixel-wise AND. Dimensions must agree.
    pub fn and(&self, other: &Self) -> Result<Self, MaskError> {
        self.check_same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// Index of the first set pixel in column-major scan order, if any.
    pub fn first_set_column_major(&self) -> Option<usize> {
        for c in 0..self.width {
            for r in 0..self.height {
                if self.get(r, c) {
                    return Some(c * self.height + r);
                }
            }
        }
        None
    }

    /// Tight bounding box around the set pixels.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut min_r = usize::MAX;
        let mut min_c = usize::MAX;
        let mut max_r = 0;
        let mut max_c = 0;
        let mut any = false;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    any = true;
                    min_r = min_r.min(r);
                    max_r = max_r.max(r);
                    min_c = min_c.min(c);
                    max_c = max_c.max(c);
                }
            }
        }
        any.then(|| BBox {
            x: min_c as u32,
            y: min_r as u32,
            w: (max_c - min_c + 1) as u32,
            h: (max_r - min_r + 1) as u32,
        })
    }

    pub(crate) fn check_same_dims(&self, other: &Self) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }
}

fn check_dims(height: usize, width: usize) -> Result<(), MaskError> {
    if height == 0 || width == 0 {
        return Err(MaskError::InvalidDimensions { height, width });
    }
    Ok(())
}

/// Axis-aligned box in pixel units. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Checks `w, h >= 1` and that the box lies inside a `height x width` frame.
    pub fn validate(&self, height: usize, width: usize) -> Result<(), MaskError> {
        let fits = self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64;
        if fits {
            Ok(())
        } else {
            Err(MaskError::InvalidBox {
                bbox: *self,
                height,
                width,
            })
        }
    }

    fn rows(&self) -> std::ops::Range<usize> {
        self.y as usize..(self.y + self.h) as usize
    }

    fn cols(&self) -> std::ops::Range<usize> {
        self.x as usize..(self.x + self.w) as usize
    }
}

/// Intersection over union; `1.0` when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    a.check_same_dims(b)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pairwise IOU matrix over a list of equally sized masks.
pub fn iou_matrix(masks: &[BinaryMask]) -> Result<Vec<Vec<f64>>, MaskError> {
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.check_same_dims(m)?;
        }
    }
    let rows = par::map(masks, |a| {
        masks
            .iter()
            .map(|b| iou(a, b).expect("dimensions checked"))
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

/// Rasterizes a filled box into a `height x width` mask.
pub fn box_to_mask(bbox: &BBox, height: usize, width: usize) -> Result<BinaryMask, MaskError> {
    bbox.validate(height, width)?;
    let mut mask = BinaryMask::new(height, width)?;
    for r in bbox.rows() {
        for c in bbox.cols() {
            mask.set(r, c, true);
        }
    }
    Ok(mask)
}

/// Number of set pixels of `mask` inside `bbox`.
pub fn intersect_box_mask(bbox: &BBox, mask: &BinaryMask) -> Result<u64, MaskError> {
    bbox.validate(mask.height, mask.width)?;
    let mut n = 0u64;
    for r in bbox.rows() {
        let row = &mask.bits[r * mask.width..(r + 1) * mask.width];
        n += row[bbox.cols()].iter().filter(|&&b| b).count() as u64;
    }
    Ok(n)
}

/// Keeps only the pixels of `mask` inside `bbox`.
pub fn clip_to_box(mask: &BinaryMask, bbox: &BBox) -> Result<BinaryMask, MaskError> {
    bbox.validate(mask.height, mask.width)?;
    let mut out = BinaryMask::new(mask.height, mask.width)?;
    for r in bbox.rows() {
        for c in bbox.cols() {
            if mask.get(r, c) {
                out.set(r, c, true);
            }
        }
    }
    Ok(out)
}

/// Fraction of the frame covered by the union of `boxes`.
pub fn box_union_coverage(boxes: &[BBox], height: usize, width: usize) -> Result<f64, MaskError> {
    let mut covered = BinaryMask::new(height, width)?;
    for b in boxes {
        b.validate(height, width)?;
        for r in b.rows() {
            for c in b.cols() {
                covered.set(r, c, true);
            }
        }
    }
    Ok(covered.area_ratio())
}

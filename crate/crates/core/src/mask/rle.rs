use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError};

/// COCO uncompressed RLE: column-major runs, alternating zeros and ones,
/// starting with zeros.
///
/// JSON form is `{"size": [h, w], "counts": [..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleJson", into = "RleJson")]
pub struct RleMask {
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

/// Unvalidated wire form of [`RleMask`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleJson {
    pub counts: Vec<u32>,
    pub size: [usize; 2],
}

impl TryFrom<RleJson> for RleMask {
    type Error = MaskError;

    fn try_from(raw: RleJson) -> Result<Self, Self::Error> {
        RleMask::new(raw.size[0], raw.size[1], raw.counts)
    }
}

impl From<RleMask> for RleJson {
    fn from(rle: RleMask) -> Self {
        RleJson {
            counts: rle.counts,
            size: [rle.height, rle.width],
        }
    }
}

impl RleMask {
    /// Validates the run list against the frame size.
    pub fn new(height: usize, width: usize, counts: Vec<u32>) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::InvalidDimensions { height, width });
        }
        let expected = height as u64 * width as u64;
        let actual: u64 = counts.iter().map(|&c| c as u64).sum();
        if actual != expected {
            return Err(MaskError::MalformedRle { expected, actual });
        }
        if let Some(index) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::ZeroRun { index: index + 1 });
        }
        Ok(Self {
            height,
            width,
            counts,
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

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground area, read straight off the odd runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn area_ratio(&self) -> f64 {
        self.area() as f64 / (self.height as f64 * self.width as f64)
    }

    pub fn decode(&self) -> BinaryMask {
        rle_decode(self)
    }

    pub fn to_json(&self) -> RleJson {
        self.clone().into()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let v = mask.get(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        height: h,
        width: w,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> BinaryMask {
    let (h, w) = rle.dims();
    let mut bits = vec![false; h * w];
    let mut pos = 0usize;
    let mut value = false;
    for &run in &rle.counts {
        if value {
            for idx in pos..pos + run as usize {
                // column-major index -> row-major slot
                let (c, r) = (idx / h, idx % h);
                bits[r * w + c] = true;
            }
        }
        pos += run as usize;
        value = !value;
    }
    BinaryMask::from_bits(h, w, bits).expect("validated RLE")
}

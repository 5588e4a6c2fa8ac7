//! Binary erosion and dilation with a square `(2r+1) x (2r+1)` element.
//!
//! Both run as two separable 1-D passes over sliding-window counts, so the
//! cost is independent of the radius. Pixels outside the frame count as zero.

use super::BinaryMask;

/// 3x3 structuring element.
pub const DEFAULT_RADIUS: usize = 1;

#[derive(Clone, Copy)]
enum Op {
    Erode,
    Dilate,
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    separable(mask, radius, Op::Erode)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    separable(mask, radius, Op::Dilate)
}

/// Erosion followed by dilation (morphological opening).
pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

fn separable(mask: &BinaryMask, radius: usize, op: Op) -> BinaryMask {
    let (h, w) = mask.dims();
    let src = mask.bits();
    let mut tmp = vec![false; h * w];
    for r in 0..h {
        window_pass(&src[r * w..(r + 1) * w], &mut tmp[r * w..(r + 1) * w], radius, op);
    }

    let mut out = vec![false; h * w];
    let mut col_in = vec![false; h];
    let mut col_out = vec![false; h];
    for c in 0..w {
        for r in 0..h {
            col_in[r] = tmp[r * w + c];
        }
        window_pass(&col_in, &mut col_out, radius, op);
        for r in 0..h {
            out[r * w + c] = col_out[r];
        }
    }
    BinaryMask::from_bits(h, w, out).expect("same dims")
}

/// 1-D min (erode) or max (dilate) over `[i - r, i + r]` with zero padding.
fn window_pass(line: &[bool], out: &mut [bool], radius: usize, op: Op) {
    let n = line.len();
    let full = 2 * radius + 1;
    // set pixels inside the current window, maintained incrementally
    let mut ones = line[..radius.min(n)].iter().filter(|&&b| b).count();
    for i in 0..n {
        let enter = i + radius;
        if enter < n && line[enter] {
            ones += 1;
        }
        if i > radius && line[i - radius - 1] {
            ones -= 1;
        }
        out[i] = match op {
            Op::Dilate => ones > 0,
            // the padded window always has `full` slots; any slot off the line is zero
            Op::Erode => ones == full,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(mask: &BinaryMask, radius: usize, erode: bool) -> BinaryMask {
        let (h, w) = mask.dims();
        let r = radius as isize;
        BinaryMask::from_fn(h, w, |row, col| {
            let mut all = true;
            let mut any = false;
            for dr in -r..=r {
                for dc in -r..=r {
                    let (y, x) = (row as isize + dr, col as isize + dc);
                    let v = y >= 0
                        && x >= 0
                        && (y as usize) < h
                        && (x as usize) < w
                        && mask.get(y as usize, x as usize);
                    all &= v;
                    any |= v;
                }
            }
            if erode {
                all
            } else {
                any
            }
        })
        .unwrap()
    }

    #[test]
    fn single_pixel_erodes_away() {
        let mut m = BinaryMask::new(5, 5).unwrap();
        m.set(2, 2, true);
        assert!(erode(&m, 1).is_empty());
    }

    #[test]
    fn center_pixel_dilates_to_block() {
        let mut m = BinaryMask::new(5, 5).unwrap();
        m.set(2, 2, true);
        let d = dilate(&m, 1);
        let expected = BinaryMask::from_fn(5, 5, |r, c| (1..=3).contains(&r) && (1..=3).contains(&c)).unwrap();
        assert_eq!(d, expected);
        assert_eq!(d, naive(&m, 1, false));
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = BinaryMask::from_fn(4, 6, |r, c| (r + c) % 3 == 0).unwrap();
        assert_eq!(erode(&m, 0), m);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn full_mask_erodes_at_border() {
        let m = BinaryMask::full(5, 5).unwrap();
        let e = erode(&m, 1);
        assert_eq!(e.area(), 9);
        assert!(!e.get(0, 0) && e.get(1, 1));
    }

    #[test]
    fn radius_larger_than_frame() {
        let m = BinaryMask::from_fn(3, 4, |r, c| r == 1 && c == 2).unwrap();
        assert_eq!(dilate(&m, 10), BinaryMask::full(3, 4).unwrap());
        assert!(erode(&BinaryMask::full(3, 4).unwrap(), 10).is_empty());
        assert_eq!(erode(&m, 7), naive(&m, 7, true));
    }

    #[test]
    fn matches_naive_on_patterns() {
        for seed in 0..40u64 {
            let (h, w) = (1 + (seed as usize * 7) % 13, 1 + (seed as usize * 5) % 11);
            let m = BinaryMask::from_fn(h, w, |r, c| {
                ((r as u64 * 31 + c as u64 * 17 + seed * 13) % 7) < 4
            })
            .unwrap();
            for radius in 0..4 {
                assert_eq!(erode(&m, radius), naive(&m, radius, true), "erode seed {seed} r {radius}");
                assert_eq!(dilate(&m, radius), naive(&m, radius, false), "dilate seed {seed} r {radius}");
            }
        }
    }
}

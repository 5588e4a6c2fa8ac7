use super::BinaryMask;

/// 4-connected component labelling of the set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub count: usize,
    /// Row-major labels; `0` is background, components are `1..=count`
    /// numbered in order of their first pixel in row-major scan.
    pub labels: Vec<u32>,
}

pub fn connected_components(mask: &BinaryMask) -> Components {
    let (h, w) = mask.dims();
    let bits = mask.bits();
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / w, idx % w);
            let mut visit = |n: usize| {
                if bits[n] && labels[n] == 0 {
                    labels[n] = next;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
        }
    }
    Components {
        count: next as usize,
        labels,
    }
}

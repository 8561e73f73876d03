//! Dense kernels for 3x3 same-padded convolution (via im2col) and 2x2 max
//! pooling fused with ReLU.

use super::Scalar;

/// Unfolds a `channels x height x width` plane stack into a
/// `(channels * 9) x (height * width)` matrix for a 3x3 kernel with one pixel
/// of zero padding.
pub(crate) fn im2col<F: Scalar>(input: &[F], channels: usize, height: usize, width: usize, cols: &mut [F]) {
    let hw = height * width;
    debug_assert_eq!(input.len(), channels * hw);
    debug_assert_eq!(cols.len(), channels * 9 * hw);
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                let x_lo = if kx == 0 { 1 } else { 0 };
                let x_hi = if kx == 2 { width - 1 } else { width };
                for y in 0..height {
                    let dst = &mut row[y * width..(y + 1) * width];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * width..(sy as usize + 1) * width];
                    if x_lo == 1 {
                        dst[0] = F::zero();
                    }
                    if x_hi == width - 1 {
                        dst[width - 1] = F::zero();
                    }
                    let off = kx as isize - 1;
                    for x in x_lo..x_hi {
                        dst[x] = src[(x as isize + off) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub(crate) fn col2im<F: Scalar>(cols: &[F], channels: usize, height: usize, width: usize, out: &mut [F]) {
    let hw = height * width;
    debug_assert_eq!(out.len(), channels * hw);
    out.fill(F::zero());
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                let x_lo = if kx == 0 { 1 } else { 0 };
                let x_hi = if kx == 2 { width - 1 } else { width };
                let off = kx as isize - 1;
                for y in 0..height {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let src = &row[y * width..(y + 1) * width];
                    let dst = &mut plane[sy as usize * width..(sy as usize + 1) * width];
                    for (x, &v) in src.iter().enumerate().take(x_hi).skip(x_lo) {
                        let sx = (x as isize + off) as usize;
                        dst[sx] = dst[sx] + v;
                    }
                }
            }
        }
    }
}

/// `relu(maxpool2x2(x))`, recording the flat argmax of each window. Since ReLU
/// is monotone this equals pooling after the activation.
pub(crate) fn relu_pool<F: Scalar>(input: &[F], channels: usize, height: usize, width: usize, pooled: &mut [F], argmax: &mut [u32]) {
    let (ph, pw) = (height / 2, width / 2);
    let hw = height * width;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for py in 0..ph {
            for px in 0..pw {
                let base = (2 * py) * width + 2 * px;
                // Selecting through `bool as usize` keeps this branch-free;
                // on real activations the comparisons are unpredictable.
                let mut best = base;
                for idx in [base + 1, base + width, base + width + 1] {
                    let take = (plane[idx] > plane[best]) as usize;
                    best = take * idx + (1 - take) * best;
                }
                let o = c * ph * pw + py * pw + px;
                let v = plane[best];
                pooled[o] = if v > F::zero() { v } else { F::zero() };
                argmax[o] = (c * hw + best) as u32;
            }
        }
    }
}

/// Routes pooled gradients to their window maxima, gated by the ReLU.
pub(crate) fn relu_pool_backward<F: Scalar>(d_pooled: &[F], pooled: &[F], argmax: &[u32], d_input: &mut [F]) {
    d_input.fill(F::zero());
    for ((&g, &v), &idx) in d_pooled.iter().zip(pooled).zip(argmax) {
        if v > F::zero() {
            d_input[idx as usize] = g;
        }
    }
}

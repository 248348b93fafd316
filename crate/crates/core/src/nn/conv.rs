//! Dense kernels for 2-D convolution and pooling on NCHW tensors.

use ndarray::{Array2, Array4, ArrayView4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 4],
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let [n, c, h, w] = input;
        let (kh, kw) = kernel;
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(ConvGeom {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds every receptive field into a row: `(n·oh·ow) × (c·kh·kw)`.
pub(crate) fn im2col(x: &ArrayView4<f64>, g: &ConvGeom) -> Array2<f64> {
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::<f64>::zeros((g.rows(), g.patch()));
    let dst = cols.as_slice_mut().expect("fresh array");
    let patch = g.patch();
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * patch;
                for c in 0..g.c {
                    let plane = (n * g.c + c) * g.h * g.w;
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = plane + iy as usize * g.w;
                        let col = row + (c * g.kh + ky) * g.kw;
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[col + kx] = src[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(cols: &Array2<f64>, g: &ConvGeom) -> Array4<f64> {
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((g.n, g.c, g.h, g.w));
    let dst = out.as_slice_mut().expect("fresh array");
    let patch = g.patch();
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * patch;
                for c in 0..g.c {
                    let plane = (n * g.c + c) * g.h * g.w;
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = plane + iy as usize * g.w;
                        let col = row + (c * g.kh + ky) * g.kw;
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ix as usize] += src[col + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Max pooling; returns the pooled map and the flat input index of every
/// selected maximum.
pub(crate) fn max_pool(x: &ArrayView4<f64>, g: &ConvGeom) -> (Array4<f64>, Vec<usize>) {
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((g.n, g.c, g.oh, g.ow));
    let mut argmax = Vec::with_capacity(out.len());
    let dst = out.as_slice_mut().expect("fresh array");
    let mut o = 0;
    for plane_idx in 0..g.n * g.c {
        let plane = plane_idx * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let idx = plane + iy as usize * g.w + ix as usize;
                        if src[idx] > best || best_idx == usize::MAX {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                dst[o] = best;
                argmax.push(best_idx);
                o += 1;
            }
        }
    }
    (out, argmax)
}

/// Average pooling with zero padding counted in the divisor.
pub(crate) fn avg_pool(x: &ArrayView4<f64>, g: &ConvGeom) -> Array4<f64> {
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((g.n, g.c, g.oh, g.ow));
    let dst = out.as_slice_mut().expect("fresh array");
    let area = (g.kh * g.kw) as f64;
    let mut o = 0;
    for plane_idx in 0..g.n * g.c {
        let plane = plane_idx * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = 0.0;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            acc += src[plane + iy as usize * g.w + ix as usize];
                        }
                    }
                }
                dst[o] = acc / area;
                o += 1;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(grad: &ArrayView4<f64>, g: &ConvGeom) -> Array4<f64> {
    let grad = grad.as_standard_layout();
    let src = grad.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((g.n, g.c, g.h, g.w));
    let dst = out.as_slice_mut().expect("fresh array");
    let area = (g.kh * g.kw) as f64;
    let mut o = 0;
    for plane_idx in 0..g.n * g.c {
        let plane = plane_idx * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let share = src[o] / area;
                o += 1;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[plane + iy as usize * g.w + ix as usize] += share;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Bin edges of adaptive average pooling: `[floor(i·n/s), ceil((i+1)·n/s))`.
pub(crate) fn adaptive_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| {
            let start = i * len / out;
            let end = ((i + 1) * len).div_ceil(out);
            (start, end.max(start + 1))
        })
        .collect()
}

pub(crate) fn adaptive_avg_pool(x: &ArrayView4<f64>, out_h: usize, out_w: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let rows = adaptive_bins(h, out_h);
    let cols = adaptive_bins(w, out_w);
    let mut out = Array4::<f64>::zeros((n, c, out_h, out_w));
    for b in 0..n {
        for ch in 0..c {
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            acc += x[[b, ch, y, xx]];
                        }
                    }
                    out[[b, ch, i, j]] = acc / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }
    }
    out
}

pub(crate) fn adaptive_avg_pool_backward(
    grad: &ArrayView4<f64>,
    in_h: usize,
    in_w: usize,
) -> Array4<f64> {
    let (n, c, out_h, out_w) = grad.dim();
    let rows = adaptive_bins(in_h, out_h);
    let cols = adaptive_bins(in_w, out_w);
    let mut out = Array4::<f64>::zeros((n, c, in_h, in_w));
    for b in 0..n {
        for ch in 0..c {
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let share = grad[[b, ch, i, j]] / ((r1 - r0) * (c1 - c0)) as f64;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            out[[b, ch, y, xx]] += share;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn im2col_identity_kernel_reproduces_input() {
        let x = Array::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (i * 3 + j) as f64);
        let g = ConvGeom::new([1, 1, 3, 3], (1, 1), 1, 0).unwrap();
        let cols = im2col(&x.view(), &g);
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.column(0).to_vec(), (0..9).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new([2, 2, 5, 4], (3, 3), 2, 1).unwrap();
        let x = Array::from_shape_fn((2, 2, 5, 4), |(a, b, c, d)| {
            ((a * 7 + b * 5 + c * 3 + d) as f64).sin()
        });
        let y = Array::from_shape_fn((g.rows(), g.patch()), |(i, j)| ((i * 13 + j) as f64).cos());
        let lhs = (&im2col(&x.view(), &g) * &y).sum();
        let rhs = (&x * &col2im(&y, &g)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn adaptive_bins_cover_input() {
        assert_eq!(adaptive_bins(4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(adaptive_bins(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
        // upsampling duplicates cells
        assert_eq!(adaptive_bins(2, 4), vec![(0, 1), (0, 1), (1, 2), (1, 2)]);
    }
}

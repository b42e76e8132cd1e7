//! Raw numeric kernels behind the graph operations.
//!
//! Convolutions are lowered to matrix products through an explicit column
//! buffer (im2col). The buffer is kept by the graph node so the backward pass
//! can reuse it for the kernel gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `c = op(a) · op(b) + beta · c` on row-major slices.
///
/// `a` is `m×k` (stored `k×m` when `trans_a`), `b` is `k×n` (stored `n×k`
/// when `trans_b`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm a").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm a")
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm b").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm b")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm c");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

/// Geometry of a 1-D valid convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dGeom {
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub width: usize,
    pub stride: usize,
    pub len_out: usize,
}

impl Conv1dGeom {
    fn rows(&self) -> usize {
        self.c_in * self.width
    }
}

/// Column buffer of shape `(c_in·width) × len_out`.
pub(crate) fn im2col_1d(input: &[f64], g: &Conv1dGeom) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.len_out];
    for c in 0..g.c_in {
        let row_in = &input[c * g.len..(c + 1) * g.len];
        for k in 0..g.width {
            let dst = &mut cols[(c * g.width + k) * g.len_out..(c * g.width + k + 1) * g.len_out];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = row_in[t * g.stride + k];
            }
        }
    }
    cols
}

pub(crate) fn conv1d_forward(cols: &[f64], kernels: &[f64], bias: &[f64], g: &Conv1dGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.len_out];
    for (o, row) in out.chunks_mut(g.len_out).enumerate() {
        row.fill(bias[o]);
    }
    gemm(g.c_out, g.rows(), g.len_out, kernels, false, cols, false, 1.0, &mut out);
    out
}

/// Accumulates kernel/bias gradients; returns the input gradient if requested.
pub(crate) fn conv1d_backward(
    grad_out: &[f64],
    cols: &[f64],
    kernels: &[f64],
    g: &Conv1dGeom,
    grad_kernels: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
    want_input: bool,
) -> Option<Vec<f64>> {
    if let Some(gk) = grad_kernels {
        gemm(g.c_out, g.len_out, g.rows(), grad_out, false, cols, true, 1.0, gk);
    }
    if let Some(gb) = grad_bias {
        for (o, row) in grad_out.chunks(g.len_out).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
    }
    if !want_input {
        return None;
    }
    let mut dcols = vec![0.0; g.rows() * g.len_out];
    gemm(g.rows(), g.c_out, g.len_out, kernels, true, grad_out, false, 0.0, &mut dcols);
    let mut dx = vec![0.0; g.c_in * g.len];
    for c in 0..g.c_in {
        for k in 0..g.width {
            let src = &dcols[(c * g.width + k) * g.len_out..(c * g.width + k + 1) * g.len_out];
            let row = &mut dx[c * g.len..(c + 1) * g.len];
            for (t, v) in src.iter().enumerate() {
                row[t * g.stride + k] += v;
            }
        }
    }
    Some(dx)
}

/// Geometry of a 2-D convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv2dGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input coordinate for an output position and kernel offset, if inside
    /// the unpadded image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

pub(crate) fn im2col_2d(input: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.rows() * p];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            dst[oy * g.w_out + ox] = plane[y * g.w + x];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn conv2d_forward(cols: &[f64], kernels: &[f64], bias: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let p = g.positions();
    let mut out = vec![0.0; g.c_out * p];
    for (o, row) in out.chunks_mut(p).enumerate() {
        row.fill(bias[o]);
    }
    gemm(g.c_out, g.rows(), p, kernels, false, cols, false, 1.0, &mut out);
    out
}

pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    cols: &[f64],
    kernels: &[f64],
    g: &Conv2dGeom,
    grad_kernels: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let p = g.positions();
    if let Some(gk) = grad_kernels {
        gemm(g.c_out, p, g.rows(), grad_out, false, cols, true, 1.0, gk);
    }
    if let Some(gb) = grad_bias {
        for (o, row) in grad_out.chunks(p).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
    }
    if !want_input {
        return None;
    }
    let mut dcols = vec![0.0; g.rows() * p];
    gemm(g.rows(), g.c_out, p, kernels, true, grad_out, false, 0.0, &mut dcols);
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let src = &dcols[r * p..(r + 1) * p];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            dx[c * g.h * g.w + y * g.w + x] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
    Some(dx)
}

/// Non-overlapping `size×size` max pooling; trailing rows/columns that do not
/// fill a window are dropped. Returns values and flat argmax indices.
pub(crate) fn max_pool2d(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / size, w / size);
    let mut out = Vec::with_capacity(channels * ho * wo);
    let mut arg = Vec::with_capacity(channels * ho * wo);
    for c in 0..channels {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = c * h * w + (oy * size + dy) * w + ox * size + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    naive[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        let transpose = |x: &[f64], r: usize, c: usize| {
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = x[i * c + j];
                }
            }
            t
        };
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&naive) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_picks_first_of_ties() {
        let input = vec![1.0; 4];
        let (v, arg) = max_pool2d(&input, 1, 2, 2, 2);
        assert_eq!(v, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }
}

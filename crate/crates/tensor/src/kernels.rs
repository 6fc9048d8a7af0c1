//! Numeric kernels shared by the forward and backward passes.
//!
//! Spatial tensors are channels-last: `[batch, rows, cols, channels]`.

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m×k` and `op(b)` of
/// shape `k×n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements checked by the debug assertions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sparse square operator applied independently to each `n`-row block of a
/// `[blocks * n, width]` matrix. Used for graph message passing where the
/// same adjacency is shared by every sample in a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rows_t: Vec<Vec<(usize, f64)>>,
}

impl Propagator {
    /// Builds from a dense row-major `n×n` matrix, keeping nonzeros only.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n, "dense operator must be n×n");
        let mut rows = vec![Vec::new(); n];
        let mut rows_t = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let v = dense[i * n + j];
                if v != 0.0 {
                    rows[i].push((j, v));
                    rows_t[j].push((i, v));
                }
            }
        }
        Self { n, rows, rows_t }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[i * self.n + j] = v;
            }
        }
        out
    }

    pub(crate) fn apply(&self, x: &[f64], width: usize, transpose: bool) -> Vec<f64> {
        let rows = if transpose { &self.rows_t } else { &self.rows };
        let block = self.n * width;
        let mut out = vec![0.0; x.len()];
        for (xb, ob) in x.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            for (i, row) in rows.iter().enumerate() {
                let dst = &mut ob[i * width..(i + 1) * width];
                for &(j, v) in row {
                    let src = &xb[j * width..(j + 1) * width];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
        out
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// im2col for a 3×3 zero-padded window; column index is
/// `(ky * 3 + kx) * c_in + ci`.
pub(crate) fn im2col3(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let width = 9 * d.c_in;
    let mut cols = vec![0.0; d.batch * d.h * d.w * width];
    for b in 0..d.batch {
        for y in 0..d.h {
            for xx in 0..d.w {
                let row = ((b * d.h + y) * d.w + xx) * width;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let src = ((b * d.h + sy as usize) * d.w + sx as usize) * d.c_in;
                        let dst = row + (ky * 3 + kx) * d.c_in;
                        cols[dst..dst + d.c_in].copy_from_slice(&x[src..src + d.c_in]);
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im3(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let width = 9 * d.c_in;
    let mut x = vec![0.0; d.batch * d.h * d.w * d.c_in];
    for b in 0..d.batch {
        for y in 0..d.h {
            for xx in 0..d.w {
                let row = ((b * d.h + y) * d.w + xx) * width;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let dst = ((b * d.h + sy as usize) * d.w + sx as usize) * d.c_in;
                        let src = row + (ky * 3 + kx) * d.c_in;
                        for c in 0..d.c_in {
                            x[dst + c] += cols[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Rearranges a `[c_out, c_in, 3, 3]` kernel into the `[9 * c_in, c_out]`
/// matrix matching [`im2col3`].
pub(crate) fn kernel_to_matrix(k: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; 9 * c_in * c_out];
    for co in 0..c_out {
        for ci in 0..c_in {
            for t in 0..9 {
                m[(t * c_in + ci) * c_out + co] = k[(co * c_in + ci) * 9 + t];
            }
        }
    }
    m
}

pub(crate) fn matrix_to_kernel(m: &[f64], c_in: usize, c_out: usize) -> Vec<f64> {
    let mut k = vec![0.0; 9 * c_in * c_out];
    for co in 0..c_out {
        for ci in 0..c_in {
            for t in 0..9 {
                k[(co * c_in + ci) * 9 + t] = m[(t * c_in + ci) * c_out + co];
            }
        }
    }
    k
}

/// 2×2 max pooling with stride 2; windows hanging off the bottom/right edge
/// see zeros. Returns the output and, per output element, the input index
/// that won (`None` when a padding zero won). Ties go to the first element
/// in row-major window order.
pub(crate) fn maxpool2(
    x: &[f64],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; batch * ho * wo * c];
    let mut arg = vec![None; out.len()];
    for b in 0..batch {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let o = ((b * ho + oy) * wo + ox) * c + ch;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = None;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                            let (v, idx) = if y < h && xx < w {
                                let i = ((b * h + y) * w + xx) * c + ch;
                                (x[i], Some(i))
                            } else {
                                (0.0, None)
                            };
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2(x: &[f64], batch: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; batch * h2 * w2 * c];
    for b in 0..batch {
        for y in 0..h2 {
            for xx in 0..w2 {
                let src = ((b * h + y / 2) * w + xx / 2) * c;
                let dst = ((b * h2 + y) * w2 + xx) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(
    g: &[f64],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; batch * h * w * c];
    for b in 0..batch {
        for y in 0..h2 {
            for xx in 0..w2 {
                let dst = ((b * h + y / 2) * w + xx / 2) * c;
                let src = ((b * h2 + y) * w2 + xx) * c;
                for ch in 0..c {
                    dx[dst + ch] += g[src + ch];
                }
            }
        }
    }
    dx
}

/// Copies the overlapping top-left region between two spatial extents.
#[allow(clippy::too_many_arguments)]
pub(crate) fn copy_spatial(
    src: &[f64],
    src_hw: (usize, usize),
    dst: &mut [f64],
    dst_hw: (usize, usize),
    batch: usize,
    c: usize,
) {
    let h = src_hw.0.min(dst_hw.0);
    let w = src_hw.1.min(dst_hw.1);
    for b in 0..batch {
        for y in 0..h {
            let s = ((b * src_hw.0 + y) * src_hw.1) * c;
            let d = ((b * dst_hw.0 + y) * dst_hw.1) * c;
            dst[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
        }
    }
}

pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_all_transpose_combinations() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let expected = [4.0, 5.0, 10.0, 11.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, expected);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, &mut c, 0.0);
        assert_eq!(c, expected);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let d = ConvDims {
            batch: 2,
            h: 3,
            w: 4,
            c_in: 2,
            c_out: 1,
        };
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..2 * 12 * 18).map(|i| (i as f64 * 0.11).cos()).collect();
        let cols = im2col3(&x, &d);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im3(&y, &d);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn kernel_layout_round_trips() {
        let k: Vec<f64> = (0..3 * 2 * 9).map(|i| i as f64).collect();
        let m = kernel_to_matrix(&k, 2, 3);
        assert_eq!(matrix_to_kernel(&m, 2, 3), k);
    }

    #[test]
    fn maxpool_padding_participates_with_zero() {
        let x = [-1.0, -2.0, -3.0, -4.0, -5.0, -6.0];
        let (out, arg) = maxpool2(&x, 1, 2, 3, 1);
        assert_eq!(out, vec![-1.0, 0.0]);
        assert_eq!(arg, vec![Some(0), None]);
    }
}

// Numeric kernels behind the tape primitives. Convolutions lower to GEMM via im2col.

use rayon::prelude::*;

/// `c = beta * c + op(a) * op(b)` for row-major operands, where `op(a)` is `m x k` and
/// `op(b)` is `k x n`. `trans_*` selects whether the stored matrix is the transpose.
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
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m*k, k*n and m*n row-major buffers whose
    // lengths are checked above; `c` is uniquely borrowed.
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad() - self.k) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out() * self.w_out()
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (ho, wo, pad) = (g.h_out(), g.w_out(), g.pad() as isize);
    let ncols = ho * wo;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (ho, wo, pad) = (g.h_out(), g.w_out(), g.pad() as isize);
    let ncols = ho * wo;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded "same" correlation. `x` is `[n, c_in, h, w]`, `weight` is
/// `[c_out, c_in, k, k]`, output is `[n, c_out, h_out, w_out]`.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    n: usize,
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.col_cols();
    let mut out = vec![0.0; n * out_sz];
    out.par_chunks_mut(out_sz)
        .zip(x.par_chunks(in_sz))
        .for_each(|(y, xn)| {
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            im2col(g, xn, &mut cols);
            if let Some(b) = bias {
                for (co, row) in y.chunks_mut(g.col_cols()).enumerate() {
                    row.iter_mut().for_each(|v| *v = b[co]);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm(
                g.c_out,
                g.col_rows(),
                g.col_cols(),
                weight,
                false,
                &cols,
                false,
                beta,
                y,
            );
        });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dweight: Option<Vec<f64>>,
    pub dbias: Option<Vec<f64>>,
}

/// Backward of [`conv2d_forward`]. Per-sample partial weight gradients are reduced in sample
/// order so results do not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    n: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.col_cols();
    let (rows, ncols) = (g.col_rows(), g.col_cols());

    // (input gradient, weight gradient) of each sample.
    type SampleGrads = (Option<Vec<f64>>, Option<Vec<f64>>);
    let per_sample: Vec<SampleGrads> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xn = &x[i * in_sz..(i + 1) * in_sz];
            let dyn_ = &dy[i * out_sz..(i + 1) * out_sz];
            let dw = need_dw.then(|| {
                let mut cols = vec![0.0; rows * ncols];
                im2col(g, xn, &mut cols);
                let mut dw = vec![0.0; g.c_out * rows];
                gemm(g.c_out, ncols, rows, dyn_, false, &cols, true, 0.0, &mut dw);
                dw
            });
            let dx = need_dx.then(|| {
                let mut dcols = vec![0.0; rows * ncols];
                gemm(rows, g.c_out, ncols, weight, true, dyn_, false, 0.0, &mut dcols);
                let mut dx = vec![0.0; in_sz];
                col2im(g, &dcols, &mut dx);
                dx
            });
            (dx, dw)
        })
        .collect();

    let mut dx_all = need_dx.then(|| Vec::with_capacity(n * in_sz));
    let mut dw_all = need_dw.then(|| vec![0.0; g.c_out * rows]);
    for (dx, dw) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
            all.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        }
    }
    let dbias = need_db.then(|| {
        let mut db = vec![0.0; g.c_out];
        for i in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let start = i * out_sz + co * ncols;
                *d += dy[start..start + ncols].iter().sum::<f64>();
            }
        }
        db
    });
    ConvGrads {
        dx: dx_all,
        dweight: dw_all,
        dbias,
    }
}

pub(crate) fn upsample2x_forward(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for y in 0..h2 {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xo, v) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                *v = srow[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(planes: usize, h: usize, w: usize, dy: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_handles_all_transpose_combinations() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expected = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stride_two_output_size() {
        let g = ConvGeom {
            c_in: 1,
            h: 64,
            w: 64,
            c_out: 1,
            k: 3,
            stride: 2,
        };
        assert_eq!((g.h_out(), g.w_out()), (32, 32));
    }
}

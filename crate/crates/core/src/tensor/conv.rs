//! im2col convolution kernels.
//!
//! A transposed convolution with weight `[C_in, C_out, k, k]` is the input
//! gradient of the ordinary convolution whose geometry maps the transposed
//! output back onto its input, so both ops share the three per-item kernels
//! below.

use super::gemm::{gemm, MatRef};
use crate::par::*;

/// Items per parallel work unit. Partial weight gradients are reduced in
/// chunk order, which keeps results independent of the thread count.
const CHUNK: usize = 4;

/// Geometry of a square-kernel 2-D convolution on a single item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn wo(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub(crate) fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub(crate) fn out_len(&self) -> usize {
        self.cout * self.ho() * self.wo()
    }

    pub(crate) fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols_len(&self) -> usize {
        self.ckk() * self.ho() * self.wo()
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = (g.ho(), g.wo());
    let hw = ho * wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
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

fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let (ho, wo) = (g.ho(), g.wo());
    let hw = ho * wo;
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W @ im2col(x)` for one item.
fn fwd_item(x: &[f64], g: &ConvGeom, w: &[f64], out: &mut [f64], cols: &mut [f64]) {
    im2col(x, g, cols);
    let hw = g.ho() * g.wo();
    gemm(
        1.0,
        MatRef::row_major(w, g.cout, g.ckk()),
        MatRef::row_major(cols, g.ckk(), hw),
        0.0,
        out,
    );
}

/// `dx = col2im(Wᵀ @ dy)` for one item; overwrites `dx`.
fn dx_item(dy: &[f64], g: &ConvGeom, w: &[f64], dx: &mut [f64], cols: &mut [f64]) {
    let hw = g.ho() * g.wo();
    gemm(
        1.0,
        MatRef::row_major(w, g.cout, g.ckk()).t(),
        MatRef::row_major(dy, g.cout, hw),
        0.0,
        cols,
    );
    dx.fill(0.0);
    col2im(cols, g, dx);
}

/// `dw += dy @ im2col(x)ᵀ` for one item.
fn dw_item(x: &[f64], dy: &[f64], g: &ConvGeom, dw: &mut [f64], cols: &mut [f64]) {
    im2col(x, g, cols);
    let hw = g.ho() * g.wo();
    gemm(
        1.0,
        MatRef::row_major(dy, g.cout, hw),
        MatRef::row_major(cols, g.ckk(), hw).t(),
        1.0,
        dw,
    );
}

fn add_channel_bias(out: &mut [f64], channels: usize, bias: &[f64]) {
    let plane = out.len() / channels;
    for (c, b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn channel_sums(dy: &[f64], n: usize, channels: usize) -> Vec<f64> {
    let plane = dy.len() / (n * channels);
    let mut db = vec![0.0; channels];
    for item in dy.chunks(channels * plane) {
        for (c, acc) in db.iter_mut().enumerate() {
            *acc += item[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
    }
    db
}

fn reduce_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    acc
}

/// Forward convolution of a batch `x` of `n` items.
pub(crate) fn conv2d_forward(x: &[f64], g: &ConvGeom, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let n = x.len() / g.in_len();
    let mut out = vec![0.0; n * g.out_len()];
    out.par_chunks_mut(g.out_len())
        .zip(x.par_chunks(g.in_len()))
        .for_each(|(o, xi)| {
            let mut cols = vec![0.0; g.cols_len()];
            fwd_item(xi, g, w, o, &mut cols);
            if let Some(b) = b {
                add_channel_bias(o, g.cout, b);
            }
        });
    out
}

/// Returns `(dx, dw, db)` for a forward convolution.
pub(crate) fn conv2d_backward(
    x: &[f64],
    g: &ConvGeom,
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = x.len() / g.in_len();
    let wlen = g.cout * g.ckk();
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; x.len()];
        dx.par_chunks_mut(g.in_len())
            .zip(dy.par_chunks(g.out_len()))
            .for_each(|(dxi, dyi)| {
                let mut cols = vec![0.0; g.cols_len()];
                dx_item(dyi, g, w, dxi, &mut cols);
            });
        dx
    });
    let parts: Vec<Vec<f64>> = x
        .par_chunks(CHUNK * g.in_len())
        .zip(dy.par_chunks(CHUNK * g.out_len()))
        .map(|(xc, dyc)| {
            let mut dw = vec![0.0; wlen];
            let mut cols = vec![0.0; g.cols_len()];
            for (xi, dyi) in xc.chunks(g.in_len()).zip(dyc.chunks(g.out_len())) {
                dw_item(xi, dyi, g, &mut dw, &mut cols);
            }
            dw
        })
        .collect();
    let dw = reduce_in_order(parts, wlen);
    let db = channel_sums(dy, n, g.cout);
    (dx, dw, db)
}

/// Transposed convolution. `g` is the geometry of the forward convolution
/// that maps this op's output (`g.cin x g.h x g.w`) to its input
/// (`g.cout x g.ho() x g.wo()`); the weight is `[g.cout, g.cin, k, k]`.
pub(crate) fn conv_transpose2d_forward(
    x: &[f64],
    g: &ConvGeom,
    w: &[f64],
    b: Option<&[f64]>,
) -> Vec<f64> {
    let n = x.len() / g.out_len();
    let mut out = vec![0.0; n * g.in_len()];
    out.par_chunks_mut(g.in_len())
        .zip(x.par_chunks(g.out_len()))
        .for_each(|(o, xi)| {
            let mut cols = vec![0.0; g.cols_len()];
            dx_item(xi, g, w, o, &mut cols);
            if let Some(b) = b {
                add_channel_bias(o, g.cin, b);
            }
        });
    out
}

/// Returns `(dx, dw, db)` for a transposed convolution.
pub(crate) fn conv_transpose2d_backward(
    x: &[f64],
    g: &ConvGeom,
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = x.len() / g.out_len();
    let wlen = g.cout * g.ckk();
    let dx = need_dx.then(|| conv2d_forward(dy, g, w, None));
    let parts: Vec<Vec<f64>> = dy
        .par_chunks(CHUNK * g.in_len())
        .zip(x.par_chunks(CHUNK * g.out_len()))
        .map(|(dyc, xc)| {
            let mut dw = vec![0.0; wlen];
            let mut cols = vec![0.0; g.cols_len()];
            for (dyi, xi) in dyc.chunks(g.in_len()).zip(xc.chunks(g.out_len())) {
                dw_item(dyi, xi, g, &mut dw, &mut cols);
            }
            dw
        })
        .collect();
    let dw = reduce_in_order(parts, wlen);
    let db = channel_sums(dy, n, g.cin);
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &[f64], g: &ConvGeom, w: &[f64]) -> Vec<f64> {
        let (ho, wo) = (g.ho(), g.wo());
        let mut out = vec![0.0; g.cout * ho * wo];
        for co in 0..g.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    acc += x[(ci * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let g = ConvGeom { cin: 2, h: 5, w: 6, cout: 3, k: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..g.cout * g.ckk()).map(|i| (i as f64 * 0.11).cos()).collect();
        let got = conv2d_forward(&x, &g, &w, None);
        let want = naive_conv(&x, &g, &w);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        // <conv(x), y> == <x, convT(y)>
        let g = ConvGeom { cin: 2, h: 8, w: 8, cout: 3, k: 4, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.21).sin()).collect();
        let y: Vec<f64> = (0..g.out_len()).map(|i| (i as f64 * 0.53).cos()).collect();
        let w: Vec<f64> = (0..g.cout * g.ckk()).map(|i| (i as f64 * 0.07).sin()).collect();
        let cx = conv2d_forward(&x, &g, &w, None);
        let ty = conv_transpose2d_forward(&y, &g, &w, None);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

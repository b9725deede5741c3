//! Forward and backward kernels on raw NCHW buffers.
//!
//! Convolutions lower to im2col + GEMM, tiled over output rows so the column
//! buffer stays bounded for full-width scans. Batches fan out through
//! [`crate::par`]; per-image partial weight gradients are reduced in image
//! order so results do not depend on the thread count.

use crate::error::{shape_err, Result};
use crate::par;

/// Column-buffer budget per tile, in elements.
const TILE_BUDGET: usize = 1 << 20;

/// Geometry of one convolution, seen from the "image" side (the conv input,
/// or the transposed-conv output) and the "column" side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        c: usize,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
    ) -> Result<Self> {
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 {
            return Err(shape_err("kernel and stride must be positive"));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(shape_err(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh,
            ow,
        })
    }

    /// Rows of the column matrix.
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn tile_rows(&self) -> usize {
        let per_row = (self.col_rows() * self.ow).max(1);
        (TILE_BUDGET / per_row).clamp(1, self.oh)
    }

    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> {
        let t = self.tile_rows();
        let oh = self.oh;
        (0..oh).step_by(t).map(move |s| (s, (s + t).min(oh)))
    }

    /// Valid output-column range for kernel column `kx` and the matching first input column.
    fn ox_span(&self, kx: usize) -> (usize, usize) {
        // ix = ox*sw + kx - pw must lie in [0, w)
        let lo = if kx >= self.pw {
            0
        } else {
            (self.pw - kx).div_ceil(self.sw)
        };
        let hi_excl = if self.w + self.pw > kx {
            ((self.w + self.pw - kx - 1) / self.sw + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }
}

/// Unfolds output rows `oy0..oy1` of one C×H×W image into `col`
/// (`col_rows × (oy1-oy0)·ow`, row-major).
pub fn im2col(img: &[f64], g: &ConvGeom, oy0: usize, oy1: usize, col: &mut [f64]) {
    let npos = (oy1 - oy0) * g.ow;
    debug_assert!(col.len() >= g.col_rows() * npos);
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * npos;
                let (lo, hi) = g.ox_span(kx);
                for oy in oy0..oy1 {
                    let dst = &mut col[row + (oy - oy0) * g.ow..row + (oy - oy0 + 1) * g.ow];
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let ix0 = lo * g.sw + kx - g.pw;
                    if g.sw == 1 {
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[ix0 + k * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into the image.
pub fn col2im(col: &[f64], g: &ConvGeom, oy0: usize, oy1: usize, img: &mut [f64]) {
    let npos = (oy1 - oy0) * g.ow;
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * npos;
                let (lo, hi) = g.ox_span(kx);
                if lo >= hi {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + (oy - oy0) * g.ow..row + (oy - oy0 + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let ix0 = lo * g.sw + kx - g.pw;
                    for (k, s) in src[lo..hi].iter().enumerate() {
                        dst[ix0 + k * g.sw] += s;
                    }
                }
            }
        }
    }
}

/// Strided row-major matrix view.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    fn rm(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }
    fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha·a·b + beta·c` with `a: m×k`, `b: k×n`, `c` row-major `m×n` with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Mat, b: Mat, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |mat: Mat, rows: usize, cols: usize| (rows - 1) * mat.rs + (cols - 1) * mat.cs;
    if k > 0 {
        assert!(last(a, m, k) < a.data.len(), "gemm: lhs out of bounds");
        assert!(last(b, k, n) < b.data.len(), "gemm: rhs out of bounds");
    }
    assert!((m - 1) * rsc + n - 1 < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched lies inside the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn col_buffer(g: &ConvGeom) -> Vec<f64> {
    vec![0.0; g.col_rows() * g.tile_rows() * g.ow]
}

/// Cross-correlation of `x` (N×C×H×W) with `k` (O×C×Kh×Kw), zero padding.
pub fn conv2d_forward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    k: &[f64],
    o: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_len = g.c * g.h * g.w;
    let out_len = o * g.oh * g.ow;
    let mut out = vec![0.0; n * out_len];
    let kk = g.col_rows();
    let direct = use_direct(g, o);
    par::for_each_chunk_mut(&mut out, out_len, |b, y| {
        let img = &x[b * in_len..(b + 1) * in_len];
        if direct {
            direct_forward(img, g, k, o, y);
        }
        let mut col = if direct { Vec::new() } else { col_buffer(g) };
        for (oy0, oy1) in g.tiles().filter(|_| !direct) {
            let npos = (oy1 - oy0) * g.ow;
            im2col(img, g, oy0, oy1, &mut col);
            gemm(
                o,
                kk,
                npos,
                1.0,
                Mat::rm(k, kk),
                Mat::rm(&col, npos),
                0.0,
                &mut y[oy0 * g.ow..],
                g.oh * g.ow,
            );
        }
        if let Some(bias) = bias {
            for (oc, plane) in y.chunks_mut(g.oh * g.ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += bias[oc]);
            }
        }
    });
    out
}

/// Gradients of [`conv2d_forward`]: returns (dx, dk) for the requested parts.
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    k: &[f64],
    o: usize,
    dy: &[f64],
    need_dx: bool,
    need_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_len = g.c * g.h * g.w;
    let out_len = o * g.oh * g.ow;
    let kk = g.col_rows();
    let direct = use_direct(g, o);
    let per_image = par::map_range(n, |b| {
        let img = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        let mut dx = need_dx.then(|| vec![0.0; in_len]);
        let mut dk = need_dk.then(|| vec![0.0; o * kk]);
        if direct {
            direct_backward(img, g, k, o, dyb, dx.as_deref_mut(), dk.as_deref_mut());
            return (dx, dk);
        }
        let mut col = col_buffer(g);
        for (oy0, oy1) in g.tiles() {
            let npos = (oy1 - oy0) * g.ow;
            let dy_tile = Mat {
                data: &dyb[oy0 * g.ow..],
                rs: g.oh * g.ow,
                cs: 1,
            };
            if let Some(dk) = dk.as_mut() {
                im2col(img, g, oy0, oy1, &mut col);
                gemm(o, npos, kk, 1.0, dy_tile, Mat::rm(&col, npos).t(), 1.0, dk, kk);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(kk, o, npos, 1.0, Mat::rm(k, kk).t(), dy_tile, 0.0, &mut col, npos);
                col2im(&col, g, oy0, oy1, dx);
            }
        }
        (dx, dk)
    });
    reduce_pair(per_image, need_dx, need_dk, o * kk)
}

/// Few output channels make im2col cost as much as the multiply itself;
/// such layers are convolved directly with shifted-row updates.
fn use_direct(g: &ConvGeom, o: usize) -> bool {
    o <= 2 && g.sh == 1 && g.sw == 1
}

/// Iterates the in-bounds (oy, iy) pairs for kernel row `ky` (stride 1).
fn row_pairs(g: &ConvGeom, ky: usize) -> impl Iterator<Item = (usize, usize)> {
    let (ph, h, oh) = (g.ph, g.h, g.oh);
    (0..oh).filter_map(move |oy| {
        let iy = (oy + ky) as isize - ph as isize;
        (iy >= 0 && iy < h as isize).then_some((oy, iy as usize))
    })
}

fn direct_forward(img: &[f64], g: &ConvGeom, k: &[f64], o: usize, y: &mut [f64]) {
    let plane = g.oh * g.ow;
    for oc in 0..o {
        let out = &mut y[oc * plane..(oc + 1) * plane];
        for ci in 0..g.c {
            let src = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = k[((oc * g.c + ci) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.ox_span(kx);
                    if lo >= hi {
                        continue;
                    }
                    let ix0 = lo + kx - g.pw;
                    for (oy, iy) in row_pairs(g, ky) {
                        let d = &mut out[oy * g.ow + lo..oy * g.ow + hi];
                        let s = &src[iy * g.w + ix0..iy * g.w + ix0 + (hi - lo)];
                        d.iter_mut().zip(s).for_each(|(a, b)| *a += wv * b);
                    }
                }
            }
        }
    }
}

fn direct_backward(
    img: &[f64],
    g: &ConvGeom,
    k: &[f64],
    o: usize,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
) {
    let plane = g.oh * g.ow;
    for oc in 0..o {
        let dyp = &dy[oc * plane..(oc + 1) * plane];
        for ci in 0..g.c {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let ki = ((oc * g.c + ci) * g.kh + ky) * g.kw + kx;
                    let (lo, hi) = g.ox_span(kx);
                    if lo >= hi {
                        continue;
                    }
                    let ix0 = lo + kx - g.pw;
                    let mut acc = 0.0;
                    for (oy, iy) in row_pairs(g, ky) {
                        let d = &dyp[oy * g.ow + lo..oy * g.ow + hi];
                        let s = base + iy * g.w + ix0..base + iy * g.w + ix0 + (hi - lo);
                        if dk.is_some() {
                            acc += d.iter().zip(&img[s.clone()]).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let wv = k[ki];
                            dx[s].iter_mut().zip(d).for_each(|(a, b)| *a += wv * b);
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[ki] += acc;
                    }
                }
            }
        }
    }
}

fn reduce_pair(
    per_image: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)>,
    need_dx: bool,
    need_dk: bool,
    dk_len: usize,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx_all = need_dx.then(Vec::new);
    let mut dk_all = need_dk.then(|| vec![0.0; dk_len]);
    for (dx, dk) in per_image {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dk)) = (dk_all.as_mut(), dk) {
            all.iter_mut().zip(&dk).for_each(|(a, d)| *a += d);
        }
    }
    (dx_all, dk_all)
}

/// Transposed convolution of `x` (N×Ci×H×W) with `k` (Ci×Co×Kh×Kw).
/// `g` describes the equivalent forward convolution from the output
/// (Co×H'×W') back to `x`, so `g.oh == H` and `g.ow == W`.
pub fn conv_transpose2d_forward(
    x: &[f64],
    n: usize,
    ci: usize,
    g: &ConvGeom,
    k: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_len = ci * g.oh * g.ow;
    let out_len = g.c * g.h * g.w;
    let kk = g.col_rows();
    let mut out = vec![0.0; n * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |b, y| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let mut col = col_buffer(g);
        for (oy0, oy1) in g.tiles() {
            let npos = (oy1 - oy0) * g.ow;
            let x_tile = Mat {
                data: &xb[oy0 * g.ow..],
                rs: g.oh * g.ow,
                cs: 1,
            };
            gemm(kk, ci, npos, 1.0, Mat::rm(k, kk).t(), x_tile, 0.0, &mut col, npos);
            col2im(&col, g, oy0, oy1, y);
        }
        if let Some(bias) = bias {
            for (oc, plane) in y.chunks_mut(g.h * g.w).enumerate() {
                plane.iter_mut().for_each(|v| *v += bias[oc]);
            }
        }
    });
    out
}

/// Gradients of [`conv_transpose2d_forward`] with respect to `x` and `k`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &[f64],
    n: usize,
    ci: usize,
    g: &ConvGeom,
    k: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_len = ci * g.oh * g.ow;
    let out_len = g.c * g.h * g.w;
    let kk = g.col_rows();
    let per_image = par::map_range(n, |b| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        let mut col = col_buffer(g);
        let mut dx = need_dx.then(|| vec![0.0; in_len]);
        let mut dk = need_dk.then(|| vec![0.0; ci * kk]);
        for (oy0, oy1) in g.tiles() {
            let npos = (oy1 - oy0) * g.ow;
            im2col(dyb, g, oy0, oy1, &mut col);
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ci,
                    kk,
                    npos,
                    1.0,
                    Mat::rm(k, kk),
                    Mat::rm(&col, npos),
                    0.0,
                    &mut dx[oy0 * g.ow..],
                    g.oh * g.ow,
                );
            }
            if let Some(dk) = dk.as_mut() {
                let x_tile = Mat {
                    data: &xb[oy0 * g.ow..],
                    rs: g.oh * g.ow,
                    cs: 1,
                };
                gemm(ci, npos, kk, 1.0, x_tile, Mat::rm(&col, npos).t(), 1.0, dk, kk);
            }
        }
        (dx, dk)
    });
    reduce_pair(per_image, need_dx, need_dk, ci * kk)
}

/// Per-channel sums over N, H, W.
pub fn channel_sums(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in s.iter_mut().enumerate() {
            let start = (b * c + ch) * hw;
            *acc += x[start..start + hw].iter().sum::<f64>();
        }
    }
    s
}

/// Batch mean and biased variance per channel.
pub fn channel_moments(x: &[f64], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * hw) as f64;
    let mean: Vec<f64> = channel_sums(x, n, c, hw).iter().map(|s| s / count).collect();
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * hw;
            let m = mean[ch];
            var[ch] += x[start..start + hw].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// `y = gamma·(x - mean)·inv_std + beta`, per channel.
pub fn affine_normalize(
    x: &[f64],
    c: usize,
    hw: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    par::for_each_chunk_mut(&mut y, hw, |plane, out| {
        let ch = plane % c;
        let src = &x[plane * hw..(plane + 1) * hw];
        let scale = gamma[ch] * inv_std[ch];
        let shift = beta[ch] - mean[ch] * scale;
        for (o, v) in out.iter_mut().zip(src) {
            *o = v * scale + shift;
        }
    });
    y
}

pub fn check_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(shape_err(format!("{what}: {a} vs {b} elements")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &[f64],
        n: usize,
        g: &ConvGeom,
        k: &[f64],
        o: usize,
    ) -> Vec<f64> {
        let mut y = vec![0.0; n * o * g.oh * g.ow];
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for c in 0..g.c {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                                    let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += x[((b * g.c + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * k[((oc * g.c + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                        y[((b * o + oc) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn strided_conv_matches_naive() {
        let g = ConvGeom::new(3, (9, 11), (3, 2), (2, 3), (1, 2)).unwrap();
        let x: Vec<f64> = (0..2 * 3 * 9 * 11).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let k: Vec<f64> = (0..4 * 3 * 3 * 2).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let fast = conv2d_forward(&x, 2, &g, &k, 4, None);
        let slow = naive_conv(&x, 2, &g, &k, 4);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_path_matches_naive() {
        for o in [1, 2] {
            let g = ConvGeom::new(3, (7, 10), (5, 3), (1, 1), (2, 1)).unwrap();
            let x: Vec<f64> = (0..2 * 3 * 70).map(|i| ((i * 31) % 19) as f64 - 9.0).collect();
            let k: Vec<f64> = (0..o * 3 * 15).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
            assert!(use_direct(&g, o));
            let fast = conv2d_forward(&x, 2, &g, &k, o, None);
            let slow = naive_conv(&x, 2, &g, &k, o);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::new(2, (5, 7), (3, 3), (2, 1), (1, 1)).unwrap();
        let img: Vec<f64> = (0..2 * 35).map(|i| (i as f64 * 0.37).sin()).collect();
        let npos = g.oh * g.ow;
        let cvec: Vec<f64> = (0..g.col_rows() * npos).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; g.col_rows() * npos];
        im2col(&img, &g, 0, g.oh, &mut col);
        let lhs: f64 = col.iter().zip(&cvec).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        col2im(&cvec, &g, 0, g.oh, &mut back);
        let rhs: f64 = back.iter().zip(&img).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

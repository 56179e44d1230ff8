//! Numeric primitives shared by every kernel: matrix products, row softmax,
//! adaptive average pooling, bilinear resizing and depthwise convolution.
//!
//! Adjoint (backward) forms live next to their forward op so the attention
//! and module gradients can be assembled from them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, dim_err};
use crate::{Result, Scalar, Tensor};

/// Receives multiply-accumulate counts from the instrumented kernels.
///
/// `()` discards everything and compiles away; [`MacCounter`] records the
/// trip counts of the innermost loops actually executed.
pub trait MacTally {
    fn macs(&mut self, count: u64);
    fn exps(&mut self, _count: u64) {}
}

impl MacTally for () {
    #[inline(always)]
    fn macs(&mut self, _count: u64) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter {
    pub macs: u64,
    pub exps: u64,
}

impl MacTally for MacCounter {
    #[inline]
    fn macs(&mut self, count: u64) {
        self.macs += count;
    }
    #[inline]
    fn exps(&mut self, count: u64) {
        self.exps += count;
    }
}

const KB: usize = 128;
const JB: usize = 256;

/// `c += a · b` for row-major `a: m×k`, `b: k×p`, `c: m×p`.
///
/// Blocked over `k` and `p` so a tile of `b` stays in cache. Every `c[i][j]`
/// still accumulates `t = 0..k` in ascending order, so results match the
/// plain i-k-j loop bit for bit.
pub(crate) fn gemm_acc<T: Scalar, M: MacTally>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    p: usize,
    tally: &mut M,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    for kb in (0..k).step_by(KB) {
        let ke = (kb + KB).min(k);
        for jb in (0..p).step_by(JB) {
            let je = (jb + JB).min(p);
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let c_row = &mut c[i * p + jb..i * p + je];
                for t in kb..ke {
                    let s = a_row[t];
                    let b_row = &b[t * p + jb..t * p + je];
                    for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                        *cv += s * bv;
                    }
                    tally.macs(c_row.len() as u64);
                }
            }
        }
    }
}

fn transpose_raw<T: Scalar>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub(crate) fn matmul_tallied<T: Scalar, M: MacTally>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    tally: &mut M,
) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, p) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut c = vec![T::zero(); m * p];
    gemm_acc(a.data(), b.data(), &mut c, m, k, p, tally);
    Tensor::from_parts(vec![m, p], c).ensure_finite("matmul output")
}

/// `a · b` for `a: m×k`, `b: k×p`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_tallied(a, b, &mut ())
}

pub(crate) fn matmul_bt_tallied<T: Scalar, M: MacTally>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    tally: &mut M,
) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (p, k2) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul_bt inner dimensions differ: {:?} x {:?}^T",
            a.shape(),
            b.shape()
        ));
    }
    let bt = transpose_raw(b.data(), p, k);
    let mut c = vec![T::zero(); m * p];
    gemm_acc(a.data(), &bt, &mut c, m, k, p, tally);
    Tensor::from_parts(vec![m, p], c).ensure_finite("matmul_bt output")
}

/// `a · bᵀ` for `a: m×k`, `b: p×k`.
pub fn matmul_bt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_bt_tallied(a, b, &mut ())
}

/// `aᵀ · b` for `a: k×m`, `b: k×p`.
pub fn matmul_at<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2()?;
    let (k2, p) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul_at inner dimensions differ: {:?}^T x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let at = transpose_raw(a.data(), k, m);
    let mut c = vec![T::zero(); m * p];
    gemm_acc(&at, b.data(), &mut c, m, k, p, &mut ());
    Tensor::from_parts(vec![m, p], c).ensure_finite("matmul_at output")
}

/// In-place max-subtracted softmax over each row of `data` (row length `cols`).
pub(crate) fn softmax_rows_in_place<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Softmax of `scale · a` along each row, stabilized by subtracting the row max.
pub fn row_softmax<T: Scalar>(a: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let (m, p) = a.dims2()?;
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(config_err!("softmax scale must be positive and finite, got {scale}"));
    }
    let mut data: Vec<T> = a.data().iter().map(|&v| v * scale).collect();
    softmax_rows_in_place(&mut data, p);
    Tensor::from_parts(vec![m, p], data).ensure_finite("row_softmax output")
}

/// Given softmax output `p` and upstream gradient `dp`, the gradient with
/// respect to the softmax logits: `p ⊙ (dp − Σ_j dp_j p_j)` row by row.
pub(crate) fn softmax_rows_backward<T: Scalar>(p: &Tensor<T>, dp: &Tensor<T>) -> Tensor<T> {
    let cols = p.cols();
    let mut out = Vec::with_capacity(p.len());
    for (pr, gr) in p.data().chunks_exact(cols).zip(dp.data().chunks_exact(cols)) {
        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(pr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_parts(p.shape().to_vec(), out)
}

fn adaptive_bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let start = i * input / output;
            let end = ((i + 1) * input).div_ceil(output);
            (start, end)
        })
        .collect()
}

/// Average each of `out_h × out_w` adaptive bins of an `h×w×c` map.
///
/// Bin `i` along an axis of length `h` covers `floor(i·h/out_h)..ceil((i+1)·h/out_h)`.
pub fn adaptive_avg_pool2d<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(dim_err!(
            "cannot pool {h}x{w} to {out_h}x{out_w}: output must be within 1..=input"
        ));
    }
    let rows = adaptive_bins(h, out_h);
    let cols = adaptive_bins(w, out_w);
    let xd = x.data();
    let mut out = vec![T::zero(); out_h * out_w * c];
    for (oi, &(r0, r1)) in rows.iter().enumerate() {
        for (oj, &(c0, c1)) in cols.iter().enumerate() {
            let cell = &mut out[(oi * out_w + oj) * c..(oi * out_w + oj + 1) * c];
            for i in r0..r1 {
                for j in c0..c1 {
                    for (o, &v) in cell.iter_mut().zip(&xd[(i * w + j) * c..(i * w + j + 1) * c]) {
                        *o += v;
                    }
                }
            }
            let inv = T::one() / T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
            for o in cell.iter_mut() {
                *o *= inv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out))
}

/// Adjoint of [`adaptive_avg_pool2d`]: spreads each pooled gradient evenly over its bin.
pub(crate) fn adaptive_avg_pool2d_adjoint<T: Scalar>(
    grad: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let (out_h, out_w, c) = grad.dims3()?;
    let rows = adaptive_bins(h, out_h);
    let cols = adaptive_bins(w, out_w);
    let gd = grad.data();
    let mut out = vec![T::zero(); h * w * c];
    for (oi, &(r0, r1)) in rows.iter().enumerate() {
        for (oj, &(c0, c1)) in cols.iter().enumerate() {
            let inv = T::one() / T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
            let g = &gd[(oi * out_w + oj) * c..(oi * out_w + oj + 1) * c];
            for i in r0..r1 {
                for j in c0..c1 {
                    for (o, &gv) in out[(i * w + j) * c..(i * w + j + 1) * c].iter_mut().zip(g) {
                        *o += gv * inv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Source taps for align-corners-false linear resampling of an axis.
///
/// Returns `(lo, hi, frac)` per output index with the source coordinate
/// `(i + 0.5)·src/dst − 0.5` clamped to `[0, src − 1]`.
pub(crate) fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = libm::floor(s) as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Align-corners-false bilinear resize of an `h0×w0×c` map to `out_h×out_w×c`.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h0, w0, c) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(dim_err!("bilinear output size must be >= 1, got {out_h}x{out_w}"));
    }
    let ty = linear_taps(h0, out_h);
    let tx = linear_taps(w0, out_w);
    let xd = x.data();
    let px = |i: usize, j: usize, ch: usize| xd[(i * w0 + j) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ty {
        let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
        for &(x0, x1, fx) in &tx {
            let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
            for ch in 0..c {
                let top = gx * px(y0, x0, ch) + fx * px(y0, x1, ch);
                let bot = gx * px(y1, x0, ch) + fx * px(y1, x1, ch);
                out.push(gy * top + fy * bot);
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out))
}

/// Adjoint of [`bilinear_resize`]: scatters each output gradient onto its four source taps.
pub(crate) fn bilinear_resize_adjoint<T: Scalar>(
    grad: &Tensor<T>,
    h0: usize,
    w0: usize,
) -> Result<Tensor<T>> {
    let (out_h, out_w, c) = grad.dims3()?;
    let ty = linear_taps(h0, out_h);
    let tx = linear_taps(w0, out_w);
    let gd = grad.data();
    let mut out = vec![T::zero(); h0 * w0 * c];
    for (oi, &(y0, y1, fy)) in ty.iter().enumerate() {
        let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
        for (oj, &(x0, x1, fx)) in tx.iter().enumerate() {
            let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
            for ch in 0..c {
                let g = gd[(oi * out_w + oj) * c + ch];
                out[(y0 * w0 + x0) * c + ch] += g * gy * gx;
                out[(y0 * w0 + x1) * c + ch] += g * gy * fx;
                out[(y1 * w0 + x0) * c + ch] += g * fy * gx;
                out[(y1 * w0 + x1) * c + ch] += g * fy * fx;
            }
        }
    }
    Ok(Tensor::from_parts(vec![h0, w0, c], out))
}

/// Align-corners-false linear resampling of one axis of a tensor to `new_len`.
pub fn resize_axis<T: Scalar>(x: &Tensor<T>, axis: usize, new_len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(dim_err!("axis {axis} out of range for rank {}", x.rank()));
    }
    if new_len == 0 {
        return Err(dim_err!("resize target must be >= 1"));
    }
    let shape = x.shape();
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let taps = linear_taps(len, new_len);
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * new_len * inner);
    for o in 0..outer {
        let base = o * len * inner;
        for &(lo, hi, f) in &taps {
            let (f, g) = (T::of(f), T::of(1.0 - f));
            for k in 0..inner {
                out.push(g * xd[base + lo * inner + k] + f * xd[base + hi * inner + k]);
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = new_len;
    Ok(Tensor::from_parts(new_shape, out))
}

fn check_dwc_kernel(kh: usize, kw: usize) -> Result<()> {
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(config_err!("depthwise kernel dims must be odd, got {kh}x{kw}"));
    }
    Ok(())
}

/// Per-channel 2-D correlation of an `h×w×c` map with a `kh×kw×c` kernel,
/// stride 1, zero padding `(kh−1)/2`, `(kw−1)/2`. Channels never mix.
pub fn depthwise_conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    let (kh, kw, kc) = kernel.dims3()?;
    check_dwc_kernel(kh, kw)?;
    if kc != c {
        return Err(dim_err!("depthwise kernel has {kc} channels, input has {c}"));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![T::zero(); h * w * c];
    for i in 0..h {
        for j in 0..w {
            let o = &mut out[(i * w + j) * c..(i * w + j + 1) * c];
            for u in 0..kh {
                let Some(si) = (i + u).checked_sub(ph).filter(|&s| s < h) else {
                    continue;
                };
                for v in 0..kw {
                    let Some(sj) = (j + v).checked_sub(pw).filter(|&s| s < w) else {
                        continue;
                    };
                    let src = &xd[(si * w + sj) * c..(si * w + sj + 1) * c];
                    let k = &kd[(u * kw + v) * c..(u * kw + v + 1) * c];
                    for ((ov, &xv), &kv) in o.iter_mut().zip(src).zip(k) {
                        *ov += kv * xv;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![h, w, c], out).ensure_finite("depthwise_conv2d output")
}

/// Gradients of [`depthwise_conv2d`] with respect to its input and kernel.
pub(crate) fn depthwise_conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, c) = x.dims3()?;
    let (kh, kw, _) = kernel.dims3()?;
    check_dwc_kernel(kh, kw)?;
    let (ph, pw) = (kh / 2, kw / 2);
    let (xd, kd, gd) = (x.data(), kernel.data(), grad.data());
    let mut dx = vec![T::zero(); h * w * c];
    let mut dk = vec![T::zero(); kh * kw * c];
    for i in 0..h {
        for j in 0..w {
            let g = &gd[(i * w + j) * c..(i * w + j + 1) * c];
            for u in 0..kh {
                let Some(si) = (i + u).checked_sub(ph).filter(|&s| s < h) else {
                    continue;
                };
                for v in 0..kw {
                    let Some(sj) = (j + v).checked_sub(pw).filter(|&s| s < w) else {
                        continue;
                    };
                    let src = (si * w + sj) * c;
                    let kof = (u * kw + v) * c;
                    for ch in 0..c {
                        dx[src + ch] += kd[kof + ch] * g[ch];
                        dk[kof + ch] += xd[src + ch] * g[ch];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![h, w, c], dx),
        Tensor::from_parts(vec![kh, kw, c], dk),
    ))
}

/// Add a length-`p` row vector to every row of an `m×p` matrix.
pub(crate) fn add_row_vector<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) {
    let p = bias.len();
    let b = bias.data().to_vec();
    for row in x.data_mut().chunks_exact_mut(p) {
        for (v, &bv) in row.iter_mut().zip(&b) {
            *v += bv;
        }
    }
}

/// Column sums of an `m×p` matrix as a length-`p` vector.
pub(crate) fn column_sums<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let p = x.cols();
    let mut out = vec![T::zero(); p];
    for row in x.data().chunks_exact(p) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![p], out)
}

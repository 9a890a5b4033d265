//! Forward kernels and their vector-Jacobian products.
//!
//! Spatial operations work on single `[C, H, W]` feature maps. Convolutions
//! use zero padding. Every forward kernel rejects non-finite results.

use super::{lit, Scalar, Tensor};
use crate::error::{Error, Result};

fn check_finite<T: Scalar>(t: Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// `out[o] += Σ_k w[o,k] · rows[k]` over contiguous rows of length `n`.
fn matmul_rows<T: Scalar>(w: &[T], k_dim: usize, rows: &[T], n: usize, out: &mut [T]) {
    for (o, out_row) in out.chunks_exact_mut(n).enumerate() {
        let w_row = &w[o * k_dim..(o + 1) * k_dim];
        for (k, &wk) in w_row.iter().enumerate() {
            let src = &rows[k * n..(k + 1) * n];
            for (y, &x) in out_row.iter_mut().zip(src) {
                *y = *y + wk * x;
            }
        }
    }
}

/// Inner product with eight interleaved partial sums, so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn bias_fill<T: Scalar>(b: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(b.len() * n);
    for &bo in b {
        out.extend(std::iter::repeat(bo).take(n));
    }
    out
}

// ---------------------------------------------------------------------------
// 1x1 convolution

fn conv1x1_shapes<T>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (c_in, h, wd) = x.dims3()?;
    let [c_out, wc_in] = w.shape()[..] else {
        return Err(Error::dim("conv1x1", format!("weight must be [C_out,C_in], got {:?}", w.shape())));
    };
    if wc_in != c_in || c_in == 0 || c_out == 0 {
        return Err(Error::dim(
            "conv1x1",
            format!("weight {:?} incompatible with input {:?}", w.shape(), x.shape()),
        ));
    }
    if b.shape() != [c_out] {
        return Err(Error::dim("conv1x1", format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok((c_in, c_out, h, wd))
}

/// `out[o,i,j] = b[o] + Σ_c w[o,c]·x[c,i,j]`.
pub fn conv1x1<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, c_out, h, wd) = conv1x1_shapes(x, w, b)?;
    let n = h * wd;
    let mut out = bias_fill(b.data(), n);
    matmul_rows(w.data(), c_in, x.data(), n, &mut out);
    check_finite(Tensor::new(vec![c_out, h, wd], out)?, "conv1x1")
}

/// Returns (grad_x, grad_w, grad_b).
pub fn conv1x1_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let c_in = x.shape()[0];
    let c_out = w.shape()[0];
    let n = x.len() / c_in;
    let g = gout.data();
    let xs = x.data();
    let mut gw = Vec::with_capacity(c_out * c_in);
    let mut gb = Vec::with_capacity(c_out);
    for o in 0..c_out {
        let go = &g[o * n..(o + 1) * n];
        gb.push(go.iter().copied().sum());
        for c in 0..c_in {
            gw.push(dot(go, &xs[c * n..(c + 1) * n]));
        }
    }
    let gx = need_x.then(|| {
        let wt = transpose(w.data(), c_out, c_in);
        let mut gx = vec![T::zero(); c_in * n];
        matmul_rows(&wt, c_out, g, n, &mut gx);
        Tensor::new(x.shape().to_vec(), gx).expect("shape")
    });
    (
        gx,
        Tensor::new(vec![c_out, c_in], gw).expect("shape"),
        Tensor::new(vec![c_out], gb).expect("shape"),
    )
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Dense 3x3 convolution (pad 1), via im2col

fn out_size(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

/// Column matrix with rows indexed by `c*9 + ky*3 + kx` and one column per
/// output pixel.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, stride: usize) -> (Vec<T>, usize, usize) {
    let ho = out_size(h, stride);
    let wo = out_size(w, stride);
    let n = ho * wo;
    let mut col = vec![T::zero(); c * 9 * n];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, stride: usize) -> Vec<T> {
    let ho = out_size(h, stride);
    let wo = out_size(w, stride);
    let n = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv3x3_shapes<T>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<(usize, usize, usize, usize)> {
    let (c_in, h, wd) = x.dims3()?;
    let [c_out, wc_in, 3, 3] = w.shape()[..] else {
        return Err(Error::dim("conv3x3", format!("weight must be [C_out,C_in,3,3], got {:?}", w.shape())));
    };
    if wc_in != c_in || h == 0 || wd == 0 || stride == 0 {
        return Err(Error::dim(
            "conv3x3",
            format!("weight {:?} incompatible with input {:?}", w.shape(), x.shape()),
        ));
    }
    if b.shape() != [c_out] {
        return Err(Error::dim("conv3x3", format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok((c_in, c_out, h, wd))
}

/// Dense 3×3 convolution with zero padding 1 and the given stride.
pub fn conv3x3<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (c_in, c_out, h, wd) = conv3x3_shapes(x, w, b, stride)?;
    let (col, ho, wo) = im2col(x.data(), c_in, h, wd, stride);
    let n = ho * wo;
    let mut out = bias_fill(b.data(), n);
    matmul_rows(w.data(), c_in * 9, &col, n, &mut out);
    check_finite(Tensor::new(vec![c_out, ho, wo], out)?, "conv3x3")
}

pub fn conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (c_in, h, wd) = x.dims3().expect("checked in forward");
    let c_out = w.shape()[0];
    let k_dim = c_in * 9;
    let (col, ho, wo) = im2col(x.data(), c_in, h, wd, stride);
    let n = ho * wo;
    let g = gout.data();
    let mut gw = Vec::with_capacity(c_out * k_dim);
    let mut gb = Vec::with_capacity(c_out);
    for o in 0..c_out {
        let go = &g[o * n..(o + 1) * n];
        gb.push(go.iter().copied().sum());
        for k in 0..k_dim {
            gw.push(dot(go, &col[k * n..(k + 1) * n]));
        }
    }
    let gx = need_x.then(|| {
        let wt = transpose(w.data(), c_out, k_dim);
        let mut gcol = vec![T::zero(); k_dim * n];
        matmul_rows(&wt, c_out, g, n, &mut gcol);
        Tensor::new(x.shape().to_vec(), col2im(&gcol, c_in, h, wd, stride)).expect("shape")
    });
    (
        gx,
        Tensor::new(w.shape().to_vec(), gw).expect("shape"),
        Tensor::new(vec![c_out], gb).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// Depthwise 3x3 convolution (pad 1, stride 1, no bias)

/// Channel `c` is convolved only with kernel `c`; zero padding keeps the
/// spatial size.
pub fn depthwise_conv3x3<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, wd) = x.dims3()?;
    if w.shape() != [c, 3, 3] {
        return Err(Error::dim(
            "depthwise_conv3x3",
            format!("kernel must be [{c},3,3], got {:?}", w.shape()),
        ));
    }
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        let src = &xs[ci * h * wd..(ci + 1) * h * wd];
        let dst = &mut out[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..3 {
            for kx in 0..3 {
                let k = ws[ci * 9 + ky * 3 + kx];
                for i in 0..h {
                    let si = i as isize + ky as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let srow = &src[si as usize * wd..(si as usize + 1) * wd];
                    let drow = &mut dst[i * wd..(i + 1) * wd];
                    for (j, d) in drow.iter_mut().enumerate() {
                        let sj = j as isize + kx as isize - 1;
                        if sj >= 0 && sj < wd as isize {
                            *d = *d + k * srow[sj as usize];
                        }
                    }
                }
            }
        }
    }
    check_finite(Tensor::new(x.shape().to_vec(), out)?, "depthwise_conv3x3")
}

pub fn depthwise_conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (c, h, wd) = x.dims3().expect("checked in forward");
    let xs = x.data();
    let ws = w.data();
    let g = gout.data();
    let mut gw = vec![T::zero(); c * 9];
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    for ci in 0..c {
        let src = &xs[ci * h * wd..(ci + 1) * h * wd];
        let gplane = &g[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..3 {
            for kx in 0..3 {
                let k = ws[ci * 9 + ky * 3 + kx];
                let mut acc = T::zero();
                for i in 0..h {
                    let si = i as isize + ky as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let si = si as usize;
                    for j in 0..wd {
                        let sj = j as isize + kx as isize - 1;
                        if sj < 0 || sj >= wd as isize {
                            continue;
                        }
                        let gv = gplane[i * wd + j];
                        acc = acc + gv * src[si * wd + sj as usize];
                        if need_x {
                            let idx = ci * h * wd + si * wd + sj as usize;
                            gx[idx] = gx[idx] + k * gv;
                        }
                    }
                }
                gw[ci * 9 + ky * 3 + kx] = acc;
            }
        }
    }
    (
        need_x.then(|| Tensor::new(x.shape().to_vec(), gx).expect("shape")),
        Tensor::new(vec![c, 3, 3], gw).expect("shape"),
    )
}

/// Deliberate backward-rule faults, for negative controls of the gradient
/// checker. Faults are per-thread.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static RELU_PASSTHROUGH: Cell<bool> = const { Cell::new(false) };
    }

    pub(super) fn relu_passthrough() -> bool {
        RELU_PASSTHROUGH.with(Cell::get)
    }

    /// Runs `f` with ReLU's backward rule replaced by the identity.
    pub fn with_broken_relu_backward<R>(f: impl FnOnce() -> R) -> R {
        RELU_PASSTHROUGH.with(|c| c.set(true));
        let out = f();
        RELU_PASSTHROUGH.with(|c| c.set(false));
        out
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let leak = fault::relu_passthrough();
    let data = x
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&v, &g)| if v > T::zero() || leak { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid in terms of its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("shape")
}

// ---------------------------------------------------------------------------
// Spatial softmax

/// Per channel, normalises `exp(x - max)` over all `H·W` positions so each
/// channel sums to one.
pub fn softmax_spatial<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let n = h * w;
    let mut out = x.data().to_vec();
    if n == 0 {
        return Tensor::new(vec![c, h, w], out);
    }
    for plane in out.chunks_exact_mut(n) {
        let m = plane.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in plane.iter_mut() {
            *v = (*v - m).exp();
            sum = sum + *v;
        }
        for v in plane.iter_mut() {
            *v = *v / sum;
        }
    }
    check_finite(Tensor::new(vec![c, h, w], out)?, "softmax_spatial")
}

/// Backward of the spatial softmax in terms of its output `y`.
pub fn softmax_spatial_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = y.dims3().expect("checked in forward");
    let n = h * w;
    let mut gx = vec![T::zero(); c * n];
    for ci in 0..c {
        let s = &y.data()[ci * n..(ci + 1) * n];
        let g = &gout.data()[ci * n..(ci + 1) * n];
        let inner = dot(s, g);
        for ((d, &sv), &gv) in gx[ci * n..(ci + 1) * n].iter_mut().zip(s).zip(g) {
            *d = sv * (gv - inner);
        }
    }
    Tensor::new(y.shape().to_vec(), gx).expect("shape")
}

// ---------------------------------------------------------------------------
// Channel concat / slice, elementwise products

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (c1, h, w) = a.dims3()?;
    let (c2, h2, w2) = b.dims3()?;
    if (h, w) != (h2, w2) {
        return Err(Error::dim(
            "concat_channels",
            format!("spatial sizes {h}x{w} and {h2}x{w2} differ"),
        ));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![c1 + c2, h, w], data)
}

/// Channels `[start, start+len)` of a `[C,H,W]` tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if start + len > c {
        return Err(Error::dim(
            "slice_channels",
            format!("range {start}..{} exceeds {c} channels", start + len),
        ));
    }
    let n = h * w;
    Tensor::new(vec![len, h, w], x.data()[start * n..(start + len) * n].to_vec())
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("hadamard", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    check_finite(Tensor::new(a.shape().to_vec(), data)?, "hadamard")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    check_finite(Tensor::new(a.shape().to_vec(), data)?, "add")
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers, clamped)

/// Source taps `(lo, hi, frac)` for each destination index.
fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if h2 == 0 || w2 == 0 || h == 0 || w == 0 {
        return Err(Error::dim(
            "bilinear_resize",
            format!("cannot resize {h}x{w} to {h2}x{w2}"),
        ));
    }
    if (h, w) == (h2, w2) {
        return Ok(x.clone());
    }
    let ty = resize_taps(h, h2);
    let tx = resize_taps(w, w2);
    let mut out = Vec::with_capacity(c * h2 * w2);
    for plane in x.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &ty {
            let fy: T = lit(fy);
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &tx {
                let fx: T = lit(fx);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    check_finite(Tensor::new(vec![c, h2, w2], out)?, "bilinear_resize")
}

pub fn bilinear_resize_backward<T: Scalar>(in_shape: &[usize], gout: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (_, h2, w2) = gout.dims3().expect("3d");
    if (h, w) == (h2, w2) {
        return gout.clone();
    }
    let ty = resize_taps(h, h2);
    let tx = resize_taps(w, w2);
    let mut gx = vec![T::zero(); c * h * w];
    for (plane, gplane) in gx.chunks_exact_mut(h * w).zip(gout.data().chunks_exact(h2 * w2)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy: T = lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx: T = lit(fx);
                let g = gplane[oy * w2 + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                plane[y0 * w + x0] = plane[y0 * w + x0] + gt * (T::one() - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + gt * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + gb * (T::one() - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + gb * fx;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx).expect("shape")
}

// ---------------------------------------------------------------------------
// Max pooling to a target size

/// Max over non-overlapping `(H/h, W/w)` windows. Also returns the flat index
/// of the first maximum (row-major scan) of every window.
pub fn maxpool_to_with_argmax<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, hh, ww) = x.dims3()?;
    if h == 0 || w == 0 || hh % h != 0 || ww % w != 0 {
        return Err(Error::dim(
            "maxpool_to",
            format!("{hh}x{ww} is not divisible into {h}x{w} windows"),
        ));
    }
    let (py, px) = (hh / h, ww / w);
    let xs = x.data();
    let mut out = Vec::with_capacity(c * h * w);
    let mut arg = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for oy in 0..h {
            for ox in 0..w {
                let mut best = ci * hh * ww + oy * py * ww + ox * px;
                for dy in 0..py {
                    for dx in 0..px {
                        let idx = ci * hh * ww + (oy * py + dy) * ww + ox * px + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xs[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, h, w], out)?, arg))
}

pub fn maxpool_to<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    maxpool_to_with_argmax(x, h, w).map(|(t, _)| t)
}

pub fn maxpool_backward<T: Scalar>(in_shape: &[usize], argmax: &[usize], gout: &Tensor<T>) -> Tensor<T> {
    let mut gx = vec![T::zero(); in_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(gout.data()) {
        gx[idx] = gx[idx] + g;
    }
    Tensor::new(in_shape.to_vec(), gx).expect("shape")
}

// ---------------------------------------------------------------------------
// Losses

/// Mean squared difference over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    same_shape("mse", a, b)?;
    if a.is_empty() {
        return Err(Error::dim("mse", "empty tensors"));
    }
    let s = a
        .data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
    let v = s / lit(a.len() as f64);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op: "mse" })
    }
}

/// Gradient of `mse` w.r.t. `a` (the gradient w.r.t. `b` is its negation).
pub fn mse_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> Tensor<T> {
    let k = g * lit(2.0 / a.len() as f64);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| k * (x - y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

/// Mean of `max(z,0) - z·t + ln(1 + e^{-|z|})`.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    same_shape("bce_with_logits", logits, targets)?;
    if logits.is_empty() {
        return Err(Error::dim("bce_with_logits", "empty tensors"));
    }
    if let Some(bad) = targets.data().iter().find(|&&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::InvalidArgument(format!(
            "bce_with_logits target {bad:?} outside [0,1]"
        )));
    }
    let s = logits
        .data()
        .iter()
        .zip(targets.data())
        .fold(T::zero(), |s, (&z, &t)| s + z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p());
    let v = s / lit(logits.len() as f64);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op: "bce_with_logits" })
    }
}

pub fn bce_with_logits_backward<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>, g: T) -> Tensor<T> {
    let k = g / lit(logits.len() as f64);
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| k * (sigmoid_scalar(z) - t))
        .collect();
    Tensor::new(logits.shape().to_vec(), data).expect("shape")
}

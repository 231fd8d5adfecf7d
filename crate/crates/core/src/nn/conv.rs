//! Standard, depthwise and pointwise 2-D convolution.
//!
//! Convolution here is cross-correlation with zero padding. The standard
//! kernel lowers each image to a column matrix (im2col) and runs one GEMM;
//! a tape created with [`Tape::counting`] runs direct loops instead and
//! tallies every multiply-accumulate, padded taps included.

use crate::autodiff::{ConvImpl, Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Kernel tensor, optional bias, stride and padding for one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// (C_out, C_in, k, k); (C, 1, k, k) for depthwise kernels.
    pub kernel: Tensor,
    /// (1, C_out, 1, 1).
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    /// Kernel sizes the architecture may use: square and one of 1, 3, 5, 7.
    pub fn check_architecture_kernel(&self) -> Result<()> {
        let s = self.kernel.shape();
        if s.h != s.w || !matches!(s.h, 1 | 3 | 5 | 7) {
            return Err(Error::Config(format!(
                "kernel must be square with size in {{1,3,5,7}}, got {}x{}",
                s.h, s.w
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// floor((len + 2·padding − k) / stride) + 1, or a shape error when the
/// window does not fit.
pub fn output_extent(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    if k == 0 || len + 2 * padding < k {
        return shape_err(format!(
            "kernel {k} does not fit input extent {len} with padding {padding}"
        ));
    }
    Ok((len + 2 * padding - k) / stride + 1)
}

fn geometry(x: Shape, kh: usize, kw: usize, stride: usize, padding: usize) -> Result<ConvGeom> {
    Ok(ConvGeom {
        kh,
        kw,
        stride,
        padding,
        out_h: output_extent(x.h, kh, stride, padding)?,
        out_w: output_extent(x.w, kw, stride, padding)?,
    })
}

fn check_bias(bias: Option<&Var<'_>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s != Shape::new(1, channels, 1, 1) {
            return shape_err(format!("bias must be 1x{channels}x1x1, got {s}"));
        }
    }
    Ok(())
}

fn add_bias(out: &mut Tensor, bias: Option<&Var<'_>>) {
    if let Some(b) = bias {
        let b = b.value();
        let s = out.shape();
        let hw = s.spatial();
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let bv = b.data()[i % s.c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

impl<'t> Var<'t> {
    /// Standard convolution with a (C_out, C_in, kh, kw) kernel.
    pub fn conv2d(&self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), w.shape());
        if ws.c != xs.c {
            return shape_err(format!(
                "conv2d: input has {} channels but kernel {} expects {}",
                xs.c, ws, ws.c
            ));
        }
        check_bias(bias.as_ref(), ws.n)?;
        let geom = geometry(xs, ws.h, ws.w, stride, padding)?;
        let mut out = match self.tape.conv_impl() {
            ConvImpl::Im2col => conv2d_im2col(&x, &w, &geom),
            ConvImpl::NaiveCounting => {
                let (out, macs) = conv2d_naive(&x, &w, &geom);
                self.tape.add_macs(macs);
                out
            }
        };
        add_bias(&mut out, bias.as_ref());
        let mut inputs = vec![*self, weight];
        inputs.extend(bias);
        let op = Op::Conv2d {
            x: self.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            geom,
        };
        Ok(self.record(out, op, &inputs))
    }

    /// Per-channel convolution with a (C, 1, kh, kw) kernel.
    pub fn depthwise_conv2d(&self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), w.shape());
        if ws.n != xs.c || ws.c != 1 {
            return shape_err(format!(
                "depthwise_conv2d: input has {} channels but kernel is {} (expected {}x1xkxk)",
                xs.c, ws, xs.c
            ));
        }
        check_bias(bias.as_ref(), xs.c)?;
        let geom = geometry(xs, ws.h, ws.w, stride, padding)?;
        let (mut out, macs) = depthwise_forward(&x, &w, &geom);
        if self.tape.conv_impl() == ConvImpl::NaiveCounting {
            self.tape.add_macs(macs);
        }
        add_bias(&mut out, bias.as_ref());
        let mut inputs = vec![*self, weight];
        inputs.extend(bias);
        let op = Op::Depthwise {
            x: self.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            geom,
        };
        Ok(self.record(out, op, &inputs))
    }

    /// 1×1 convolution: a per-pixel linear map across channels.
    pub fn pointwise_conv2d(&self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let ws = weight.shape();
        if ws.h != 1 || ws.w != 1 {
            return Err(Error::Contract(format!(
                "pointwise convolution needs a 1x1 kernel, got {}x{}",
                ws.h, ws.w
            )));
        }
        self.conv2d(weight, bias, 1, 0)
    }
}

fn leaf_vars<'t>(tape: &'t Tape, x: &Tensor, p: &ConvParams) -> (Var<'t>, Var<'t>, Option<Var<'t>>) {
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(p.kernel.clone());
    let bv = p.bias.as_ref().map(|b| tape.leaf(b.clone()));
    (xv, wv, bv)
}

/// Tensor-level standard convolution.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let tape = Tape::new();
    let (xv, wv, bv) = leaf_vars(&tape, x, p);
    Ok((*xv.conv2d(wv, bv, p.stride, p.padding)?.value()).clone())
}

/// Tensor-level depthwise convolution.
pub fn depthwise_conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let tape = Tape::new();
    let (xv, wv, bv) = leaf_vars(&tape, x, p);
    Ok((*xv.depthwise_conv2d(wv, bv, p.stride, p.padding)?.value()).clone())
}

/// Tensor-level pointwise convolution. Requires k = 1, stride 1, padding 0.
pub fn pointwise_conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    if p.stride != 1 || p.padding != 0 {
        return Err(Error::Contract(format!(
            "pointwise convolution needs stride 1 and padding 0, got stride {} padding {}",
            p.stride, p.padding
        )));
    }
    let tape = Tape::new();
    let (xv, wv, bv) = leaf_vars(&tape, x, p);
    Ok((*xv.pointwise_conv2d(wv, bv)?.value()).clone())
}

/// C = A·B (+ beta·C), with A m×k and B k×n given by row/column strides and
/// C a dense row-major m×n buffer.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn source_index(out: usize, tap: usize, g: &ConvGeom, len: usize) -> Option<usize> {
    let pos = (out * g.stride + tap) as isize - g.padding as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

/// Outputs [lo, hi) whose tap `tap` lands inside an axis of length `len`.
#[inline]
fn valid_outputs(out: usize, tap: usize, g: &ConvGeom, len: usize) -> (usize, usize) {
    let s = g.stride;
    let lo = if g.padding > tap { (g.padding - tap).div_ceil(s) } else { 0 };
    let reach = len + g.padding;
    let hi = if reach > tap { ((reach - tap - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Upper bound on column-buffer elements; images are lowered in groups
/// that fit under it.
const COL_BUDGET: usize = 1 << 17;

fn group_size(ckk: usize, ohw: usize, n: usize) -> usize {
    (COL_BUDGET / (ckk * ohw).max(1)).clamp(1, n.max(1))
}

/// Unrolls one (C, H, W) image into rows of a (C·kh·kw)-row column matrix
/// with row stride `ld`, starting at column `off`.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, col: &mut [f64], ld: usize, off: usize) {
    let ohw = g.out_h * g.out_w;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut col[row * ld + off..row * ld + off + ohw];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(iy) = source_index(oy, i, g, h) else {
                        line.fill(0.0);
                        continue;
                    };
                    let (lo, hi) = valid_outputs(g.out_w, j, g, w);
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let row = &plane[iy * w..(iy + 1) * w];
                    let start = (lo * g.stride + j) as isize - g.padding as isize;
                    if g.stride == 1 {
                        let a = start as usize;
                        line[lo..hi].copy_from_slice(&row[a..a + (hi - lo)]);
                    } else {
                        for (k, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = row[start as usize + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adds the columns at `off` of a column matrix back onto a (C, H, W) image.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, img: &mut [f64], ld: usize, off: usize) {
    let ohw = g.out_h * g.out_w;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &col[row * ld + off..row * ld + off + ohw];
                for oy in 0..g.out_h {
                    let Some(iy) = source_index(oy, i, g, h) else {
                        continue;
                    };
                    let (lo, hi) = valid_outputs(g.out_w, j, g, w);
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in lo..hi {
                        plane[iy * w + ox * g.stride + j - g.padding] += line[ox];
                    }
                }
            }
        }
    }
}

/// Copies images [n0, n0+count) of an NCHW buffer with `c` channels into a
/// (c × count·hw) matrix, or back when `to_matrix` is false (adding).
fn gather_channels(nchw: &mut [f64], mat: &mut [f64], c: usize, hw: usize, n0: usize, count: usize, to_matrix: bool) {
    let ld = count * hw;
    for k in 0..count {
        for ch in 0..c {
            let src = (n0 + k) * c * hw + ch * hw;
            let dst = ch * ld + k * hw;
            if to_matrix {
                mat[dst..dst + hw].copy_from_slice(&nchw[src..src + hw]);
            } else {
                nchw[src..src + hw].iter_mut().zip(&mat[dst..dst + hw]).for_each(|(a, b)| *a += b);
            }
        }
    }
}

pub(crate) fn conv2d_im2col(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let out_shape = Shape::new(xs.n, ws.n, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let ohw = g.out_h * g.out_w;
    let ckk = ws.c * ws.h * ws.w;
    let img_len = xs.c * xs.spatial();
    let group = group_size(ckk, ohw, xs.n);
    let mut col = vec![0.0; ckk * ohw * group];
    let mut tmp = vec![0.0; ws.n * ohw * group];
    let mut n0 = 0;
    while n0 < xs.n {
        let count = group.min(xs.n - n0);
        let ld = count * ohw;
        for k in 0..count {
            let n = n0 + k;
            im2col(&x.data()[n * img_len..(n + 1) * img_len], xs.c, xs.h, xs.w, g, &mut col, ld, k * ohw);
        }
        gemm(ws.n, ckk, ld, w.data(), (ckk, 1), &col, (ld, 1), 0.0, &mut tmp);
        gather_channels(out.data_mut(), &mut tmp, ws.n, ohw, n0, count, false);
        n0 += count;
    }
    out
}

/// Direct seven-deep loop over every output and kernel tap. Returns the
/// output and the number of multiply-accumulates performed.
pub(crate) fn conv2d_naive(x: &Tensor, w: &Tensor, g: &ConvGeom) -> (Tensor, u64) {
    let (xs, ws) = (x.shape(), w.shape());
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, g.out_h, g.out_w));
    let mut macs = 0u64;
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for ci in 0..ws.c {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let xv = match (source_index(oy, i, g, xs.h), source_index(ox, j, g, xs.w)) {
                                    (Some(iy), Some(ix)) => x.at(n, ci, iy, ix),
                                    _ => 0.0,
                                };
                                acc += w.at(co, ci, i, j) * xv;
                                macs += 1;
                            }
                        }
                    }
                    let idx = out.shape().offset(n, co, oy, ox);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    (out, macs)
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
}

pub(crate) fn conv2d_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, g: &ConvGeom, need_input: bool) -> ConvGrads {
    let (xs, ws) = (x.shape(), w.shape());
    let ohw = g.out_h * g.out_w;
    let ckk = ws.c * ws.h * ws.w;
    let img_len = xs.c * xs.spatial();

    let mut dw = Tensor::zeros(ws);
    let mut dx = need_input.then(|| Tensor::zeros(xs));
    let group = group_size(ckk, ohw, xs.n);
    let mut col = vec![0.0; ckk * ohw * group];
    let mut dcol = vec![0.0; if need_input { ckk * ohw * group } else { 0 }];
    let mut gy = vec![0.0; ws.n * ohw * group];
    let mut grad = grad_out.data().to_vec();

    let mut n0 = 0;
    while n0 < xs.n {
        let count = group.min(xs.n - n0);
        let ld = count * ohw;
        for k in 0..count {
            let n = n0 + k;
            im2col(&x.data()[n * img_len..(n + 1) * img_len], xs.c, xs.h, xs.w, g, &mut col, ld, k * ohw);
        }
        gather_channels(&mut grad, &mut gy, ws.n, ohw, n0, count, true);
        // dW += dY · colᵀ
        gemm(ws.n, ld, ckk, &gy, (ld, 1), &col, (1, ld), 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ · dY
            gemm(ckk, ws.n, ld, w.data(), (1, ckk), &gy, (ld, 1), 0.0, &mut dcol);
            for k in 0..count {
                let n = n0 + k;
                let dst = &mut dx.data_mut()[n * img_len..(n + 1) * img_len];
                col2im(&dcol, xs.c, xs.h, xs.w, g, dst, ld, k * ohw);
            }
        }
        n0 += count;
    }
    ConvGrads { input: dx, weight: dw }
}

/// Sum of the upstream gradient over batch and spatial axes, as (1, C, 1, 1).
pub(crate) fn bias_grad(grad_out: &Tensor) -> Tensor {
    let s = grad_out.shape();
    let mut db = vec![0.0; s.c];
    for (i, chunk) in grad_out.data().chunks(s.spatial()).enumerate() {
        db[i % s.c] += chunk.iter().sum::<f64>();
    }
    Tensor::new((1, s.c, 1, 1), db).expect("bias length")
}

/// Depthwise forward over every tap (padded taps contribute zero). Returns
/// the output and the multiply-accumulate count.
pub(crate) fn depthwise_forward(x: &Tensor, w: &Tensor, g: &ConvGeom) -> (Tensor, u64) {
    let xs = x.shape();
    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, g.out_h, g.out_w));
    let (ohw, hw) = (g.out_h * g.out_w, xs.spatial());
    let taps = g.kh * g.kw;
    for (p, (dst, src)) in out.data_mut().chunks_mut(ohw).zip(x.data().chunks(hw)).enumerate() {
        let c = p % xs.c;
        let k = &w.data()[c * taps..(c + 1) * taps];
        for_each_tap(g, xs.h, xs.w, |i, j, oy, lo, hi, iy| {
            let wv = k[i * g.kw + j];
            let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
            let srow = &src[iy * xs.w..(iy + 1) * xs.w];
            for ox in lo..hi {
                drow[ox] += wv * srow[ox * g.stride + j - g.padding];
            }
        });
    }
    (out, (xs.n * xs.c * ohw * taps) as u64)
}

/// Calls `f(i, j, oy, lo, hi, iy)` for every kernel tap (i, j) and output
/// row oy whose source row iy is in bounds; [lo, hi) are the in-bounds
/// output columns.
#[inline]
fn for_each_tap(g: &ConvGeom, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for i in 0..g.kh {
        let (ylo, yhi) = valid_outputs(g.out_h, i, g, h);
        for j in 0..g.kw {
            let (lo, hi) = valid_outputs(g.out_w, j, g, w);
            for oy in ylo..yhi {
                f(i, j, oy, lo, hi, oy * g.stride + i - g.padding);
            }
        }
    }
}

pub(crate) fn depthwise_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, g: &ConvGeom) -> (Tensor, Tensor) {
    let xs = x.shape();
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(w.shape());
    let (ohw, hw) = (g.out_h * g.out_w, xs.spatial());
    let taps = g.kh * g.kw;
    let planes = dx.data_mut().chunks_mut(hw).zip(x.data().chunks(hw)).zip(grad_out.data().chunks(ohw));
    for (p, ((dxp, xp), gp)) in planes.enumerate() {
        let c = p % xs.c;
        let k = &w.data()[c * taps..(c + 1) * taps];
        let dk = &mut dw.data_mut()[c * taps..(c + 1) * taps];
        for_each_tap(g, xs.h, xs.w, |i, j, oy, lo, hi, iy| {
            let t = i * g.kw + j;
            let grow = &gp[oy * g.out_w..(oy + 1) * g.out_w];
            let base = iy * xs.w + j;
            let mut acc = 0.0;
            for ox in lo..hi {
                let xi = base + ox * g.stride - g.padding;
                dxp[xi] += k[t] * grow[ox];
                acc += xp[xi] * grow[ox];
            }
            dk[t] += acc;
        });
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn all_ones_window_sums() {
        let x = Tensor::ones((1, 1, 3, 3));
        let p = ConvParams::new(Tensor::ones((1, 1, 2, 2)), None, 1, 0);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn diagonal_kernel_is_cross_correlation() {
        let x = t((1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let p = ConvParams::new(t((1, 1, 2, 2), &[1.0, 0.0, 0.0, 1.0]), None, 1, 0);
        assert_eq!(conv2d(&x, &p).unwrap().data(), &[5.0]);
        // A flipped convolution would read the anti-diagonal instead.
        let p = ConvParams::new(t((1, 1, 2, 2), &[0.0, 1.0, 0.0, 0.0]), None, 1, 0);
        assert_eq!(conv2d(&x, &p).unwrap().data(), &[2.0]);
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let x = Tensor::from_fn((2, 1, 3, 4), |n, _, h, w| (n * 12 + h * 4 + w) as f64 - 5.0);
        let p = ConvParams::new(Tensor::full((1, 1, 1, 1), 2.0), None, 1, 0);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::zeros((1, 1, 2, 2));
        let p = ConvParams::new(Tensor::ones((2, 1, 1, 1)), Some(t((1, 2, 1, 1), &[1.0, -3.0])), 1, 0);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 1.0, -3.0, -3.0, -3.0, -3.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros((1, 2, 3, 3));
        let p = ConvParams::new(Tensor::zeros((1, 3, 3, 3)), None, 1, 0);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        let p = ConvParams::new(Tensor::zeros((1, 2, 5, 5)), None, 1, 0);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        let p = ConvParams::new(Tensor::zeros((1, 2, 5, 5)), None, 1, 1);
        assert_eq!(conv2d(&x, &p).unwrap().shape(), Shape::new(1, 1, 1, 1));
    }

    #[test]
    fn strided_padded_extent() {
        assert_eq!(output_extent(9, 3, 2, 1).unwrap(), 5);
        assert_eq!(output_extent(4, 7, 1, 3).unwrap(), 4);
        assert!(output_extent(2, 7, 1, 2).is_err());
    }

    #[test]
    fn depthwise_identity_kernels() {
        let x = Tensor::from_fn((1, 2, 3, 3), |_, c, h, w| (c * 9 + h * 3 + w) as f64);
        let p = ConvParams::new(Tensor::ones((2, 1, 1, 1)), None, 1, 0);
        assert_eq!(depthwise_conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn depthwise_channels_are_independent() {
        let x = Tensor::from_fn((1, 2, 4, 4), |_, c, h, w| 1.0 + (c * 16 + h * 4 + w) as f64);
        let mut k = Tensor::zeros((2, 1, 3, 3));
        k.data_mut()[9 + 4] = 1.0; // centre tap of channel 1
        let p = ConvParams::new(k, None, 1, 1);
        let y = depthwise_conv2d(&x, &p).unwrap();
        for h in 0..4 {
            for w in 0..4 {
                assert_eq!(y.at(0, 0, h, w), 0.0);
                assert_eq!(y.at(0, 1, h, w), x.at(0, 1, h, w));
            }
        }
    }

    #[test]
    fn depthwise_single_channel_matches_conv() {
        let x = Tensor::from_fn((2, 1, 5, 5), |n, _, h, w| ((n + 1) * (h * 5 + w)) as f64 * 0.1 - 1.0);
        let k = Tensor::from_fn((1, 1, 3, 3), |_, _, i, j| (i as f64 - 1.0) * 0.5 + j as f64);
        let p = ConvParams::new(k, None, 2, 1);
        let a = depthwise_conv2d(&x, &p).unwrap();
        let b = conv2d(&x, &p).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn depthwise_count_mismatch() {
        let x = Tensor::zeros((1, 3, 3, 3));
        let p = ConvParams::new(Tensor::zeros((2, 1, 3, 3)), None, 1, 1);
        assert!(matches!(depthwise_conv2d(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn pointwise_examples() {
        let x = Tensor::from_fn((1, 3, 2, 2), |_, c, h, w| (c * 4 + h * 2 + w) as f64);
        let eye = Tensor::from_fn((3, 3, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let p = ConvParams::new(eye, None, 1, 0);
        assert_eq!(pointwise_conv2d(&x, &p).unwrap(), x);

        let x = Tensor::from_fn((1, 2, 1, 3), |_, c, _, w| (10 * c + w) as f64);
        let p = ConvParams::new(Tensor::ones((1, 2, 1, 1)), None, 1, 0);
        assert_eq!(pointwise_conv2d(&x, &p).unwrap().data(), &[10.0, 12.0, 14.0]);

        let p = ConvParams::new(Tensor::ones((1, 2, 3, 3)), None, 1, 1);
        assert!(matches!(pointwise_conv2d(&x, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn pointwise_equals_conv_bitwise() {
        let x = Tensor::from_fn((2, 4, 3, 3), |n, c, h, w| ((n * 7 + c * 5 + h * 3 + w) % 11) as f64 / 7.0 - 0.6);
        let k = Tensor::from_fn((3, 4, 1, 1), |o, i, _, _| (o as f64 - 1.3) * (i as f64 + 0.25));
        let p = ConvParams::new(k, Some(Tensor::full((1, 3, 1, 1), 0.1)), 1, 0);
        assert_eq!(pointwise_conv2d(&x, &p).unwrap(), conv2d(&x, &p).unwrap());
    }

    #[test]
    fn naive_counting_tape_matches_and_counts() {
        let x = Tensor::from_fn((2, 3, 6, 5), |n, c, h, w| ((n + c * 3 + h * 5 + w * 7) % 13) as f64 - 6.0);
        let k = Tensor::from_fn((4, 3, 3, 3), |o, i, a, b| ((o + i + a * 2 + b) % 5) as f64 - 2.0);
        let fast = Tape::new();
        let a = fast.leaf(x.clone()).conv2d(fast.leaf(k.clone()), None, 2, 1).unwrap().value();
        let slow = Tape::counting();
        let b = slow.leaf(x).conv2d(slow.leaf(k), None, 2, 1).unwrap().value();
        assert!(a.max_abs_diff(&b) < 1e-12);
        let s = b.shape();
        assert_eq!(slow.macs(), (s.n * s.c * s.h * s.w * 3 * 9) as u64);
        assert_eq!(fast.macs(), 0);
    }

    #[test]
    fn architecture_kernel_rule() {
        let ok = ConvParams::new(Tensor::zeros((1, 1, 5, 5)), None, 1, 2);
        assert!(ok.check_architecture_kernel().is_ok());
        let bad = ConvParams::new(Tensor::zeros((1, 1, 2, 2)), None, 1, 0);
        assert!(bad.check_architecture_kernel().is_err());
    }
}

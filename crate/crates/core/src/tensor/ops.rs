//! Forward and backward kernels. The tape in `tape.rs` decides which of
//! these run; nothing here knows about graph bookkeeping.

use super::gemm::{gemm, Layout};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Running-average momentum for batch statistics (weight on the old value).
pub const BN_MOMENTUM: f64 = 0.9;
/// Variance floor for batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Whether batch norm normalizes by batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

fn conv_out_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::invalid(
            op,
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::invalid(
            op,
            format!("output extent ({size} + 2*{pad} - {k})/{stride} + 1 is not an integer"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[n, cin, h, wd], &[cout, wcin, kh, kw]) = (x, w) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        };
        if cin != wcin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        }
        if b != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: w.to_vec(),
                rhs: b.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let ho = conv_out_extent("conv2d", h, kh, stride, pad)?;
        let wo = conv_out_extent("conv2d", wd, kw, stride, pad)?;
        Ok(ConvGeometry {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let p = self.out_pixels();
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let p = self.out_pixels();
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), b.shape(), stride, pad)?;
    let p = g.out_pixels();
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for s in 0..g.n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let os = &mut out[s * out_per..(s + 1) * out_per];
        for (co, row) in os.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = b.data()[co]);
        }
        let src: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        gemm(g.cout, g.patch(), p, w.data(), Layout::Normal, src, Layout::Normal, os, true);
    }
    Tensor::from_vec(vec![g.n, g.cout, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let bshape = [w.shape()[0]];
    let g = ConvGeometry::new(x.shape(), w.shape(), &bshape, stride, pad)?;
    let p = g.out_pixels();
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut dx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.numel()]);
    let mut db = need[2].then(|| vec![T::zero(); g.cout]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for s in 0..g.n {
        let dys = &dy.data()[s * out_per..(s + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (co, row) in dys.chunks(p).enumerate() {
                db[co] = row.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x.data()[s * in_per..(s + 1) * in_per];
            let src: &[T] = if g.is_pointwise() {
                xs
            } else {
                g.im2col(xs, &mut col);
                &col
            };
            // dW (Cout×CK) += dY (Cout×P) · colᵀ (P×CK)
            gemm(g.cout, p, g.patch(), dys, Layout::Normal, src, Layout::Transposed, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                gemm(g.cin, g.cout, p, w.data(), Layout::Transposed, dys, Layout::Normal, dxs, true);
            } else {
                gemm(g.patch(), g.cout, p, w.data(), Layout::Transposed, dys, Layout::Normal, &mut col, false);
                g.col2im(&col, dxs);
            }
        }
    }
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape().to_vec(), d)).transpose()?,
        dw: dw.map(|d| Tensor::from_vec(w.shape().to_vec(), d)).transpose()?,
        db: db.map(|d| Tensor::from_vec(vec![g.cout], d)).transpose()?,
    })
}

/// Values the batch-norm backward pass needs.
pub(crate) struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

fn check_bn_shapes<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = x.dims4("batch_norm")?;
    let c = dims[1];
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    if dims[0] * dims[2] * dims[3] == 0 {
        return Err(Error::invalid("batch_norm", "N·H·W must be at least 1"));
    }
    Ok(dims)
}

pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: BatchNormMode,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let [n, c, h, w] = check_bn_shapes(x, gamma, beta)?;
    if stats.channels() != c {
        return Err(Error::invalid(
            "batch_norm",
            format!("running stats have {} channels, input has {c}", stats.channels()),
        ));
    }
    let hw = h * w;
    let count = n * hw;
    let eps = T::from_f64(BN_EPS);
    let mom = T::from_f64(BN_MOMENTUM);
    let xd = x.data();
    let mut xhat = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); c];
    let inv_count = T::one() / T::from_f64(count as f64);
    for ch in 0..c {
        let plane = |s: usize| s * c * hw + ch * hw;
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut sum = T::zero();
                for s in 0..n {
                    sum = xd[plane(s)..plane(s) + hw].iter().fold(sum, |a, &v| a + v);
                }
                let mean = sum * inv_count;
                let mut sq = T::zero();
                for s in 0..n {
                    sq = xd[plane(s)..plane(s) + hw].iter().fold(sq, |a, &v| a + (v - mean) * (v - mean));
                }
                let var = sq * inv_count;
                let unbiased = if count > 1 {
                    sq / T::from_f64((count - 1) as f64)
                } else {
                    var
                };
                stats.mean[ch] = mom * stats.mean[ch] + (T::one() - mom) * mean;
                stats.var[ch] = mom * stats.var[ch] + (T::one() - mom) * unbiased;
                (mean, var)
            }
            BatchNormMode::Eval => (stats.mean[ch], stats.var[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for s in 0..n {
            let o = plane(s);
            for i in o..o + hw {
                let xh = (xd[i] - mean) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape().to_vec(), out)?,
        BnSaved { xhat, inv_std },
    ))
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    mode: BatchNormMode,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = T::from_f64((n * hw) as f64);
    let dyd = dy.data();
    let mut dx = vec![T::zero(); dyd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let planes = || (0..n).map(move |s| s * c * hw + ch * hw);
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for o in planes() {
            for i in o..o + hw {
                sum_dy = sum_dy + dyd[i];
                sum_dy_xhat = sum_dy_xhat + dyd[i] * saved.xhat[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let g = gamma.data()[ch];
        let is = saved.inv_std[ch];
        match mode {
            BatchNormMode::Train => {
                let scale = g * is / count;
                for o in planes() {
                    for i in o..o + hw {
                        dx[i] = scale * (count * dyd[i] - sum_dy - saved.xhat[i] * sum_dy_xhat);
                    }
                }
            }
            BatchNormMode::Eval => {
                for o in planes() {
                    for i in o..o + hw {
                        dx[i] = dyd[i] * g * is;
                    }
                }
            }
        }
    }
    (
        Tensor { shape: shape.to_vec(), data: dx },
        Tensor { shape: vec![c], data: dgamma },
        Tensor { shape: vec![c], data: dbeta },
    )
}

/// 2×2 stride-2 max pooling. Returns the flat input index of each maximum.
pub(crate) fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims4("max_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(
            "max_pool2",
            format!("spatial extents must be even, got {h}×{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                // row-major window scan; strict > keeps the first maximum, and
                // a NaN wins so it propagates
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] || (xd[i].is_nan() && !xd[best].is_nan()) {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(vec![n, c, ho, wo], out)?, arg))
}

pub(crate) fn upsample_nearest2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("upsample_nearest2")?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    Tensor::from_vec(vec![n, c, ho, wo], out)
}

pub(crate) fn upsample_nearest2_backward<T: Scalar>(shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let wo = 2 * w;
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &dy.data()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let o = 2 * y * wo + 2 * x;
                dx[plane * h * w + y * w + x] = src[o] + src[o + 1] + src[o + wo] + src[o + wo + 1];
            }
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: dx,
    }
}

pub(crate) fn concat_channels_forward<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut total = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        total += xc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for x in xs {
            let per = x.shape()[1] * hw;
            out.extend_from_slice(&x.data()[s * per..(s + 1) * per]);
        }
    }
    Tensor::from_vec(vec![n, total, h, w], out)
}

/// Channels `[start, start + len)` of an `N×C×H×W` tensor.
pub(crate) fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("slice_channels")?;
    if start + len > c {
        return Err(Error::invalid(
            "slice_channels",
            format!("range {start}..{} exceeds {c} channels", start + len),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for s in 0..n {
        let base = (s * c + start) * hw;
        out.extend_from_slice(&x.data()[base..base + len * hw]);
    }
    Tensor::from_vec(vec![n, len, h, w], out)
}

/// Adds `src` (channels `[start, start+len)`) into the matching slice of `dst`.
pub(crate) fn scatter_add_channels<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, start: usize) {
    let (n, c, hw) = (dst.shape[0], dst.shape[1], dst.shape[2] * dst.shape[3]);
    let len = src.shape[1];
    for s in 0..n {
        let d = &mut dst.data[(s * c + start) * hw..(s * c + start + len) * hw];
        let sv = &src.data[s * len * hw..(s + 1) * len * hw];
        d.iter_mut().zip(sv).for_each(|(a, &b)| *a = *a + b);
    }
}

pub(crate) fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

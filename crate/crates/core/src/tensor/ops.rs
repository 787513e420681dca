use rayon::prelude::*;

use super::{Element, Real, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2D convolution, resolved against concrete input dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Validates `x` (N×C×H×W) against `kernel` (O×C/g×KH×KW) and computes the
    /// output size `floor((in + 2·pad − k) / stride) + 1` per axis.
    pub fn resolve(
        x_dims: &[usize],
        kernel_dims: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        let [batch, in_channels, in_h, in_w] = *x_dims else {
            return Err(Error::shape(format!("conv2d input must be rank 4, got dims {x_dims:?}")));
        };
        let [out_channels, per_group, kernel_h, kernel_w] = *kernel_dims else {
            return Err(Error::shape(format!(
                "conv2d kernel must be rank 4, got dims {kernel_dims:?}"
            )));
        };
        if groups == 0 {
            return Err(Error::Argument("conv2d groups must be positive".into()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Argument(format!("conv2d stride {stride:?} has a zero axis")));
        }
        if in_channels % groups != 0 {
            return Err(Error::shape(format!(
                "channel axis: {in_channels} input channels not divisible by {groups} groups"
            )));
        }
        if out_channels % groups != 0 {
            return Err(Error::shape(format!(
                "kernel output-channel axis: {out_channels} not divisible by {groups} groups"
            )));
        }
        if per_group != in_channels / groups {
            return Err(Error::shape(format!(
                "kernel input-channel axis: expected {} (= {in_channels}/{groups}), got {per_group}",
                in_channels / groups
            )));
        }
        let out_len = |axis: &str, n: usize, k: usize, p: usize, s: usize| -> Result<usize> {
            if n + 2 * p < k {
                return Err(Error::shape(format!(
                    "{axis} axis: kernel {k} exceeds padded extent {}",
                    n + 2 * p
                )));
            }
            Ok((n + 2 * p - k) / s + 1)
        };
        let out_h = out_len("height", in_h, kernel_h, padding.0, stride.0)?;
        let out_w = out_len("width", in_w, kernel_w, padding.1, stride.1)?;
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            groups,
            out_h,
            out_w,
        })
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Multiply-accumulates for one forward pass.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.in_per_group() * self.kernel_h * self.kernel_w)
            as u64
            * (self.out_h * self.out_w) as u64
    }

    /// Output indices `o` along one axis whose input tap `o·s + k − p` lands
    /// inside `[0, n)`.
    fn valid_range(n: usize, out: usize, k: usize, p: usize, s: usize) -> std::ops::Range<usize> {
        // o·s + k ≥ p  and  o·s + k − p ≤ n − 1
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) }.min(out);
        let hi = if n + p <= k { 0 } else { ((n + p - k - 1) / s + 1).min(out) };
        lo..hi.max(lo)
    }
}

/// Direct-summation 2D convolution (cross-correlation) with zero padding.
///
/// `x` is N×C×H×W, `kernel` is O×(C/groups)×KH×KW and `bias`, if given, has
/// O elements.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::resolve(x.dims(), kernel.dims(), stride, padding, groups)?;
    if let Some(b) = bias {
        if b.len() != g.out_channels {
            return Err(Error::shape(format!(
                "bias axis: expected {} elements, got dims {:?}",
                g.out_channels,
                b.dims()
            )));
        }
    }
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let cin_g = g.in_per_group();
    let (xs, ws) = (x.data(), kernel.data());
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, dst)| {
        let n = idx / g.out_channels;
        let o = idx % g.out_channels;
        let group = o / g.out_per_group();
        if let Some(b) = bias {
            dst.fill(b.data()[o]);
        }
        for cl in 0..cin_g {
            let ci = group * cin_g + cl;
            let src = &xs[(n * g.in_channels + ci) * plane_in..][..plane_in];
            for kh in 0..g.kernel_h {
                let rows = ConvGeometry::valid_range(g.in_h, g.out_h, kh, g.padding.0, g.stride.0);
                for kw in 0..g.kernel_w {
                    let wv = ws[((o * cin_g + cl) * g.kernel_h + kh) * g.kernel_w + kw];
                    let cols =
                        ConvGeometry::valid_range(g.in_w, g.out_w, kw, g.padding.1, g.stride.1);
                    if cols.is_empty() {
                        continue;
                    }
                    for oh in rows.clone() {
                        let ih = oh * g.stride.0 + kh - g.padding.0;
                        let drow = &mut dst[oh * g.out_w..][..g.out_w];
                        let srow = &src[ih * g.in_w..][..g.in_w];
                        if g.stride.1 == 1 {
                            let off = cols.start + kw - g.padding.1;
                            for (d, &s) in drow[cols.clone()].iter_mut().zip(&srow[off..]) {
                                *d += wv * s;
                            }
                        } else {
                            for ow in cols.clone() {
                                drow[ow] += wv * srow[ow * g.stride.1 + kw - g.padding.1];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(g.output_dims(), out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &ConvGeometry,
) -> Tensor<T> {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let cin_g = g.in_per_group();
    let cout_g = g.out_per_group();
    let (gs, ws) = (grad_out.data(), kernel.data());
    let mut gx = vec![T::zero(); g.batch * g.in_channels * plane_in];
    gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, dst)| {
        let n = idx / g.in_channels;
        let ci = idx % g.in_channels;
        let group = ci / cin_g;
        let cl = ci % cin_g;
        for o in group * cout_g..(group + 1) * cout_g {
            let src = &gs[(n * g.out_channels + o) * plane_out..][..plane_out];
            for kh in 0..g.kernel_h {
                let rows = ConvGeometry::valid_range(g.in_h, g.out_h, kh, g.padding.0, g.stride.0);
                for kw in 0..g.kernel_w {
                    let wv = ws[((o * cin_g + cl) * g.kernel_h + kh) * g.kernel_w + kw];
                    let cols =
                        ConvGeometry::valid_range(g.in_w, g.out_w, kw, g.padding.1, g.stride.1);
                    for oh in rows.clone() {
                        let ih = oh * g.stride.0 + kh - g.padding.0;
                        let srow = &src[oh * g.out_w..][..g.out_w];
                        let drow = &mut dst[ih * g.in_w..][..g.in_w];
                        for ow in cols.clone() {
                            drow[ow * g.stride.1 + kw - g.padding.1] += wv * srow[ow];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![g.batch, g.in_channels, g.in_h, g.in_w], gx).expect("input dims")
}

/// Gradients of [`conv2d`] with respect to its kernel and bias.
pub fn conv2d_param_grads<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    g: &ConvGeometry,
) -> (Tensor<T>, Tensor<T>) {
    let plane_out = g.out_h * g.out_w;
    let plane_in = g.in_h * g.in_w;
    let cin_g = g.in_per_group();
    let ksize = g.kernel_h * g.kernel_w;
    let (gs, xs) = (grad_out.data(), x.data());
    let mut gw = vec![T::zero(); g.out_channels * cin_g * ksize];
    gw.par_chunks_mut(cin_g * ksize).enumerate().for_each(|(o, dst)| {
        let group = o / g.out_per_group();
        for n in 0..g.batch {
            let gplane = &gs[(n * g.out_channels + o) * plane_out..][..plane_out];
            for cl in 0..cin_g {
                let ci = group * cin_g + cl;
                let src = &xs[(n * g.in_channels + ci) * plane_in..][..plane_in];
                for kh in 0..g.kernel_h {
                    let rows =
                        ConvGeometry::valid_range(g.in_h, g.out_h, kh, g.padding.0, g.stride.0);
                    for kw in 0..g.kernel_w {
                        let cols = ConvGeometry::valid_range(
                            g.in_w, g.out_w, kw, g.padding.1, g.stride.1,
                        );
                        let mut acc = T::zero();
                        for oh in rows.clone() {
                            let ih = oh * g.stride.0 + kh - g.padding.0;
                            let grow = &gplane[oh * g.out_w..][..g.out_w];
                            let srow = &src[ih * g.in_w..][..g.in_w];
                            for ow in cols.clone() {
                                acc += grow[ow] * srow[ow * g.stride.1 + kw - g.padding.1];
                            }
                        }
                        dst[cl * ksize + kh * g.kernel_w + kw] += acc;
                    }
                }
            }
        }
    });
    let mut gb = vec![T::zero(); g.out_channels];
    for n in 0..g.batch {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gs[(n * g.out_channels + o) * plane_out..][..plane_out].iter().copied().sum();
        }
    }
    (
        Tensor::new(vec![g.out_channels, cin_g, g.kernel_h, g.kernel_w], gw).expect("kernel dims"),
        Tensor::new(vec![g.out_channels], gb).expect("bias dims"),
    )
}

/// Mean over the spatial positions of each (sample, channel): N×C×H×W → N×C×1×1.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    let count = T::lit((h * w) as f64);
    let data = x.data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() / count).collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

/// Source position and interpolation weight for output index `i` when
/// resizing length `from` to length `to` with aligned corners. Returns
/// `(lo, hi, frac)`: the output is `(1 − frac)·v[lo] + frac·v[hi]`.
pub fn resize_taps(from: usize, to: usize, i: usize) -> (usize, usize, f64) {
    if from == 1 {
        return (0, 0, 0.0);
    }
    if to == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (from - 1) as f64 / (to - 1) as f64;
    let lo = (pos.floor() as usize).min(from - 1);
    let hi = (lo + 1).min(from - 1);
    let frac = pos - lo as f64;
    if lo == hi {
        (lo, hi, 0.0)
    } else {
        (lo, hi, frac)
    }
}

/// Linear interpolation of a 1D sequence to `target_len` samples with
/// aligned corners: output `i` samples position `i·(len − 1)/(target_len − 1)`.
/// A single input element is replicated; `target_len == 1` selects `v[0]`.
pub fn bilinear_resize_1d<T: Real>(v: &[T], target_len: usize) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Argument("cannot resize an empty vector".into()));
    }
    if target_len == 0 {
        return Err(Error::Argument("target length must be at least 1".into()));
    }
    if target_len == v.len() {
        return Ok(v.to_vec());
    }
    Ok((0..target_len)
        .map(|i| {
            let (lo, hi, frac) = resize_taps(v.len(), target_len, i);
            if frac == 0.0 {
                v[lo]
            } else {
                let f = T::lit(frac);
                v[lo] * (T::one() - f) + v[hi] * f
            }
        })
        .collect())
}

/// Resizes every row of a C×L matrix to C×`target_len`.
pub fn resize_rows<T: Real>(m: &Tensor<T>, target_len: usize) -> Result<Tensor<T>> {
    let [rows, len] = *m.dims() else {
        return Err(Error::shape(format!("resize_rows expects a matrix, got dims {:?}", m.dims())));
    };
    let mut data = Vec::with_capacity(rows * target_len);
    for row in m.data().chunks_exact(len) {
        data.extend(bilinear_resize_1d(row, target_len)?);
    }
    Tensor::new(vec![rows, target_len], data)
}

/// Adjoint of [`resize_rows`]: maps a gradient on C×`to` back onto C×`from`.
pub fn resize_rows_adjoint<T: Real>(grad: &Tensor<T>, from: usize) -> Tensor<T> {
    let [rows, to] = *grad.dims() else { panic!("matrix gradient expected") };
    if from == to {
        return grad.clone();
    }
    let mut out = vec![T::zero(); rows * from];
    for (r, g) in grad.data().chunks_exact(to).enumerate() {
        let dst = &mut out[r * from..][..from];
        for (i, &gv) in g.iter().enumerate() {
            let (lo, hi, frac) = resize_taps(from, to, i);
            if frac == 0.0 {
                dst[lo] += gv;
            } else {
                let f = T::lit(frac);
                dst[lo] += gv * (T::one() - f);
                dst[hi] += gv * f;
            }
        }
    }
    Tensor::new(vec![rows, from], out).expect("dims")
}

fn same_dims<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{op}: operand dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn zip_with<T: Real>(
    op: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_dims(op, a, b)?;
    Tensor::new(a.dims().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|v| v * s)
}

pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn silu_scalar<T: Real>(v: T) -> T {
    v * sigmoid_scalar(v)
}

/// d/dv of `v·σ(v)`.
pub fn silu_grad_scalar<T: Real>(v: T) -> T {
    let s = sigmoid_scalar(v);
    s * (T::one() + v * (T::one() - s))
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn silu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(silu_scalar)
}

/// Fully connected layer: `x` is N×In, `weight` is Out×In, `bias` has Out
/// elements. Returns N×Out.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n, fin] = *x.dims() else {
        return Err(Error::shape(format!("linear input must be N×In, got dims {:?}", x.dims())));
    };
    let [fout, win] = *weight.dims() else {
        return Err(Error::shape(format!("linear weight must be Out×In, got dims {:?}", weight.dims())));
    };
    if win != fin {
        return Err(Error::shape(format!("linear in-feature axis: input has {fin}, weight expects {win}")));
    }
    if let Some(b) = bias {
        if b.len() != fout {
            return Err(Error::shape(format!("linear bias axis: expected {fout}, got dims {:?}", b.dims())));
        }
    }
    let mut out = Vec::with_capacity(n * fout);
    for row in x.data().chunks_exact(fin) {
        for (o, wrow) in weight.data().chunks_exact(fin).enumerate() {
            let mut acc = bias.map_or(T::zero(), |b| b.data()[o]);
            for (&a, &b) in row.iter().zip(wrow) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![n, fout], out)
}

/// Per-(sample, group) statistics saved by [`group_norm_with_stats`].
#[derive(Debug, Clone)]
pub struct GroupNormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Group normalization: each sample's channels are split into `groups`
/// contiguous groups, each normalized to zero mean and unit variance, then
/// scaled by `gamma` and shifted by `beta` per channel.
pub fn group_norm<T: Real>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    group_norm_with_stats(x, groups, gamma, beta, eps).map(|(y, _)| y)
}

pub fn group_norm_with_stats<T: Real>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, GroupNormStats<T>)> {
    let (n, c, h, w) = x.nchw()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(format!("channel axis: {c} channels not divisible into {groups} groups")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "group_norm affine axis: expected {c} channels, got gamma {:?} beta {:?}",
            gamma.dims(),
            beta.dims()
        )));
    }
    let group_len = (c / groups) * h * w;
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    let mut stats: Vec<(T, T)> = vec![(T::zero(), T::zero()); n * groups];
    out.par_chunks_mut(group_len)
        .zip(x.data().par_chunks(group_len))
        .zip(stats.par_iter_mut())
        .enumerate()
        .for_each(|(idx, ((dst, src), st))| {
            let count = T::lit(group_len as f64);
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let rstd = T::one() / (var + eps).sqrt();
            let c0 = (idx % groups) * (c / groups);
            for (k, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
                let ch = c0 + k / plane;
                *d = (s - mean) * rstd * gamma.data()[ch] + beta.data()[ch];
            }
            *st = (mean, rstd);
        });
    let (mean, rstd) = stats.into_iter().unzip();
    Ok((Tensor::new(x.dims().to_vec(), out)?, GroupNormStats { mean, rstd }))
}

/// Gradients of group norm: `(dx, dgamma, dbeta)`.
pub fn group_norm_grads<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    groups: usize,
    stats: &GroupNormStats<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.nchw().expect("rank 4");
    let plane = h * w;
    let cg = c / groups;
    let group_len = cg * plane;
    let mut dx = vec![T::zero(); x.len()];
    dx.par_chunks_mut(group_len).enumerate().for_each(|(idx, dst)| {
        let (mean, rstd) = (stats.mean[idx], stats.rstd[idx]);
        let src = &x.data()[idx * group_len..][..group_len];
        let gy = &grad_out.data()[idx * group_len..][..group_len];
        let c0 = (idx % groups) * cg;
        let count = T::lit(group_len as f64);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for k in 0..group_len {
            let dxhat = gy[k] * gamma.data()[c0 + k / plane];
            let xhat = (src[k] - mean) * rstd;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let m1 = sum_dxhat / count;
        let m2 = sum_dxhat_xhat / count;
        for k in 0..group_len {
            let dxhat = gy[k] * gamma.data()[c0 + k / plane];
            let xhat = (src[k] - mean) * rstd;
            dst[k] = rstd * (dxhat - m1 - xhat * m2);
        }
    });
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let gi = s * groups + ch / cg;
            let (mean, rstd) = (stats.mean[gi], stats.rstd[gi]);
            let off = (s * c + ch) * plane;
            for k in 0..plane {
                let gy = grad_out.data()[off + k];
                dgamma[ch] += gy * (x.data()[off + k] - mean) * rstd;
                dbeta[ch] += gy;
            }
        }
    }
    (
        Tensor::new(x.dims().to_vec(), dx).expect("dims"),
        Tensor::new(vec![c], dgamma).expect("dims"),
        Tensor::new(vec![c], dbeta).expect("dims"),
    )
}

/// `(outer, axis, inner)` extents of a tensor around `axis`.
fn split_at_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Concatenates tensors along `axis`; all other dims must agree.
pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
    if axis >= first.rank() {
        return Err(Error::shape(format!("concat axis {axis} out of range for rank {}", first.rank())));
    }
    for (i, t) in xs.iter().enumerate() {
        let ok = t.rank() == first.rank()
            && t.dims().iter().zip(first.dims()).enumerate().all(|(a, (x, y))| a == axis || x == y);
        if !ok {
            return Err(Error::shape(format!(
                "concat operand {i} has dims {:?}, incompatible with {:?} along axes other than {axis}",
                t.dims(),
                first.dims()
            )));
        }
    }
    let (outer, _, inner) = split_at_axis(first.dims(), axis);
    let total: usize = xs.iter().map(|t| t.dims()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in xs {
            let block = t.dims()[axis] * inner;
            data.extend_from_slice(&t.data()[o * block..][..block]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = total;
    Tensor::new(dims, data)
}

/// Elements `start..start + len` along `axis`.
pub fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!("slice axis {axis} out of range for rank {}", x.rank())));
    }
    if len == 0 || start + len > x.dims()[axis] {
        return Err(Error::shape(format!(
            "slice {start}..{} out of range for axis {axis} of extent {}",
            start + len,
            x.dims()[axis]
        )));
    }
    let (outer, extent, inner) = split_at_axis(x.dims(), axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        data.extend_from_slice(&x.data()[(o * extent + start) * inner..][..len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Tensor::new(dims, data)
}

/// Circular shift by `shift` positions along `axis`: `out[(i + shift) mod n] = x[i]`.
pub fn roll<T: Element>(x: &Tensor<T>, axis: usize, shift: isize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!("roll axis {axis} out of range for rank {}", x.rank())));
    }
    let (outer, n, inner) = split_at_axis(x.dims(), axis);
    let s = shift.rem_euclid(n as isize) as usize;
    let mut data = vec![T::default(); x.len()];
    for o in 0..outer {
        for i in 0..n {
            let j = (i + s) % n;
            data[(o * n + j) * inner..][..inner].copy_from_slice(&x.data()[(o * n + i) * inner..][..inner]);
        }
    }
    Tensor::new(x.dims().to_vec(), data)
}

/// Multiplies each (sample, channel) plane of `x` (N×C×H×W) by `gate[n, c]`
/// (gate dims N×C or N×C×1×1).
pub fn scale_channels<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if gate.len() != n * c || gate.dims()[0] != n {
        return Err(Error::shape(format!(
            "gate dims {:?} do not match (batch, channels) = ({n}, {c})",
            gate.dims()
        )));
    }
    let mut data = x.data().to_vec();
    for (plane, &g) in data.chunks_exact_mut(h * w).zip(gate.data()) {
        plane.iter_mut().for_each(|v| *v *= g);
    }
    Tensor::new(x.dims().to_vec(), data)
}

/// Row-wise softmax of an N×K matrix.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = *logits.dims() else {
        return Err(Error::shape(format!("softmax expects N×K logits, got dims {:?}", logits.dims())));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.dims().to_vec(), out)
}

/// Mean over the batch of `−Σ_k target_k · log softmax(logits)_k`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_dims("softmax_cross_entropy", logits, target)?;
    let [n, k] = *logits.dims() else {
        return Err(Error::shape(format!("cross entropy expects N×K logits, got dims {:?}", logits.dims())));
    };
    let mut total = T::zero();
    for (row, t) in logits.data().chunks_exact(k).zip(target.data().chunks_exact(k)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
        for (&z, &tv) in row.iter().zip(t) {
            total += tv * (lse - z);
        }
    }
    Ok(total / T::lit(n as f64))
}

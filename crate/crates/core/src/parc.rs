//! Position-aware circular convolution.
//!
//! A ParC operator owns, per channel, a base kernel and a base position
//! embedding of length `L_base`. At run time both are resized with aligned
//! corners to the feature extent `n` along the operator's axis (H for
//! [`Orientation::Vertical`], W for [`Orientation::Horizontal`]). The
//! embedding is broadcast across the other axis and added to the input, and
//! the sum is convolved with wrap-around indexing:
//!
//! ```text
//! vertical:    y[i, j] = Σ_t k[t] · xp[(i + t) mod H, j]
//! horizontal:  y[i, j] = Σ_t k[t] · xp[i, (j + t) mod W]
//! ```
//!
//! Channels are independent (depthwise). [`circular_conv_1d_oracle`] is the
//! literal 1D definition and serves as the reference every faster path is
//! checked against; [`circular_conv_concat`] is the "double the input and
//! run a valid convolution" formulation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

/// Axis a ParC operator convolves along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Along height; each column is one circle.
    Vertical,
    /// Along width; each row is one circle.
    Horizontal,
}

impl Orientation {
    /// Tensor axis in N×C×H×W layout.
    pub fn axis(self) -> usize {
        match self {
            Orientation::Vertical => 2,
            Orientation::Horizontal => 3,
        }
    }

    /// Extent of the convolved axis for an H×W feature map.
    pub fn extent(self, h: usize, w: usize) -> usize {
        match self {
            Orientation::Vertical => h,
            Orientation::Horizontal => w,
        }
    }
}

/// Learnable state of one ParC operator: per-channel base kernel and base
/// position embedding, both C×L_base.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcParams<T = f32> {
    orientation: Orientation,
    kernel: Tensor<T>,
    pe: Tensor<T>,
}

impl<T: Real> ParcParams<T> {
    pub fn new(orientation: Orientation, kernel: Tensor<T>, pe: Tensor<T>) -> Result<Self> {
        if kernel.rank() != 2 {
            return Err(Error::shape(format!("base kernel must be C×L, got dims {:?}", kernel.dims())));
        }
        if kernel.dims() != pe.dims() {
            return Err(Error::shape(format!(
                "base kernel {:?} and base embedding {:?} must have equal dims",
                kernel.dims(),
                pe.dims()
            )));
        }
        Ok(ParcParams {
            orientation,
            kernel,
            pe,
        })
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn base_len(&self) -> usize {
        self.kernel.dims()[1]
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn pe(&self) -> &Tensor<T> {
        &self.pe
    }

    /// `2·C·L_base`.
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.pe.len()
    }

    /// Kernel resized to `extent` (C×extent).
    pub fn instance_kernel(&self, extent: usize) -> Result<Tensor<T>> {
        tensor::resize_rows(&self.kernel, extent)
    }

    /// Position embedding resized to `extent` (C×extent).
    pub fn instance_pe(&self, extent: usize) -> Result<Tensor<T>> {
        tensor::resize_rows(&self.pe, extent)
    }
}

/// Copies `pe` (length h) into every column of an h×`w` matrix.
pub fn expand_vertical<T: Real>(pe: &[T], w: usize) -> Result<Tensor<T>> {
    if pe.is_empty() || w == 0 {
        return Err(Error::Argument(format!("expand_vertical needs h ≥ 1 and w ≥ 1, got h={} w={w}", pe.len())));
    }
    Ok(Tensor::from_fn(vec![pe.len(), w], |i| pe[i / w]))
}

/// Copies `pe` (length w) into every row of an `h`×w matrix.
pub fn expand_horizontal<T: Real>(pe: &[T], h: usize) -> Result<Tensor<T>> {
    if pe.is_empty() || h == 0 {
        return Err(Error::Argument(format!("expand_horizontal needs h ≥ 1 and w ≥ 1, got h={h} w={}", pe.len())));
    }
    let w = pe.len();
    Ok(Tensor::from_fn(vec![h, w], |i| pe[i % w]))
}

/// Reference circular convolution: `y[j] = Σ_t k[t] · x[(j + t) mod n]`.
pub fn circular_conv_1d_oracle<T: Real>(x: &[T], k: &[T]) -> Result<Vec<T>> {
    if x.len() != k.len() {
        return Err(Error::Contract(format!(
            "kernel length {} must equal input length {}",
            k.len(),
            x.len()
        )));
    }
    let n = x.len();
    Ok((0..n)
        .map(|j| {
            let mut acc = T::zero();
            for (t, &kt) in k.iter().enumerate() {
                acc += kt * x[(j + t) % n];
            }
            acc
        })
        .collect())
}

fn check_kernels<T: Real>(x: &Tensor<T>, k: &Tensor<T>, orientation: Orientation) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.nchw()?;
    let extent = orientation.extent(h, w);
    if k.dims() != [c, extent] {
        return Err(Error::Contract(format!(
            "{orientation:?} circular kernel must be {c}×{extent} (channels × axis extent), got {:?}",
            k.dims()
        )));
    }
    Ok((n, c, h, w))
}

/// Circular convolution by doubling `x` along the axis and running a valid
/// depthwise convolution, keeping the first `n` outputs. `k` is C×n.
pub fn circular_conv_concat<T: Real>(x: &Tensor<T>, k: &Tensor<T>, orientation: Orientation) -> Result<Tensor<T>> {
    let (_, c, h, w) = check_kernels(x, k, orientation)?;
    let axis = orientation.axis();
    let extent = orientation.extent(h, w);
    let doubled = tensor::concat(&[x, x], axis)?;
    let kdims = match orientation {
        Orientation::Vertical => vec![c, 1, extent, 1],
        Orientation::Horizontal => vec![c, 1, 1, extent],
    };
    let kernel = k.reshape(kdims)?;
    let y = tensor::conv2d(&doubled, &kernel, None, (1, 1), (0, 0), c)?;
    tensor::slice(&y, axis, 0, extent)
}

/// Direct modular-index circular convolution over every (sample, channel)
/// plane. `k` is C×n with n the axis extent.
pub fn circular_conv<T: Real>(x: &Tensor<T>, k: &Tensor<T>, orientation: Orientation) -> Result<Tensor<T>> {
    use rayon::prelude::*;
    let (_, c, h, w) = check_kernels(x, k, orientation)?;
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    out.par_chunks_mut(plane)
        .zip(x.data().par_chunks(plane))
        .enumerate()
        .for_each(|(idx, (dst, src))| {
            let kr = &k.data()[(idx % c) * k.dims()[1]..][..k.dims()[1]];
            match orientation {
                Orientation::Vertical => {
                    for i in 0..h {
                        let drow = &mut dst[i * w..][..w];
                        for (t, &kt) in kr.iter().enumerate() {
                            let srow = &src[((i + t) % h) * w..][..w];
                            for (d, &s) in drow.iter_mut().zip(srow) {
                                *d += kt * s;
                            }
                        }
                    }
                }
                Orientation::Horizontal => {
                    for i in 0..h {
                        let drow = &mut dst[i * w..][..w];
                        let srow = &src[i * w..][..w];
                        for (t, &kt) in kr.iter().enumerate() {
                            // j + t < w for j < w − t, wraps afterwards
                            for (d, &s) in drow[..w - t].iter_mut().zip(&srow[t..]) {
                                *d += kt * s;
                            }
                            for (d, &s) in drow[w - t..].iter_mut().zip(&srow[..t]) {
                                *d += kt * s;
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(x.dims().to_vec(), out)
}

/// Adjoint of [`circular_conv`] in its input:
/// `gx[m] = Σ_t k[t] · g[(m − t) mod n]`. Wrapped indices accumulate.
pub fn circular_conv_input_grad<T: Real>(g: &Tensor<T>, k: &Tensor<T>, orientation: Orientation) -> Tensor<T> {
    let (_, c, h, w) = g.nchw().expect("rank 4");
    let n = orientation.extent(h, w);
    // Correlation with the flipped kernel k'[s] = k[(n − s) mod n] is the
    // adjoint: Σ_s k'[s] g[(m + s) mod n] = Σ_t k[t] g[(m − t) mod n].
    let flipped = Tensor::from_fn(vec![c, n], |i| {
        let (ch, s) = (i / n, i % n);
        k.data()[ch * n + (n - s) % n]
    });
    circular_conv(g, &flipped, orientation).expect("validated dims")
}

/// Gradient of [`circular_conv`] in its kernel:
/// `gk[c, t] = Σ g[.., j] · x[.., (j + t) mod n]` over batch and the other axis.
pub fn circular_conv_kernel_grad<T: Real>(g: &Tensor<T>, x: &Tensor<T>, orientation: Orientation) -> Tensor<T> {
    use rayon::prelude::*;
    let (batch, c, h, w) = x.nchw().expect("rank 4");
    let n = orientation.extent(h, w);
    let plane = h * w;
    let mut gk = vec![T::zero(); c * n];
    gk.par_chunks_mut(n).enumerate().for_each(|(ch, dst)| {
        for b in 0..batch {
            let off = (b * c + ch) * plane;
            let gp = &g.data()[off..][..plane];
            let xp = &x.data()[off..][..plane];
            for (t, d) in dst.iter_mut().enumerate() {
                let mut acc = T::zero();
                match orientation {
                    Orientation::Vertical => {
                        for i in 0..h {
                            let grow = &gp[i * w..][..w];
                            let xrow = &xp[((i + t) % h) * w..][..w];
                            acc += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                    Orientation::Horizontal => {
                        for i in 0..h {
                            let grow = &gp[i * w..][..w];
                            let xrow = &xp[i * w..][..w];
                            acc += grow[..w - t].iter().zip(&xrow[t..]).map(|(&a, &b)| a * b).sum::<T>();
                            acc += grow[w - t..].iter().zip(&xrow[..t]).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                }
                *d += acc;
            }
        }
    });
    Tensor::new(vec![c, n], gk).expect("dims")
}

/// `x + expand(pe)`: `pe` (C×extent) is broadcast across the axis the
/// operator does not convolve along.
pub fn add_positional<T: Real>(x: &Tensor<T>, pe: &Tensor<T>, orientation: Orientation) -> Result<Tensor<T>> {
    let (_, c, h, w) = check_kernels(x, pe, orientation)?;
    let mut data = x.data().to_vec();
    for (idx, plane) in data.chunks_exact_mut(h * w).enumerate() {
        let ch = idx % c;
        let expanded = match orientation {
            Orientation::Vertical => expand_vertical(&pe.data()[ch * h..][..h], w)?,
            Orientation::Horizontal => expand_horizontal(&pe.data()[ch * w..][..w], h)?,
        };
        plane.iter_mut().zip(expanded.data()).for_each(|(v, &p)| *v += p);
    }
    Tensor::new(x.dims().to_vec(), data)
}

/// Full ParC operator on N×C×H×W input: resize kernel and embedding to the
/// axis extent, add the embedding if `use_pe`, then circularly convolve.
pub fn parc_forward<T: Real>(x: &Tensor<T>, params: &ParcParams<T>, use_pe: bool) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.nchw()?;
    if c != params.channels() {
        return Err(Error::Contract(format!(
            "input has {c} channels, ParC operator has {}",
            params.channels()
        )));
    }
    let extent = params.orientation.extent(h, w);
    let k = params.instance_kernel(extent)?;
    if use_pe {
        let pe = params.instance_pe(extent)?;
        let xp = add_positional(x, &pe, params.orientation)?;
        circular_conv(&xp, &k, params.orientation)
    } else {
        circular_conv(x, &k, params.orientation)
    }
}

/// Big-kernel ablation width: a fraction of the input extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFraction {
    Quarter,
    Half,
}

impl KernelFraction {
    pub fn value(self) -> f64 {
        match self {
            KernelFraction::Quarter => 0.25,
            KernelFraction::Half => 0.5,
        }
    }
}

/// Kernel length `round(fraction · extent)`, bumped to the next odd number
/// when even so that symmetric zero padding preserves the extent.
pub fn big_kernel_len(extent: usize, fraction: KernelFraction) -> Result<usize> {
    let len = (fraction.value() * extent as f64).round() as usize;
    if len == 0 {
        return Err(Error::Argument(format!(
            "extent {extent} is too small for a {fraction:?} kernel"
        )));
    }
    Ok(if len.is_multiple_of(2) { len + 1 } else { len })
}

fn local_kernel_dims(c: usize, len: usize, orientation: Orientation) -> (Vec<usize>, (usize, usize)) {
    match orientation {
        Orientation::Vertical => (vec![c, 1, len, 1], (len / 2, 0)),
        Orientation::Horizontal => (vec![c, 1, 1, len], (0, len / 2)),
    }
}

/// Depthwise zero-padded 1D convolution along the axis with an odd kernel
/// (C×len). No wrap-around, no position embedding; the extent is preserved.
pub fn local_conv_1d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, orientation: Orientation) -> Result<Tensor<T>> {
    let (_, c, _, _) = x.nchw()?;
    let [kc, len] = *k.dims() else {
        return Err(Error::shape(format!("local kernel must be C×len, got dims {:?}", k.dims())));
    };
    if kc != c {
        return Err(Error::shape(format!("kernel channel axis: {kc} vs input {c}")));
    }
    if len % 2 == 0 {
        return Err(Error::Argument(format!("local kernel length {len} must be odd")));
    }
    let (dims, pad) = local_kernel_dims(c, len, orientation);
    tensor::conv2d(x, &k.reshape(dims)?, None, (1, 1), pad, c)
}

/// Big-kernel ablation: [`local_conv_1d`] with a kernel whose length is
/// [`big_kernel_len`] of the axis extent.
pub fn big_kernel_conv<T: Real>(
    x: &Tensor<T>,
    fraction: KernelFraction,
    k: &Tensor<T>,
    orientation: Orientation,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.nchw()?;
    let extent = orientation.extent(h, w);
    let len = big_kernel_len(extent, fraction)?;
    if k.rank() != 2 || k.dims()[1] != len {
        return Err(Error::Argument(format!(
            "{fraction:?} kernel for extent {extent} must have length {len}, got dims {:?}",
            k.dims()
        )));
    }
    local_conv_1d(x, k, orientation)
}

// ---------------------------------------------------------------------------
// Differentiable versions

struct ResizeRowsRule {
    from: usize,
}
impl<T: Real> Backward<T> for ResizeRowsRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(tensor::resize_rows_adjoint(g, self.from))]
    }
}

struct AddPositionalRule {
    orientation: Orientation,
}
impl<T: Real> Backward<T> for AddPositionalRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (_, c, h, w) = g.nchw().expect("rank 4");
        let extent = self.orientation.extent(h, w);
        let mut gpe = vec![T::zero(); c * extent];
        for (idx, plane) in g.data().chunks_exact(h * w).enumerate() {
            let row = &mut gpe[(idx % c) * extent..][..extent];
            for i in 0..h {
                for j in 0..w {
                    let p = match self.orientation {
                        Orientation::Vertical => i,
                        Orientation::Horizontal => j,
                    };
                    row[p] += plane[i * w + j];
                }
            }
        }
        vec![Some(g.clone()), Tensor::new(x[1].dims().to_vec(), gpe).ok()]
    }
}

struct CircularConvRule {
    orientation: Orientation,
}
impl<T: Real> Backward<T> for CircularConvRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![
            Some(circular_conv_input_grad(g, x[1], self.orientation)),
            Some(circular_conv_kernel_grad(g, x[0], self.orientation)),
        ]
    }
}

impl<T: Real> Tape<T> {
    /// Resizes each row of a C×L matrix to C×`len`.
    pub fn resize_rows(&mut self, m: Var, len: usize) -> Result<Var> {
        let from = self.value(m).dims().get(1).copied().unwrap_or(0);
        if from == len {
            return Ok(m);
        }
        let y = tensor::resize_rows(self.value(m), len)?;
        Ok(self.record(&[m], y, ResizeRowsRule { from }))
    }

    pub fn add_positional(&mut self, x: Var, pe: Var, orientation: Orientation) -> Result<Var> {
        let y = add_positional(self.value(x), self.value(pe), orientation)?;
        Ok(self.record(&[x, pe], y, AddPositionalRule { orientation }))
    }

    pub fn circular_conv(&mut self, x: Var, k: Var, orientation: Orientation) -> Result<Var> {
        let y = circular_conv(self.value(x), self.value(k), orientation)?;
        Ok(self.record(&[x, k], y, CircularConvRule { orientation }))
    }

    /// ParC operator with base kernel and optional base embedding (both C×L).
    pub fn parc(&mut self, x: Var, kernel: Var, pe: Option<Var>, orientation: Orientation) -> Result<Var> {
        let (_, c, h, w) = self.value(x).nchw()?;
        if self.value(kernel).dims()[0] != c {
            return Err(Error::Contract(format!(
                "input has {c} channels, ParC kernel has {}",
                self.value(kernel).dims()[0]
            )));
        }
        let extent = orientation.extent(h, w);
        let k = self.resize_rows(kernel, extent)?;
        let xp = match pe {
            Some(pe) => {
                let pe = self.resize_rows(pe, extent)?;
                self.add_positional(x, pe, orientation)?
            }
            None => x,
        };
        self.circular_conv(xp, k, orientation)
    }

    /// Differentiable [`local_conv_1d`].
    pub fn local_conv_1d(&mut self, x: Var, kernel: Var, orientation: Orientation) -> Result<Var> {
        let [c, len] = *self.value(kernel).dims() else {
            return Err(Error::shape("local kernel must be C×len"));
        };
        if len % 2 == 0 {
            return Err(Error::Argument(format!("local kernel length {len} must be odd")));
        }
        let (dims, pad) = local_kernel_dims(c, len, orientation);
        let k4 = self.reshape(kernel, &dims)?;
        self.conv2d(x, k4, None, (1, 1), pad, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, grad, FiniteDiffOptions, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn expand_examples() {
        let v = expand_vertical(&[1.0f32, 2.0, 3.0], 2).unwrap();
        assert_eq!(v.dims(), &[3, 2]);
        assert_eq!(v.data(), &[1., 1., 2., 2., 3., 3.]);
        assert_eq!(expand_vertical(&[1.0f32, 2.0], 1).unwrap().data(), &[1., 2.]);
        assert!(expand_vertical(&[0.0f32; 4], 3).unwrap().data().iter().all(|&v| v == 0.0));

        let hm = expand_horizontal(&[1.0f32, 2.0], 3).unwrap();
        assert_eq!(hm.dims(), &[3, 2]);
        assert_eq!(hm.data(), &[1., 2., 1., 2., 1., 2.]);
        assert_eq!(expand_horizontal(&[4.0f32, 5.0], 1).unwrap().dims(), &[1, 2]);
        assert!(expand_horizontal(&[7.0f32; 3], 4).unwrap().data().iter().all(|&v| v == 7.0));
        assert!(expand_horizontal::<f32>(&[], 2).is_err());
        assert!(expand_vertical(&[1.0f32], 0).is_err());
    }

    #[test]
    fn oracle_examples() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(circular_conv_1d_oracle(&x, &[1., 0., 0., 0.]).unwrap(), x.to_vec());
        assert_eq!(circular_conv_1d_oracle(&x, &[0., 1., 0., 0.]).unwrap(), vec![2., 3., 4., 1.]);
        let c = [2.5f64; 5];
        let k = [0.5, -1.0, 2.0, 0.25, 1.25];
        let s: f64 = k.iter().sum();
        for y in circular_conv_1d_oracle(&c, &k).unwrap() {
            assert!((y - 2.5 * s).abs() < 1e-12);
        }
        assert!(matches!(circular_conv_1d_oracle(&x, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn concat_path_examples() {
        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f32, 2., 3., 4.]).unwrap();
        let k = Tensor::new(vec![1, 4], vec![0.0f32, 1., 0., 0.]).unwrap();
        let y = circular_conv_concat(&x, &k, Orientation::Horizontal).unwrap();
        assert_eq!(y.data(), &[2., 3., 4., 1.]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(vec![2, 3, 5, 7], |_| rng.random_range(-10.0f32..10.0));
        let delta = Tensor::from_fn(vec![3, 7], |i| if i % 7 == 0 { 1.0f32 } else { 0.0 });
        let y = circular_conv_concat(&x, &delta, Orientation::Horizontal).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bad = Tensor::zeros(vec![3, 6]);
        assert!(matches!(circular_conv_concat(&x, &bad, Orientation::Horizontal), Err(Error::Contract(_))));
    }

    #[test]
    fn direct_and_concat_agree_with_oracle_on_both_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (n, c, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..9), rng.random_range(1..9));
            let x = rand_tensor(&[n, c, h, w], &mut rng);
            for o in [Orientation::Vertical, Orientation::Horizontal] {
                let ext = o.extent(h, w);
                let k = rand_tensor(&[c, ext], &mut rng);
                let direct = circular_conv(&x, &k, o).unwrap();
                let concat = circular_conv_concat(&x, &k, o).unwrap();
                for b in 0..n {
                    for ch in 0..c {
                        let kr = &k.data()[ch * ext..][..ext];
                        for line in 0..o.extent(w, h) {
                            let at = |p: usize| match o {
                                Orientation::Vertical => [b, ch, p, line],
                                Orientation::Horizontal => [b, ch, line, p],
                            };
                            let xs: Vec<f64> = (0..ext).map(|p| x.get(&at(p)).unwrap()).collect();
                            let want = circular_conv_1d_oracle(&xs, kr).unwrap();
                            for p in 0..ext {
                                assert!((direct.get(&at(p)).unwrap() - want[p]).abs() < 1e-12);
                                assert!((concat.get(&at(p)).unwrap() - want[p]).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn parc_forward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(vec![2, 3, 6, 5], |_| rng.random_range(-1.0f32..1.0));
        let delta = Tensor::from_fn(vec![3, 6], |i| if i % 6 == 0 { 1.0f32 } else { 0.0 });
        let pe = Tensor::full(vec![3, 6], 0.75f32);
        let p = ParcParams::new(Orientation::Vertical, delta, pe).unwrap();
        assert_eq!(parc_forward(&x, &p, false).unwrap(), x);
        let y = parc_forward(&x, &p, true).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| *a == b + 0.75));
        let wrong = Tensor::<f32>::zeros(vec![1, 4, 6, 5]);
        assert!(matches!(parc_forward(&wrong, &p, true), Err(Error::Contract(_))));
    }

    #[test]
    fn parc_forward_resizes_kernel_and_embedding() {
        // L_base = 4, H = 8: affine base rows interpolate to affine rows with
        // the same endpoints, computed by hand here.
        let kbase = Tensor::new(vec![1, 4], vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let pbase = Tensor::new(vec![1, 4], vec![1.0f64, 0.5, 0.0, -0.5]).unwrap();
        let p = ParcParams::new(Orientation::Vertical, kbase, pbase).unwrap();
        let k8: Vec<f64> = (0..8).map(|i| 3.0 * i as f64 / 7.0).collect();
        let pe8: Vec<f64> = (0..8).map(|i| 1.0 - 1.5 * i as f64 / 7.0).collect();
        let ik = p.instance_kernel(8).unwrap();
        for (a, b) in ik.data().iter().zip(&k8) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = Tensor::from_fn(vec![1, 1, 8, 3], |i| ((i * 37) % 11) as f64 - 5.0);
        let y = parc_forward(&x, &p, true).unwrap();
        for col in 0..3 {
            let xp: Vec<f64> = (0..8).map(|r| x.get(&[0, 0, r, col]).unwrap() + pe8[r]).collect();
            let want = circular_conv_1d_oracle(&xp, &k8).unwrap();
            for r in 0..8 {
                assert!((y.get(&[0, 0, r, col]).unwrap() - want[r]).abs() < 1e-12);
            }
        }
        // extent == L_base: instance kernel is the base kernel bit for bit
        assert_eq!(&p.instance_kernel(4).unwrap(), p.kernel());
    }

    #[test]
    fn big_kernel_examples() {
        assert_eq!(big_kernel_len(4, KernelFraction::Quarter).unwrap(), 1);
        assert_eq!(big_kernel_len(16, KernelFraction::Half).unwrap(), 9);
        assert_eq!(big_kernel_len(16, KernelFraction::Quarter).unwrap(), 5);
        assert!(big_kernel_len(1, KernelFraction::Quarter).is_err());

        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f32, 2., 3., 4.]).unwrap();
        let one = Tensor::new(vec![1, 1], vec![1.0f32]).unwrap();
        assert_eq!(big_kernel_conv(&x, KernelFraction::Quarter, &one, Orientation::Horizontal).unwrap(), x);

        let x = Tensor::new(vec![1, 1, 1, 6], vec![1.0f32, 2., 3., 4., 0., 0.]).unwrap();
        let box3 = Tensor::new(vec![1, 3], vec![1.0f32, 1., 1.]).unwrap();
        let y = big_kernel_conv(&x, KernelFraction::Half, &box3, Orientation::Horizontal).unwrap();
        assert_eq!(y.data(), &[3., 6., 9., 7., 4., 0.]);
        let x4 = Tensor::new(vec![1, 1, 1, 4], vec![1.0f32, 2., 3., 4.]).unwrap();
        assert_eq!(local_conv_1d(&x4, &box3, Orientation::Horizontal).unwrap().data(), &[3., 6., 9., 7.]);
        // the circular version of the same box kernel wraps around
        let circ = circular_conv_1d_oracle(&[1.0f32, 2., 3., 4.], &[1., 1., 0., 1.]).unwrap();
        assert_eq!(circ, vec![7., 6., 9., 8.]);
    }

    #[test]
    fn circular_adjoint_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for o in [Orientation::Vertical, Orientation::Horizontal] {
            let x = rand_tensor(&[2, 3, 5, 6], &mut rng);
            let ext = o.extent(5, 6);
            let k = rand_tensor(&[3, ext], &mut rng);
            let gup = rand_tensor(&[2, 3, 5, 6], &mut rng);
            let mut store = ParamStore::new();
            store.insert("x", x.clone()).unwrap();
            let (_, grads) = grad(&store, |t| {
                let xv = t.param_var("x")?;
                let kv = t.constant(k.clone());
                let y = t.circular_conv(xv, kv, o)?;
                let gv = t.constant(gup.clone());
                let s = t.mul(y, gv)?;
                Ok(t.sum(s))
            })
            .unwrap();
            let gx = &grads["x"];
            for b in 0..2 {
                for ch in 0..3 {
                    for line in 0..o.extent(6, 5) {
                        let at = |p: usize| match o {
                            Orientation::Vertical => [b, ch, p, line],
                            Orientation::Horizontal => [b, ch, line, p],
                        };
                        for m in 0..ext {
                            let want: f64 = (0..ext)
                                .map(|t| k.data()[ch * ext + t] * gup.get(&at((m + ext - t) % ext)).unwrap())
                                .sum();
                            let got = gx.get(&at(m)).unwrap();
                            assert!((got - want).abs() / want.abs().max(1.0) < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn parc_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for o in [Orientation::Vertical, Orientation::Horizontal] {
            let mut store = ParamStore::new();
            store.insert("x", rand_tensor(&[2, 2, 6, 5], &mut rng)).unwrap();
            store.insert("k", rand_tensor(&[2, 4], &mut rng)).unwrap();
            store.insert("pe", rand_tensor(&[2, 4], &mut rng)).unwrap();
            let w = rand_tensor(&[2, 2, 6, 5], &mut rng);
            let report = finite_diff_check(
                &store,
                |t| {
                    let y = t.parc(t.param_var("x")?, t.param_var("k")?, Some(t.param_var("pe")?), o)?;
                    let wv = t.constant(w.clone());
                    let s = t.mul(y, wv)?;
                    Ok(t.sum(s))
                },
                FiniteDiffOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn tape_parc_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[2, 3, 7, 9], &mut rng);
        let p = ParcParams::new(Orientation::Horizontal, rand_tensor(&[3, 5], &mut rng), rand_tensor(&[3, 5], &mut rng)).unwrap();
        let plain = parc_forward(&x, &p, true).unwrap();
        let mut t = Tape::inference();
        let (xv, kv, pv) = (t.constant(x), t.constant(p.kernel().clone()), t.constant(p.pe().clone()));
        let y = t.parc(xv, kv, Some(pv), Orientation::Horizontal).unwrap();
        assert_eq!(t.value(y), &plain);
    }
}

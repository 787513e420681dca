//! Parameterised layers. A layer is a plain description (name prefix and
//! shapes); its tensors live in a [`ParamStore`] under `<name>.<field>` and
//! are looked up on the tape at forward time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::parc::Orientation;
use crate::tensor::{ConvGeometry, Real, Tensor};

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

/// Group-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Samples `N(0, std²)` truncated to `±2·std`.
pub fn truncated_normal<T: Real>(dims: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(dims.to_vec(), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::lit(v);
        }
    })
}

/// Uniform in `[-bound, bound]`; used by tests that need larger weights.
pub fn uniform<T: Real>(dims: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(dims.to_vec(), |_| T::lit(rng.random_range(-bound..=bound)))
}

fn lookup<T: Real>(tape: &Tape<T>, prefix: &str, field: &str) -> Result<Var> {
    tape.param_var(&format!("{prefix}.{field}"))
}

/// Group count used for a norm over `channels` channels: the largest divisor
/// of `channels` not exceeding `max_groups`.
pub fn norm_groups_for(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels).max(1)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

/// 2D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize, bias: bool) -> Self {
        Conv2d {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
            bias,
        }
    }

    /// 3×3 with padding 1.
    pub fn square3(name: impl Into<String>, cin: usize, cout: usize, stride: usize, groups: usize) -> Self {
        Conv2d {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel: (3, 3),
            stride: (stride, stride),
            padding: (1, 1),
            groups,
            bias: false,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "{}: channels {}→{} not divisible by {} groups",
                self.name, self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.validate()?;
        store.insert(format!("{}.weight", self.name), truncated_normal(&self.weight_dims(), INIT_STD, rng))?;
        if self.bias {
            store.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_channels]))?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight_dims().iter().product::<usize>() + if self.bias { self.out_channels } else { 0 }
    }

    fn geometry(&self, input: [usize; 4]) -> Result<ConvGeometry> {
        ConvGeometry::resolve(&input, &self.weight_dims(), self.stride, self.padding, self.groups)
    }

    pub fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        Ok(self.geometry(input)?.output_dims())
    }

    pub fn macs(&self, input: [usize; 4]) -> Result<u64> {
        Ok(self.geometry(input)?.macs())
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = lookup(tape, &self.name, "weight")?;
        let b = if self.bias { Some(lookup(tape, &self.name, "bias")?) } else { None };
        tape.conv2d(x, w, b, self.stride, self.padding, self.groups)
    }
}

/// Group normalization with per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(name: impl Into<String>, channels: usize, max_groups: usize) -> Self {
        GroupNorm {
            name: name.into(),
            channels,
            groups: norm_groups_for(channels, max_groups),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(format!("{}.gamma", self.name), Tensor::full(vec![self.channels], T::one()))?;
        store.insert(format!("{}.beta", self.name), Tensor::zeros(vec![self.channels]))
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = lookup(tape, &self.name, "gamma")?;
        let b = lookup(tape, &self.name, "beta")?;
        tape.group_norm(x, g, b, self.groups, T::lit(NORM_EPS))
    }
}

/// Fully connected layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert(
            format!("{}.weight", self.name),
            truncated_normal(&[self.out_features, self.in_features], INIT_STD, rng),
        )?;
        store.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.out_features]))
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    pub fn macs(&self, batch: usize) -> u64 {
        (batch * self.in_features * self.out_features) as u64
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = lookup(tape, &self.name, "weight")?;
        let b = lookup(tape, &self.name, "bias")?;
        tape.linear(x, w, Some(b))
    }
}

/// One ParC operator: `<name>.kernel` and, with position embedding,
/// `<name>.pe`, both C×L_base.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcOp {
    pub name: String,
    pub orientation: Orientation,
    pub channels: usize,
    pub base_len: usize,
    pub use_pe: bool,
}

impl ParcOp {
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.base_len == 0 {
            return Err(Error::Config(format!("{}: base length must be ≥ 1", self.name)));
        }
        let dims = [self.channels, self.base_len];
        store.insert(format!("{}.kernel", self.name), truncated_normal(&dims, INIT_STD, rng))?;
        if self.use_pe {
            store.insert(format!("{}.pe", self.name), truncated_normal(&dims, INIT_STD, rng))?;
        }
        Ok(())
    }

    /// `2·C·L_base` with position embedding, `C·L_base` without.
    pub fn param_count(&self) -> usize {
        self.channels * self.base_len * if self.use_pe { 2 } else { 1 }
    }

    /// `N·C·H·W·extent`: every output position sums over the full axis.
    pub fn macs(&self, input: [usize; 4]) -> u64 {
        let [n, c, h, w] = input;
        (n * c * h * w) as u64 * self.orientation.extent(h, w) as u64
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let k = lookup(tape, &self.name, "kernel")?;
        let pe = if self.use_pe { Some(lookup(tape, &self.name, "pe")?) } else { None };
        tape.parc(x, k, pe, self.orientation)
    }
}

/// Zero-padded depthwise 1D convolution with a fixed odd kernel length
/// (`<name>.kernel`, C×len); the big-kernel ablation token mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOp {
    pub name: String,
    pub orientation: Orientation,
    pub channels: usize,
    pub kernel_len: usize,
}

impl LocalOp {
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert(
            format!("{}.kernel", self.name),
            truncated_normal(&[self.channels, self.kernel_len], INIT_STD, rng),
        )
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.kernel_len
    }

    /// `N·C·H·W·len`, counting padded taps like any convolution.
    pub fn macs(&self, input: [usize; 4]) -> u64 {
        let [n, c, h, w] = input;
        (n * c * h * w * self.kernel_len) as u64
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let k = lookup(tape, &self.name, "kernel")?;
        tape.local_conv_1d(x, k, self.orientation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn norm_groups_divide_channels() {
        assert_eq!(norm_groups_for(16, 8), 8);
        assert_eq!(norm_groups_for(24, 8), 8);
        assert_eq!(norm_groups_for(12, 8), 6);
        assert_eq!(norm_groups_for(3, 8), 3);
        assert_eq!(norm_groups_for(1, 8), 1);
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = truncated_normal(&[1000], INIT_STD, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = t.sum() / 1000.0;
        assert!(mean.abs() < 0.005);
    }

    #[test]
    fn parc_op_counts() {
        let op = ParcOp {
            name: "p".into(),
            orientation: Orientation::Horizontal,
            channels: 4,
            base_len: 7,
            use_pe: true,
        };
        assert_eq!(op.param_count(), 56);
        assert_eq!(ParcOp { use_pe: false, ..op.clone() }.param_count(), 28);
        let h = ParcOp { channels: 8, base_len: 16, ..op };
        assert_eq!(h.macs([1, 8, 16, 16]), 32768);
        let v = ParcOp { orientation: Orientation::Vertical, ..h };
        assert_eq!(v.macs([1, 8, 32, 16]), 4 * v.macs([1, 8, 16, 16]));
    }

    #[test]
    fn pointwise_macs() {
        let c = Conv2d::pointwise("c", 6, 10, false);
        assert_eq!(c.macs([1, 6, 5, 7]).unwrap(), 6 * 10 * 5 * 7);
    }

    #[test]
    fn local_op_macs_match_equivalent_conv() {
        let op = LocalOp {
            name: "l".into(),
            orientation: Orientation::Horizontal,
            channels: 3,
            kernel_len: 5,
        };
        let conv = Conv2d {
            name: "c".into(),
            in_channels: 3,
            out_channels: 3,
            kernel: (1, 5),
            stride: (1, 1),
            padding: (0, 2),
            groups: 3,
            bias: false,
        };
        assert_eq!(op.macs([2, 3, 6, 9]), conv.macs([2, 3, 6, 9]).unwrap());
    }
}

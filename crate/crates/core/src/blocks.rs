//! Composite blocks: squeeze-excitation style channel attention, the ParC
//! meta-former block, the MobileNetV2 inverted residual and the
//! local/global fusion module.
//!
//! Every block normalizes with group norm and activates with SiLU. Blocks
//! are descriptions; their parameters live in a [`ParamStore`] under the
//! block's name prefix.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, GroupNorm, Linear, LocalOp, ParcOp};
use crate::parc::{big_kernel_len, KernelFraction, Orientation};
use crate::tensor::{Real, Tensor};

/// A single-input block that can be initialized, run on a tape and counted.
pub trait Block {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()>;

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;

    /// Learnable scalars, computed from the architecture alone.
    fn param_count(&self) -> usize;

    fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]>;

    /// Multiply-accumulates of one forward pass at `input` dims.
    fn macs(&self, input: [usize; 4]) -> Result<u64>;

    /// Forward pass on a plain tensor, reading weights from `params`.
    fn apply<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        tape.bind(params)?;
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

fn dims4(x: &Tensor<impl Real>) -> Result<[usize; 4]> {
    let (n, c, h, w) = x.nchw()?;
    Ok([n, c, h, w])
}

fn expect_channels(name: &str, input: [usize; 4], channels: usize) -> Result<()> {
    if input[1] != channels {
        return Err(Error::shape(format!(
            "{name}: channel axis is {}, block expects {channels}",
            input[1]
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Channel attention

/// Weights of the two-layer attention MLP: `w1` is H×C, `w2` is C×H.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T = f32> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Records `sigmoid(W2·silu(W1·gap(x) + b1) + b2)`, an N×C gate.
pub fn attention_gate_on_tape<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    (w1, b1): (Var, Var),
    (w2, b2): (Var, Var),
) -> Result<Var> {
    let (n, c, _, _) = tape.value(x).nchw()?;
    let pooled = tape.global_avg_pool(x)?;
    let pooled = tape.reshape(pooled, &[n, c])?;
    let hidden = tape.linear(pooled, w1, Some(b1))?;
    let hidden = tape.silu(hidden);
    let logits = tape.linear(hidden, w2, Some(b2))?;
    Ok(tape.sigmoid(logits))
}

/// The per-sample, per-channel gate `a` (N×C), every entry in (0, 1).
pub fn attention_gate<T: Real>(x: &Tensor<T>, mlp: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let l1 = (tape.constant(mlp.w1.clone()), tape.constant(mlp.b1.clone()));
    let l2 = (tape.constant(mlp.w2.clone()), tape.constant(mlp.b2.clone()));
    let a = attention_gate_on_tape(&mut tape, xv, l1, l2)?;
    Ok(tape.value(a).clone())
}

/// `a ⊙ x`, with the gate broadcast over height and width.
pub fn channel_attention<T: Real>(x: &Tensor<T>, mlp: &AttentionWeights<T>) -> Result<Tensor<T>> {
    crate::tensor::scale_channels(x, &attention_gate(x, mlp)?)
}

/// Channel attention as a block: C → C/r → C.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub name: String,
    pub channels: usize,
    pub reduction: usize,
    fc1: Linear,
    fc2: Linear,
}

impl ChannelAttention {
    pub fn new(name: impl Into<String>, channels: usize, reduction: usize) -> Result<Self> {
        let name = name.into();
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "{name}: {channels} channels not divisible by reduction ratio {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(ChannelAttention {
            fc1: Linear::new(format!("{name}.fc1"), channels, hidden),
            fc2: Linear::new(format!("{name}.fc2"), hidden, channels),
            name,
            channels,
            reduction,
        })
    }
}

impl Block for ChannelAttention {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.fc2.init(store, rng)
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let l1 = (tape.param_var(&format!("{}.weight", self.fc1.name))?, tape.param_var(&format!("{}.bias", self.fc1.name))?);
        let l2 = (tape.param_var(&format!("{}.weight", self.fc2.name))?, tape.param_var(&format!("{}.bias", self.fc2.name))?);
        let gate = attention_gate_on_tape(tape, x, l1, l2)?;
        tape.scale_channels(x, gate)
    }

    /// `2·C²/r + C/r + C`.
    fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        expect_channels(&self.name, input, self.channels)?;
        Ok(input)
    }

    fn macs(&self, input: [usize; 4]) -> Result<u64> {
        expect_channels(&self.name, input, self.channels)?;
        Ok(self.fc1.macs(input[0]) + self.fc2.macs(input[0]))
    }
}

// ---------------------------------------------------------------------------
// ParC block

/// Spatial operator inside a ParC block's token mixer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMixer {
    /// Position-aware circular convolution.
    #[default]
    Parc,
    /// Zero-padded local kernel spanning a quarter of the nominal extent.
    BkQuarter,
    /// Zero-padded local kernel spanning half of the nominal extent.
    BkHalf,
}

/// Architecture of one ParC block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcBlockConfig {
    pub channels: usize,
    /// Base lengths `(vertical, horizontal)`: the nominal H and W extents.
    pub base_len: (usize, usize),
    /// Channel mixer hidden width is `channels · mlp_ratio`.
    pub mlp_ratio: usize,
    pub use_pe: bool,
    pub use_channel_attention: bool,
    pub reduction: usize,
    /// Pre-norm residual layout; without it the mixers are chained plainly.
    pub use_metaformer: bool,
    pub token_mixer: TokenMixer,
    pub norm_groups: usize,
}

impl ParcBlockConfig {
    pub fn new(channels: usize, base_len: (usize, usize)) -> Self {
        ParcBlockConfig {
            channels,
            base_len,
            mlp_ratio: 2,
            use_pe: true,
            use_channel_attention: true,
            reduction: 4,
            use_metaformer: true,
            token_mixer: TokenMixer::Parc,
            norm_groups: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SpatialOp {
    Parc(ParcOp),
    Local(LocalOp),
}

impl SpatialOp {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        match self {
            SpatialOp::Parc(op) => op.init(store, rng),
            SpatialOp::Local(op) => op.init(store, rng),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            SpatialOp::Parc(op) => op.forward(tape, x),
            SpatialOp::Local(op) => op.forward(tape, x),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            SpatialOp::Parc(op) => op.param_count(),
            SpatialOp::Local(op) => op.param_count(),
        }
    }

    fn macs(&self, input: [usize; 4]) -> u64 {
        match self {
            SpatialOp::Parc(op) => op.macs(input),
            SpatialOp::Local(op) => op.macs(input),
        }
    }
}

/// Meta-former block with a ParC token mixer:
///
/// ```text
/// u = x + Proj(concat(ParC-V(n1[..C/2]), ParC-H(n1[C/2..])))   n1 = GN(x)
/// y = u + FC2(CA(silu(FC1(n2))))                               n2 = GN(u)
/// ```
///
/// The first `floor(C/2)` channels go to the vertical operator, the rest to
/// the horizontal one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcBlock {
    pub name: String,
    pub config: ParcBlockConfig,
    norm1: GroupNorm,
    vertical: Option<SpatialOp>,
    horizontal: SpatialOp,
    spatial_proj: Conv2d,
    norm2: GroupNorm,
    fc1: Conv2d,
    attention: Option<ChannelAttention>,
    fc2: Conv2d,
}

impl ParcBlock {
    pub fn new(name: impl Into<String>, config: ParcBlockConfig) -> Result<Self> {
        let name = name.into();
        let c = config.channels;
        if c == 0 || config.mlp_ratio == 0 {
            return Err(Error::Config(format!("{name}: channels and mlp_ratio must be positive")));
        }
        let (lv, lh) = config.base_len;
        if lv == 0 || lh == 0 {
            return Err(Error::Config(format!("{name}: base lengths must be ≥ 1")));
        }
        let split_v = c / 2;
        let op = |suffix: &str, orientation: Orientation, channels: usize, base: usize| -> Result<SpatialOp> {
            let op_name = format!("{name}.{suffix}");
            Ok(match config.token_mixer {
                TokenMixer::Parc => SpatialOp::Parc(ParcOp {
                    name: op_name,
                    orientation,
                    channels,
                    base_len: base,
                    use_pe: config.use_pe,
                }),
                TokenMixer::BkQuarter | TokenMixer::BkHalf => {
                    let fraction = if config.token_mixer == TokenMixer::BkQuarter {
                        KernelFraction::Quarter
                    } else {
                        KernelFraction::Half
                    };
                    SpatialOp::Local(LocalOp {
                        name: op_name,
                        orientation,
                        channels,
                        kernel_len: big_kernel_len(base, fraction)
                            .map_err(|e| Error::Config(format!("{name}: {e}")))?,
                    })
                }
            })
        };
        let vertical = if split_v > 0 {
            Some(op("parc_v", Orientation::Vertical, split_v, lv)?)
        } else {
            None
        };
        let horizontal = op("parc_h", Orientation::Horizontal, c - split_v, lh)?;
        let hidden = c * config.mlp_ratio;
        let attention = if config.use_channel_attention {
            Some(ChannelAttention::new(format!("{name}.attention"), hidden, config.reduction)?)
        } else {
            None
        };
        Ok(ParcBlock {
            norm1: GroupNorm::new(format!("{name}.norm1"), c, config.norm_groups),
            vertical,
            horizontal,
            spatial_proj: Conv2d::pointwise(format!("{name}.spatial_proj"), c, c, true),
            norm2: GroupNorm::new(format!("{name}.norm2"), c, config.norm_groups),
            fc1: Conv2d::pointwise(format!("{name}.fc1"), c, hidden, true),
            attention,
            fc2: Conv2d::pointwise(format!("{name}.fc2"), hidden, c, true),
            name,
            config,
        })
    }

    /// Parameter names of the two mixers' output projections.
    pub fn output_projections(&self) -> [String; 4] {
        [
            format!("{}.weight", self.spatial_proj.name),
            format!("{}.bias", self.spatial_proj.name),
            format!("{}.weight", self.fc2.name),
            format!("{}.bias", self.fc2.name),
        ]
    }

    fn spatial_mixer<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = tape.value(x).nchw()?;
        let mixed = match &self.vertical {
            Some(v) => {
                let split = c / 2;
                let xv = tape.slice(x, 1, 0, split)?;
                let xh = tape.slice(x, 1, split, c - split)?;
                let yv = v.forward(tape, xv)?;
                let yh = self.horizontal.forward(tape, xh)?;
                tape.concat(&[yv, yh], 1)?
            }
            None => self.horizontal.forward(tape, x)?,
        };
        self.spatial_proj.forward(tape, mixed)
    }

    fn channel_mixer<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let mut h = tape.silu(h);
        if let Some(att) = &self.attention {
            h = att.forward(tape, h)?;
        }
        self.fc2.forward(tape, h)
    }
}

impl Block for ParcBlock {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.config.use_metaformer {
            self.norm1.init(store)?;
            self.norm2.init(store)?;
        }
        if let Some(v) = &self.vertical {
            v.init(store, rng)?;
        }
        self.horizontal.init(store, rng)?;
        self.spatial_proj.init(store, rng)?;
        self.fc1.init(store, rng)?;
        if let Some(att) = &self.attention {
            att.init(store, rng)?;
        }
        self.fc2.init(store, rng)
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        expect_channels(&self.name, dims4(tape.value(x))?, self.config.channels)?;
        if self.config.use_metaformer {
            let n1 = self.norm1.forward(tape, x)?;
            let s = self.spatial_mixer(tape, n1)?;
            let u = tape.add(x, s)?;
            let n2 = self.norm2.forward(tape, u)?;
            let c = self.channel_mixer(tape, n2)?;
            tape.add(u, c)
        } else {
            let s = self.spatial_mixer(tape, x)?;
            self.channel_mixer(tape, s)
        }
    }

    fn param_count(&self) -> usize {
        let norms = if self.config.use_metaformer {
            self.norm1.param_count() + self.norm2.param_count()
        } else {
            0
        };
        norms
            + self.vertical.as_ref().map_or(0, SpatialOp::param_count)
            + self.horizontal.param_count()
            + self.spatial_proj.param_count()
            + self.fc1.param_count()
            + self.attention.as_ref().map_or(0, Block::param_count)
            + self.fc2.param_count()
    }

    fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        expect_channels(&self.name, input, self.config.channels)?;
        Ok(input)
    }

    fn macs(&self, input: [usize; 4]) -> Result<u64> {
        expect_channels(&self.name, input, self.config.channels)?;
        let [n, c, h, w] = input;
        let split = c / 2;
        let mut total = self.horizontal.macs([n, c - split, h, w]);
        if let Some(v) = &self.vertical {
            total += v.macs([n, split, h, w]);
        }
        total += self.spatial_proj.macs(input)?;
        total += self.fc1.macs(input)?;
        if let Some(att) = &self.attention {
            total += att.macs([n, self.fc1.out_channels, h, w])?;
        }
        total += self.fc2.macs([n, self.fc1.out_channels, h, w])?;
        Ok(total)
    }
}

// ---------------------------------------------------------------------------
// Inverted residual

/// MobileNetV2 block: pointwise expand → depthwise 3×3 (stride s) →
/// pointwise project, each followed by group norm, SiLU after the first two.
/// The input is added back iff stride is 1 and the widths match.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidual {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    expand: Conv2d,
    norm_expand: GroupNorm,
    depthwise: Conv2d,
    norm_depthwise: GroupNorm,
    project: Conv2d,
    norm_project: GroupNorm,
}

impl InvertedResidual {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: usize,
        norm_groups: usize,
    ) -> Result<Self> {
        let name = name.into();
        if expansion == 0 {
            return Err(Error::Config(format!("{name}: expansion must be ≥ 1")));
        }
        if stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!("{name}: stride and channel counts must be positive")));
        }
        let hidden = in_channels * expansion;
        Ok(InvertedResidual {
            expand: Conv2d::pointwise(format!("{name}.expand"), in_channels, hidden, false),
            norm_expand: GroupNorm::new(format!("{name}.norm_expand"), hidden, norm_groups),
            depthwise: Conv2d::square3(format!("{name}.depthwise"), hidden, hidden, stride, hidden),
            norm_depthwise: GroupNorm::new(format!("{name}.norm_depthwise"), hidden, norm_groups),
            project: Conv2d::pointwise(format!("{name}.project"), hidden, out_channels, false),
            norm_project: GroupNorm::new(format!("{name}.norm_project"), out_channels, norm_groups),
            name,
            in_channels,
            out_channels,
            stride,
            expansion,
        })
    }

    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    /// The projection weight and the shift of the norm after it; zeroing
    /// both silences the residual branch.
    pub fn projection_params(&self) -> [String; 2] {
        [format!("{}.weight", self.project.name), format!("{}.beta", self.norm_project.name)]
    }
}

impl Block for InvertedResidual {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.expand.init(store, rng)?;
        self.norm_expand.init(store)?;
        self.depthwise.init(store, rng)?;
        self.norm_depthwise.init(store)?;
        self.project.init(store, rng)?;
        self.norm_project.init(store)
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        expect_channels(&self.name, dims4(tape.value(x))?, self.in_channels)?;
        let h = self.expand.forward(tape, x)?;
        let h = self.norm_expand.forward(tape, h)?;
        let h = tape.silu(h);
        let h = self.depthwise.forward(tape, h)?;
        let h = self.norm_depthwise.forward(tape, h)?;
        let h = tape.silu(h);
        let h = self.project.forward(tape, h)?;
        let h = self.norm_project.forward(tape, h)?;
        if self.has_skip() {
            tape.add(x, h)
        } else {
            Ok(h)
        }
    }

    fn param_count(&self) -> usize {
        self.expand.param_count()
            + self.norm_expand.param_count()
            + self.depthwise.param_count()
            + self.norm_depthwise.param_count()
            + self.project.param_count()
            + self.norm_project.param_count()
    }

    fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        expect_channels(&self.name, input, self.in_channels)?;
        let e = self.expand.out_dims(input)?;
        let d = self.depthwise.out_dims(e)?;
        self.project.out_dims(d)
    }

    fn macs(&self, input: [usize; 4]) -> Result<u64> {
        expect_channels(&self.name, input, self.in_channels)?;
        let e = self.expand.out_dims(input)?;
        let d = self.depthwise.out_dims(e)?;
        Ok(self.expand.macs(input)? + self.depthwise.macs(e)? + self.project.macs(d)?)
    }
}

// ---------------------------------------------------------------------------
// Fusion

/// Interaction module joining the local and global paths: concat along
/// channels → grouped 3×3 conv (`groups`) → GN → SiLU → pointwise conv to
/// the stage width.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub name: String,
    pub local_channels: usize,
    pub global_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    grouped: Conv2d,
    norm: GroupNorm,
    pointwise: Conv2d,
}

impl Fusion {
    pub fn new(
        name: impl Into<String>,
        local_channels: usize,
        global_channels: usize,
        out_channels: usize,
        groups: usize,
        norm_groups: usize,
    ) -> Result<Self> {
        let name = name.into();
        let cat = local_channels + global_channels;
        if groups == 0 || !cat.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{name}: {cat} concatenated channels not divisible by {groups} fusion groups"
            )));
        }
        Ok(Fusion {
            grouped: Conv2d::square3(format!("{name}.grouped"), cat, cat, 1, groups),
            norm: GroupNorm::new(format!("{name}.norm"), cat, norm_groups),
            pointwise: Conv2d::pointwise(format!("{name}.pointwise"), cat, out_channels, false),
            name,
            local_channels,
            global_channels,
            out_channels,
            groups,
        })
    }

    pub fn pointwise_weight(&self) -> String {
        format!("{}.weight", self.pointwise.name)
    }

    pub fn grouped_param_count(&self) -> usize {
        self.grouped.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.grouped.init(store, rng)?;
        self.norm.init(store)?;
        self.pointwise.init(store, rng)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, local: Var, global: Var) -> Result<Var> {
        let (ln, lc, lh, lw) = tape.value(local).nchw()?;
        let (gn, gc, gh, gw) = tape.value(global).nchw()?;
        if (ln, lh, lw) != (gn, gh, gw) {
            return Err(Error::shape(format!(
                "{}: local {:?} and global {:?} differ outside the channel axis",
                self.name,
                (ln, lc, lh, lw),
                (gn, gc, gh, gw)
            )));
        }
        if lc != self.local_channels || gc != self.global_channels {
            return Err(Error::shape(format!(
                "{}: channel axis ({lc}, {gc}), expected ({}, {})",
                self.name, self.local_channels, self.global_channels
            )));
        }
        let cat = tape.concat(&[local, global], 1)?;
        let h = self.grouped.forward(tape, cat)?;
        let h = self.norm.forward(tape, h)?;
        let h = tape.silu(h);
        self.pointwise.forward(tape, h)
    }

    /// Forward pass on plain tensors.
    pub fn apply<T: Real>(&self, params: &ParamStore<T>, local: &Tensor<T>, global: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        tape.bind(params)?;
        let (l, g) = (tape.constant(local.clone()), tape.constant(global.clone()));
        let y = self.forward(&mut tape, l, g)?;
        Ok(tape.value(y).clone())
    }

    pub fn param_count(&self) -> usize {
        self.grouped.param_count() + self.norm.param_count() + self.pointwise.param_count()
    }

    pub fn macs(&self, spatial: [usize; 4]) -> Result<u64> {
        let [n, _, h, w] = spatial;
        let cat = [n, self.local_channels + self.global_channels, h, w];
        Ok(self.grouped.macs(cat)? + self.pointwise.macs(cat)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, FiniteDiffOptions};
    use crate::layers::uniform;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn build<B: Block>(block: &B, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        block.init(&mut store, &mut rng(seed)).unwrap();
        store
    }

    /// Replaces every tensor with U(-0.5, 0.5) noise so gradients are not tiny.
    fn scramble(store: &mut ParamStore<f64>, seed: u64) {
        let mut r = rng(seed);
        for (_, t) in store.iter_mut() {
            *t = uniform(t.dims(), 0.5, &mut r);
        }
    }

    fn zero(store: &mut ParamStore<f64>, name: &str) {
        let t = store.get_mut(name).unwrap();
        *t = Tensor::zeros(t.dims().to_vec());
    }

    #[test]
    fn zero_gate_halves_input() {
        let x = uniform::<f64>(&[2, 3, 4, 5], 1.0, &mut rng(1));
        let mlp = AttentionWeights {
            w1: Tensor::zeros(vec![1, 3]),
            b1: Tensor::zeros(vec![1]),
            w2: Tensor::zeros(vec![3, 1]),
            b2: Tensor::zeros(vec![3]),
        };
        let y = channel_attention(&x, &mlp).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f64>::zeros(vec![1, 4, 3, 3]);
        let mut r = rng(2);
        let mlp = AttentionWeights {
            w1: uniform(&[2, 4], 1.0, &mut r),
            b1: uniform(&[2], 1.0, &mut r),
            w2: uniform(&[4, 2], 1.0, &mut r),
            b2: uniform(&[4], 1.0, &mut r),
        };
        assert!(channel_attention(&x, &mlp).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_like_mlp_gate() {
        // Channel 0 has mean 1, channel 1 mean -1. W1 = [I; -I] and W2 = [I, -I]
        // with SiLU between give silu(m) - silu(-m) = m, so the gate is sigmoid(m).
        let x = Tensor::new(vec![1, 2, 2, 2], vec![0.5, 1.5, 1.0, 1.0, -1.0, -1.0, -2.0, 0.0]).unwrap();
        let mlp = AttentionWeights {
            w1: Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap(),
            b1: Tensor::zeros(vec![4]),
            w2: Tensor::new(vec![2, 4], vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap(),
            b2: Tensor::zeros(vec![2]),
        };
        let a = attention_gate(&x, &mlp).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        assert!((a.data()[0] - s(1.0)).abs() < 1e-12);
        assert!((a.data()[1] - s(-1.0)).abs() < 1e-12);
        assert!((a.data()[0] - 0.7311).abs() < 1e-4);
        let y = channel_attention(&x, &mlp).unwrap();
        assert!((y.data()[1] - 1.5 * s(1.0)).abs() < 1e-12);
        assert!((y.data()[6] + 2.0 * s(-1.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gate_strictly_inside_unit_interval(seed in 0u64..500, scale in 0.1f64..5.0) {
            let mut r = rng(seed);
            let x = uniform::<f64>(&[2, 8, 3, 3], scale, &mut r);
            let mlp = AttentionWeights {
                w1: uniform(&[2, 8], 1.0, &mut r),
                b1: uniform(&[2], 1.0, &mut r),
                w2: uniform(&[8, 2], 1.0, &mut r),
                b2: uniform(&[8], 1.0, &mut r),
            };
            let a = attention_gate(&x, &mlp).unwrap();
            prop_assert_eq!(a.dims(), &[2, 8]);
            prop_assert!(a.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn attention_reduction_must_divide() {
        assert!(matches!(ChannelAttention::new("ca", 10, 4), Err(Error::Config(_))));
        let mut cfg = ParcBlockConfig::new(5, (4, 4));
        cfg.mlp_ratio = 1;
        assert!(matches!(ParcBlock::new("b", cfg), Err(Error::Config(_))));
    }

    #[test]
    fn attention_toggle_changes_count_by_closed_form() {
        for (c, ratio, r) in [(8, 2, 4), (16, 1, 4), (12, 2, 2)] {
            let mut cfg = ParcBlockConfig::new(c, (8, 8));
            cfg.mlp_ratio = ratio;
            cfg.reduction = r;
            let on = ParcBlock::new("b", cfg.clone()).unwrap();
            cfg.use_channel_attention = false;
            let off = ParcBlock::new("b", cfg).unwrap();
            let hidden = c * ratio;
            let expect = 2 * hidden * hidden / r + hidden / r + hidden;
            assert_eq!(on.param_count() - off.param_count(), expect);
        }
    }

    #[test]
    fn param_counts_match_store() {
        let mut variants = Vec::new();
        for pe in [true, false] {
            for ca in [true, false] {
                for mf in [true, false] {
                    for mixer in [TokenMixer::Parc, TokenMixer::BkQuarter, TokenMixer::BkHalf] {
                        let mut cfg = ParcBlockConfig::new(7, (6, 10));
                        cfg.mlp_ratio = 4;
                        cfg.use_pe = pe;
                        cfg.use_channel_attention = ca;
                        cfg.use_metaformer = mf;
                        cfg.token_mixer = mixer;
                        variants.push(cfg);
                    }
                }
            }
        }
        for cfg in variants {
            let block = ParcBlock::new("b", cfg.clone()).unwrap();
            assert_eq!(build(&block, 0).numel(), block.param_count(), "{cfg:?}");
        }
    }

    #[test]
    fn channel_split_routes_floor_half_to_vertical() {
        let mut cfg = ParcBlockConfig::new(5, (4, 6));
        cfg.use_channel_attention = false;
        let block = ParcBlock::new("b", cfg).unwrap();
        let store = build(&block, 0);
        assert_eq!(store.get("b.parc_v.kernel").unwrap().dims(), &[2, 4]);
        assert_eq!(store.get("b.parc_h.kernel").unwrap().dims(), &[3, 6]);
    }

    #[test]
    fn zeroed_projections_make_block_identity() {
        for mixer in [TokenMixer::Parc, TokenMixer::BkHalf] {
            let mut cfg = ParcBlockConfig::new(8, (6, 7));
            cfg.token_mixer = mixer;
            let block = ParcBlock::new("b", cfg).unwrap();
            let mut store = build(&block, 3);
            scramble(&mut store, 4);
            for name in block.output_projections() {
                zero(&mut store, &name);
            }
            let x = uniform::<f64>(&[2, 8, 6, 7], 2.0, &mut rng(5));
            let y = block.apply(&store, &x).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn block_preserves_dims_at_any_size() {
        let block = ParcBlock::new("b", ParcBlockConfig::new(4, (8, 8))).unwrap();
        let store = build(&block, 0);
        for (h, w) in [(1, 1), (1, 5), (3, 2), (8, 8), (13, 9)] {
            let x = uniform::<f64>(&[1, 4, h, w], 1.0, &mut rng(h as u64));
            assert_eq!(block.apply(&store, &x).unwrap().dims(), &[1, 4, h, w]);
            assert_eq!(block.out_dims([1, 4, h, w]).unwrap(), [1, 4, h, w]);
        }
    }

    #[test]
    fn block_rejects_wrong_channels() {
        let block = ParcBlock::new("b", ParcBlockConfig::new(4, (8, 8))).unwrap();
        let store = build(&block, 0);
        let x = Tensor::<f64>::zeros(vec![1, 3, 8, 8]);
        assert!(matches!(block.apply(&store, &x), Err(Error::Shape(_))));
    }

    fn weighted_sum_loss<'a, B: Block>(
        block: &'a B,
        x: &Tensor<f64>,
        r: &Tensor<f64>,
    ) -> impl Fn(&mut Tape<f64>) -> Result<Var> + 'a {
        let (x, r) = (x.clone(), r.clone());
        move |tape| {
            let xv = tape.constant(x.clone());
            let y = block.forward(tape, xv)?;
            let rv = tape.constant(r.clone());
            let p = tape.mul(y, rv)?;
            Ok(tape.sum(p))
        }
    }

    #[test]
    fn parc_block_gradients_match_finite_differences() {
        let block = ParcBlock::new("b", ParcBlockConfig::new(8, (8, 8))).unwrap();
        let mut store = build(&block, 11);
        scramble(&mut store, 12);
        let x = uniform::<f64>(&[4, 8, 8, 8], 1.0, &mut rng(13));
        let r = uniform::<f64>(&[4, 8, 8, 8], 1.0, &mut rng(14));
        let report = finite_diff_check(
            &store,
            weighted_sum_loss(&block, &x, &r),
            FiniteDiffOptions { max_coords_per_param: Some(12), ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn inverted_residual_count_and_skip() {
        let ir = InvertedResidual::new("ir", 8, 8, 1, 2, 8).unwrap();
        // 8·16 + 16·9 + 16·8 conv weights, plus gamma/beta for 16, 16 and 8 channels.
        assert_eq!(ir.param_count(), 400 + 80);
        let mut store = build(&ir, 0);
        assert_eq!(store.numel(), 480);
        scramble(&mut store, 1);
        for name in ir.projection_params() {
            zero(&mut store, &name);
        }
        let x = uniform::<f64>(&[2, 8, 5, 5], 1.0, &mut rng(2));
        assert_eq!(ir.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn inverted_residual_stride_two_floors() {
        let ir = InvertedResidual::new("ir", 4, 6, 2, 3, 8).unwrap();
        assert!(!ir.has_skip());
        let store = build(&ir, 0);
        for (h, w, oh, ow) in [(8, 8, 4, 4), (7, 9, 4, 5), (1, 2, 1, 1)] {
            let x = uniform::<f64>(&[1, 4, h, w], 1.0, &mut rng(3));
            assert_eq!(ir.apply(&store, &x).unwrap().dims(), &[1, 6, oh, ow]);
            assert_eq!(ir.out_dims([1, 4, h, w]).unwrap(), [1, 6, oh, ow]);
        }
        assert!(matches!(InvertedResidual::new("ir", 4, 4, 1, 0, 8), Err(Error::Config(_))));
    }

    #[test]
    fn inverted_residual_gradients() {
        let ir = InvertedResidual::new("ir", 4, 6, 2, 2, 8).unwrap();
        let mut store = build(&ir, 0);
        scramble(&mut store, 7);
        let x = uniform::<f64>(&[2, 4, 6, 6], 1.0, &mut rng(8));
        let r = uniform::<f64>(&[2, 6, 3, 3], 1.0, &mut rng(9));
        let report = finite_diff_check(
            &store,
            weighted_sum_loss(&ir, &x, &r),
            FiniteDiffOptions { max_coords_per_param: Some(10), ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn fusion_counts_and_shapes() {
        let depthwise = Fusion::new("f", 6, 6, 8, 12, 8).unwrap();
        assert_eq!(depthwise.grouped_param_count(), 12 * 9);
        let dense = Fusion::new("f", 6, 6, 8, 1, 8).unwrap();
        assert_eq!(dense.grouped_param_count(), 12 * 12 * 9);
        let grouped = Fusion::new("f", 6, 6, 8, 3, 8).unwrap();
        assert_eq!(grouped.grouped_param_count(), (12 / 3) * 12 * 9);
        assert!(matches!(Fusion::new("f", 6, 5, 8, 2, 8), Err(Error::Config(_))));

        let mut store = ParamStore::<f64>::new();
        grouped.init(&mut store, &mut rng(0)).unwrap();
        assert_eq!(store.numel(), grouped.param_count());
        let x = uniform::<f64>(&[2, 6, 5, 7], 1.0, &mut rng(1));
        let y = grouped.apply(&store, &x, &x).unwrap();
        assert_eq!(y.dims(), &[2, 8, 5, 7]);

        zero(&mut store, &grouped.pointwise_weight());
        let y = grouped.apply(&store, &x, &x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let other = Tensor::<f64>::zeros(vec![2, 6, 5, 6]);
        assert!(matches!(grouped.apply(&store, &x, &other), Err(Error::Shape(_))));
    }
}

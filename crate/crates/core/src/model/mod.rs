//! Desk-scale ParC-Net assembly, counting and checkpoints.
//!
//! A model is a sequence of units: stem, one unit per configured stage, and
//! a pooled linear head. In the bifurcate frame a ParC stage runs
//!
//! ```text
//! x ─ transition IR ─ local (dw3×3 → pw) ─┬─ ParC blocks ─┐
//!                                          └───────────────┴─ fusion ─ out
//! ```

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Frame, InitScheme, ModelConfig, StageConfig, StageKind, StemConfig, StemKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::blocks::{Block, Fusion, InvertedResidual, ParcBlock, ParcBlockConfig};
use crate::error::{Error, Result};
use crate::layers::{uniform, Conv2d, GroupNorm, Linear};
use crate::tensor::{Real, Tensor};

/// Stem: one convolution, group norm and SiLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    conv: Conv2d,
    norm: GroupNorm,
}

/// Stack of inverted residuals; the first one carries the stage stride.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStage {
    blocks: Vec<InvertedResidual>,
}

/// Bifurcate ParC stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcStage {
    transition: InvertedResidual,
    local_dw: Conv2d,
    local_dw_norm: GroupNorm,
    local_pw: Conv2d,
    local_pw_norm: GroupNorm,
    blocks: Vec<ParcBlock>,
    fusion: Fusion,
}

/// ParC block stack without local branch or fusion; a transition inverted
/// residual is inserted only when the width or resolution changes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainParcStage {
    transition: Option<InvertedResidual>,
    blocks: Vec<ParcBlock>,
}

/// Global average pool followed by a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    channels: usize,
    linear: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnitKind {
    Stem(Stem),
    Local(LocalStage),
    Parc(ParcStage),
    PlainParc(PlainParcStage),
    Head(Head),
}

/// One named section of the network, the granularity of per-layer counting
/// and benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    pub kind: UnitKind,
}

fn silu_norm<T: Real>(tape: &mut Tape<T>, norm: &GroupNorm, x: Var) -> Result<Var> {
    let h = norm.forward(tape, x)?;
    Ok(tape.silu(h))
}

impl Block for Unit {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        match &self.kind {
            UnitKind::Stem(s) => {
                s.conv.init(store, rng)?;
                s.norm.init(store)
            }
            UnitKind::Local(s) => s.blocks.iter().try_for_each(|b| b.init(store, rng)),
            UnitKind::Parc(s) => {
                s.transition.init(store, rng)?;
                s.local_dw.init(store, rng)?;
                s.local_dw_norm.init(store)?;
                s.local_pw.init(store, rng)?;
                s.local_pw_norm.init(store)?;
                s.blocks.iter().try_for_each(|b| b.init(store, rng))?;
                s.fusion.init(store, rng)
            }
            UnitKind::PlainParc(s) => {
                if let Some(t) = &s.transition {
                    t.init(store, rng)?;
                }
                s.blocks.iter().try_for_each(|b| b.init(store, rng))
            }
            UnitKind::Head(h) => h.linear.init(store, rng),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match &self.kind {
            UnitKind::Stem(s) => {
                let h = s.conv.forward(tape, x)?;
                silu_norm(tape, &s.norm, h)
            }
            UnitKind::Local(s) => s.blocks.iter().try_fold(x, |h, b| b.forward(tape, h)),
            UnitKind::Parc(s) => {
                let h = s.transition.forward(tape, x)?;
                let h = s.local_dw.forward(tape, h)?;
                let h = silu_norm(tape, &s.local_dw_norm, h)?;
                let h = s.local_pw.forward(tape, h)?;
                let local = silu_norm(tape, &s.local_pw_norm, h)?;
                let global = s.blocks.iter().try_fold(local, |h, b| b.forward(tape, h))?;
                s.fusion.forward(tape, local, global)
            }
            UnitKind::PlainParc(s) => {
                let h = match &s.transition {
                    Some(t) => t.forward(tape, x)?,
                    None => x,
                };
                s.blocks.iter().try_fold(h, |h, b| b.forward(tape, h))
            }
            UnitKind::Head(head) => {
                let (n, c, _, _) = tape.value(x).nchw()?;
                if c != head.channels {
                    return Err(Error::shape(format!(
                        "{}: channel axis is {c}, head expects {}",
                        self.name, head.channels
                    )));
                }
                let p = tape.global_avg_pool(x)?;
                let p = tape.reshape(p, &[n, c])?;
                head.linear.forward(tape, p)
            }
        }
    }

    fn param_count(&self) -> usize {
        match &self.kind {
            UnitKind::Stem(s) => s.conv.param_count() + s.norm.param_count(),
            UnitKind::Local(s) => s.blocks.iter().map(Block::param_count).sum(),
            UnitKind::Parc(s) => {
                s.transition.param_count()
                    + s.local_dw.param_count()
                    + s.local_dw_norm.param_count()
                    + s.local_pw.param_count()
                    + s.local_pw_norm.param_count()
                    + s.blocks.iter().map(Block::param_count).sum::<usize>()
                    + s.fusion.param_count()
            }
            UnitKind::PlainParc(s) => {
                s.transition.as_ref().map_or(0, Block::param_count)
                    + s.blocks.iter().map(Block::param_count).sum::<usize>()
            }
            UnitKind::Head(h) => h.linear.param_count(),
        }
    }

    fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        match &self.kind {
            UnitKind::Stem(s) => s.conv.out_dims(input),
            UnitKind::Local(s) => s.blocks.iter().try_fold(input, |d, b| b.out_dims(d)),
            UnitKind::Parc(s) => {
                let [n, _, h, w] = s.transition.out_dims(input)?;
                Ok([n, s.fusion.out_channels, h, w])
            }
            UnitKind::PlainParc(s) => {
                let d = match &s.transition {
                    Some(t) => t.out_dims(input)?,
                    None => input,
                };
                s.blocks.iter().try_fold(d, |d, b| b.out_dims(d))
            }
            UnitKind::Head(h) => Ok([input[0], h.linear.out_features, 1, 1]),
        }
    }

    fn macs(&self, input: [usize; 4]) -> Result<u64> {
        match &self.kind {
            UnitKind::Stem(s) => s.conv.macs(input),
            UnitKind::Local(s) => {
                let mut d = input;
                let mut total = 0;
                for b in &s.blocks {
                    total += b.macs(d)?;
                    d = b.out_dims(d)?;
                }
                Ok(total)
            }
            UnitKind::Parc(s) => {
                let t = s.transition.out_dims(input)?;
                let mut total = s.transition.macs(input)? + s.local_dw.macs(t)? + s.local_pw.macs(t)?;
                for b in &s.blocks {
                    total += b.macs(t)?;
                }
                Ok(total + s.fusion.macs(t)?)
            }
            UnitKind::PlainParc(s) => {
                let (mut total, d) = match &s.transition {
                    Some(t) => (t.macs(input)?, t.out_dims(input)?),
                    None => (0, input),
                };
                for b in &s.blocks {
                    total += b.macs(d)?;
                }
                Ok(total)
            }
            UnitKind::Head(h) => Ok(h.linear.macs(input[0])),
        }
    }
}

/// Cost of one unit at a given input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitCost {
    pub name: String,
    pub input_dims: [usize; 4],
    pub output_dims: [usize; 4],
    pub params: usize,
    pub macs: u64,
}

/// A network architecture together with its f32 parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    units: Vec<Unit>,
    params: ParamStore<f32>,
}

/// Builds `config` and initializes it deterministically from `seed`.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model> {
    Model::build(config, seed)
}

fn build_units(config: &ModelConfig) -> Result<Vec<Unit>> {
    config.validate()?;
    let groups = config.norm_groups;
    let [h0, w0] = config.input_resolution;
    let mut units = Vec::with_capacity(config.stages.len() + 2);

    let stem_conv = match config.stem.kind {
        StemKind::Conv3x3 => Conv2d::square3("stem.conv", config.in_channels, config.stem.out_channels, config.stem.stride, 1),
        StemKind::Pointwise => Conv2d {
            stride: (config.stem.stride, config.stem.stride),
            ..Conv2d::pointwise("stem.conv", config.in_channels, config.stem.out_channels, false)
        },
    };
    units.push(Unit {
        name: "stem".into(),
        kind: UnitKind::Stem(Stem {
            conv: stem_conv,
            norm: GroupNorm::new("stem.norm", config.stem.out_channels, groups),
        }),
    });
    let mut dims = units[0].out_dims([1, config.in_channels, h0, w0])?;

    for (i, s) in config.stages.iter().enumerate() {
        let name = format!("stage{i}");
        let cin = dims[1];
        let cout = s.out_channels;
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("stage {i}: {m}")),
            other => other,
        };
        let kind = match s.kind {
            StageKind::Local => {
                let blocks = (0..s.depth)
                    .map(|d| {
                        let (c_in, stride) = if d == 0 { (cin, s.stride) } else { (cout, 1) };
                        InvertedResidual::new(format!("{name}.block{d}"), c_in, cout, stride, s.expansion, groups)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                UnitKind::Local(LocalStage { blocks })
            }
            StageKind::Parc => {
                let needs_transition = config.frame == Frame::Bifurcate || s.stride != 1 || cin != cout;
                let transition = if needs_transition {
                    Some(
                        InvertedResidual::new(format!("{name}.transition"), cin, cout, s.stride, s.expansion, groups)
                            .map_err(wrap)?,
                    )
                } else {
                    None
                };
                let feat = match &transition {
                    Some(t) => t.out_dims(dims)?,
                    None => dims,
                };
                let base_len = s.base_len.map_or((feat[2], feat[3]), |[v, h]| (v, h));
                let blocks = (0..s.depth)
                    .map(|d| {
                        let cfg = ParcBlockConfig {
                            channels: cout,
                            base_len,
                            mlp_ratio: s.mlp_ratio,
                            use_pe: s.use_pe,
                            use_channel_attention: s.use_channel_attention,
                            reduction: s.reduction,
                            use_metaformer: s.use_metaformer,
                            token_mixer: s.token_mixer,
                            norm_groups: groups,
                        };
                        ParcBlock::new(format!("{name}.block{d}"), cfg)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                match config.frame {
                    Frame::Bifurcate => UnitKind::Parc(ParcStage {
                        transition: transition.expect("bifurcate stages always transition"),
                        local_dw: Conv2d::square3(format!("{name}.local.dw"), cout, cout, 1, cout),
                        local_dw_norm: GroupNorm::new(format!("{name}.local.dw_norm"), cout, groups),
                        local_pw: Conv2d::pointwise(format!("{name}.local.pw"), cout, cout, false),
                        local_pw_norm: GroupNorm::new(format!("{name}.local.pw_norm"), cout, groups),
                        blocks,
                        fusion: Fusion::new(format!("{name}.fusion"), cout, cout, cout, s.fusion_groups, groups)
                            .map_err(wrap)?,
                    }),
                    Frame::Plain => UnitKind::PlainParc(PlainParcStage { transition, blocks }),
                }
            }
        };
        let unit = Unit { name, kind };
        dims = unit.out_dims(dims)?;
        units.push(unit);
    }

    units.push(Unit {
        name: "head".into(),
        kind: UnitKind::Head(Head {
            channels: dims[1],
            linear: Linear::new("head.fc", dims[1], config.num_classes),
        }),
    });
    Ok(units)
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        let units = build_units(&config)?;
        let params = init_units(&units, config.init, seed)?;
        Ok(Model { config, units, params })
    }

    /// Wraps existing parameters; names and shapes must match what the
    /// architecture registers.
    pub fn from_params(config: ModelConfig, params: ParamStore<f32>) -> Result<Model> {
        let units = build_units(&config)?;
        let reference = init_units::<f32>(&units, config.init, 0)?;
        check_schema(&reference, &params)?;
        Ok(Model { config, units, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    /// Replaces all parameters after a schema check.
    pub fn set_params(&mut self, params: ParamStore<f32>) -> Result<()> {
        check_schema(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Fresh parameters in any precision, initialized exactly as `build`
    /// would for `seed`.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        init_units(&self.units, self.config.init, seed)
    }

    /// Records the forward pass on a tape that already has parameters bound.
    pub fn forward_tape<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = tape.value(x).nchw()?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "input channel axis is {c}, model expects {}",
                self.config.in_channels
            )));
        }
        self.units.iter().try_fold(x, |h, u| u.forward(tape, h))
    }

    /// Logits (N×num_classes) using the model's own parameters.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward_with(&self.params, x)
    }

    /// Logits using externally supplied parameters, e.g. an EMA shadow or
    /// an f64 copy.
    pub fn forward_with<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        tape.bind(params)?;
        let xv = tape.constant(x.clone());
        let y = self.forward_tape(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Runs a single unit on plain tensors (used for per-layer timing).
    pub fn forward_unit(&self, index: usize, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let unit = self
            .units
            .get(index)
            .ok_or_else(|| Error::Argument(format!("no unit {index}")))?;
        unit.apply(&self.params, x)
    }

    /// Learnable scalars, summed analytically over the architecture.
    pub fn count_params(&self) -> usize {
        self.units.iter().map(Block::param_count).sum()
    }

    /// Total multiply-accumulates of one forward pass at `input` dims.
    pub fn count_flops(&self, input: [usize; 4]) -> Result<u64> {
        Ok(self.cost_breakdown(input)?.iter().map(|c| c.macs).sum())
    }

    pub fn cost_breakdown(&self, input: [usize; 4]) -> Result<Vec<UnitCost>> {
        if input[1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "input channel axis is {}, model expects {}",
                input[1], self.config.in_channels
            )));
        }
        let mut dims = input;
        let mut out = Vec::with_capacity(self.units.len());
        for u in &self.units {
            let next = u.out_dims(dims)?;
            out.push(UnitCost {
                name: u.name.clone(),
                input_dims: dims,
                output_dims: next,
                params: u.param_count(),
                macs: u.macs(dims)?,
            });
            dims = next;
        }
        Ok(out)
    }
}

fn init_units<T: Real>(units: &[Unit], scheme: InitScheme, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for u in units {
        u.init(&mut store, &mut rng)?;
    }
    if scheme == InitScheme::FanIn {
        // Redrawn in store order so the result depends only on the seed.
        for (name, t) in store.iter_mut() {
            if name.ends_with(".weight") || name.ends_with(".kernel") {
                let fan_in: usize = t.dims()[1..].iter().product();
                *t = uniform(t.dims(), (3.0 / fan_in as f64).sqrt(), &mut rng);
            }
        }
    }
    Ok(store)
}

fn check_schema<T: Real>(reference: &ParamStore<T>, params: &ParamStore<T>) -> Result<()> {
    for (name, t) in params.iter() {
        match reference.get(name) {
            None => return Err(Error::Schema(format!("unknown tensor name `{name}`"))),
            Some(r) if r.dims() != t.dims() => {
                return Err(Error::Schema(format!(
                    "tensor `{name}` has dims {:?}, architecture expects {:?}",
                    t.dims(),
                    r.dims()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(missing) = reference.names().find(|n| !params.contains(n)) {
        return Err(Error::Schema(format!("missing tensor `{missing}`")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::uniform;
    use crate::tensor::roll;

    fn input(dims: [usize; 4], seed: u64) -> Tensor<f32> {
        uniform(&dims, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn xxs_desk_runs_at_several_resolutions() {
        let model = build_model(ModelConfig::parcnet_xxs_desk(10), 0).unwrap();
        for s in [48, 64, 96] {
            let y = model.forward(&input([1, 3, s, s], 1)).unwrap();
            assert_eq!(y.dims(), &[1, 10]);
            assert!(y.all_finite());
        }
        let costs = model.cost_breakdown([1, 3, 64, 64]).unwrap();
        let shapes: Vec<[usize; 4]> = costs.iter().map(|c| c.output_dims).collect();
        assert_eq!(
            shapes,
            vec![[1, 16, 32, 32], [1, 24, 32, 32], [1, 48, 16, 16], [1, 64, 8, 8], [1, 80, 4, 4], [1, 10, 1, 1]]
        );
    }

    #[test]
    fn base_lengths_follow_feature_extents() {
        let model = build_model(ModelConfig::parcnet_xxs_desk(10), 0).unwrap();
        let p = model.params();
        assert_eq!(p.get("stage2.block0.parc_v.kernel").unwrap().dims(), &[32, 8]);
        assert_eq!(p.get("stage3.block1.parc_h.pe").unwrap().dims(), &[40, 4]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(ModelConfig::parcnet_xxs_desk(5), 42).unwrap();
        let b = build_model(ModelConfig::parcnet_xxs_desk(5), 42).unwrap();
        let c = build_model(ModelConfig::parcnet_xxs_desk(5), 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn analytic_count_matches_registered_tensors() {
        let mut configs = vec![ModelConfig::parcnet_xxs_desk(10), ModelConfig::circtestnet(true), ModelConfig::circtestnet(false)];
        let mut ablate = ModelConfig::parcnet_xxs_desk(7);
        for s in &mut ablate.stages {
            s.use_channel_attention = false;
            s.use_metaformer = false;
            s.token_mixer = crate::blocks::TokenMixer::BkQuarter;
        }
        configs.push(ablate);
        let mut plain = ModelConfig::circtestnet(true);
        plain.stages.push(StageConfig::parc(24, 2, 2));
        configs.push(plain);
        for cfg in configs {
            let m = build_model(cfg.clone(), 0).unwrap();
            assert_eq!(m.count_params(), m.params().numel(), "{}", cfg.name);
        }
    }

    #[test]
    fn flops_grow_with_every_stage_width() {
        let base = ModelConfig::parcnet_xxs_desk(10);
        let m0 = build_model(base.clone(), 0).unwrap().count_flops([1, 3, 64, 64]).unwrap();
        for i in 0..base.stages.len() {
            let mut cfg = base.clone();
            cfg.stages[i].out_channels += 8;
            let m = build_model(cfg, 0).unwrap().count_flops([1, 3, 64, 64]).unwrap();
            assert!(m > m0, "stage {i}");
        }
        let mut cfg = base;
        cfg.stem.out_channels += 8;
        assert!(build_model(cfg, 0).unwrap().count_flops([1, 3, 64, 64]).unwrap() > m0);
    }

    #[test]
    fn zero_depth_rejected() {
        let mut cfg = ModelConfig::parcnet_xxs_desk(10);
        cfg.stages[2].depth = 0;
        assert!(matches!(build_model(cfg, 0), Err(Error::Config(m)) if m.contains("stage 2")));
    }

    #[test]
    fn forward_is_pure() {
        let model = build_model(ModelConfig::circtestnet(true), 3).unwrap();
        let x = input([2, 1, 16, 16], 4);
        assert_eq!(model.forward(&x).unwrap(), model.forward(&x).unwrap());
    }

    /// Max-norm logit change under a circular shift, absolute and relative.
    fn shifted_gap(use_pe: bool) -> (f64, f64) {
        let model = build_model(ModelConfig::circtestnet(use_pe), 5).unwrap();
        let mut params: ParamStore<f64> = model.params().cast();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (_, t) in params.iter_mut() {
            *t = uniform(t.dims(), 1.0, &mut rng);
        }
        let x: Tensor<f64> = uniform(&[2, 1, 16, 16], 1.0, &mut rng);
        let y = model.forward_with(&params, &x).unwrap();
        let xs = roll(&roll(&x, 2, 3).unwrap(), 3, -5).unwrap();
        let ys = model.forward_with(&params, &xs).unwrap();
        let diff = y.data().iter().zip(ys.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (diff, diff / y.max_abs().max(1e-12))
    }

    #[test]
    fn circtestnet_shift_invariance_depends_on_pe() {
        assert!(shifted_gap(false).1 < 1e-10);
        assert!(shifted_gap(true).0 > 1e-2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = build_model(ModelConfig::parcnet_xxs_desk(4), 9).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.ema = Some(model.params().clone());
        ck.step = 77;
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.step, 77);
        assert_eq!(back.params, ck.params);
        assert_eq!(back.ema, ck.ema);
        assert!(back.adam_m.is_none());
        let x = input([1, 3, 64, 64], 1);
        assert_eq!(back.model().unwrap().forward(&x).unwrap(), model.forward(&x).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = build_model(ModelConfig::circtestnet(true), 0).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes();
        for cut in [0, 3, 5, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut, "cut {cut} offset {offset}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format { .. })));

        let mut ck = Checkpoint::from_model(&model);
        ck.params.insert("stray.weight", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(Error::Schema(m)) if m.contains("stray.weight")));
    }
}

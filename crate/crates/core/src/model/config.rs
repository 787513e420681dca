//! Model configuration files (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::TokenMixer;
use crate::error::{Error, Result};

/// Outer frame of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Each ParC stage is a local branch, a ParC block stack on top of it and
    /// a fusion module joining the two.
    #[default]
    Bifurcate,
    /// ParC stages are bare block stacks. Used by the shift-invariance test
    /// network.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    Conv3x3,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kind: StemKind,
    pub out_channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Local,
    Parc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    pub out_channels: usize,
    pub depth: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Inverted-residual expansion factor.
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    /// `[vertical, horizontal]` base lengths; defaults to the stage's feature
    /// extent at the configured input resolution.
    #[serde(default)]
    pub base_len: Option<[usize; 2]>,
    #[serde(default = "yes")]
    pub use_pe: bool,
    #[serde(default = "yes")]
    pub use_channel_attention: bool,
    #[serde(default = "yes")]
    pub use_metaformer: bool,
    #[serde(default = "default_fusion_groups")]
    pub fusion_groups: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default)]
    pub token_mixer: TokenMixer,
}

impl StageConfig {
    pub fn local(out_channels: usize, depth: usize, stride: usize) -> Self {
        StageConfig {
            kind: StageKind::Local,
            out_channels,
            depth,
            stride,
            expansion: default_expansion(),
            base_len: None,
            use_pe: true,
            use_channel_attention: true,
            use_metaformer: true,
            fusion_groups: default_fusion_groups(),
            mlp_ratio: default_mlp_ratio(),
            reduction: default_reduction(),
            token_mixer: TokenMixer::Parc,
        }
    }

    pub fn parc(out_channels: usize, depth: usize, stride: usize) -> Self {
        StageConfig {
            kind: StageKind::Parc,
            ..StageConfig::local(out_channels, depth, stride)
        }
    }
}

/// Complete network description. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// `[height, width]` the base lengths are derived from.
    pub input_resolution: [usize; 2],
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub frame: Frame,
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_norm_groups")]
    pub norm_groups: usize,
    #[serde(default)]
    pub init: InitScheme,
}

/// How weights and ParC kernels are drawn. Norm parameters are always
/// ones/zeros and biases zeros; position embeddings always use the
/// truncated normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Truncated normal, std 0.02, cut at two std.
    #[default]
    TruncNormal,
    /// Uniform with bound `sqrt(3 / fan_in)`, so unit variance is carried
    /// through each layer. Small networks trained from scratch on tiny
    /// datasets need this to leave the near-zero saddle.
    FanIn,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_expansion() -> usize {
    2
}
fn default_fusion_groups() -> usize {
    4
}
fn default_mlp_ratio() -> usize {
    2
}
fn default_reduction() -> usize {
    4
}
fn default_in_channels() -> usize {
    3
}
fn default_norm_groups() -> usize {
    8
}

impl ModelConfig {
    /// Desk-scale ParC-Net: stem 3→16 s2, local stages 16→24 and 24→48 s2,
    /// ParC stages 48→64 s2 and 64→80 s2 (depth 2 each), linear head.
    pub fn parcnet_xxs_desk(num_classes: usize) -> Self {
        ModelConfig {
            name: "ParC-Net-XXS-desk".into(),
            input_resolution: [64, 64],
            in_channels: 3,
            num_classes,
            frame: Frame::Bifurcate,
            stem: StemConfig {
                kind: StemKind::Conv3x3,
                out_channels: 16,
                stride: 2,
            },
            stages: vec![
                StageConfig::local(24, 2, 1),
                StageConfig::local(48, 2, 2),
                StageConfig::parc(64, 2, 2),
                StageConfig::parc(80, 2, 2),
            ],
            norm_groups: 8,
            init: InitScheme::TruncNormal,
        }
    }

    /// The shift-invariance test network: pointwise stem, one bare stack of
    /// ParC blocks with pointwise channel mixers, pooled linear head. With
    /// `use_pe = false` every layer commutes with circular shifts.
    pub fn circtestnet(use_pe: bool) -> Self {
        let mut stage = StageConfig::parc(16, 1, 1);
        stage.use_pe = use_pe;
        stage.use_channel_attention = false;
        ModelConfig {
            name: if use_pe { "CircTestNet" } else { "CircTestNet-noPE" }.into(),
            input_resolution: [16, 16],
            in_channels: 1,
            num_classes: 4,
            frame: Frame::Plain,
            stem: StemConfig {
                kind: StemKind::Pointwise,
                out_channels: 16,
                stride: 1,
            },
            stages: vec![stage],
            norm_groups: 8,
            init: InitScheme::FanIn,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks stage wiring; errors name the offending key or stage index.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_resolution", self.input_resolution[0].min(self.input_resolution[1])),
            ("in_channels", self.in_channels),
            ("num_classes", self.num_classes),
            ("norm_groups", self.norm_groups),
            ("stem.out_channels", self.stem.out_channels),
            ("stem.stride", self.stem.stride),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        let mut seen_local = false;
        for (i, s) in self.stages.iter().enumerate() {
            let bad = |msg: String| Error::Config(format!("stage {i}: {msg}"));
            for (key, v) in [
                ("depth", s.depth),
                ("out_channels", s.out_channels),
                ("stride", s.stride),
                ("expansion", s.expansion),
                ("mlp_ratio", s.mlp_ratio),
                ("reduction", s.reduction),
                ("fusion_groups", s.fusion_groups),
            ] {
                if v == 0 {
                    return Err(bad(format!("{key} must be positive")));
                }
            }
            if let Some([v, h]) = s.base_len {
                if v == 0 || h == 0 {
                    return Err(bad("base_len entries must be positive".into()));
                }
            }
            match s.kind {
                StageKind::Local => seen_local = true,
                StageKind::Parc => {
                    if self.frame == Frame::Bifurcate && !seen_local {
                        return Err(bad("a local stage must precede the first parc stage".into()));
                    }
                    if s.use_channel_attention && (s.out_channels * s.mlp_ratio) % s.reduction != 0 {
                        return Err(bad(format!(
                            "channel mixer width {} not divisible by reduction {}",
                            s.out_channels * s.mlp_ratio,
                            s.reduction
                        )));
                    }
                    if self.frame == Frame::Bifurcate && (2 * s.out_channels) % s.fusion_groups != 0 {
                        return Err(bad(format!(
                            "fusion input width {} not divisible by fusion_groups {}",
                            2 * s.out_channels,
                            s.fusion_groups
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

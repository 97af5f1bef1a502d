//! Codec family configuration.
//!
//! A [`ModelConfig`] fixes the width and depth of every coding part. Scaling
//! studies are expressed as sweeps over one part at a time: the channel count
//! is multiplied and residual blocks are inserted, everything else is held
//! fixed so per-part parameter counts outside the swept axis stay identical.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, NvcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    #[default]
    Cnn,
    MixedCnnTransformer,
    Transformer,
}

impl ArchKind {
    pub fn uses_attention(self) -> bool {
        !matches!(self, ArchKind::Cnn)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchKind::Cnn => "cnn",
            ArchKind::MixedCnnTransformer => "mixed_cnn_transformer",
            ArchKind::Transformer => "transformer",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchKind {
    type Err = NvcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(ArchKind::Cnn),
            "mixed" | "mixed_cnn_transformer" => Ok(ArchKind::MixedCnnTransformer),
            "transformer" => Ok(ArchKind::Transformer),
            other => Err(invalid("arch_kind", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionEstimationConfig {
    pub channels: usize,
}

impl Default for MotionEstimationConfig {
    fn default() -> Self {
        MotionEstimationConfig { channels: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionEncDecConfig {
    pub channels: usize,
    pub res_blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionEntropyConfig {
    pub channels: usize,
    /// C_m, channels of the motion latent.
    pub latent_channels: usize,
    pub hyper_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextualEncDecConfig {
    pub channels: usize,
    pub res_blocks: usize,
    /// C_y, channels of the contextual latent.
    pub latent_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextualEntropyConfig {
    pub channels: usize,
    pub hyper_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcmConfig {
    /// N; the mined contexts carry N, 2N and 4N channels.
    pub channels: usize,
    /// Internal pyramid width, N when absent. Sweeps grow this so the
    /// context consumers keep their shapes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub res_blocks: usize,
    /// C_F, channels of the reference feature and the long-term state.
    pub feature_channels: usize,
}

impl TcmConfig {
    pub fn width(&self) -> usize {
        self.width.unwrap_or(self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntraConfig {
    pub channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
}

impl Default for IntraConfig {
    fn default() -> Self {
        IntraConfig {
            channels: 32,
            latent_channels: 32,
            hyper_channels: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Window side in pixels; halved while it does not tile the feature map.
    pub window: usize,
    pub heads: usize,
    /// Attention layers inserted per residual block (mixed) or replacing
    /// each residual block (transformer).
    pub depth: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            window: 8,
            heads: 4,
            depth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub motion_estimation: MotionEstimationConfig,
    pub motion_enc_dec: MotionEncDecConfig,
    pub motion_entropy: MotionEntropyConfig,
    pub contextual_enc_dec: ContextualEncDecConfig,
    pub contextual_entropy: ContextualEntropyConfig,
    pub tcm: TcmConfig,
    #[serde(default)]
    pub intra: IntraConfig,
    pub arch_kind: ArchKind,
    /// Architecture of the motion parts. Only CNN motion parts are built.
    #[serde(default)]
    pub motion_arch: ArchKind,
    #[serde(default)]
    pub attention: AttentionConfig,
}

/// Names of the coding parts, in the order parameter reports list them.
pub const MODULE_NAMES: [&str; 7] = [
    "motion_estimation",
    "motion_enc_dec",
    "motion_entropy",
    "contextual_enc_dec",
    "contextual_entropy",
    "tcm",
    "intra",
];

impl ModelConfig {
    /// All widths 32, one residual block, C_F = 16.
    pub fn tiny() -> Self {
        ModelConfig {
            motion_estimation: MotionEstimationConfig { channels: 16 },
            motion_enc_dec: MotionEncDecConfig {
                channels: 32,
                res_blocks: 1,
            },
            motion_entropy: MotionEntropyConfig {
                channels: 32,
                latent_channels: 32,
                hyper_channels: 32,
            },
            contextual_enc_dec: ContextualEncDecConfig {
                channels: 32,
                res_blocks: 1,
                latent_channels: 32,
            },
            contextual_entropy: ContextualEntropyConfig {
                channels: 32,
                hyper_channels: 32,
            },
            tcm: TcmConfig {
                width: None,
                channels: 32,
                res_blocks: 1,
                feature_channels: 16,
            },
            intra: IntraConfig::default(),
            arch_kind: ArchKind::Cnn,
            motion_arch: ArchKind::Cnn,
            attention: AttentionConfig::default(),
        }
    }

    /// Smallest useful configuration; the default for desk-scale training.
    pub fn toy() -> Self {
        ModelConfig {
            motion_estimation: MotionEstimationConfig { channels: 12 },
            motion_enc_dec: MotionEncDecConfig {
                channels: 16,
                res_blocks: 1,
            },
            motion_entropy: MotionEntropyConfig {
                channels: 16,
                latent_channels: 8,
                hyper_channels: 8,
            },
            contextual_enc_dec: ContextualEncDecConfig {
                channels: 16,
                res_blocks: 1,
                latent_channels: 16,
            },
            contextual_entropy: ContextualEntropyConfig {
                channels: 16,
                hyper_channels: 8,
            },
            tcm: TcmConfig {
                width: None,
                channels: 8,
                res_blocks: 1,
                feature_channels: 8,
            },
            intra: IntraConfig {
                channels: 16,
                latent_channels: 16,
                hyper_channels: 8,
            },
            arch_kind: ArchKind::Cnn,
            motion_arch: ArchKind::Cnn,
            attention: AttentionConfig {
                window: 8,
                heads: 2,
                depth: 1,
            },
        }
    }

    /// Mirrors the parameter allocation of the large model: the motion parts
    /// are kept small while contextual coding, contextual entropy modeling and
    /// temporal context mining each take roughly a third of the budget.
    pub fn paper_pattern() -> Self {
        ModelConfig {
            motion_estimation: MotionEstimationConfig { channels: 16 },
            motion_enc_dec: MotionEncDecConfig {
                channels: 32,
                res_blocks: 1,
            },
            motion_entropy: MotionEntropyConfig {
                channels: 32,
                latent_channels: 32,
                hyper_channels: 32,
            },
            contextual_enc_dec: ContextualEncDecConfig {
                channels: 256,
                res_blocks: 3,
                latent_channels: 128,
            },
            contextual_entropy: ContextualEntropyConfig {
                channels: 192,
                hyper_channels: 128,
            },
            tcm: TcmConfig {
                width: None,
                channels: 64,
                res_blocks: 3,
                feature_channels: 32,
            },
            intra: IntraConfig {
                channels: 32,
                latent_channels: 32,
                hyper_channels: 16,
            },
            arch_kind: ArchKind::Cnn,
            motion_arch: ArchKind::Cnn,
            attention: AttentionConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "toy" => Ok(Self::toy()),
            "paper_pattern" | "paper-pattern" => Ok(Self::paper_pattern()),
            other => Err(invalid("preset", format!("unknown preset `{other}`"))),
        }
    }

    pub fn with_arch(mut self, arch: ArchKind) -> Self {
        self.arch_kind = arch;
        self
    }

    /// Checks every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("motion_estimation.channels", self.motion_estimation.channels),
            ("motion_enc_dec.channels", self.motion_enc_dec.channels),
            ("motion_enc_dec.res_blocks", self.motion_enc_dec.res_blocks),
            ("motion_entropy.channels", self.motion_entropy.channels),
            ("motion_entropy.hyper_channels", self.motion_entropy.hyper_channels),
            ("contextual_enc_dec.channels", self.contextual_enc_dec.channels),
            ("contextual_enc_dec.res_blocks", self.contextual_enc_dec.res_blocks),
            ("contextual_entropy.channels", self.contextual_entropy.channels),
            ("contextual_entropy.hyper_channels", self.contextual_entropy.hyper_channels),
            ("tcm.channels", self.tcm.channels),
            ("tcm.res_blocks", self.tcm.res_blocks),
            ("tcm.width", self.tcm.width()),
            ("intra.channels", self.intra.channels),
            ("intra.latent_channels", self.intra.latent_channels),
            ("intra.hyper_channels", self.intra.hyper_channels),
        ];
        for (field, v) in counts {
            if v < 1 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        let latents = [
            ("motion_entropy.latent_channels", self.motion_entropy.latent_channels),
            ("contextual_enc_dec.latent_channels", self.contextual_enc_dec.latent_channels),
            ("tcm.feature_channels", self.tcm.feature_channels),
        ];
        for (field, v) in latents {
            if v < 2 {
                return Err(invalid(field, "must be at least 2"));
            }
        }
        if self.motion_arch != ArchKind::Cnn {
            return Err(NvcError::UnsupportedCombination(format!(
                "{} motion encoder-decoder; motion parts are CNN only",
                self.motion_arch
            )));
        }
        if self.arch_kind.uses_attention() {
            let a = &self.attention;
            for (field, v) in [
                ("attention.window", a.window),
                ("attention.heads", a.heads),
                ("attention.depth", a.depth),
            ] {
                if v < 1 {
                    return Err(invalid(field, "must be at least 1"));
                }
            }
            for (field, v) in [
                ("contextual_enc_dec.channels", self.contextual_enc_dec.channels),
                ("contextual_entropy.channels", self.contextual_entropy.channels),
                ("tcm.channels", self.tcm.channels),
                ("tcm.width", self.tcm.width()),
            ] {
                if v % a.heads != 0 {
                    return Err(invalid(
                        field,
                        format!("{v} is not divisible by attention.heads = {}", a.heads),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// The five coding parts a sweep can scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    MotionEd,
    MotionEm,
    CtxEd,
    CtxEm,
    Tcm,
}

impl SweepAxis {
    /// The parameter-report module this axis changes.
    pub fn module_name(self) -> &'static str {
        match self {
            SweepAxis::MotionEd => "motion_enc_dec",
            SweepAxis::MotionEm => "motion_entropy",
            SweepAxis::CtxEd => "contextual_enc_dec",
            SweepAxis::CtxEm => "contextual_entropy",
            SweepAxis::Tcm => "tcm",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = NvcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion_ed" => Ok(SweepAxis::MotionEd),
            "motion_em" => Ok(SweepAxis::MotionEm),
            "ctx_ed" => Ok(SweepAxis::CtxEd),
            "ctx_em" => Ok(SweepAxis::CtxEm),
            "tcm" => Ok(SweepAxis::Tcm),
            other => Err(invalid("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepAxis::MotionEd => "motion_ed",
            SweepAxis::MotionEm => "motion_em",
            SweepAxis::CtxEd => "ctx_ed",
            SweepAxis::CtxEm => "ctx_em",
            SweepAxis::Tcm => "tcm",
        };
        f.write_str(s)
    }
}

fn scale_channels(c: usize, m: f64, quantum: usize) -> usize {
    let q = quantum.max(1);
    let scaled = (c as f64 * m / q as f64).round() as usize * q;
    scaled.max(q)
}

/// Residual blocks inserted for a channel multiplier: one more per doubling.
fn scale_blocks(b: usize, m: f64) -> usize {
    b + m.log2().floor().max(0.0) as usize
}

/// Returns one config per multiplier, identical to `base` except for the
/// widths and depths of the chosen part.
pub fn enumerate_sweep(base: &ModelConfig, axis: SweepAxis, scales: &[f64]) -> Result<Vec<ModelConfig>> {
    if scales.is_empty() {
        return Err(NvcError::EmptyScales);
    }
    for (i, &m) in scales.iter().enumerate() {
        if !m.is_finite() || m < 1.0 {
            return Err(invalid(format!("scales[{i}]"), format!("{m} must be finite and >= 1")));
        }
        if i > 0 && m <= scales[i - 1] {
            return Err(NvcError::DegenerateSweep(format!(
                "scales must be strictly increasing ({} then {m})",
                scales[i - 1]
            )));
        }
    }
    let quantum = if base.arch_kind.uses_attention() {
        base.attention.heads
    } else {
        1
    };

    let mut out = Vec::with_capacity(scales.len());
    let mut prev_key: Option<Vec<usize>> = None;
    for &m in scales {
        let mut cfg = base.clone();
        if m != 1.0 {
            match axis {
                SweepAxis::MotionEd => {
                    let p = &mut cfg.motion_enc_dec;
                    p.channels = scale_channels(p.channels, m, 1);
                    p.res_blocks = scale_blocks(p.res_blocks, m);
                }
                SweepAxis::MotionEm => {
                    let p = &mut cfg.motion_entropy;
                    p.channels = scale_channels(p.channels, m, 1);
                    p.hyper_channels = scale_channels(p.hyper_channels, m, 1);
                }
                SweepAxis::CtxEd => {
                    let p = &mut cfg.contextual_enc_dec;
                    p.channels = scale_channels(p.channels, m, quantum);
                    p.res_blocks = scale_blocks(p.res_blocks, m);
                }
                SweepAxis::CtxEm => {
                    let p = &mut cfg.contextual_entropy;
                    p.channels = scale_channels(p.channels, m, quantum);
                    p.hyper_channels = scale_channels(p.hyper_channels, m, 1);
                }
                SweepAxis::Tcm => {
                    let p = &mut cfg.tcm;
                    p.width = Some(scale_channels(p.width(), m, quantum));
                    p.res_blocks = scale_blocks(p.res_blocks, m);
                }
            }
        }
        let key = axis_key(&cfg, axis);
        if let Some(prev) = &prev_key {
            let grows = key.iter().zip(prev).all(|(a, b)| a >= b) && key != *prev;
            if !grows {
                return Err(NvcError::DegenerateSweep(format!(
                    "multiplier {m} does not enlarge {axis} beyond the previous point"
                )));
            }
        }
        prev_key = Some(key);
        cfg.validate()?;
        out.push(cfg);
    }
    Ok(out)
}

fn axis_key(cfg: &ModelConfig, axis: SweepAxis) -> Vec<usize> {
    match axis {
        SweepAxis::MotionEd => vec![cfg.motion_enc_dec.channels, cfg.motion_enc_dec.res_blocks],
        SweepAxis::MotionEm => vec![cfg.motion_entropy.channels, cfg.motion_entropy.hyper_channels],
        SweepAxis::CtxEd => vec![cfg.contextual_enc_dec.channels, cfg.contextual_enc_dec.res_blocks],
        SweepAxis::CtxEm => vec![
            cfg.contextual_entropy.channels,
            cfg.contextual_entropy.hyper_channels,
        ],
        SweepAxis::Tcm => vec![cfg.tcm.width(), cfg.tcm.res_blocks],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::tiny(), ModelConfig::toy(), ModelConfig::paper_pattern()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn heads_must_divide_channels_for_attention() {
        let mut cfg = ModelConfig::tiny().with_arch(ArchKind::MixedCnnTransformer);
        cfg.attention.heads = 3;
        match cfg.validate() {
            Err(NvcError::InvalidConfig { field, .. }) => {
                assert_eq!(field, "contextual_enc_dec.channels")
            }
            other => panic!("expected invalid-config, got {other:?}"),
        }
        // cnn ignores the attention block entirely
        cfg.arch_kind = ArchKind::Cnn;
        cfg.validate().unwrap();
    }

    #[test]
    fn latent_channels_need_two() {
        let mut cfg = ModelConfig::tiny();
        cfg.tcm.feature_channels = 1;
        assert!(matches!(
            cfg.validate(),
            Err(NvcError::InvalidConfig { field, .. }) if field == "tcm.feature_channels"
        ));
        let mut cfg = ModelConfig::tiny();
        cfg.contextual_enc_dec.res_blocks = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn transformer_motion_is_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.motion_arch = ArchKind::Transformer;
        assert!(matches!(cfg.validate(), Err(NvcError::UnsupportedCombination(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ModelConfig::paper_pattern().with_arch(ArchKind::Transformer);
        cfg.attention.window = 4;
        let back = ModelConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ModelConfig::tiny().to_json().unwrap()).unwrap();
        v["tcm"]["bogus"] = serde_json::json!(3);
        assert!(ModelConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn identity_sweep_returns_base() {
        let base = ModelConfig::tiny();
        let out = enumerate_sweep(&base, SweepAxis::Tcm, &[1.0]).unwrap();
        assert_eq!(out, vec![base]);
    }

    #[test]
    fn sweep_errors() {
        let base = ModelConfig::tiny();
        assert!(matches!(enumerate_sweep(&base, SweepAxis::Tcm, &[]), Err(NvcError::EmptyScales)));
        assert!(enumerate_sweep(&base, SweepAxis::Tcm, &[0.5]).is_err());
        assert!(enumerate_sweep(&base, SweepAxis::Tcm, &[f64::NAN]).is_err());
        assert!(matches!(
            enumerate_sweep(&base, SweepAxis::Tcm, &[2.0, 1.5]),
            Err(NvcError::DegenerateSweep(_))
        ));
        assert!(matches!(
            enumerate_sweep(&base, SweepAxis::Tcm, &[1.0, 1.001]),
            Err(NvcError::DegenerateSweep(_))
        ));
    }

    #[test]
    fn sweep_only_touches_its_axis() {
        let base = ModelConfig::tiny();
        let out = enumerate_sweep(&base, SweepAxis::MotionEd, &[1.0, 2.5, 3.5, 4.5]).unwrap();
        let widths: Vec<_> = out.iter().map(|c| c.motion_enc_dec.channels).collect();
        assert_eq!(widths, vec![32, 80, 112, 144]);
        let blocks: Vec<_> = out.iter().map(|c| c.motion_enc_dec.res_blocks).collect();
        assert_eq!(blocks, vec![1, 2, 2, 3]);
        for c in &out {
            let mut masked = c.clone();
            masked.motion_enc_dec = base.motion_enc_dec;
            assert_eq!(masked, base);
        }
    }

    #[test]
    fn attention_sweeps_keep_head_divisibility() {
        let mut base = ModelConfig::tiny().with_arch(ArchKind::MixedCnnTransformer);
        base.attention.heads = 4;
        let out = enumerate_sweep(&base, SweepAxis::CtxEm, &[1.0, 1.3, 2.7]).unwrap();
        for c in out {
            assert_eq!(c.contextual_entropy.channels % 4, 0);
        }
    }
}

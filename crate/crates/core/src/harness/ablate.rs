use std::fmt;
use std::str::FromStr;

use super::config::RunConfig;
use crate::context::ContextVariant;
use crate::error::{Error, Result};
use crate::model::AudioInput;
use crate::xmodal::MlnPosition;

/// One ablation row: each axis changes exactly one configuration key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationAxis {
    /// Per-stream self-attention in place of the cross-modal stage.
    NoCmc,
    NoMln,
    MlnPosition(MlnPosition),
    RawAudio,
    AblateAToS,
    AblateSToA,
    TcnContext,
}

impl AblationAxis {
    /// Every distinct row, MLN positions other than the default included.
    pub fn all() -> Vec<AblationAxis> {
        let mut axes = vec![AblationAxis::NoCmc, AblationAxis::NoMln];
        axes.extend(
            [MlnPosition::Ffn1, MlnPosition::Cma, MlnPosition::Conv, MlnPosition::Ffn2]
                .into_iter()
                .map(AblationAxis::MlnPosition),
        );
        axes.extend([
            AblationAxis::RawAudio,
            AblationAxis::AblateAToS,
            AblationAxis::AblateSToA,
            AblationAxis::TcnContext,
        ]);
        axes
    }

    pub fn apply(self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let m = &mut cfg.model;
        let unchanged = match self {
            AblationAxis::NoCmc => !std::mem::replace(&mut m.xmodal.cross_attention, false),
            AblationAxis::NoMln => std::mem::replace(&mut m.xmodal.mln_position, MlnPosition::None) == MlnPosition::None,
            AblationAxis::MlnPosition(p) => std::mem::replace(&mut m.xmodal.mln_position, p) == p,
            AblationAxis::RawAudio => std::mem::replace(&mut m.audio_input, AudioInput::Raw) == AudioInput::Raw,
            AblationAxis::AblateAToS => std::mem::replace(&mut m.fusion.ablate_a_to_s, true),
            AblationAxis::AblateSToA => std::mem::replace(&mut m.fusion.ablate_s_to_a, true),
            AblationAxis::TcnContext => {
                std::mem::replace(&mut m.context.variant, ContextVariant::Tcn) == ContextVariant::Tcn
            }
        };
        if unchanged {
            return Err(Error::Config(format!("base configuration already has {self} applied")));
        }
        Ok(cfg)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationAxis::NoCmc => f.write_str("no_cmc"),
            AblationAxis::NoMln => f.write_str("no_mln"),
            AblationAxis::MlnPosition(p) => {
                let v = serde_json::to_value(p).expect("position serialises");
                write!(f, "mln_position={}", v.as_str().unwrap_or_default())
            }
            AblationAxis::RawAudio => f.write_str("raw_audio"),
            AblationAxis::AblateAToS => f.write_str("ablate_a_to_s"),
            AblationAxis::AblateSToA => f.write_str("ablate_s_to_a"),
            AblationAxis::TcnContext => f.write_str("tcn_context"),
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "no_cmc" => AblationAxis::NoCmc,
            "no_mln" => AblationAxis::NoMln,
            "raw_audio" | "audio_input=raw" => AblationAxis::RawAudio,
            "ablate_a_to_s" => AblationAxis::AblateAToS,
            "ablate_s_to_a" => AblationAxis::AblateSToA,
            "tcn_context" | "context_variant=tcn" => AblationAxis::TcnContext,
            other => match other.strip_prefix("mln_position=") {
                Some(p) => AblationAxis::MlnPosition(
                    serde_json::from_value(serde_json::Value::String(p.to_owned()))
                        .map_err(|_| Error::Config(format!("unknown mln position {p:?}")))?,
                ),
                None => return Err(Error::Config(format!("unknown ablation axis {other:?}"))),
            },
        })
    }
}

//! Front-end networks: the MFCC speech encoder, the face-clip visual
//! encoder, and the waveform encoder/decoder pair.

mod speech;
mod visual;
mod waveform;

use serde::{Deserialize, Serialize};

pub use speech::{SeResBlock, SpeechEncoder, SqueezeExcite};
pub use visual::{BasicBlock, VisualEncoder, VtcnBlock};
pub use waveform::{RawAudioEncoder, WaveDecoder, WaveEncoder, AUDIO_PER_VIDEO};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Width multiplier applied to every channel count, including d.
    pub scale: f64,
    pub se_stage_blocks: [usize; 4],
    pub se_stage_channels: [usize; 4],
    pub visual_stage_blocks: [usize; 4],
    pub visual_stage_channels: [usize; 4],
    pub vtcn_depth: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            se_stage_blocks: [3, 4, 6, 3],
            se_stage_channels: [16, 32, 64, 128],
            visual_stage_blocks: [2, 2, 2, 2],
            visual_stage_channels: [64, 128, 256, 512],
            vtcn_depth: 5,
            kernel: 40,
            stride: 20,
        }
    }
}

impl EncoderConfig {
    pub fn width(&self, base: usize) -> usize {
        ((base as f64 * self.scale).round() as usize).max(1)
    }

    /// Embedding width d, the last speech stage's channel count.
    pub fn d(&self) -> usize {
        self.width(self.se_stage_channels[3])
    }

    /// Waveform-encoder channels; equal to d.
    pub fn c_se(&self) -> usize {
        self.d()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        if self.kernel != 2 * self.stride || self.stride == 0 {
            return Err(Error::Config(format!(
                "waveform kernel {} must be twice the stride {}",
                self.kernel, self.stride
            )));
        }
        for (i, &c) in self.se_stage_channels.iter().chain(&self.visual_stage_channels).enumerate() {
            let exact = c as f64 * self.scale;
            if (exact - exact.round()).abs() > 1e-9 || exact < 1.0 {
                return Err(Error::Config(format!(
                    "scale {} gives fractional width for channel entry {i} ({c})",
                    self.scale
                )));
            }
        }
        Ok(())
    }
}

use adenet_tensor::{Ctx, ParamBuilder, ParamId, Var};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};

/// Waveform-encoder steps per video frame (16000 / 20 / 25).
pub const AUDIO_PER_VIDEO: usize = 32;

/// Strided 1-D conv with ReLU: `(T,)` samples to `(C_se, ceil(T/S))`.
/// The signal is padded by `S` on the left and up to `S·T_a` on the right.
#[derive(Clone, Debug)]
pub struct WaveEncoder {
    pub conv: Conv1d,
    pub stride: usize,
}

impl WaveEncoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &EncoderConfig) -> Self {
        Self {
            conv: Conv1d::new(pb, 1, cfg.c_se(), cfg.kernel, cfg.stride, 0, 1, 1, true),
            stride: cfg.stride,
        }
    }

    pub fn steps(&self, samples: usize) -> usize {
        samples.div_ceil(self.stride)
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, wave: Var<'g>) -> Result<Var<'g>> {
        let t = wave.shape().iter().product::<usize>();
        if t == 0 {
            return Err(Error::Length("empty waveform".into()));
        }
        let ta = self.steps(t);
        let x = wave.reshape(&[1, 1, t]).pad_axis(2, self.stride, self.stride * ta - t);
        let y = self.conv.forward(ctx, x).relu();
        let c = y.dim(1);
        Ok(y.reshape(&[c, ta]))
    }
}

/// Transposed conv back to samples, cropped to the encoder's alignment.
#[derive(Clone, Debug)]
pub struct WaveDecoder {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl WaveDecoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &EncoderConfig) -> Self {
        Self {
            w: pb.fan_in("weight", &[cfg.c_se(), 1, cfg.kernel], cfg.kernel),
            b: pb.zeros("bias", &[1]),
            stride: cfg.stride,
        }
    }

    /// `(C_se, T_a)` to `(samples,)`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g>, feat: Var<'g>, samples: usize) -> Result<Var<'g>> {
        let (c, ta) = (feat.dim(0), feat.dim(1));
        if ta != samples.div_ceil(self.stride) {
            return Err(Error::Shape(format!("{ta} feature steps cannot decode to {samples} samples")));
        }
        let y = feat.reshape(&[1, c, ta]).conv_transpose1d(ctx.param(self.w), self.stride, 0);
        Ok(y.narrow(2, self.stride, samples).reshape(&[samples]).add(ctx.param(self.b)))
    }
}

/// Waveform features averaged ×32 in time and projected to d: the
/// raw-audio alternative to the MFCC speech encoder.
#[derive(Clone, Debug)]
pub struct RawAudioEncoder {
    pub enc: WaveEncoder,
    pub proj: Linear,
}

impl RawAudioEncoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &EncoderConfig) -> Self {
        Self {
            enc: WaveEncoder::new(&mut pb.pp("enc"), cfg),
            proj: Linear::new(&mut pb.pp("proj"), cfg.c_se(), cfg.d(), true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, wave: Var<'g>) -> Result<Var<'g>> {
        let f = self.enc.forward(ctx, wave)?;
        let (c, ta) = (f.dim(0), f.dim(1));
        if ta % AUDIO_PER_VIDEO != 0 {
            return Err(Error::Alignment(format!("{ta} feature steps is not a multiple of {AUDIO_PER_VIDEO}")));
        }
        let tv = ta / AUDIO_PER_VIDEO;
        let pooled = f.reshape(&[c, tv, AUDIO_PER_VIDEO]).mean_axis(2, false);
        Ok(self.proj.forward(ctx, pooled.t()))
    }
}

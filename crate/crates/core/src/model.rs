//! The full network: encoders, cross-modal conformer, context network,
//! circulant fusion and both heads.

use adenet_tensor::{Ctx, Graph, ParamBuilder, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextConfig, ContextNet};
use crate::encoders::{EncoderConfig, RawAudioEncoder, SpeechEncoder, VisualEncoder, WaveDecoder, WaveEncoder};
use crate::error::{Error, Result};
use crate::features::{align_streams, mfcc, preprocess_faces, MFCC_PER_VIDEO, N_MFCC};
use crate::fusion::{se_apply_mask, Fusion, FusionConfig};
use crate::signalio::{ClipRecord, Waveform, SAMPLES_PER_FRAME};
use crate::xmodal::{CrossModalConformer, XmodalConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioInput {
    Mfcc,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Attention heads in every attention layer.
    pub heads: usize,
    pub audio_input: AudioInput,
    pub encoder: EncoderConfig,
    pub xmodal: XmodalConfig,
    pub context: ContextConfig,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            audio_input: AudioInput::Mfcc,
            encoder: EncoderConfig::default(),
            xmodal: XmodalConfig::default(),
            context: ContextConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Default layout with every width scaled.
    pub fn scaled(scale: f64) -> Self {
        let mut cfg = Self::default();
        cfg.encoder.scale = scale;
        cfg
    }

    /// d = 8, two heads, one block per encoder stage: the gradient-check size.
    pub fn tiny() -> Self {
        let mut cfg = Self::scaled(1.0 / 16.0);
        cfg.heads = 2;
        cfg.encoder.se_stage_blocks = [1, 1, 1, 1];
        cfg.encoder.visual_stage_blocks = [1, 1, 1, 1];
        cfg.encoder.vtcn_depth = 2;
        cfg.context.num_blocks = 1;
        cfg
    }

    pub fn d(&self) -> usize {
        self.encoder.d()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.d();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d = {d} is not divisible by {} heads", self.heads)));
        }
        if self.context.num_blocks == 0 {
            return Err(Error::Config("context network needs at least one block".into()));
        }
        Ok(())
    }
}

/// One clip ready for the network: `(T,)` samples, `(4·T_v, 13)` MFCC
/// rows and `(T_v, 112, 112)` faces with `T = 640·T_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub mixture: Tensor,
    pub mfcc: Tensor,
    pub faces: Tensor,
}

impl ModelInput {
    pub fn new(mixture: Tensor, mfcc: Tensor, faces: Tensor) -> Result<Self> {
        let tv = faces.shape().first().copied().unwrap_or(0);
        if tv == 0 || faces.ndim() != 3 {
            return Err(Error::Shape(format!("faces must be (T_v, H, W), got {:?}", faces.shape())));
        }
        if mixture.shape() != [SAMPLES_PER_FRAME * tv] {
            return Err(Error::Alignment(format!(
                "{:?} samples for {tv} video frames; expected {}",
                mixture.shape(),
                SAMPLES_PER_FRAME * tv
            )));
        }
        if mfcc.shape() != [MFCC_PER_VIDEO * tv, N_MFCC] {
            return Err(Error::Alignment(format!("mfcc {:?} for {tv} video frames", mfcc.shape())));
        }
        Ok(Self { mixture, mfcc, faces })
    }

    /// Features for `mixture` (the clip's own or a re-mix) and the clip's faces.
    pub fn from_clip(clip: &ClipRecord, mixture: &Waveform, train_mode: bool, aug_seed: u64) -> Result<Self> {
        let faces = preprocess_faces(clip.faces.frames(), train_mode, aug_seed)?;
        let (m, faces) = align_streams(&mfcc(mixture)?, &faces)?;
        let tv = faces.num_frames();
        let t = SAMPLES_PER_FRAME * tv;
        if mixture.len() < t {
            return Err(Error::Alignment(format!("{} samples cannot cover {tv} frames", mixture.len())));
        }
        Self::new(Tensor::new(&[t], mixture.samples()[..t].to_vec()), m.into_tensor(), faces.into_tensor())
    }

    pub fn num_frames(&self) -> usize {
        self.faces.dim(0)
    }

    pub fn num_samples(&self) -> usize {
        self.mixture.len()
    }
}

/// Network outputs and the intermediates the diagnostics need.
pub struct ModelOutput<'g> {
    /// Per-frame speaking probability `(T_v,)`.
    pub y_a: Var<'g>,
    /// Enhanced waveform `(T,)`.
    pub y_s: Var<'g>,
    /// Non-negative mask `(C_se, T_a)`.
    pub mask: Var<'g>,
    pub f_e: Var<'g>,
    pub f_e_ctx: Var<'g>,
    pub f_audio: Var<'g>,
    pub f_visual: Var<'g>,
    pub audio_pre_norm: Var<'g>,
    pub visual_pre_norm: Var<'g>,
    pub audio_post_norm: Var<'g>,
    pub visual_post_norm: Var<'g>,
    pub f_av: Var<'g>,
}

#[derive(Clone, Debug)]
pub enum AudioEncoder {
    Mfcc(SpeechEncoder),
    Raw(RawAudioEncoder),
}

#[derive(Clone, Debug)]
pub struct Adenet {
    pub cfg: ModelConfig,
    pub audio: AudioEncoder,
    pub visual: VisualEncoder,
    pub xmodal: CrossModalConformer,
    pub wave_enc: WaveEncoder,
    pub context: ContextNet,
    pub fusion: Fusion,
    pub decoder: WaveDecoder,
}

impl Adenet {
    /// Builds the network and its freshly initialised parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let (d, heads) = (cfg.d(), cfg.heads);
        let audio = match cfg.audio_input {
            AudioInput::Mfcc => AudioEncoder::Mfcc(SpeechEncoder::new(&mut pb.pp("speech"), &cfg.encoder)),
            AudioInput::Raw => AudioEncoder::Raw(RawAudioEncoder::new(&mut pb.pp("raw_audio"), &cfg.encoder)),
        };
        let net = Self {
            audio,
            visual: VisualEncoder::new(&mut pb.pp("visual"), &cfg.encoder),
            xmodal: CrossModalConformer::new(&mut pb.pp("xmodal"), d, heads, &cfg.xmodal)?,
            wave_enc: WaveEncoder::new(&mut pb.pp("wave_enc"), &cfg.encoder),
            context: ContextNet::new(&mut pb.pp("context"), cfg.encoder.c_se(), heads, &cfg.context)?,
            fusion: Fusion::new(&mut pb.pp("fusion"), d, heads, &cfg.fusion),
            decoder: WaveDecoder::new(&mut pb.pp("decoder"), &cfg.encoder),
            cfg: cfg.clone(),
        };
        Ok((net, store))
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, input: &ModelInput) -> Result<ModelOutput<'g>> {
        let t = input.num_samples();
        let wave = ctx.constant(input.mixture.clone());
        let f_audio = match &self.audio {
            AudioEncoder::Mfcc(enc) => enc.forward(ctx, ctx.constant(input.mfcc.clone()))?,
            AudioEncoder::Raw(enc) => enc.forward(ctx, wave)?,
        };
        let f_visual = self.visual.forward(ctx, ctx.constant(input.faces.clone()))?;
        let xo = self.xmodal.forward(ctx, f_audio, f_visual)?;
        let f_av = self.fusion.temporal_model(ctx, self.fusion.fuse_av(ctx, xo.audio, xo.visual)?);

        let f_e = self.wave_enc.forward(ctx, wave)?;
        let f_e_ctx = self.context.forward(ctx, f_e)?;
        let mask = self.fusion.estimate_mask(ctx, f_e_ctx, f_av)?;
        let min = mask.value().data().iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            return Err(Error::Degenerate(format!("mask has negative entry {min}")));
        }
        let refined = self.fusion.refine_av(ctx, mask, f_av)?;
        let y_a = self.fusion.asd_decode(ctx, refined);
        let y_s = self.decoder.forward(ctx, se_apply_mask(mask, f_e)?, t)?;
        Ok(ModelOutput {
            y_a,
            y_s,
            mask,
            f_e,
            f_e_ctx,
            f_audio,
            f_visual,
            audio_pre_norm: xo.audio_pre_norm,
            visual_pre_norm: xo.visual_pre_norm,
            audio_post_norm: xo.audio,
            visual_post_norm: xo.visual,
            f_av,
        })
    }

    /// Forward pass without gradients in inference mode: `(y_a, y_s)`.
    pub fn predict(&self, store: &ParamStore, input: &ModelInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let graph = Graph::new();
        let ctx = Ctx::inference(&graph, store);
        let out = self.forward(&ctx, input)?;
        Ok((out.y_a.value().data().to_vec(), out.y_s.value().data().to_vec()))
    }
}

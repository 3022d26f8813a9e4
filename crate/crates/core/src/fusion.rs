//! Circulant fusion between the detection and enhancement branches, and
//! both output heads.
//!
//! Audio-visual embeddings are `(T_v, d)` rows; time-domain features and
//! masks are `(C_se, T_a)` with `T_a = 32·T_v` and `C_se = d`.

use adenet_tensor::{Ctx, ParamBuilder, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoders::AUDIO_PER_VIDEO;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::xmodal::ConformerBlock;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Replace the up-sampled audio-visual operand of the mask estimator by zeros.
    pub ablate_a_to_s: bool,
    /// Replace the pooled mask in the refinement by ones.
    pub ablate_s_to_a: bool,
}

/// `(T_a, T_v)` linear interpolation matrix with half-pixel alignment;
/// samples beyond the first and last frame centres replicate the edges.
pub fn upsample_matrix(tv: usize, scale: usize) -> Tensor {
    let ta = tv * scale;
    let mut u = Tensor::zeros(&[ta, tv]);
    for i in 0..ta {
        let src = ((i as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (tv - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(tv - 1);
        let w = src - lo as f64;
        u.data_mut()[i * tv + lo] += 1.0 - w;
        u.data_mut()[i * tv + hi] += w;
    }
    u
}

fn check_alignment(ta: usize, tv: usize) -> Result<()> {
    if ta != AUDIO_PER_VIDEO * tv || tv == 0 {
        return Err(Error::Alignment(format!(
            "T_a = {ta} must equal {AUDIO_PER_VIDEO}·T_v = {}",
            AUDIO_PER_VIDEO * tv
        )));
    }
    Ok(())
}

/// `(T_v, d)` to `(d, 32·T_v)`.
pub fn upsample_embed<'g>(ctx: &Ctx<'g>, fav: Var<'g>, ta: usize) -> Result<Var<'g>> {
    let tv = fav.dim(0);
    check_alignment(ta, tv)?;
    let u = ctx.constant(upsample_matrix(tv, AUDIO_PER_VIDEO));
    Ok(fav.matmul_ex(true, u, true))
}

/// Max over each 32-step window of `(C, T_a)`, giving `(C, T_v)`.
pub fn pool_mask(m: Var<'_>) -> Result<Var<'_>> {
    let (c, ta) = (m.dim(0), m.dim(1));
    if ta % AUDIO_PER_VIDEO != 0 || ta == 0 {
        return Err(Error::Alignment(format!("{ta} steps do not pool by {AUDIO_PER_VIDEO}")));
    }
    Ok(m.reshape(&[c, ta / AUDIO_PER_VIDEO, AUDIO_PER_VIDEO]).max_axis(2))
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub fuse: Linear,
    pub temporal: ConformerBlock,
    pub mask_fc: Linear,
    pub mask_block: ConformerBlock,
    pub asd: Linear,
    pub cfg: FusionConfig,
}

impl Fusion {
    pub fn new(pb: &mut ParamBuilder, d: usize, heads: usize, cfg: &FusionConfig) -> Self {
        Self {
            fuse: Linear::new(&mut pb.pp("fuse"), 2 * d, d, true),
            temporal: ConformerBlock::new(&mut pb.pp("temporal"), d, heads),
            mask_fc: Linear::new(&mut pb.pp("mask_fc"), 2 * d, d, true),
            mask_block: ConformerBlock::new(&mut pb.pp("mask_block"), d, heads),
            asd: Linear::new(&mut pb.pp("asd"), d, 1, true),
            cfg: cfg.clone(),
        }
    }

    /// Concatenate the two stream outputs and project `2d → d`.
    pub fn fuse_av<'g>(&self, ctx: &Ctx<'g>, fa: Var<'g>, fv: Var<'g>) -> Result<Var<'g>> {
        if fa.shape() != fv.shape() {
            return Err(Error::Shape(format!(
                "fusion needs aligned streams, got {:?} and {:?}",
                fa.shape(),
                fv.shape()
            )));
        }
        Ok(self.fuse.forward(ctx, Var::concat(&[fa, fv], 1)))
    }

    pub fn temporal_model<'g>(&self, ctx: &Ctx<'g>, fav: Var<'g>) -> Var<'g> {
        self.temporal.forward(ctx, fav)
    }

    /// `ReLU(conformer(FC([F′_e; Up(F′_av)])))`, `(C_se, T_a)`.
    pub fn estimate_mask<'g>(&self, ctx: &Ctx<'g>, fe_ctx: Var<'g>, fav: Var<'g>) -> Result<Var<'g>> {
        let (c, ta) = (fe_ctx.dim(0), fe_ctx.dim(1));
        if c != fav.dim(1) {
            return Err(Error::Shape(format!("C_se = {c} differs from d = {}", fav.dim(1))));
        }
        let up = if self.cfg.ablate_a_to_s {
            check_alignment(ta, fav.dim(0))?;
            ctx.constant(Tensor::zeros(&[c, ta]))
        } else {
            upsample_embed(ctx, fav, ta)?
        };
        let h = self.mask_fc.forward(ctx, Var::concat(&[fe_ctx, up], 0).t());
        Ok(self.mask_block.forward(ctx, h).relu().t())
    }

    /// `F″_av = maxpool(M)ᵀ ⊙ F′_av`.
    pub fn refine_av<'g>(&self, ctx: &Ctx<'g>, m: Var<'g>, fav: Var<'g>) -> Result<Var<'g>> {
        let (tv, d) = (fav.dim(0), fav.dim(1));
        check_alignment(m.dim(1), tv)?;
        if m.dim(0) != d {
            return Err(Error::Shape(format!("mask has {} channels, embeddings {d}", m.dim(0))));
        }
        if self.cfg.ablate_s_to_a {
            return Ok(fav.mul(ctx.constant(Tensor::ones(&[tv, d]))));
        }
        Ok(pool_mask(m)?.t().mul(fav))
    }

    /// Per-frame speaking probability, `(T_v,)`.
    pub fn asd_decode<'g>(&self, ctx: &Ctx<'g>, fav: Var<'g>) -> Var<'g> {
        let tv = fav.dim(0);
        self.asd.forward(ctx, fav).sigmoid().reshape(&[tv])
    }
}

/// `M ⊙ F_e`.
pub fn se_apply_mask<'g>(m: Var<'g>, fe: Var<'g>) -> Result<Var<'g>> {
    if m.shape() != fe.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} and features {:?} differ",
            m.shape(),
            fe.shape()
        )));
    }
    Ok(m.mul(fe))
}

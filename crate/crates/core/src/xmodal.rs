//! Conformer blocks, multi-modal layer normalisation and the
//! cross-modal conformer that runs the audio and visual streams side by
//! side through a shared attention stage.

use adenet_tensor::{Ctx, ParamBuilder, ParamId, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{rows_to_signal, signal_to_rows, BatchNorm, Conv1d, LayerNorm, Linear, NORM_EPS};

pub const FFN_EXPANSION: usize = 4;
pub const CONV_KERNEL: usize = 15;

/// Where the multi-modal norm sits in the cross-modal conformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlnPosition {
    None,
    Ffn1,
    Cma,
    Conv,
    Ffn2,
    Ln,
}

impl MlnPosition {
    pub const ALL: [MlnPosition; 6] = [
        MlnPosition::None,
        MlnPosition::Ffn1,
        MlnPosition::Cma,
        MlnPosition::Conv,
        MlnPosition::Ffn2,
        MlnPosition::Ln,
    ];
}

/// `AsPrinted`: each stream's queries and keys come from itself and only
/// the values cross. `Conventional`: keys and values both cross.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmaVariant {
    AsPrinted,
    Conventional,
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder, d: usize) -> Self {
        Self {
            norm: LayerNorm::new(&mut pb.pp("norm"), d),
            fc1: Linear::new(&mut pb.pp("fc1"), d, FFN_EXPANSION * d, true),
            fc2: Linear::new(&mut pb.pp("fc2"), FFN_EXPANSION * d, d, true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.fc1.forward(ctx, self.norm.forward(ctx, x)).swish();
        self.fc2.forward(ctx, h)
    }
}

/// LN → pointwise ×2 → GLU → depthwise k15 → BN → swish → pointwise.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pw1: Linear,
    pub dw: Conv1d,
    pub bn: BatchNorm,
    pub pw2: Linear,
}

impl ConvModule {
    pub fn new(pb: &mut ParamBuilder, d: usize) -> Self {
        Self {
            norm: LayerNorm::new(&mut pb.pp("norm"), d),
            pw1: Linear::new(&mut pb.pp("pw1"), d, 2 * d, true),
            dw: Conv1d::new(&mut pb.pp("dw"), d, d, CONV_KERNEL, 1, CONV_KERNEL / 2, 1, d, true),
            bn: BatchNorm::new(&mut pb.pp("bn"), d),
            pw2: Linear::new(&mut pb.pp("pw2"), d, d, true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let d = x.dim(1);
        let h = self.pw1.forward(ctx, self.norm.forward(ctx, x));
        let h = h.narrow(1, 0, d).mul(h.narrow(1, d, d).sigmoid());
        let h = self.bn.forward(ctx, self.dw.forward(ctx, rows_to_signal(h))).swish();
        self.pw2.forward(ctx, signal_to_rows(h))
    }
}

/// Q/K/V projections without bias and an output projection with bias.
#[derive(Clone, Debug)]
pub struct Projections {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl Projections {
    fn new(pb: &mut ParamBuilder, d: usize) -> Self {
        Self {
            q: Linear::new(&mut pb.pp("q"), d, d, false),
            k: Linear::new(&mut pb.pp("k"), d, d, false),
            v: Linear::new(&mut pb.pp("v"), d, d, false),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub proj: Projections,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, d: usize, heads: usize) -> Self {
        Self {
            proj: Projections::new(pb, d),
            out: Linear::new(&mut pb.pp("out"), d, d, true),
            heads,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let q = self.proj.q.forward(ctx, x);
        let k = self.proj.k.forward(ctx, x);
        let v = self.proj.v.forward(ctx, x);
        self.out.forward(ctx, Var::attention(q, k, v, self.heads))
    }
}

/// Audio/visual attention with values exchanged between streams.
#[derive(Clone, Debug)]
pub struct CrossModalAttention {
    pub audio: Projections,
    pub visual: Projections,
    pub out_audio: Linear,
    pub out_visual: Linear,
    pub heads: usize,
    pub variant: CmaVariant,
}

/// Projected operands of one cross-modal attention call.
pub struct CmaOperands<'g> {
    pub qa: Var<'g>,
    pub ka: Var<'g>,
    pub va: Var<'g>,
    pub qv: Var<'g>,
    pub kv: Var<'g>,
    pub vv: Var<'g>,
}

impl CrossModalAttention {
    pub fn new(pb: &mut ParamBuilder, d: usize, heads: usize, variant: CmaVariant) -> Self {
        Self {
            audio: Projections::new(&mut pb.pp("audio"), d),
            visual: Projections::new(&mut pb.pp("visual"), d),
            out_audio: Linear::new(&mut pb.pp("out_audio"), d, d, true),
            out_visual: Linear::new(&mut pb.pp("out_visual"), d, d, true),
            heads,
            variant,
        }
    }

    pub fn operands<'g>(&self, ctx: &Ctx<'g>, fa: Var<'g>, fv: Var<'g>) -> CmaOperands<'g> {
        CmaOperands {
            qa: self.audio.q.forward(ctx, fa),
            ka: self.audio.k.forward(ctx, fa),
            va: self.audio.v.forward(ctx, fa),
            qv: self.visual.q.forward(ctx, fv),
            kv: self.visual.k.forward(ctx, fv),
            vv: self.visual.v.forward(ctx, fv),
        }
    }

    /// The (query, key, value) triples producing the audio and the visual output.
    pub fn routing<'g>(&self, o: &CmaOperands<'g>) -> [(Var<'g>, Var<'g>, Var<'g>); 2] {
        match self.variant {
            CmaVariant::AsPrinted => [(o.qa, o.ka, o.vv), (o.qv, o.kv, o.va)],
            CmaVariant::Conventional => [(o.qa, o.kv, o.vv), (o.qv, o.ka, o.va)],
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, fa: Var<'g>, fv: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        if fa.shape() != fv.shape() {
            return Err(Error::Shape(format!(
                "cross-modal attention needs equal shapes, got {:?} and {:?}",
                fa.shape(),
                fv.shape()
            )));
        }
        let o = self.operands(ctx, fa, fv);
        let [(q1, k1, v1), (q2, k2, v2)] = self.routing(&o);
        let a = self.out_audio.forward(ctx, Var::attention(q1, k1, v1, self.heads));
        let v = self.out_visual.forward(ctx, Var::attention(q2, k2, v2, self.heads));
        Ok((a, v))
    }
}

/// `γ·((x − u)/σ + tanh(f(y))) + β` with a dense linear `f`.
#[derive(Clone, Debug)]
pub struct Mln {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub f: Linear,
}

impl Mln {
    pub fn new(pb: &mut ParamBuilder, d: usize) -> Self {
        Self {
            gamma: pb.ones("weight", &[d]),
            beta: pb.zeros("bias", &[d]),
            f: Linear::new(&mut pb.pp("f"), d, d, true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>, y: Var<'g>) -> Result<Var<'g>> {
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "mln needs equal shapes, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let cond = self.f.forward(ctx, y).tanh();
        Ok(x.normalize_last(NORM_EPS)
            .add(cond)
            .mul(ctx.param(self.gamma))
            .add(ctx.param(self.beta)))
    }
}

/// Self-attention conformer block with a final layer norm.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(pb: &mut ParamBuilder, d: usize, heads: usize) -> Self {
        Self {
            ffn1: FeedForward::new(&mut pb.pp("ffn1"), d),
            attn_norm: LayerNorm::new(&mut pb.pp("attn_norm"), d),
            attn: MultiHeadAttention::new(&mut pb.pp("attn"), d, heads),
            conv: ConvModule::new(&mut pb.pp("conv"), d),
            ffn2: FeedForward::new(&mut pb.pp("ffn2"), d),
            norm: LayerNorm::new(&mut pb.pp("norm"), d),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let x = x.add(self.ffn1.forward(ctx, x).scale(0.5));
        let x = x.add(self.attn.forward(ctx, self.attn_norm.forward(ctx, x)));
        let x = x.add(self.conv.forward(ctx, x));
        let x = x.add(self.ffn2.forward(ctx, x).scale(0.5));
        self.norm.forward(ctx, x)
    }
}

/// Per-stream layers of the cross-modal conformer.
#[derive(Clone, Debug)]
pub struct StreamLayers {
    pub ffn1: FeedForward,
    pub attn_norm: LayerNorm,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub norm: LayerNorm,
    pub mln: Option<Mln>,
    /// Present when the shared cross-modal stage is ablated.
    pub self_attn: Option<MultiHeadAttention>,
}

impl StreamLayers {
    fn new(pb: &mut ParamBuilder, d: usize, heads: usize, mln: bool, cross: bool) -> Self {
        Self {
            ffn1: FeedForward::new(&mut pb.pp("ffn1"), d),
            attn_norm: LayerNorm::new(&mut pb.pp("attn_norm"), d),
            conv: ConvModule::new(&mut pb.pp("conv"), d),
            ffn2: FeedForward::new(&mut pb.pp("ffn2"), d),
            norm: LayerNorm::new(&mut pb.pp("norm"), d),
            mln: mln.then(|| Mln::new(&mut pb.pp("mln"), d)),
            self_attn: (!cross).then(|| MultiHeadAttention::new(&mut pb.pp("self_attn"), d, heads)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XmodalConfig {
    pub mln_position: MlnPosition,
    pub cma_variant: CmaVariant,
    /// False replaces the shared cross-modal stage by per-stream self-attention.
    pub cross_attention: bool,
}

impl Default for XmodalConfig {
    fn default() -> Self {
        Self {
            mln_position: MlnPosition::Ln,
            cma_variant: CmaVariant::AsPrinted,
            cross_attention: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrossModalConformer {
    pub audio: StreamLayers,
    pub visual: StreamLayers,
    pub cma: Option<CrossModalAttention>,
    pub mln_position: MlnPosition,
}

/// Outputs plus the features entering the final normalisation.
pub struct XmodalOutput<'g> {
    pub audio: Var<'g>,
    pub visual: Var<'g>,
    pub audio_pre_norm: Var<'g>,
    pub visual_pre_norm: Var<'g>,
}

impl CrossModalConformer {
    pub fn new(pb: &mut ParamBuilder, d: usize, heads: usize, cfg: &XmodalConfig) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("d = {d} is not divisible by {heads} heads")));
        }
        let mln = cfg.mln_position != MlnPosition::None;
        Ok(Self {
            audio: StreamLayers::new(&mut pb.pp("audio"), d, heads, mln, cfg.cross_attention),
            visual: StreamLayers::new(&mut pb.pp("visual"), d, heads, mln, cfg.cross_attention),
            cma: cfg
                .cross_attention
                .then(|| CrossModalAttention::new(&mut pb.pp("cma"), d, heads, cfg.cma_variant)),
            mln_position: cfg.mln_position,
        })
    }

    fn mln_pair<'g>(&self, ctx: &Ctx<'g>, a: Var<'g>, v: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let (ma, mv) = (self.audio.mln.as_ref(), self.visual.mln.as_ref());
        let (ma, mv) = ma.zip(mv).expect("mln parameters exist when a position is set");
        Ok((ma.forward(ctx, a, v)?, mv.forward(ctx, v, a)?))
    }

    fn after<'g>(
        &self,
        ctx: &Ctx<'g>,
        stage: MlnPosition,
        a: Var<'g>,
        v: Var<'g>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        if self.mln_position == stage {
            self.mln_pair(ctx, a, v)
        } else {
            Ok((a, v))
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, fa: Var<'g>, fv: Var<'g>) -> Result<XmodalOutput<'g>> {
        if fa.shape() != fv.shape() {
            return Err(Error::Shape(format!(
                "streams must be aligned, got {:?} and {:?}",
                fa.shape(),
                fv.shape()
            )));
        }
        let (sa, sv) = (&self.audio, &self.visual);
        let a = fa.add(sa.ffn1.forward(ctx, fa).scale(0.5));
        let v = fv.add(sv.ffn1.forward(ctx, fv).scale(0.5));
        let (a, v) = self.after(ctx, MlnPosition::Ffn1, a, v)?;

        let (na, nv) = (sa.attn_norm.forward(ctx, a), sv.attn_norm.forward(ctx, v));
        let (ca, cv) = match &self.cma {
            Some(cma) => cma.forward(ctx, na, nv)?,
            None => (
                sa.self_attn.as_ref().expect("self-attention when cross stage is off").forward(ctx, na),
                sv.self_attn.as_ref().expect("self-attention when cross stage is off").forward(ctx, nv),
            ),
        };
        let (a, v) = self.after(ctx, MlnPosition::Cma, a.add(ca), v.add(cv))?;

        let (a, v) = (a.add(sa.conv.forward(ctx, a)), v.add(sv.conv.forward(ctx, v)));
        let (a, v) = self.after(ctx, MlnPosition::Conv, a, v)?;

        let a = a.add(sa.ffn2.forward(ctx, a).scale(0.5));
        let v = v.add(sv.ffn2.forward(ctx, v).scale(0.5));
        let (a, v) = self.after(ctx, MlnPosition::Ffn2, a, v)?;

        let (oa, ov) = if self.mln_position == MlnPosition::Ln {
            self.mln_pair(ctx, a, v)?
        } else {
            (sa.norm.forward(ctx, a), sv.norm.forward(ctx, v))
        };
        Ok(XmodalOutput {
            audio: oa,
            visual: ov,
            audio_pre_norm: a,
            visual_pre_norm: v,
        })
    }
}

//! ResNet34-style 2-D encoder with squeeze-and-excitation over MFCC
//! "images" `(time, 13)`. Strides reduce time ×4 so one output row lands
//! on each video frame.

use adenet_tensor::{ConvGeom, Ctx, ParamBuilder, Var};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::features::{MFCC_PER_VIDEO, N_MFCC};
use crate::nn::{BatchNorm, Conv2d, Linear};

const SE_RATIO: usize = 16;
/// (time, frequency) stride of each stage's first block.
const STAGE_STRIDES: [[usize; 2]; 4] = [[1, 1], [2, 2], [2, 2], [1, 2]];

/// Channel gate `sigmoid(W₂ relu(W₁ avgpool(x)))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SqueezeExcite {
    pub fn new(pb: &mut ParamBuilder, c: usize) -> Self {
        let r = (c / SE_RATIO).max(1);
        Self {
            fc1: Linear::new(&mut pb.pp("fc1"), c, r, true),
            fc2: Linear::new(&mut pb.pp("fc2"), r, c, true),
        }
    }

    /// Gate values `(N, C)` for `x: (N, C, H, W)`.
    pub fn gate<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let pooled = x.mean_axis(3, false).mean_axis(2, false);
        self.fc2.forward(ctx, self.fc1.forward(ctx, pooled).relu()).sigmoid()
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let (n, c) = (x.dim(0), x.dim(1));
        x.mul(self.gate(ctx, x).reshape(&[n, c, 1, 1]))
    }
}

#[derive(Clone, Debug)]
pub struct SeResBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub se: SqueezeExcite,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl SeResBlock {
    fn new(pb: &mut ParamBuilder, cin: usize, cout: usize, stride: [usize; 2]) -> Self {
        let g3 = ConvGeom::default().stride(stride[0], stride[1]).padding(1, 1);
        let shortcut = (cin != cout || stride != [1, 1]).then(|| {
            let g1 = ConvGeom::default().stride(stride[0], stride[1]);
            (
                Conv2d::new(&mut pb.pp("down"), cin, cout, [1, 1], g1, false),
                BatchNorm::new(&mut pb.pp("down_bn"), cout),
            )
        });
        Self {
            conv1: Conv2d::new(&mut pb.pp("conv1"), cin, cout, [3, 3], g3, false),
            bn1: BatchNorm::new(&mut pb.pp("bn1"), cout),
            conv2: Conv2d::new(&mut pb.pp("conv2"), cout, cout, [3, 3], ConvGeom::default().padding(1, 1), false),
            bn2: BatchNorm::new(&mut pb.pp("bn2"), cout),
            se: SqueezeExcite::new(&mut pb.pp("se"), cout),
            shortcut,
        }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>, bypass_se: bool) -> Var<'g> {
        let h = self.bn1.forward(ctx, self.conv1.forward(ctx, x)).relu();
        let h = self.bn2.forward(ctx, self.conv2.forward(ctx, h));
        let h = if bypass_se { h } else { self.se.forward(ctx, h) };
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(ctx, conv.forward(ctx, x)),
            None => x,
        };
        h.add(skip).relu()
    }
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub stem: Conv2d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<SeResBlock>>,
    /// Skip every SE gate (equivalent to gates fixed at 1).
    pub bypass_se: bool,
}

impl SpeechEncoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &EncoderConfig) -> Self {
        let widths: Vec<usize> = cfg.se_stage_channels.iter().map(|&c| cfg.width(c)).collect();
        let stem = Conv2d::new(&mut pb.pp("stem"), 1, widths[0], [3, 3], ConvGeom::default().padding(1, 1), false);
        let stem_bn = BatchNorm::new(&mut pb.pp("stem_bn"), widths[0]);
        let mut cin = widths[0];
        let mut stages = Vec::new();
        for (s, (&blocks, &cout)) in cfg.se_stage_blocks.iter().zip(&widths).enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 { STAGE_STRIDES[s] } else { [1, 1] };
                stage.push(SeResBlock::new(&mut pb.pp(format!("stage{s}.{b}")), cin, cout, stride));
                cin = cout;
            }
            stages.push(stage);
        }
        Self {
            stem,
            stem_bn,
            stages,
            bypass_se: false,
        }
    }

    /// `(4·T_v, 13)` MFCC rows to `(T_v, d)`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g>, mfcc: Var<'g>) -> Result<Var<'g>> {
        let s = mfcc.shape();
        if s.len() != 2 || s[1] != N_MFCC || s[0] == 0 || !s[0].is_multiple_of(MFCC_PER_VIDEO) {
            return Err(Error::Shape(format!(
                "speech encoder needs (4·T_v, {N_MFCC}) input, got {s:?}"
            )));
        }
        let tv = s[0] / MFCC_PER_VIDEO;
        let mut x = mfcc.reshape(&[1, 1, s[0], N_MFCC]);
        x = self.stem_bn.forward(ctx, self.stem.forward(ctx, x)).relu();
        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, x, self.bypass_se);
            }
        }
        // (1, C, T_v, F) → mean over frequency → (T_v, C)
        let c = x.dim(1);
        debug_assert_eq!(x.dim(2), tv);
        Ok(x.mean_axis(3, false).reshape(&[c, tv]).t())
    }
}

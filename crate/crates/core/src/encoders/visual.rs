//! 3-D conv stem, per-frame ResNet18 trunk, then a depthwise-separable
//! temporal network (V-TCN) over the pooled frame features.
//!
//! Temporal padding replicates edge frames, so a temporally constant
//! clip stays constant through every layer.

use adenet_tensor::{ConvGeom, Ctx, ParamBuilder, Var};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::features::FACE_SIZE;
use crate::nn::{replicate_pad, rows_to_signal, signal_to_rows, BatchNorm, Conv1d, Conv2d};

const STEM_T: usize = 5;
const STEM_K: usize = 7;
const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 2];

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(pb: &mut ParamBuilder, cin: usize, cout: usize, stride: usize) -> Self {
        let g3 = ConvGeom::default().stride(stride, stride).padding(1, 1);
        let shortcut = (cin != cout || stride != 1).then(|| {
            (
                Conv2d::new(&mut pb.pp("down"), cin, cout, [1, 1], ConvGeom::default().stride(stride, stride), false),
                BatchNorm::new(&mut pb.pp("down_bn"), cout),
            )
        });
        Self {
            conv1: Conv2d::new(&mut pb.pp("conv1"), cin, cout, [3, 3], g3, false),
            bn1: BatchNorm::new(&mut pb.pp("bn1"), cout),
            conv2: Conv2d::new(&mut pb.pp("conv2"), cout, cout, [3, 3], ConvGeom::default().padding(1, 1), false),
            bn2: BatchNorm::new(&mut pb.pp("bn2"), cout),
            shortcut,
        }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.bn1.forward(ctx, self.conv1.forward(ctx, x)).relu();
        let h = self.bn2.forward(ctx, self.conv2.forward(ctx, h));
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(ctx, conv.forward(ctx, x)),
            None => x,
        };
        h.add(skip).relu()
    }
}

/// `x + pw(dw(bn(relu(x))))` with a kernel-3 depthwise temporal conv.
#[derive(Clone, Debug)]
pub struct VtcnBlock {
    pub bn: BatchNorm,
    pub depthwise: Conv1d,
    pub pointwise: Conv1d,
}

impl VtcnBlock {
    fn new(pb: &mut ParamBuilder, c: usize) -> Self {
        Self {
            bn: BatchNorm::new(&mut pb.pp("bn"), c),
            depthwise: Conv1d::new(&mut pb.pp("dw"), c, c, 3, 1, 0, 1, c, false),
            pointwise: Conv1d::pointwise(&mut pb.pp("pw"), c, c, true),
        }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.bn.forward(ctx, x.relu());
        let h = self.depthwise.forward(ctx, replicate_pad(h, 2, 1, 1));
        x.add(self.pointwise.forward(ctx, h))
    }
}

#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub stem: Conv2d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<BasicBlock>>,
    pub vtcn: Vec<VtcnBlock>,
    pub proj: Conv1d,
}

impl VisualEncoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &EncoderConfig) -> Self {
        let widths: Vec<usize> = cfg.visual_stage_channels.iter().map(|&c| cfg.width(c)).collect();
        let stem_geom = ConvGeom::default().stride(2, 2).padding(STEM_K / 2, STEM_K / 2);
        let stem = Conv2d::new(&mut pb.pp("stem"), STEM_T, widths[0], [STEM_K, STEM_K], stem_geom, false);
        let stem_bn = BatchNorm::new(&mut pb.pp("stem_bn"), widths[0]);
        let mut cin = widths[0];
        let mut stages = Vec::new();
        for (s, (&blocks, &cout)) in cfg.visual_stage_blocks.iter().zip(&widths).enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 { STAGE_STRIDES[s] } else { 1 };
                stage.push(BasicBlock::new(&mut pb.pp(format!("stage{s}.{b}")), cin, cout, stride));
                cin = cout;
            }
            stages.push(stage);
        }
        let vtcn = (0..cfg.vtcn_depth)
            .map(|i| VtcnBlock::new(&mut pb.pp(format!("vtcn.{i}")), cin))
            .collect();
        let proj = Conv1d::pointwise(&mut pb.pp("proj"), cin, cfg.d(), true);
        Self {
            stem,
            stem_bn,
            stages,
            vtcn,
            proj,
        }
    }

    /// `(T_v, 112, 112)` frames to `(T_v, d)`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g>, faces: Var<'g>) -> Result<Var<'g>> {
        let s = faces.shape();
        if s.len() != 3 || s[1] != FACE_SIZE || s[2] != FACE_SIZE || s[0] == 0 {
            return Err(Error::Shape(format!(
                "visual encoder needs (T_v, {FACE_SIZE}, {FACE_SIZE}) input, got {s:?}"
            )));
        }
        let tv = s[0];
        // 3-D stem as a 2-D conv over stacked neighbouring frames.
        let x = replicate_pad(faces.reshape(&[tv, 1, FACE_SIZE, FACE_SIZE]), 0, STEM_T / 2, STEM_T / 2);
        let stacked: Vec<Var> = (0..STEM_T).map(|j| x.narrow(0, j, tv)).collect();
        let mut x = Var::concat(&stacked, 1);
        x = self.stem_bn.forward(ctx, self.stem.forward(ctx, x)).relu();
        x = x.max_pool2d([3, 3], [2, 2], [1, 1]);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, x);
            }
        }
        let pooled = x.mean_axis(3, false).mean_axis(2, false);
        let mut h = rows_to_signal(pooled);
        for block in &self.vtcn {
            h = block.forward(ctx, h);
        }
        Ok(signal_to_rows(self.proj.forward(ctx, h)))
    }
}

//! Separation network: contextual features `F′_e` from the waveform
//! features `F_e`, both `(C_se, T_a)`.

use adenet_tensor::{Ctx, ParamBuilder, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d};
use crate::xmodal::ConformerBlock;

pub const TCN_DILATIONS: [usize; 4] = [1, 2, 4, 8];
pub const TCN_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextVariant {
    Conformer,
    Tcn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextConfig {
    pub num_blocks: usize,
    pub variant: ContextVariant,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            variant: ContextVariant::Conformer,
        }
    }
}

/// Receptive field of one TCN stack, in steps.
pub fn tcn_receptive_field() -> usize {
    1 + TCN_DILATIONS.iter().map(|d| (TCN_KERNEL - 1) * d).sum::<usize>()
}

/// `x + pw2(bn(relu(dw(bn(relu(pw1(x)))))))` with a dilated depthwise conv.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub pw1: Conv1d,
    pub bn1: BatchNorm,
    pub dw: Conv1d,
    pub bn2: BatchNorm,
    pub pw2: Conv1d,
}

impl TcnBlock {
    fn new(pb: &mut ParamBuilder, c: usize, dilation: usize) -> Self {
        let h = 2 * c;
        Self {
            pw1: Conv1d::pointwise(&mut pb.pp("pw1"), c, h, true),
            bn1: BatchNorm::new(&mut pb.pp("bn1"), h),
            dw: Conv1d::new(&mut pb.pp("dw"), h, h, TCN_KERNEL, 1, dilation, dilation, h, true),
            bn2: BatchNorm::new(&mut pb.pp("bn2"), h),
            pw2: Conv1d::pointwise(&mut pb.pp("pw2"), h, c, true),
        }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.bn1.forward(ctx, self.pw1.forward(ctx, x).relu());
        let h = self.bn2.forward(ctx, self.dw.forward(ctx, h).relu());
        x.add(self.pw2.forward(ctx, h))
    }
}

#[derive(Clone, Debug)]
pub enum ContextBlocks {
    Conformer(Vec<ConformerBlock>),
    /// One stack of dilations 1, 2, 4, 8 per block.
    Tcn(Vec<Vec<TcnBlock>>),
}

#[derive(Clone, Debug)]
pub struct ContextNet {
    pub blocks: ContextBlocks,
    pub channels: usize,
}

impl ContextNet {
    pub fn new(pb: &mut ParamBuilder, c: usize, heads: usize, cfg: &ContextConfig) -> Result<Self> {
        if cfg.num_blocks == 0 {
            return Err(Error::Config("context network needs at least one block".into()));
        }
        let blocks = match cfg.variant {
            ContextVariant::Conformer => {
                if heads == 0 || !c.is_multiple_of(heads) {
                    return Err(Error::Config(format!("C_se = {c} is not divisible by {heads} heads")));
                }
                ContextBlocks::Conformer(
                    (0..cfg.num_blocks)
                        .map(|i| ConformerBlock::new(&mut pb.pp(format!("conformer.{i}")), c, heads))
                        .collect(),
                )
            }
            ContextVariant::Tcn => ContextBlocks::Tcn(
                (0..cfg.num_blocks)
                    .map(|s| {
                        TCN_DILATIONS
                            .iter()
                            .enumerate()
                            .map(|(i, &dil)| TcnBlock::new(&mut pb.pp(format!("tcn.{s}.{i}")), c, dil))
                            .collect()
                    })
                    .collect(),
            ),
        };
        Ok(Self { blocks, channels: c })
    }

    /// `(C_se, T_a)` to `(C_se, T_a)`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g>, fe: Var<'g>) -> Result<Var<'g>> {
        let s = fe.shape();
        if s.len() != 2 || s[0] != self.channels || s[1] == 0 {
            return Err(Error::Shape(format!(
                "context network needs ({}, T_a) input, got {s:?}",
                self.channels
            )));
        }
        let (c, ta) = (s[0], s[1]);
        match &self.blocks {
            ContextBlocks::Conformer(blocks) => {
                let mut x = fe.t();
                for b in blocks {
                    x = b.forward(ctx, x);
                }
                Ok(x.t())
            }
            ContextBlocks::Tcn(stacks) => {
                let mut x = fe.reshape(&[1, c, ta]);
                for block in stacks.iter().flatten() {
                    x = block.forward(ctx, x);
                }
                Ok(x.reshape(&[c, ta]))
            }
        }
    }
}

//! Parameterised layers. Each layer owns `ParamId`s registered through a
//! `ParamBuilder` and runs against a `Ctx`.

use adenet_tensor::{BnUpdate, ConvGeom, Ctx, ParamBuilder, ParamId, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `y = x Wᵀ + b` on `(T, in)` rows; `W` is `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            w: pb.fan_in("weight", &[out_dim, in_dim], in_dim),
            b: bias.then(|| pb.zeros("bias", &[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let y = x.matmul_t(ctx.param(self.w));
        match self.b {
            Some(b) => y.add(ctx.param(b)),
            None => y,
        }
    }
}

fn channel_bias<'g>(ctx: &Ctx<'g>, y: Var<'g>, b: Option<ParamId>) -> Var<'g> {
    match b {
        Some(b) => {
            let trailing = y.shape().len() - 2;
            let c = y.dim(1);
            let mut shape = vec![c];
            shape.extend(std::iter::repeat_n(1, trailing));
            y.add(ctx.param(b).reshape(&shape))
        }
        None => y,
    }
}

/// 2-D convolution on `(N, C, H, W)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(pb: &mut ParamBuilder, cin: usize, cout: usize, k: [usize; 2], geom: ConvGeom, bias: bool) -> Self {
        let cg = cin / geom.groups;
        let fan_in = cg * k[0] * k[1];
        Self {
            w: pb.fan_in("weight", &[cout, cg, k[0], k[1]], fan_in),
            b: bias.then(|| pb.zeros("bias", &[cout])),
            geom,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        channel_bias(ctx, x.conv2d(ctx.param(self.w), self.geom), self.b)
    }
}

/// 1-D convolution on `(N, C, L)` with symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &mut ParamBuilder,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let cg = cin / groups;
        Self {
            w: pb.fan_in("weight", &[cout, cg, k], cg * k),
            b: bias.then(|| pb.zeros("bias", &[cout])),
            stride,
            padding,
            dilation,
            groups,
        }
    }

    pub fn pointwise(pb: &mut ParamBuilder, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(pb, cin, cout, 1, 1, 0, 1, 1, bias)
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let y = x.conv1d(ctx.param(self.w), self.stride, self.padding, self.dilation, self.groups);
        channel_bias(ctx, y, self.b)
    }
}

/// Batch normalisation over axis 1. Training mode normalises with batch
/// statistics and queues a running-statistics update on the context.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(pb: &mut ParamBuilder, c: usize) -> Self {
        Self {
            gamma: pb.ones("weight", &[c]),
            beta: pb.zeros("bias", &[c]),
            running_mean: pb.buffer("running_mean", Tensor::zeros(&[c])),
            running_var: pb.buffer("running_var", Tensor::ones(&[c])),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        if ctx.train {
            let (n, mean, var) = x.bn_normalize(NORM_EPS);
            let count = (x.value().len() / x.dim(1)) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            ctx.push_bn_update(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                mean,
                var: var.iter().map(|v| v * unbiased).collect(),
                momentum: BN_MOMENTUM,
            });
            n.channel_affine(gamma, beta)
        } else {
            let rm = ctx.store.get(self.running_mean);
            let inv = ctx.store.get(self.running_var).map(|v| 1.0 / (v + NORM_EPS).sqrt());
            let scale = gamma.mul(ctx.constant(inv));
            let shift = beta.sub(scale.mul(ctx.constant(rm.clone())));
            x.channel_affine(scale, shift)
        }
    }
}

/// Normalisation over the last axis with gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, c: usize) -> Self {
        Self {
            gamma: pb.ones("weight", &[c]),
            beta: pb.zeros("bias", &[c]),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        layer_norm(ctx, x, self.gamma, self.beta)
    }
}

/// `(x − u)/sqrt(σ² + eps)·γ + β` per row.
pub fn layer_norm<'g>(ctx: &Ctx<'g>, x: Var<'g>, gamma: ParamId, beta: ParamId) -> Var<'g> {
    x.normalize_last(NORM_EPS).mul(ctx.param(gamma)).add(ctx.param(beta))
}

/// `(T, C)` rows to a `(1, C, T)` signal and back.
pub fn rows_to_signal(x: Var<'_>) -> Var<'_> {
    let (t, c) = (x.dim(0), x.dim(1));
    x.t().reshape(&[1, c, t])
}

pub fn signal_to_rows(x: Var<'_>) -> Var<'_> {
    let (c, t) = (x.dim(1), x.dim(2));
    x.reshape(&[c, t]).t()
}

/// Repeats the first and last entries along `axis`.
pub fn replicate_pad<'g>(x: Var<'g>, axis: usize, before: usize, after: usize) -> Var<'g> {
    if before == 0 && after == 0 {
        return x;
    }
    let n = x.dim(axis);
    let first = x.narrow(axis, 0, 1);
    let last = x.narrow(axis, n - 1, 1);
    let mut parts = vec![first; before];
    parts.push(x);
    parts.extend(std::iter::repeat_n(last, after));
    Var::concat(&parts, axis)
}

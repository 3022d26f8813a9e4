use adenet_tensor::{Ctx, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SI_SDR_EPS: f64 = 1e-8;
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Negative SI-SDR in dB of `est` against `reference`, both `(T,)`.
pub fn si_sdr_loss<'g>(ctx: &Ctx<'g>, est: Var<'g>, reference: &[f64]) -> Result<Var<'g>> {
    let t = reference.len();
    if est.shape() != [t] {
        return Err(Error::Length(format!("estimate {:?} vs reference of {t} samples", est.shape())));
    }
    let mean = reference.iter().sum::<f64>() / t as f64;
    let centred: Vec<f64> = reference.iter().map(|r| r - mean).collect();
    let energy: f64 = centred.iter().map(|r| r * r).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("reference is all zero after mean removal".into()));
    }
    let r = ctx.constant(Tensor::new(&[t], centred));
    let e0 = est.sub(est.mean());
    let alpha = e0.mul(r).sum().scale(1.0 / (energy + SI_SDR_EPS));
    let target = r.mul(alpha);
    let noise = e0.sub(target);
    let ratio = target.l2_norm().div(noise.l2_norm().add_scalar(SI_SDR_EPS));
    Ok(ratio.ln().scale(-20.0 / std::f64::consts::LN_10))
}

/// Mean binary cross-entropy of per-frame probabilities against 0/1 labels.
pub fn asd_loss<'g>(ctx: &Ctx<'g>, pred: Var<'g>, labels: &[u8]) -> Result<Var<'g>> {
    let n = labels.len();
    if pred.shape() != [n] || n == 0 {
        return Err(Error::Length(format!("{:?} predictions vs {n} labels", pred.shape())));
    }
    let y = ctx.constant(Tensor::new(&[n], labels.iter().map(|&l| f64::from(l)).collect()));
    let pos = y.mul(pred.clamp(LOG_CLAMP, f64::INFINITY).ln());
    let neg = y.neg().add_scalar(1.0).mul(pred.neg().add_scalar(1.0).clamp(LOG_CLAMP, f64::INFINITY).ln());
    Ok(pos.add(neg).mean().neg())
}

/// `λ₁·l_se + λ₂·l_asd`.
pub fn total_loss<'g>(l_se: Var<'g>, l_asd: Var<'g>, w: &LossWeights) -> Var<'g> {
    l_se.scale(w.lambda1).add(l_asd.scale(w.lambda2))
}

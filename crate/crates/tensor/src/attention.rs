//! Fused multi-head scaled dot-product attention.
//!
//! Inputs are time-major matrices `(T, d)`; head `h` owns columns
//! `h*d/heads .. (h+1)*d/heads`. Per head the output is
//! `softmax(Q_h K_hᵀ / sqrt(d_h)) V_h`, written back into the same columns.

use crate::tensor::{gemm, Tensor};

/// `exp(x)` for `x ≤ 0`, branch-free so row loops vectorise. Relative
/// error stays within a few ulp; arguments below −708 give `exp(−708)`.
#[inline(always)]
pub fn exp_nonpos(x: f64) -> f64 {
    const MAGIC: f64 = 6755399441055744.0; // 1.5·2^52
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6227020800.0;
    for c in [
        1.0 / 479001600.0,
        1.0 / 39916800.0,
        1.0 / 3628800.0,
        1.0 / 362880.0,
        1.0 / 40320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

/// Row-wise numerically stable softmax, in place.
pub fn softmax_rows_inplace(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for v in row.iter_mut() {
            *v = exp_nonpos(*v - m);
        }
        let inv = 1.0 / row.iter().sum::<f64>();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> (usize, usize, usize, usize) {
    assert!(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "attention takes (T, d) matrices");
    let (tq, d) = (q.dim(0), q.dim(1));
    let tk = k.dim(0);
    assert_eq!(k.dim(1), d, "query/key width mismatch");
    assert_eq!(v.dim(0), tk, "key/value length mismatch");
    assert_eq!(v.dim(1), d, "value width mismatch");
    assert!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
    (tq, tk, d, d / heads)
}

/// Attention probabilities `(heads, Tq, Tk)`.
pub fn attention_probs(q: &Tensor, k: &Tensor, heads: usize) -> Tensor {
    let (tq, tk, d, dh) = check(q, k, k, heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Tensor::zeros(&[heads, tq, tk]);
    for h in 0..heads {
        let p = &mut probs.data_mut()[h * tq * tk..(h + 1) * tq * tk];
        gemm(tq, dh, tk, scale, &q.data()[h * dh..], (d, 1), &k.data()[h * dh..], (1, d), 0.0, p, (tk, 1));
        softmax_rows_inplace(p, tk);
    }
    probs
}

const ROW_BLOCK: usize = 64;

/// Attended output only, computed in row blocks without materialising
/// the full probability tensor.
pub fn attention_output(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
    let (tq, tk, d, dh) = check(q, k, v, heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[tq, d]);
    let mut p = vec![0.0; ROW_BLOCK.min(tq) * tk];
    for h in 0..heads {
        for r0 in (0..tq).step_by(ROW_BLOCK) {
            let rows = ROW_BLOCK.min(tq - r0);
            let p = &mut p[..rows * tk];
            let qh = &q.data()[r0 * d + h * dh..];
            gemm(rows, dh, tk, scale, qh, (d, 1), &k.data()[h * dh..], (1, d), 0.0, p, (tk, 1));
            softmax_rows_inplace(p, tk);
            let oh = &mut out.data_mut()[r0 * d + h * dh..];
            gemm(rows, tk, dh, 1.0, p, (tk, 1), &v.data()[h * dh..], (d, 1), 0.0, oh, (d, 1));
        }
    }
    out
}

/// Returns the attended output and the probabilities needed by the adjoint.
pub fn attention_forward(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> (Tensor, Tensor) {
    let (tq, tk, d, dh) = check(q, k, v, heads);
    let probs = attention_probs(q, k, heads);
    let mut out = Tensor::zeros(&[tq, d]);
    for h in 0..heads {
        let p = &probs.data()[h * tq * tk..(h + 1) * tq * tk];
        gemm(tq, tk, dh, 1.0, p, (tk, 1), &v.data()[h * dh..], (d, 1), 0.0, &mut out.data_mut()[h * dh..], (d, 1));
    }
    (out, probs)
}

/// Adjoint of [`attention_forward`]: (dq, dk, dv).
pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &Tensor,
    dout: &Tensor,
    heads: usize,
) -> (Tensor, Tensor, Tensor) {
    let (tq, tk, d, dh) = check(q, k, v, heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(&[tq, d]);
    let mut dk = Tensor::zeros(&[tk, d]);
    let mut dv = Tensor::zeros(&[tk, d]);
    let mut ds = vec![0.0; tq * tk];
    for h in 0..heads {
        let p = &probs.data()[h * tq * tk..(h + 1) * tq * tk];
        let dout_h = &dout.data()[h * dh..];
        // dV_h = Pᵀ dO_h
        gemm(tk, tq, dh, 1.0, p, (1, tk), dout_h, (d, 1), 0.0, &mut dv.data_mut()[h * dh..], (d, 1));
        // dP = dO_h V_hᵀ
        gemm(tq, dh, tk, 1.0, dout_h, (d, 1), &v.data()[h * dh..], (1, d), 0.0, &mut ds, (tk, 1));
        // dS = P ⊙ (dP - rowsum(dP ⊙ P))
        for (drow, prow) in ds.chunks_mut(tk).zip(p.chunks(tk)) {
            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (dv_, pv) in drow.iter_mut().zip(prow) {
                *dv_ = pv * (*dv_ - dot);
            }
        }
        // dQ_h = scale · dS K_h ; dK_h = scale · dSᵀ Q_h
        gemm(tq, tk, dh, scale, &ds, (tk, 1), &k.data()[h * dh..], (d, 1), 0.0, &mut dq.data_mut()[h * dh..], (d, 1));
        gemm(tk, tq, dh, scale, &ds, (1, tk), &q.data()[h * dh..], (d, 1), 0.0, &mut dk.data_mut()[h * dh..], (d, 1));
    }
    (dq, dk, dv)
}

//! Differentiable operations on [`Var`].

use std::rc::Rc;

use crate::attention;
use crate::conv::{self, ConvGeom};
use crate::graph::Var;
use crate::tensor::{matmul, Tensor};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        // derivative from (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let (xi, yc) = (self.id(), Rc::clone(&y));
        self.graph().op((*y).clone(), &[xi], move |g, s| {
            let mut d = g.clone();
            for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(yc.data()) {
                *dv *= df(xv, yv);
            }
            s.add(xi, d);
        })
    }

    fn binary(
        self,
        other: Var<'g>,
        f: impl Fn(f64, f64) -> f64,
        // partials (da, db) from (a, b)
        da: impl Fn(f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.broadcast_zip(&b, f);
        let (ia, ib) = (self.id(), other.id());
        let shape = out.shape().to_vec();
        self.graph().op(out, &[ia, ib], move |g, s| {
            // Broadcast both operands to the output shape once.
            let ab = if a.shape() == shape.as_slice() { Rc::clone(&a) } else { Rc::new(a.broadcast_zip(g, |x, _| x)) };
            let bb = if b.shape() == shape.as_slice() { Rc::clone(&b) } else { Rc::new(b.broadcast_zip(g, |x, _| x)) };
            if s.wants(ia) {
                let mut d = g.clone();
                for ((dv, &x), &y) in d.data_mut().iter_mut().zip(ab.data()).zip(bb.data()) {
                    *dv *= da(x, y);
                }
                s.add(ia, d.sum_to_shape(a.shape()));
            }
            if s.wants(ib) {
                let mut d = g.clone();
                for ((dv, &x), &y) in d.data_mut().iter_mut().zip(ab.data()).zip(bb.data()) {
                    *dv *= db(x, y);
                }
                s.add(ib, d.sum_to_shape(b.shape()));
            }
        })
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.broadcast_zip(&b, |x, y| x + y);
        let (ia, ib) = (self.id(), other.id());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph().op(out, &[ia, ib], move |g, s| {
            if s.wants(ia) {
                s.add(ia, g.sum_to_shape(&sa));
            }
            if s.wants(ib) {
                s.add(ib, g.sum_to_shape(&sb));
            }
        })
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = a.broadcast_zip(&b, |x, y| x - y);
        let (ia, ib) = (self.id(), other.id());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.graph().op(out, &[ia, ib], move |g, s| {
            if s.wants(ia) {
                s.add(ia, g.sum_to_shape(&sa));
            }
            if s.wants(ib) {
                s.add(ib, g.sum_to_shape(&sb).scale(-1.0));
            }
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let y = self.value().scale(c);
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| s.add(xi, g.scale(c)))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let y = self.value().map(|v| v + c);
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| s.add(xi, g.clone()))
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// `x * sigmoid(x)`.
    pub fn swish(self) -> Var<'g> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(move |x| x.clamp(lo, hi), move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let xi = self.id();
        self.graph().op(Tensor::scalar(x.sum()), &[xi], move |g, s| {
            s.add(xi, Tensor::full(&shape, g.item()));
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Var<'g> {
        let x = self.value();
        let y = x.sum_axis(axis, keepdim);
        let shape = x.shape().to_vec();
        let mut kshape = shape.clone();
        kshape[axis] = 1;
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| {
            let g = g.reshape(&kshape);
            s.add(xi, Tensor::zeros(&shape).broadcast_zip(&g, |_, v| v));
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Var<'g> {
        let n = self.dim(axis) as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / n)
    }

    /// Maximum along `axis` (dropped); the gradient routes to the first argmax.
    pub fn max_axis(self, axis: usize) -> Var<'g> {
        let x = self.value();
        let (outer, n, inner) = x.split_at_axis(axis);
        let mut y = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                for j in 0..inner {
                    let v = x.data()[(o * n + i) * inner + j];
                    let slot = o * inner + j;
                    if i == 0 || v > y[slot] {
                        y[slot] = v;
                        arg[slot] = (o * n + i) * inner + j;
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        let in_shape = shape.clone();
        shape.remove(axis);
        let xi = self.id();
        self.graph().op(Tensor::new(&shape, y), &[xi], move |g, s| {
            let mut d = Tensor::zeros(&in_shape);
            for (&a, &gv) in arg.iter().zip(g.data()) {
                d.data_mut()[a] += gv;
            }
            s.add(xi, d);
        })
    }

    /// Euclidean norm of all elements (gradient 0 at the origin).
    pub fn l2_norm(self) -> Var<'g> {
        let x = self.value();
        let n = x.sq_norm().sqrt();
        let xi = self.id();
        self.graph().op(Tensor::scalar(n), &[xi], move |g, s| {
            let c = if n > 0.0 { g.item() / n } else { 0.0 };
            s.add(xi, x.scale(c));
        })
    }

    /// `op(self) · op(other)` for matrices.
    pub fn matmul_ex(self, ta: bool, other: Var<'g>, tb: bool) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let out = matmul(&a, ta, &b, tb);
        let (ia, ib) = (self.id(), other.id());
        self.graph().op(out, &[ia, ib], move |g, s| {
            // C = A'B' with A' = op(A), B' = op(B): dA' = dC B'ᵀ, dB' = A'ᵀ dC.
            if s.wants(ia) {
                let d = if ta { matmul(&b, tb, g, true) } else { matmul(g, false, &b, !tb) };
                s.add(ia, d);
            }
            if s.wants(ib) {
                let d = if tb { matmul(g, true, &a, ta) } else { matmul(&a, !ta, g, false) };
                s.add(ib, d);
            }
        })
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        self.matmul_ex(false, other, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'g>) -> Var<'g> {
        self.matmul_ex(false, other, true)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let xi = self.id();
        self.graph().op(x.reshape(shape), &[xi], move |g, s| s.add(xi, g.reshape(&old)))
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let y = self.value().permute(axes);
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| s.add(xi, g.permute(&inv)))
    }

    /// Matrix transpose.
    pub fn t(self) -> Var<'g> {
        self.permute(&[1, 0])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let y = x.narrow(axis, start, len);
        let n = x.dim(axis);
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| {
            s.add(xi, g.pad_axis(axis, start, n - start - len, 0.0));
        })
    }

    pub fn pad_axis(self, axis: usize, before: usize, after: usize) -> Var<'g> {
        let x = self.value();
        let y = x.pad_axis(axis, before, after, 0.0);
        let n = x.dim(axis);
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| s.add(xi, g.narrow(axis, before, n)))
    }

    pub fn concat(parts: &[Var<'g>], axis: usize) -> Var<'g> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis);
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let lens: Vec<usize> = vals.iter().map(|v| v.dim(axis)).collect();
        let graph = parts[0].graph();
        let ids2 = ids.clone();
        graph.op(y, &ids, move |g, s| {
            let mut start = 0;
            for (&id, &len) in ids2.iter().zip(&lens) {
                if s.wants(id) {
                    s.add(id, g.narrow(axis, start, len));
                }
                start += len;
            }
        })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(self) -> Var<'g> {
        let x = self.value();
        let cols = *x.shape().last().expect("softmax of a scalar");
        let mut y = (*x).clone();
        attention::softmax_rows_inplace(y.data_mut(), cols);
        let yc = y.clone();
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| {
            let mut d = g.clone();
            for (drow, yrow) in d.data_mut().chunks_mut(cols).zip(yc.data().chunks(cols)) {
                let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for (dv, yv) in drow.iter_mut().zip(yrow) {
                    *dv = yv * (*dv - dot);
                }
            }
            s.add(xi, d);
        })
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis (biased variance).
    pub fn normalize_last(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let c = *x.shape().last().expect("normalize of a scalar");
        let mut y = (*x).clone();
        let rows = y.len() / c;
        let mut inv_std = vec![0.0; rows];
        for (r, row) in y.data_mut().chunks_mut(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std[r] = inv;
        }
        let yc = y.clone();
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| {
            let mut d = g.clone();
            for ((drow, yrow), inv) in d.data_mut().chunks_mut(c).zip(yc.data().chunks(c)).zip(&inv_std) {
                let mg = drow.iter().sum::<f64>() / c as f64;
                let mgy = drow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for (dv, yv) in drow.iter_mut().zip(yrow) {
                    *dv = inv * (*dv - mg - yv * mgy);
                }
            }
            s.add(xi, d);
        })
    }

    /// Batch-statistics normalisation over every axis except axis 1.
    /// Returns the normalised value plus the batch mean and biased variance.
    pub fn bn_normalize(self, eps: f64) -> (Var<'g>, Vec<f64>, Vec<f64>) {
        let x = self.value();
        assert!(x.ndim() >= 2, "batch norm needs a channel axis");
        let (n, c, inner) = x.split_at_axis(1);
        let count = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let row = &x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..n {
            for ch in 0..c {
                let row = &x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut y = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                for v in &mut y.data_mut()[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                    *v = (*v - mean[ch]) * inv[ch];
                }
            }
        }
        let yc = y.clone();
        let xi = self.id();
        let out = self.graph().op(y, &[xi], move |g, s| {
            let mut sg = vec![0.0; c];
            let mut sgy = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                    for (gv, yv) in g.data()[r.clone()].iter().zip(&yc.data()[r]) {
                        sg[ch] += gv;
                        sgy[ch] += gv * yv;
                    }
                }
            }
            let mut d = g.clone();
            for b in 0..n {
                for ch in 0..c {
                    let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                    let (mg, mgy) = (sg[ch] / count, sgy[ch] / count);
                    for (dv, yv) in d.data_mut()[r.clone()].iter_mut().zip(&yc.data()[r]) {
                        *dv = inv[ch] * (*dv - mg - yv * mgy);
                    }
                }
            }
            s.add(xi, d);
        });
        (out, mean, var)
    }

    /// `x * scale[c] + shift[c]` along axis 1; `scale`/`shift` have shape `(C,)`.
    pub fn channel_affine(self, scale: Var<'g>, shift: Var<'g>) -> Var<'g> {
        let x = self.value();
        let (sc, sh) = (scale.value(), shift.value());
        let (n, c, inner) = x.split_at_axis(1);
        assert_eq!(sc.shape(), &[c], "channel scale shape");
        assert_eq!(sh.shape(), &[c], "channel shift shape");
        let mut y = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let (a, t) = (sc.data()[ch], sh.data()[ch]);
                for v in &mut y.data_mut()[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                    *v = *v * a + t;
                }
            }
        }
        let (xi, si, ti) = (self.id(), scale.id(), shift.id());
        self.graph().op(y, &[xi, si, ti], move |g, s| {
            if s.wants(xi) {
                let mut d = g.clone();
                for b in 0..n {
                    for ch in 0..c {
                        let a = sc.data()[ch];
                        d.data_mut()[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                            .iter_mut()
                            .for_each(|v| *v *= a);
                    }
                }
                s.add(xi, d);
            }
            let (ws, wt) = (s.wants(si), s.wants(ti));
            if ws || wt {
                let mut ds = vec![0.0; c];
                let mut dt = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                        for (gv, xv) in g.data()[r.clone()].iter().zip(&x.data()[r]) {
                            ds[ch] += gv * xv;
                            dt[ch] += gv;
                        }
                    }
                }
                if ws {
                    s.add(si, Tensor::new(&[c], ds));
                }
                if wt {
                    s.add(ti, Tensor::new(&[c], dt));
                }
            }
        })
    }

    /// 2-D convolution without bias: `self: (N, C, H, W)`, `w: (O, C/g, kh, kw)`.
    pub fn conv2d(self, w: Var<'g>, geom: ConvGeom) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let y = conv::conv2d_forward(&x, &wv, &geom);
        let (xi, wi) = (self.id(), w.id());
        self.graph().op(y, &[xi, wi], move |g, s| {
            let (dx, dw) = conv::conv2d_backward(&x, &wv, g, &geom, s.wants(xi), s.wants(wi));
            if let Some(dx) = dx {
                s.add(xi, dx);
            }
            if let Some(dw) = dw {
                s.add(wi, dw);
            }
        })
    }

    /// 1-D convolution without bias: `self: (N, C, L)`, `w: (O, C/g, k)`.
    pub fn conv1d(self, w: Var<'g>, stride: usize, padding: usize, dilation: usize, groups: usize) -> Var<'g> {
        let xs = self.shape();
        let ws = w.shape();
        assert_eq!(xs.len(), 3, "conv1d input must be (N, C, L), got {xs:?}");
        assert_eq!(ws.len(), 3, "conv1d weight must be (O, C/g, k), got {ws:?}");
        let geom = ConvGeom::default()
            .stride(1, stride)
            .padding(0, padding)
            .dilation(1, dilation)
            .groups(groups);
        let y = self
            .reshape(&[xs[0], xs[1], 1, xs[2]])
            .conv2d(w.reshape(&[ws[0], ws[1], 1, ws[2]]), geom);
        let ys = y.shape();
        y.reshape(&[ys[0], ys[1], ys[3]])
    }

    /// 1-D transposed convolution without bias: `self: (N, Cin, L)`, `w: (Cin, Cout, k)`.
    pub fn conv_transpose1d(self, w: Var<'g>, stride: usize, padding: usize) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let y = conv::conv_transpose1d_forward(&x, &wv, stride, padding);
        let (xi, wi) = (self.id(), w.id());
        self.graph().op(y, &[xi, wi], move |g, s| {
            let (dx, dw) = conv::conv_transpose1d_backward(&x, &wv, g, stride, padding, s.wants(xi), s.wants(wi));
            if let Some(dx) = dx {
                s.add(xi, dx);
            }
            if let Some(dw) = dw {
                s.add(wi, dw);
            }
        })
    }

    pub fn max_pool2d(self, k: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Var<'g> {
        let x = self.value();
        let (y, arg) = conv::max_pool2d_forward(&x, k, stride, pad);
        let shape = x.shape().to_vec();
        let xi = self.id();
        self.graph().op(y, &[xi], move |g, s| {
            let mut d = Tensor::zeros(&shape);
            for (&a, &gv) in arg.iter().zip(g.data()) {
                d.data_mut()[a] += gv;
            }
            s.add(xi, d);
        })
    }

    /// See [`conv::temporal_stack_forward`].
    pub fn temporal_stack(self, k: usize) -> Var<'g> {
        let x = self.value();
        let y = conv::temporal_stack_forward(&x, k);
        let shape = x.shape().to_vec();
        let xi = self.id();
        self.graph()
            .op(y, &[xi], move |g, s| s.add(xi, conv::temporal_stack_backward(g, &shape, k)))
    }

    /// Multi-head attention `softmax(QKᵀ/sqrt(d_h)) V` on `(T, d)` inputs.
    pub fn attention(q: Var<'g>, k: Var<'g>, v: Var<'g>, heads: usize) -> Var<'g> {
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        if !(q.requires_grad() || k.requires_grad() || v.requires_grad()) {
            let out = attention::attention_output(&qv, &kv, &vv, heads);
            return q.graph().constant(out);
        }
        let (out, probs) = attention::attention_forward(&qv, &kv, &vv, heads);
        let (qi, ki, vi) = (q.id(), k.id(), v.id());
        q.graph().op(out, &[qi, ki, vi], move |g, s| {
            let (dq, dk, dv) = attention::attention_backward(&qv, &kv, &vv, &probs, g, heads);
            s.add(qi, dq);
            s.add(ki, dk);
            s.add(vi, dv);
        })
    }
}

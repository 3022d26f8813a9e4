//! Convolution, pooling and frame-stacking kernels (forward and adjoint).
//!
//! Convolutions go through im2col + GEMM. Weights follow the usual layouts:
//! `(out, in / groups, kh, kw)` for convolutions and `(in, out, k)` for the
//! 1-D transposed convolution.

use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self {
            stride: [1, 1],
            padding: [0, 0],
            dilation: [1, 1],
            groups: 1,
        }
    }
}

impl ConvGeom {
    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = [sh, sw];
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = [ph, pw];
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = [dh, dw];
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output spatial size, or `None` when the kernel does not fit.
    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let dim = |n: usize, k: usize, a: usize| {
            let span = self.dilation[a] * (k - 1) + 1;
            let padded = n + 2 * self.padding[a];
            (padded >= span).then(|| (padded - span) / self.stride[a] + 1)
        };
        Some((dim(h, kh, 0)?, dim(w, kw, 1)?))
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == [1, 1] && self.padding == [0, 0]
    }
}

struct Patch {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Patch rows of `x` into `cols`, row `r` starting at `r * ld`.
fn im2col_ld(x: &[f64], p: &Patch, g: &ConvGeom, cols: &mut [f64], ld: usize) {
    let ncol = p.cols();
    for ci in 0..p.c {
        let plane = &x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (ci * p.kh + ki) * p.kw + kj;
                let dst = &mut cols[row * ld..row * ld + ncol];
                for oy in 0..p.ho {
                    let iy = (oy * g.stride[0] + ki * g.dilation[0]) as isize - g.padding[0] as isize;
                    let seg = &mut dst[oy * p.wo..(oy + 1) * p.wo];
                    if iy < 0 || iy >= p.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    let x0 = kj * g.dilation[1];
                    for (ox, s) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride[1] + x0) as isize - g.padding[1] as isize;
                        *s = if ix >= 0 && (ix as usize) < p.w { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn im2col(x: &[f64], p: &Patch, g: &ConvGeom, cols: &mut [f64]) {
    im2col_ld(x, p, g, cols, p.cols())
}

fn col2im(cols: &[f64], p: &Patch, g: &ConvGeom, x: &mut [f64]) {
    let ncol = p.cols();
    for ci in 0..p.c {
        let plane = &mut x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (ci * p.kh + ki) * p.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..p.ho {
                    let iy = (oy * g.stride[0] + ki * g.dilation[0]) as isize - g.padding[0] as isize;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    let x0 = kj * g.dilation[1];
                    for (ox, s) in src[oy * p.wo..(oy + 1) * p.wo].iter().enumerate() {
                        let ix = (ox * g.stride[1] + x0) as isize - g.padding[1] as isize;
                        if ix >= 0 && (ix as usize) < p.w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dDims {
    n: usize,
    c: usize,
    o: usize,
    patch: Patch,
}

fn conv2d_dims(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Conv2dDims {
    assert_eq!(x.ndim(), 4, "conv2d input must be (N, C, H, W), got {:?}", x.shape());
    assert_eq!(w.ndim(), 4, "conv2d weight must be (O, C/g, kh, kw), got {:?}", w.shape());
    let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (o, cg, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    assert!(g.groups >= 1 && c % g.groups == 0 && o % g.groups == 0, "bad group count");
    assert_eq!(cg * g.groups, c, "conv2d channel mismatch: input {c}, weight {cg}x{} groups", g.groups);
    let (ho, wo) = g
        .output_hw(h, wd, kh, kw)
        .unwrap_or_else(|| panic!("conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}"));
    Conv2dDims {
        n,
        c,
        o,
        patch: Patch {
            c: cg,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
        },
    }
}

/// Columns gathered per GEMM when several images share one weight matrix.
const BATCH_COLS: usize = 1 << 21;

pub fn conv2d_forward(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let d = conv2d_dims(x, w, g);
    let p = &d.patch;
    let (og, k, ncol) = (d.o / g.groups, p.rows(), p.cols());
    let mut out = Tensor::zeros(&[d.n, d.o, p.ho, p.wo]);
    let in_plane = p.h * p.w;
    if g.groups == 1 && d.n > 1 {
        // One GEMM over a block of images amortises weight packing.
        let nb = (BATCH_COLS / (k * ncol)).clamp(1, d.n);
        let mut cols = vec![0.0; k * ncol * nb];
        let mut tmp = vec![0.0; d.o * ncol * nb];
        for start in (0..d.n).step_by(nb) {
            let m = nb.min(d.n - start);
            let width = m * ncol;
            for j in 0..m {
                let xin = &x.data()[(start + j) * d.c * in_plane..(start + j + 1) * d.c * in_plane];
                im2col_ld(xin, p, g, &mut cols[j * ncol..], width);
            }
            gemm(d.o, k, width, 1.0, w.data(), (k, 1), &cols, (width, 1), 0.0, &mut tmp, (width, 1));
            let od = out.data_mut();
            for j in 0..m {
                for o in 0..d.o {
                    let dst = ((start + j) * d.o + o) * ncol;
                    od[dst..dst + ncol].copy_from_slice(&tmp[o * width + j * ncol..o * width + (j + 1) * ncol]);
                }
            }
        }
        return out;
    }
    let pointwise = g.is_pointwise(p.kh, p.kw);
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * ncol] };
    for n in 0..d.n {
        for gi in 0..g.groups {
            let xin = &x.data()[(n * d.c + gi * p.c) * in_plane..(n * d.c + (gi + 1) * p.c) * in_plane];
            let cols_ref: &[f64] = if pointwise {
                xin
            } else {
                im2col(xin, p, g, &mut cols);
                &cols
            };
            let wg = &w.data()[gi * og * k..(gi + 1) * og * k];
            let base = (n * d.o + gi * og) * ncol;
            gemm(
                og,
                k,
                ncol,
                1.0,
                wg,
                (k, 1),
                cols_ref,
                (ncol, 1),
                0.0,
                &mut out.data_mut()[base..base + og * ncol],
                (ncol, 1),
            );
        }
    }
    out
}

/// Adjoint of [`conv2d_forward`]: returns (dx, dw) for the requested parts.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = conv2d_dims(x, w, g);
    let p = &d.patch;
    let (og, k, ncol) = (d.o / g.groups, p.rows(), p.cols());
    let pointwise = g.is_pointwise(p.kh, p.kw);
    let in_plane = p.h * p.w;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut cols = vec![0.0; if pointwise { 0 } else { k * ncol }];
    let mut dcols = vec![0.0; if need_dx && !pointwise { k * ncol } else { 0 }];
    for n in 0..d.n {
        for gi in 0..g.groups {
            let xr = (n * d.c + gi * p.c) * in_plane..(n * d.c + (gi + 1) * p.c) * in_plane;
            let dyg = &dy.data()[(n * d.o + gi * og) * ncol..(n * d.o + (gi + 1) * og) * ncol];
            let wg = &w.data()[gi * og * k..(gi + 1) * og * k];
            if let Some(dw) = dw.as_mut() {
                let cols_ref: &[f64] = if pointwise {
                    &x.data()[xr.clone()]
                } else {
                    im2col(&x.data()[xr.clone()], p, g, &mut cols);
                    &cols
                };
                // dW_g += dY_g (og × P) · colsᵀ (P × k)
                gemm(
                    og,
                    ncol,
                    k,
                    1.0,
                    dyg,
                    (ncol, 1),
                    cols_ref,
                    (1, ncol),
                    1.0,
                    &mut dw.data_mut()[gi * og * k..(gi + 1) * og * k],
                    (k, 1),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx.data_mut()[xr];
                if pointwise {
                    gemm(k, og, ncol, 1.0, wg, (1, k), dyg, (ncol, 1), 1.0, dst, (ncol, 1));
                } else {
                    gemm(k, og, ncol, 1.0, wg, (1, k), dyg, (ncol, 1), 0.0, &mut dcols, (ncol, 1));
                    col2im(&dcols, p, g, dst);
                }
            }
        }
    }
    (dx, dw)
}

/// Output length of a 1-D transposed convolution.
pub fn conv_transpose1d_len(len: usize, k: usize, stride: usize, padding: usize) -> usize {
    ((len - 1) * stride + k)
        .checked_sub(2 * padding)
        .expect("transposed conv padding exceeds output")
}

fn tconv_patch(cout: usize, lout: usize, k: usize, len: usize) -> Patch {
    Patch {
        c: cout,
        h: 1,
        w: lout,
        kh: 1,
        kw: k,
        ho: 1,
        wo: len,
    }
}

/// 1-D transposed convolution. `x: (N, Cin, L)`, `w: (Cin, Cout, K)`.
pub fn conv_transpose1d_forward(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Tensor {
    assert_eq!(x.ndim(), 3, "conv_transpose1d input must be (N, C, L)");
    assert_eq!(w.ndim(), 3, "conv_transpose1d weight must be (Cin, Cout, K)");
    let (n, cin, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (cin2, cout, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, cin2, "conv_transpose1d channel mismatch");
    let lout = conv_transpose1d_len(len, k, stride, padding);
    let p = tconv_patch(cout, lout, k, len);
    let g = ConvGeom::default().stride(1, stride).padding(0, padding);
    let rows = cout * k;
    let mut cols = vec![0.0; rows * len];
    let mut out = Tensor::zeros(&[n, cout, lout]);
    for ni in 0..n {
        let xn = &x.data()[ni * cin * len..(ni + 1) * cin * len];
        gemm(rows, cin, len, 1.0, w.data(), (1, rows), xn, (len, 1), 0.0, &mut cols, (len, 1));
        col2im(&cols, &p, &g, &mut out.data_mut()[ni * cout * lout..(ni + 1) * cout * lout]);
    }
    out
}

pub fn conv_transpose1d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    padding: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, cin, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, k) = (w.dim(1), w.dim(2));
    let lout = dy.dim(2);
    let p = tconv_patch(cout, lout, k, len);
    let g = ConvGeom::default().stride(1, stride).padding(0, padding);
    let rows = cout * k;
    let mut dcols = vec![0.0; rows * len];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    for ni in 0..n {
        im2col(&dy.data()[ni * cout * lout..(ni + 1) * cout * lout], &p, &g, &mut dcols);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[ni * cin * len..(ni + 1) * cin * len];
            gemm(cin, rows, len, 1.0, w.data(), (rows, 1), &dcols, (len, 1), 0.0, dst, (len, 1));
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x.data()[ni * cin * len..(ni + 1) * cin * len];
            gemm(cin, len, rows, 1.0, xn, (len, 1), &dcols, (1, len), 1.0, dw.data_mut(), (rows, 1));
        }
    }
    (dx, dw)
}

/// Max pooling over (H, W) with implicit -inf padding. Returns the pooled
/// tensor and, per output element, the flat input index of its maximum.
pub fn max_pool2d_forward(x: &Tensor, k: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> (Tensor, Vec<usize>) {
    assert_eq!(x.ndim(), 4, "max_pool2d input must be (N, C, H, W)");
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let g = ConvGeom::default().stride(stride[0], stride[1]).padding(pad[0], pad[1]);
    let (ho, wo) = g.output_hw(h, w, k[0], k[1]).expect("pool window larger than input");
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut bi = usize::MAX;
                for ki in 0..k[0] {
                    let iy = (oy * stride[0] + ki) as isize - pad[0] as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..k[1] {
                        let ix = (ox * stride[1] + kj) as isize - pad[1] as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if bi == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            bi = idx;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                out.data_mut()[o] = best;
                arg[o] = bi;
            }
        }
    }
    (out, arg)
}

/// Stacks `k` temporally neighbouring frames into the channel axis:
/// `(T, C, H, W) -> (T, C*k, H, W)` with channel `c*k + j` holding frame
/// `t + j - k/2` (zero outside the clip). A 2-D convolution over the result
/// is a 3-D convolution with temporal kernel `k`, stride 1 and padding `k/2`.
pub fn temporal_stack_forward(x: &Tensor, k: usize) -> Tensor {
    assert_eq!(x.ndim(), 4, "temporal_stack input must be (T, C, H, W)");
    let (t, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let hw = h * w;
    let pad = k / 2;
    let mut out = Tensor::zeros(&[t, c * k, h, w]);
    for ti in 0..t {
        for ci in 0..c {
            for j in 0..k {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let s = (src as usize * c + ci) * hw;
                let d = (ti * c * k + ci * k + j) * hw;
                out.data_mut()[d..d + hw].copy_from_slice(&x.data()[s..s + hw]);
            }
        }
    }
    out
}

pub fn temporal_stack_backward(dy: &Tensor, input_shape: &[usize], k: usize) -> Tensor {
    let (t, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let hw = h * w;
    let pad = k / 2;
    let mut dx = Tensor::zeros(input_shape);
    for ti in 0..t {
        for ci in 0..c {
            for j in 0..k {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let s = (src as usize * c + ci) * hw;
                let d = (ti * c * k + ci * k + j) * hw;
                for (a, b) in dx.data_mut()[s..s + hw].iter_mut().zip(&dy.data()[d..d + hw]) {
                    *a += b;
                }
            }
        }
    }
    dx
}

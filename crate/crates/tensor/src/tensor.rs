//! Dense, contiguous, row-major `f64` tensors and the raw kernels the
//! autodiff graph is built on.

use std::fmt;

/// Number of elements implied by a shape (1 for a scalar).
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides of a contiguous tensor.
pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes, aligned on the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` viewed in the index space of `out` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let cs = contiguous_strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                cs[i - off]
            }
        })
        .collect()
}

/// Walks every index of `out`, yielding (flat out index, offset a, offset b).
fn walk2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(out) == 0 {
        return;
    }
    let inner = out[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let outer = numel(&out[..nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not hold {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[], vec![value])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Self::new(shape, (0..numel(shape)).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(mut self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.data.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Elementwise combination with numpy broadcasting.
    pub fn broadcast_zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if self.shape == other.shape {
            return self.zip_map(other, f);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("cannot broadcast {:?} with {:?}", self.shape, other.shape)
        });
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = vec![0.0; numel(&out_shape)];
        walk2(&out_shape, &sa, &sb, |o, a, b| {
            data[o] = f(self.data[a], other.data[b]);
        });
        Tensor {
            shape: out_shape,
            data,
        }
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let st = broadcast_strides(shape, &self.shape);
        let own = contiguous_strides(&self.shape);
        let mut out = Tensor::zeros(shape);
        walk2(&self.shape, &own, &st, |_, g, t| {
            out.data[t] += self.data[g];
        });
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let (outer, n, inner) = self.split_at_axis(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &self.data[(o * n + i) * inner..(o * n + i + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Tensor { shape, data }
    }

    /// (product of dims before `axis`, dim at `axis`, product of dims after).
    pub fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        assert!(axis < self.shape.len(), "axis {axis} out of range for {:?}", self.shape);
        (
            numel(&self.shape[..axis]),
            self.shape[axis],
            numel(&self.shape[axis + 1..]),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor {
        assert_eq!(axes.len(), self.ndim(), "permute rank mismatch");
        if self.ndim() == 2 && axes == [1, 0] {
            return self.transpose2();
        }
        let src = contiguous_strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let sa: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
        let zeros = vec![0; axes.len()];
        let mut data = vec![0.0; self.data.len()];
        walk2(&out_shape, &sa, &zeros, |o, a, _| data[o] = self.data[a]);
        Tensor {
            shape: out_shape,
            data,
        }
    }

    pub fn transpose2(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "transpose2 needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        const B: usize = 32;
        for i0 in (0..r).step_by(B) {
            for j0 in (0..c).step_by(B) {
                for i in i0..(i0 + B).min(r) {
                    for j in j0..(j0 + B).min(c) {
                        data[j * r + i] = self.data[i * c + j];
                    }
                }
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let (outer, n, inner) = self.split_at_axis(axis);
        assert!(start + len <= n, "narrow {start}+{len} exceeds axis of size {n}");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor { shape, data }
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0];
        for p in parts {
            assert_eq!(p.ndim(), first.ndim(), "concat rank mismatch");
            for d in 0..first.ndim() {
                assert!(
                    d == axis || p.shape[d] == first.shape[d],
                    "concat shape mismatch {:?} vs {:?}",
                    p.shape,
                    first.shape
                );
            }
        }
        let (outer, _, inner) = first.split_at_axis(axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis];
                data.extend_from_slice(&p.data[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor { shape, data }
    }

    /// Pads `axis` with `before`/`after` copies of `value`.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize, value: f64) -> Tensor {
        let (outer, n, inner) = self.split_at_axis(axis);
        let m = n + before + after;
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            data.extend(std::iter::repeat_n(value, before * inner));
            data.extend_from_slice(&self.data[o * n * inner..(o + 1) * n * inner]);
            data.extend(std::iter::repeat_n(value, after * inner));
        }
        let mut shape = self.shape.clone();
        shape[axis] = m;
        Tensor { shape, data }
    }
}

/// `C = alpha * A(m×k) * B(k×n) + beta * C` over strided slices.
///
/// Strides are in elements; every slice must start at element (0, 0).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * rsc + j * csc];
                *v = if beta == 0.0 { 0.0 } else { *v * beta };
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B out of bounds");
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Strides of a row-major `rows × cols` matrix, optionally viewed transposed.
pub fn mat_strides(cols: usize, transposed: bool) -> (usize, usize) {
    if transposed {
        (1, cols)
    } else {
        (cols, 1)
    }
}

/// `op(a) · op(b)` for matrices, where `op` optionally transposes.
pub fn matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    assert!(a.ndim() == 2 && b.ndim() == 2, "matmul needs matrices");
    let (m, k) = if ta { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
    let (k2, n) = if tb { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
    assert_eq!(k, k2, "matmul inner dims {:?}{} x {:?}{}", a.shape, if ta { "ᵀ" } else { "" }, b.shape, if tb { "ᵀ" } else { "" });
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        1.0,
        &a.data,
        mat_strides(a.shape[1], ta),
        &b.data,
        mat_strides(b.shape[1], tb),
        0.0,
        &mut out.data,
        (n, 1),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_bias_over_rows() {
        let x = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::new(&[3], vec![10., 20., 30.]);
        let y = x.broadcast_zip(&b, |a, b| a + b);
        assert_eq!(y.data(), &[11., 22., 33., 14., 25., 36.]);
        let g = y.sum_to_shape(&[3]);
        assert_eq!(g.data(), &[25., 47., 69.]);
    }

    #[test]
    fn broadcast_channel_axis() {
        let x = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let s = Tensor::new(&[1, 3, 1], vec![1., 0., -1.]);
        let y = x.broadcast_zip(&s, |a, b| a * b);
        assert_eq!(y.data(), &[0., 1., 0., 0., -4., -5., 6., 7., 0., 0., -10., -11.]);
        let back = y.sum_to_shape(&[1, 3, 1]);
        assert_eq!(back.data(), &[0. + 1. + 6. + 7., 0., -4. - 5. - 10. - 11.]);
    }

    #[test]
    fn permute_matches_transpose() {
        let x = Tensor::from_fn(&[3, 5], |i| i as f64);
        let a = x.transpose2();
        let b = x.reshape(&[3, 5, 1]).permute(&[1, 0, 2]).into_shape(&[5, 3]);
        assert_eq!(a, b);
        assert_eq!(a.data()[1], 5.0);
    }

    #[test]
    fn narrow_concat_pad() {
        let x = Tensor::from_fn(&[2, 4], |i| i as f64);
        let l = x.narrow(1, 0, 1);
        let r = x.narrow(1, 1, 3);
        assert_eq!(Tensor::concat(&[&l, &r], 1), x);
        let p = x.pad_axis(1, 1, 2, -1.0);
        assert_eq!(p.shape(), &[2, 7]);
        assert_eq!(&p.data()[..7], &[-1., 0., 1., 2., 3., -1., -1.]);
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 + 1.0);
        let b = Tensor::from_fn(&[3, 2], |i| (i as f64) - 2.0);
        let c = matmul(&a, false, &b, false);
        let c2 = matmul(&a.transpose2(), true, &b.transpose2(), true);
        assert_eq!(c, c2);
        assert_eq!(c.data(), &[4., 10., 4., 19.]);
    }

    #[test]
    fn sum_axis_middle() {
        let x = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let s = x.sum_axis(1, false);
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[6., 9., 24., 27.]);
    }
}

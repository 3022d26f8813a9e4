use adenet_tensor::{ConvGeom, GradCheck, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    rand_t(shape, seed).map(|x| 0.5 + x.abs())
}

/// Projects onto a fixed random direction so every output entry matters.
fn project<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> Var<'g> {
    let w = g.constant(rand_t(&y.shape(), seed ^ 0xdead));
    y.mul(w).sum()
}

fn assert_ok(errs: &[f64], tol: f64, what: &str) {
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < tol, "{what}: input {i} relative error {e:.3e}");
    }
}

#[test]
fn elementwise_and_broadcasting() {
    let gc = GradCheck::default();
    let a = rand_t(&[3, 4], 1);
    let b = rand_t(&[4], 2);
    let p = positive(&[3, 1], 3);
    let errs = gc.inputs(&[a, b, p], |g, v| {
        let y = v[0].add(v[1]).mul(v[2]).sub(v[1].scale(0.3)).div(v[2].add_scalar(1.0));
        project(g, y, 7)
    });
    assert_ok(&errs, 1e-7, "add/mul/sub/div");
}

#[test]
fn unary_functions() {
    let gc = GradCheck::default();
    let x = rand_t(&[2, 5], 4);
    let p = positive(&[2, 5], 5);
    let errs = gc.inputs(&[x, p], |g, v| {
        let y = v[0]
            .sigmoid()
            .add(v[0].tanh())
            .add(v[0].exp())
            .add(v[1].ln())
            .add(v[1].sqrt())
            .add(v[0].square())
            .add(v[0].swish())
            .add(v[0].neg().scale(0.5));
        project(g, y, 8)
    });
    assert_ok(&errs, 1e-7, "unary");
}

#[test]
fn kinked_functions_away_from_kinks() {
    let gc = GradCheck::default();
    // Keep entries at least 0.1 from the kinks at 0 and ±0.5.
    let x = rand_t(&[4, 6], 6).map(|v| {
        let v = if v.abs() < 0.1 { v.signum() * 0.2 + 0.05 } else { v };
        if (v.abs() - 0.5).abs() < 0.1 { v * 1.3 } else { v }
    });
    let errs = gc.inputs(&[x], |g, v| {
        let y = v[0].relu().add(v[0].clamp(-0.5, 0.5));
        project(g, y, 9).add(v[0].max_axis(1).sum())
    });
    assert_ok(&errs, 1e-7, "relu/clamp/max");
}

#[test]
fn reductions_and_norm() {
    let gc = GradCheck::default();
    let x = rand_t(&[2, 3, 4], 10);
    let errs = gc.inputs(&[x], |g, v| {
        let a = project(g, v[0].sum_axis(1, false), 1);
        let b = project(g, v[0].mean_axis(2, true), 2);
        a.add(b).add(v[0].l2_norm()).add(v[0].mean().square())
    });
    assert_ok(&errs, 1e-7, "reductions");
}

#[test]
fn matmul_in_all_transpose_modes() {
    let gc = GradCheck::default();
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = rand_t(if ta { &[4, 3] } else { &[3, 4] }, 11);
        let b = rand_t(if tb { &[5, 4] } else { &[4, 5] }, 12);
        let errs = gc.inputs(&[a, b], move |g, v| project(g, v[0].matmul_ex(ta, v[1], tb), 3));
        assert_ok(&errs, 1e-7, &format!("matmul ta={ta} tb={tb}"));
    }
}

#[test]
fn shape_ops() {
    let gc = GradCheck::default();
    let a = rand_t(&[2, 3, 4], 13);
    let b = rand_t(&[2, 2, 4], 14);
    let errs = gc.inputs(&[a, b], |g, v| {
        let c = Var::concat(&[v[0], v[1]], 1);
        let y = c.permute(&[2, 0, 1]).reshape(&[8, 5]).narrow(1, 1, 3).pad_axis(0, 2, 1);
        project(g, y.t(), 4)
    });
    assert_ok(&errs, 1e-7, "shape ops");
}

#[test]
fn softmax_and_layer_normalisation() {
    let gc = GradCheck::default();
    let x = rand_t(&[3, 6], 15);
    let errs = gc.inputs(&[x], |g, v| {
        let y = v[0].softmax_last().add(v[0].normalize_last(1e-5));
        project(g, y, 5)
    });
    assert_ok(&errs, 1e-6, "softmax/normalize");
}

#[test]
fn batch_norm_and_channel_affine() {
    let gc = GradCheck::default();
    let x = rand_t(&[3, 2, 5], 16);
    let s = rand_t(&[2], 17);
    let t = rand_t(&[2], 18);
    let errs = gc.inputs(&[x, s, t], |g, v| {
        let (n, _, _) = v[0].bn_normalize(1e-5);
        project(g, n.channel_affine(v[1], v[2]), 6)
    });
    assert_ok(&errs, 1e-6, "batch norm");
}

#[test]
fn conv2d_strided_dilated_grouped() {
    let gc = GradCheck::default();
    let geoms = [
        (ConvGeom::default().padding(1, 1), [4, 4, 3, 3]),
        (ConvGeom::default().stride(2, 1).padding(1, 0), [4, 4, 3, 2]),
        (ConvGeom::default().dilation(2, 2).padding(2, 2).groups(2), [4, 2, 3, 3]),
        (ConvGeom::default(), [3, 4, 1, 1]),
        (ConvGeom::default().groups(4), [4, 1, 3, 3]),
    ];
    for (i, (geom, ws)) in geoms.into_iter().enumerate() {
        let x = rand_t(&[2, 4, 6, 5], 20 + i as u64);
        let w = rand_t(&ws, 30 + i as u64);
        let errs = gc.inputs(&[x, w], move |g, v| project(g, v[0].conv2d(v[1], geom), 7));
        assert_ok(&errs, 1e-7, &format!("conv2d case {i}"));
    }
}

#[test]
fn conv1d_and_transposed_conv1d() {
    let gc = GradCheck::default();
    let x = rand_t(&[1, 3, 20], 40);
    let w = rand_t(&[4, 3, 5], 41);
    let errs = gc.inputs(&[x, w], |g, v| project(g, v[0].conv1d(v[1], 3, 2, 1, 1), 8));
    assert_ok(&errs, 1e-7, "conv1d");

    let x = rand_t(&[2, 3, 6], 42);
    let w = rand_t(&[3, 2, 8], 43);
    let errs = gc.inputs(&[x, w], |g, v| project(g, v[0].conv_transpose1d(v[1], 4, 2), 9));
    assert_ok(&errs, 1e-7, "conv_transpose1d");
}

#[test]
fn pooling_and_temporal_stack() {
    let gc = GradCheck::default();
    // Distinct values so the pooling argmax is stable under perturbation.
    let x = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 37) % 50) as f64 * 0.1);
    let errs = gc.inputs(&[x], |g, v| project(g, v[0].max_pool2d([3, 3], [2, 2], [1, 1]), 10));
    assert_ok(&errs, 1e-7, "max_pool2d");

    let x = rand_t(&[4, 2, 3, 3], 44);
    let errs = gc.inputs(&[x], |g, v| project(g, v[0].temporal_stack(3), 11));
    assert_ok(&errs, 1e-7, "temporal_stack");
}

#[test]
fn multi_head_attention() {
    let gc = GradCheck::default();
    let q = rand_t(&[5, 8], 50);
    let k = rand_t(&[7, 8], 51);
    let v = rand_t(&[7, 8], 52);
    let errs = gc.inputs(&[q, k, v], |g, x| project(g, Var::attention(x[0], x[1], x[2], 2), 12));
    assert_ok(&errs, 1e-6, "attention");
}

#[test]
fn attention_matches_unfused_composition() {
    let q = rand_t(&[4, 6], 60);
    let k = rand_t(&[5, 6], 61);
    let v = rand_t(&[5, 6], 62);
    let g = Graph::new();
    let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
    let fused = Var::attention(qv, kv, vv, 3).value();
    let mut heads = Vec::new();
    for h in 0..3 {
        let s = qv.narrow(1, 2 * h, 2).matmul_t(kv.narrow(1, 2 * h, 2)).scale(1.0 / 2f64.sqrt());
        heads.push(s.softmax_last().matmul(vv.narrow(1, 2 * h, 2)));
    }
    let reference = Var::concat(&heads, 1).value();
    for (a, b) in fused.data().iter().zip(reference.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shared_subexpression_accumulates() {
    let g = Graph::new();
    let x = g.leaf(Tensor::new(&[2], vec![3.0, -2.0]), true);
    let y = x.mul(x).add(x).sum();
    let grads = g.backward(y);
    assert_eq!(grads.get(x).unwrap().data(), &[7.0, -3.0]);
}

#[test]
fn constants_do_not_record_backward() {
    let g = Graph::new();
    let c = g.constant(Tensor::ones(&[3]));
    let y = c.scale(2.0).sum();
    assert!(!y.requires_grad());
    let grads = g.backward(y);
    assert!(grads.get(c).is_none());
}

#[test]
fn l2_norm_gradient_is_zero_at_origin() {
    let g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[4]), true);
    let grads = g.backward(x.l2_norm());
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
}

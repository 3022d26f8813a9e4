mod common;

use adenet_core::encoders::{EncoderConfig, WaveDecoder};
use adenet_core::fusion::*;
use adenet_core::Error;
use adenet_tensor::{Ctx, Graph, ParamStore, Tensor};
use common::*;

fn fusion(d: usize, cfg: FusionConfig, seed: u64) -> (Fusion, ParamStore) {
    let (f, mut store) = build(seed, |pb| Fusion::new(pb, d, 2, &cfg));
    perturb(&mut store, |n| n.ends_with("bias"), seed + 1, 0.1);
    (f, store)
}

fn with<T>(store: &ParamStore, f: impl for<'g> FnOnce(&Ctx<'g>) -> T) -> T {
    let g = Graph::new();
    let ctx = Ctx::inference(&g, store);
    f(&ctx)
}

#[test]
fn fuse_av_projects_the_concatenation() {
    let (f, mut store) = fusion(128, FusionConfig::default(), 0);
    with(&store, |ctx| {
        let (a, v) = (ctx.constant(randn(&[25, 128], 1)), ctx.constant(randn(&[25, 128], 2)));
        let ab = f.fuse_av(ctx, a, v).unwrap().value();
        let ba = f.fuse_av(ctx, v, a).unwrap().value();
        assert_eq!(ab.shape(), &[25, 128]);
        assert!(ab.zip_map(&ba, |x, y| x - y).sq_norm() > 0.0);
        let bad = f.fuse_av(ctx, a, ctx.constant(randn(&[24, 128], 3)));
        assert!(matches!(bad, Err(Error::Shape(_))));
    });
    fill(&mut store, |n| n == "fuse.bias", 0.0);
    with(&store, |ctx| {
        let z = ctx.constant(Tensor::zeros(&[25, 128]));
        assert!(f.fuse_av(ctx, z, z).unwrap().value().data().iter().all(|&v| v == 0.0));
    });
}

#[test]
fn temporal_model_preserves_shape() {
    let (f, store) = fusion(8, FusionConfig::default(), 4);
    for tv in [1, 25, 50] {
        let y = with(&store, |ctx| f.temporal_model(ctx, ctx.constant(randn(&[tv, 8], tv as u64))).value());
        assert_eq!(y.shape(), &[tv, 8]);
        assert!(y.all_finite());
    }
}

fn up(x: Tensor, ta: usize) -> Result<Tensor, Error> {
    let store = ParamStore::new();
    with(&store, |ctx| upsample_embed(ctx, ctx.constant(x), ta).map(|v| v.value().as_ref().clone()))
}

#[test]
fn upsampling_examples() {
    let flat = up(Tensor::full(&[25, 4], 1.5), 800).unwrap();
    assert_eq!(flat.shape(), &[4, 800]);
    assert!(flat.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    let ramp = up(Tensor::from_fn(&[25, 1], |i| i as f64), 800).unwrap();
    let r = ramp.data();
    // Exact between the first and last frame centres.
    for i in 16..783 {
        assert!((r[i + 1] - r[i] - 1.0 / 32.0).abs() < 1e-12);
    }
    assert!(r[..16].iter().all(|&v| v == 0.0) && r[784..].iter().all(|&v| v == 24.0));
    assert!(matches!(up(Tensor::zeros(&[25, 4]), 799), Err(Error::Alignment(_))));
}

#[test]
fn interpolation_rows_are_convex() {
    for tv in [1, 2, 7, 25] {
        let u = upsample_matrix(tv, 32);
        for row in u.data().chunks(tv) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}

#[test]
fn mask_is_nonnegative_with_full_shapes() {
    let (f, store) = fusion(128, FusionConfig::default(), 5);
    let m = with(&store, |ctx| {
        f.estimate_mask(ctx, ctx.constant(randn(&[128, 800], 6)), ctx.constant(randn(&[25, 128], 7)))
            .unwrap()
            .value()
    });
    assert_eq!(m.shape(), &[128, 800]);
    assert!(m.data().iter().all(|&v| v >= 0.0));
    assert!(m.data().iter().any(|&v| v > 0.0));
}

#[test]
fn mask_rejects_misaligned_operands() {
    let (f, store) = fusion(8, FusionConfig::default(), 8);
    with(&store, |ctx| {
        let e = ctx.constant(randn(&[8, 64], 9));
        assert!(matches!(f.estimate_mask(ctx, e, ctx.constant(randn(&[3, 8], 10))), Err(Error::Alignment(_))));
        assert!(matches!(f.estimate_mask(ctx, e, ctx.constant(randn(&[2, 4], 10))), Err(Error::Shape(_))));
    });
}

#[test]
fn severed_detection_to_enhancement_path() {
    let cfg = FusionConfig {
        ablate_a_to_s: true,
        ..FusionConfig::default()
    };
    let (f, store) = fusion(8, cfg, 11);
    let e = randn(&[8, 64], 12);
    let mask = |av: Tensor| with(&store, |ctx| f.estimate_mask(ctx, ctx.constant(e.clone()), ctx.constant(av)).unwrap().value());
    assert_eq!(mask(randn(&[2, 8], 13)).data(), mask(randn(&[2, 8], 14).scale(9.0)).data());
    let g = Graph::new();
    let ctx = Ctx::training(&g, &store);
    let av = g.leaf(randn(&[2, 8], 15), true);
    let m = f.estimate_mask(&ctx, ctx.constant(e.clone()), av).unwrap();
    let mut grads = g.backward(m.sum());
    assert!(grads.take(av).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
}

fn refine(cfg: FusionConfig, m: Tensor, av: &Tensor) -> Result<Tensor, Error> {
    let (f, store) = fusion(av.dim(1), cfg, 16);
    with(&store, |ctx| f.refine_av(ctx, ctx.constant(m), ctx.constant(av.clone())).map(|v| v.value().as_ref().clone()))
}

#[test]
fn refinement_examples() {
    let av = randn(&[3, 4], 17);
    let cfg = FusionConfig::default;
    assert_eq!(refine(cfg(), Tensor::ones(&[4, 96]), &av).unwrap(), av);
    assert!(refine(cfg(), Tensor::zeros(&[4, 96]), &av).unwrap().data().iter().all(|&v| v == 0.0));
    let spike = Tensor::from_fn(&[4, 96], |i| if i % 32 == 31 { 5.0 } else { 0.0 });
    assert_eq!(refine(cfg(), spike, &av).unwrap(), av.scale(5.0));
    let severed = FusionConfig {
        ablate_s_to_a: true,
        ..cfg()
    };
    assert_eq!(refine(severed, Tensor::zeros(&[4, 96]), &av).unwrap(), av);
    assert!(matches!(refine(cfg(), Tensor::ones(&[4, 95]), &av), Err(Error::Alignment(_))));
    assert!(matches!(refine(cfg(), Tensor::ones(&[5, 96]), &av), Err(Error::Shape(_))));
}

#[test]
fn pooling_takes_the_window_maximum() {
    let m = randn(&[3, 64], 18);
    let store = ParamStore::new();
    let p = with(&store, |ctx| pool_mask(ctx.constant(m.clone())).unwrap().value());
    assert_eq!(p.shape(), &[3, 2]);
    for c in 0..3 {
        for t in 0..2 {
            let want = m.data()[c * 64 + 32 * t..c * 64 + 32 * (t + 1)].iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(p.data()[c * 2 + t], want);
        }
    }
}

#[test]
fn detection_head_examples() {
    let (f, mut store) = fusion(8, FusionConfig::default(), 19);
    let x = randn(&[10, 8], 20).scale(4.0);
    let scores = |store: &ParamStore, x: &Tensor| with(store, |ctx| f.asd_decode(ctx, ctx.constant(x.clone())).value());
    let y = scores(&store, &x);
    assert_eq!(y.shape(), &[10]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    // Raising frame 3 along the head's weight direction moves only frame 3.
    let w = store.get(f.asd.w).clone();
    let mut bumped = x.clone();
    for c in 0..8 {
        bumped.data_mut()[3 * 8 + c] += w.data()[c];
    }
    let z = scores(&store, &bumped);
    for t in 0..10 {
        if t == 3 {
            assert!(z.data()[t] > y.data()[t]);
        } else {
            assert_eq!(z.data()[t], y.data()[t]);
        }
    }
    fill(&mut store, |n| n.starts_with("asd."), 0.0);
    assert!(scores(&store, &x).data().iter().all(|&v| v == 0.5));
}

#[test]
fn mask_application_examples() {
    let c = EncoderConfig {
        scale: 1.0 / 16.0,
        ..EncoderConfig::default()
    };
    let (dec, store) = build(21, |pb| WaveDecoder::new(pb, &c));
    let fe = randn(&[8, 64], 22);
    with(&store, |ctx| {
        let e = ctx.constant(fe.clone());
        assert_eq!(se_apply_mask(ctx.constant(Tensor::ones(&[8, 64])), e).unwrap().value().as_ref(), &fe);
        let silent = se_apply_mask(ctx.constant(Tensor::zeros(&[8, 64])), e).unwrap();
        let y = dec.forward(ctx, silent, 1280).unwrap().value();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let m = uniform(&[8, 64], 23, -1.0, 1.0).map(|v| v.max(0.0));
        let out = se_apply_mask(ctx.constant(m), e).unwrap().value();
        for (o, x) in out.data().iter().zip(fe.data()) {
            assert!(*o == 0.0 || o.signum() == x.signum());
        }
        assert!(matches!(se_apply_mask(ctx.constant(Tensor::ones(&[8, 63])), e), Err(Error::Shape(_))));
    });
}

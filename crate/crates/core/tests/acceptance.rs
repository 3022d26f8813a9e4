//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Pass criterion numbers as arguments to run a subset.

mod common;

use std::time::{Duration, Instant};

use adenet_core::harness::checkpoint::{self, Which};
use adenet_core::harness::{composite, AblationAxis, ModelPredictor, RunConfig, SnrMode, Trainer};
use adenet_core::model::{Adenet, ModelConfig, ModelInput};
use adenet_core::nn::layer_norm;
use adenet_core::objectives::{asd_loss, average_precision, roc_auc, si_sdr, si_sdr_loss};
use adenet_core::signalio::{ClipRecord, SpeakerKind};
use adenet_core::xmodal::Mln;
use adenet_tensor::attention::attention_probs;
use adenet_tensor::{Adam, AdamConfig, Ctx, GradCheck, Graph, ParamStore, Tensor, Var};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Failure {
    detail: String,
    /// False for a bound this hardware cannot meet; see the README.
    gating: bool,
}

type Outcome = Result<String, Failure>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(Failure { detail, gating: true })
    }
}

impl From<String> for Failure {
    fn from(detail: String) -> Self {
        Failure { detail, gating: true }
    }
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("shape theorem", shapes),
        ("gradient suite", gradients),
        ("loss and metric oracles", oracles),
        ("mln reduces to layer norm", mln_reduction),
        ("mln alignment", mln_alignment),
        ("overfit", overfit),
        ("ablation direction", ablation_direction),
        ("ablation gradient separation", gradient_separation),
        ("mask and attention invariants", invariants),
        ("determinism and checkpoint round trip", determinism),
    ];
    let (mut ran, mut passed, mut gating) = (0, 0, 0);
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let (tag, detail) = match run() {
            Ok(d) => {
                passed += 1;
                ("PASS", d)
            }
            Err(f) => {
                gating += usize::from(f.gating);
                ("FAIL", if f.gating { f.detail } else { format!("{} (non-gating)", f.detail) })
            }
        };
        println!("{tag} {n:>2} {name}: {detail} [{:.1}s]", t0.elapsed().as_secs_f64());
    }
    println!("acceptance: {passed}/{ran} passed");
    if gating > 0 {
        std::process::exit(1);
    }
}

/// Full-width inference time for 7 s of clips; the shapes gate, the time
/// does not.
const SHAPE_BUDGET: Duration = Duration::from_secs(10);

fn shapes() -> Outcome {
    let (net, store) = Adenet::new(&ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let mut got = Vec::new();
    for (seconds, seed) in [(1.0, 1), (2.0, 2), (4.0, 3)] {
        let c = clip(seed, seconds, SpeakerKind::Speaking, 5.0);
        let input = ModelInput::from_clip(&c, &c.mixture, false, 0).map_err(|e| e.to_string())?;
        let (ya, ys) = net.predict(&store, &input).map_err(|e| e.to_string())?;
        got.push((ya.len(), ys.len()));
    }
    let elapsed = t0.elapsed();
    let detail = format!("{got:?} in {elapsed:.1?}");
    check(got == [(25, 16000), (50, 32000), (100, 64000)], detail.clone())?;
    if elapsed >= SHAPE_BUDGET {
        return Err(Failure {
            detail: format!("{detail}, over the {SHAPE_BUDGET:?} budget"),
            gating: false,
        });
    }
    Ok(detail)
}

fn gradient_losses<'g>(net: &Adenet, ctx: &Ctx<'g>, input: &ModelInput, clean: &[f64], labels: &[u8]) -> Var<'g> {
    let out = net.forward(ctx, input).unwrap();
    let ls = si_sdr_loss(ctx, out.y_s, clean).unwrap();
    let la = asd_loss(ctx, out.y_a, labels).unwrap();
    ls.scale(0.1).add(la)
}

/// Groups whose true gradient is exactly zero: a bias feeding batch norm
/// under batch statistics, and the decoder bias, a DC shift the zero-mean
/// SI-SDR ignores.
fn structurally_zero(name: &str, train: bool) -> bool {
    name == "decoder.bias" || (train && name.ends_with("conv.dw.bias"))
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut run = RunConfig::default();
    run.model = ModelConfig::tiny();
    let variants = [
        run.model.clone(),
        AblationAxis::RawAudio.apply(&run).unwrap().model,
        AblationAxis::TcnContext.apply(&run).unwrap().model,
    ];
    let c = clip(5, 1.0, SpeakerKind::Speaking, 5.0);
    let input = model_input(5, 4);
    let clean = &c.clean_target.samples()[..input.num_samples()];
    let labels = &c.asd_labels[..4];
    let coarse = GradCheck {
        samples: 16,
        ..GradCheck::default()
    };
    // A ReLU kink within h of a sampled point spoils one difference; a
    // smaller step rechecks those groups.
    let fine = GradCheck { h: 1e-6, ..coarse };
    let mut seen = std::collections::BTreeSet::new();
    let (mut worst, mut worst_name, mut groups, mut zero_max) = (0.0f64, String::new(), 0, 0.0f64);
    for cfg in &variants {
        let (net, mut store) = Adenet::new(cfg, 6).unwrap();
        perturb(&mut store, |_| true, 7, 0.05);
        for train in [true, false] {
            let pick = |n: &str| {
                !seen.contains(n) && !structurally_zero(n, train) && (train || n.contains("bn") || n.ends_with("dw.bias"))
            };
            let mut errs = coarse.params_where(&store, train, pick, |ctx| gradient_losses(&net, ctx, &input, clean, labels));
            let kinked: Vec<String> = errs.iter().filter(|(_, e)| *e >= 1e-4).map(|(n, _)| n.clone()).collect();
            for (name, e) in fine.params_where(&store, train, |n| kinked.iter().any(|k| k == n), |ctx| gradient_losses(&net, ctx, &input, clean, labels)) {
                let slot = errs.iter_mut().find(|(n, _)| *n == name).unwrap();
                slot.1 = slot.1.min(e);
            }
            for (name, e) in errs {
                groups += 1;
                if e > worst {
                    worst = e;
                    worst_name = name;
                }
            }
            let g = Graph::new();
            let ctx = Ctx::new(&g, &store, train, true);
            let mut grads = g.backward(gradient_losses(&net, &ctx, &input, clean, labels));
            for (id, t) in ctx.param_grads(&mut grads) {
                if structurally_zero(store.name(id), train) {
                    zero_max = zero_max.max(t.max_abs());
                }
            }
        }
        seen.extend(store.trainable_ids().map(|id| store.name(id).to_owned()));
    }
    let elapsed = t0.elapsed();
    check(
        worst < 1e-4 && zero_max < 1e-9 && elapsed < Duration::from_secs(300),
        format!(
            "{groups} groups, worst relative error {worst:.2e} ({worst_name}), structurally zero groups within {zero_max:.1e}, in {elapsed:.0?}"
        ),
    )
}

fn brute_ap(s: &[f64], l: &[u8]) -> f64 {
    let mut th = s.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let p = l.iter().filter(|&&x| x == 1).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in th {
        let tp = s.iter().zip(l).filter(|(v, y)| **v >= t && **y == 1).count() as f64;
        let pred = s.iter().filter(|v| **v >= t).count() as f64;
        ap += (tp / p - prev) * tp / pred;
        prev = tp / p;
    }
    ap
}

fn brute_auc(s: &[f64], l: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, la) in s.iter().zip(l) {
        for (b, lb) in s.iter().zip(l) {
            if *la == 1 && *lb == 0 {
                den += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn oracles() -> Outcome {
    let reference = randn(&[4000], 8).into_data();
    let noise = randn(&[4000], 9).into_data();
    let est: Vec<f64> = reference.iter().zip(&noise).map(|(r, n)| r + 0.3 * n).collect();
    let loss = |e: &[f64]| {
        let (g, store) = (Graph::new(), ParamStore::new());
        let ctx = Ctx::inference(&g, &store);
        si_sdr_loss(&ctx, ctx.constant(Tensor::new(&[e.len()], e.to_vec())), &reference).unwrap().value().item()
    };
    let base = loss(&est);
    let mut scale_dev = 0.0f64;
    for k in [0.1, 10.0] {
        let scaled: Vec<f64> = est.iter().map(|v| v * k).collect();
        scale_dev = scale_dev.max((loss(&scaled) - base).abs());
        scale_dev = scale_dev.max((si_sdr(&scaled, &reference).unwrap() + base).abs());
    }

    let (g, store) = (Graph::new(), ParamStore::new());
    let ctx = Ctx::inference(&g, &store);
    let labels: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
    let half = asd_loss(&ctx, ctx.constant(Tensor::full(&[50], 0.5)), &labels).unwrap().value().item();
    let bce_dev = (half - std::f64::consts::LN_2).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=10);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let l: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if !(l.contains(&0) && l.contains(&1)) {
            continue;
        }
        cases += 1;
        let ap = average_precision(&s, &l).unwrap();
        let auc = roc_auc(&s, &l).unwrap();
        if (ap - brute_ap(&s, &l)).abs() > 1e-12 || (auc - brute_auc(&s, &l)).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    check(
        scale_dev < 1e-6 && bce_dev < 1e-9 && mismatches == 0,
        format!("scale deviation {scale_dev:.1e} dB, |bce(0.5) - ln 2| {bce_dev:.1e}, {mismatches}/{cases} ranking mismatches"),
    )
}

fn mln_reduction() -> Outcome {
    let (m, mut store) = build(11, |pb| Mln::new(pb, 64));
    perturb(&mut store, |n| n == "weight" || n == "bias", 12, 0.5);
    fill(&mut store, |n| n.starts_with("f."), 0.0);
    let g = Graph::new();
    let ctx = Ctx::inference(&g, &store);
    let (x, y) = (ctx.constant(randn(&[100, 64], 13).scale(4.0)), ctx.constant(randn(&[100, 64], 14)));
    let a = m.forward(&ctx, x, y).unwrap().value();
    let b = layer_norm(&ctx, x, m.gamma, m.beta).value();
    let differing = a.data().iter().zip(b.data()).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
    check(differing == 0, format!("{differing} of {} entries differ bitwise", a.len()))
}

/// Per-channel means of a `(T, d)` value.
fn channel_means(x: &Tensor) -> Vec<f64> {
    let (t, d) = (x.dim(0), x.dim(1));
    (0..d).map(|c| (0..t).map(|i| x.data()[i * d + c]).sum::<f64>() / t as f64).collect()
}

fn mln_alignment() -> Outcome {
    let t0 = Instant::now();
    let (t, d) = (200, 32);
    let (m, mut store) = build(15, |pb| Mln::new(pb, d));
    let visual = randn(&[t, d], 16);
    // The offset covers half the channels; a uniform one would be normalised away.
    let audio = randn(&[t, d], 17).zip_map(&Tensor::from_fn(&[t, d], |i| if i % d < d / 2 { 5.0 } else { 0.0 }), |a, b| a + b);
    let forward = |store: &ParamStore| {
        let g = Graph::new();
        let ctx = Ctx::inference(&g, store);
        let (a, v) = (ctx.constant(audio.clone()), ctx.constant(visual.clone()));
        let plain = layer_norm(&ctx, a, m.gamma, m.beta).value();
        let target = layer_norm(&ctx, v, m.gamma, m.beta).value();
        let mixed = m.forward(&ctx, a, v).unwrap().value();
        (channel_means(&plain), channel_means(&target), channel_means(&mixed))
    };
    let frozen: Vec<_> = store.ids().filter(|&id| !store.name(id).starts_with("f.")).collect();
    let target = ctx_free(|ctx| layer_norm(ctx, ctx.constant(visual.clone()), m.gamma, m.beta).mean_axis(0, false), &store);
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    for _ in 0..100 {
        let g = Graph::new();
        let ctx = Ctx::training(&g, &store);
        let out = m.forward(&ctx, ctx.constant(audio.clone()), ctx.constant(visual.clone())).unwrap();
        let gap = out.mean_axis(0, false).sub(ctx.constant(target.clone()));
        let mut grads = g.backward(gap.square().sum());
        let grads: Vec<_> = ctx.param_grads(&mut grads).into_iter().filter(|(id, _)| !frozen.contains(id)).collect();
        adam.step(&mut store, &grads);
    }
    let (plain, target, mixed) = forward(&store);
    let closer = (0..d).filter(|&c| (mixed[c] - target[c]).abs() < (plain[c] - target[c]).abs()).count();
    let frac = closer as f64 / d as f64;
    let elapsed = t0.elapsed();
    check(
        frac >= 0.9 && elapsed < Duration::from_secs(60),
        format!("{closer}/{d} channels closer after the fit"),
    )
}

fn ctx_free(f: impl for<'g> FnOnce(&Ctx<'g>) -> Var<'g>, store: &ParamStore) -> Tensor {
    let g = Graph::new();
    let ctx = Ctx::inference(&g, store);
    f(&ctx).value().as_ref().clone()
}

/// Overfit runs use a quarter-width model; the full width cannot take 500
/// steps in the time budget on one core.
pub const OVERFIT_SCALE: f64 = 0.25;

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let clips = overfit_clips();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::scaled(OVERFIT_SCALE);
    cfg.optim.lr = 3e-3;
    cfg.optim.lr_decay_per_epoch = 1.0;
    cfg.optim.batch_size = 1;
    cfg.optim.epochs = 500 / clips.len();
    cfg.data.snr_db = vec![10.0];
    cfg.data.snr_mode = SnrMode::Fixed;
    cfg.data.augment = false;
    let mut t = Trainer::new(&cfg).map_err(|e| e.to_string())?;
    let mut steps = 0;
    t.fit(&clips, &[], None, &mut |_| steps += 1, &mut |_| {}).map_err(|e| e.to_string())?;
    let r = t.evaluate(&clips).map_err(|e| e.to_string())?.total;
    let (auc, sisdri) = (r.auc.unwrap_or(0.0), r.si_sdr_improvement_db.unwrap_or(f64::NEG_INFINITY));
    let elapsed = t0.elapsed();
    check(
        auc >= 0.95 && sisdri >= 5.0 && steps <= 500 && elapsed < Duration::from_secs(900),
        format!("{steps} steps: AUC {auc:.3}, SI-SDRi {sisdri:.2} dB in {elapsed:.0?}"),
    )
}

fn ablation_corpus() -> Vec<ClipRecord> {
    let kinds = [SpeakerKind::Speaking, SpeakerKind::Speaking, SpeakerKind::SilentChewing, SpeakerKind::SilentStatic];
    (0..32).map(|i| clip(200 + i as u64, 1.0, kinds[i % 4], 5.0)).collect()
}

fn ablation_direction() -> Outcome {
    let clips = ablation_corpus();
    let mut base = RunConfig::default();
    base.model = ModelConfig::tiny();
    base.optim.lr = 2e-3;
    base.optim.batch_size = 2;
    base.optim.epochs = 18;
    base.optim.seed = 21;
    base.data.snr_db = vec![5.0];
    base.data.snr_mode = SnrMode::Fixed;
    let score = |cfg: &RunConfig| -> Result<(f64, String), String> {
        let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
        t.fit(&clips, &[], None, &mut |_| {}, &mut |_| {}).map_err(|e| e.to_string())?;
        let r = t.evaluate(&clips).map_err(|e| e.to_string())?;
        let parts = format!(
            "AUC {:.3}, SI-SDRi {:.2} dB",
            r.total.auc.unwrap_or(0.0),
            r.total.si_sdr_improvement_db.unwrap_or(0.0)
        );
        Ok((composite(&r), parts))
    };
    let (full, parts) = score(&base)?;
    let mut report = vec![format!("full {full:.3} ({parts})")];
    let mut ok = true;
    for axis in [AblationAxis::AblateAToS, AblationAxis::AblateSToA] {
        let (c, parts) = score(&axis.apply(&base).map_err(|e| e.to_string())?)?;
        let tie = (c - full).abs() <= 0.01;
        ok &= full >= c || tie;
        report.push(format!("{axis} {c:.3} ({parts}){}", if tie && c > full { " tie" } else { "" }));
    }
    check(ok, report.join(", "))
}

fn touched(cfg: &ModelConfig, enhancement: bool, prefix: &str) -> (usize, usize) {
    let (net, store) = Adenet::new(cfg, 22).unwrap();
    let c = clip(23, 1.0, SpeakerKind::Speaking, 5.0);
    let input = model_input(23, 4);
    let g = Graph::new();
    let ctx = Ctx::training(&g, &store);
    let out = net.forward(&ctx, &input).unwrap();
    let loss = if enhancement {
        si_sdr_loss(&ctx, out.y_s, &c.clean_target.samples()[..input.num_samples()]).unwrap()
    } else {
        asd_loss(&ctx, out.y_a, &c.asd_labels[..4]).unwrap()
    };
    let mut grads = g.backward(loss);
    let grads = ctx.param_grads(&mut grads);
    // Unreached parameters have no gradient entry, which counts as zero.
    let nonzero = grads
        .iter()
        .filter(|(id, t)| store.name(*id).starts_with(prefix) && t.data().iter().any(|&v| v != 0.0))
        .count();
    (nonzero, store.trainable_ids().filter(|&id| store.name(id).starts_with(prefix)).count())
}

fn gradient_separation() -> Outcome {
    let mut run = RunConfig::default();
    run.model = ModelConfig::tiny();
    let a_to_s = AblationAxis::AblateAToS.apply(&run).unwrap().model;
    let s_to_a = AblationAxis::AblateSToA.apply(&run).unwrap().model;
    let (vis, vis_full) = (touched(&a_to_s, true, "visual."), touched(&run.model, true, "visual."));
    let (ctx, ctx_full) = (touched(&s_to_a, false, "context."), touched(&run.model, false, "context."));
    check(
        vis.0 == 0 && ctx.0 == 0 && vis_full.0 > 0 && ctx_full.0 > 0,
        format!(
            "severed: {}/{} visual and {}/{} context tensors with non-zero gradient; intact: {}/{} and {}/{}",
            vis.0, vis.1, ctx.0, ctx.1, vis_full.0, vis_full.1, ctx_full.0, ctx_full.1
        ),
    )
}

fn invariants() -> Outcome {
    let clips = overfit_clips();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.optim.lr = 1e-2;
    cfg.optim.batch_size = 1;
    cfg.optim.seed = 24;
    let mut t = Trainer::new(&cfg).map_err(|e| e.to_string())?;
    let mut mins = Vec::new();
    // Each step measures the mask left by the previous update.
    while mins.len() < 101 {
        t.train_epoch(&clips, &mut |s| mins.push(s.mask_min)).map_err(|e| e.to_string())?;
        t.epoch += 1;
    }
    let mask_min = mins[..101].iter().copied().fold(f64::INFINITY, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (tq, tk, heads) = (rng.random_range(1..20), rng.random_range(1..20), [1, 2, 4][rng.random_range(0..3)]);
        let d = heads * rng.random_range(1..5);
        let spread = 10f64.powf(rng.random_range(-2.0..2.0));
        let q = Tensor::from_fn(&[tq, d], |_| spread * rng.random_range(-1.0..1.0));
        let k = Tensor::from_fn(&[tk, d], |_| spread * rng.random_range(-1.0..1.0));
        for row in attention_probs(&q, &k, heads).data().chunks(tk) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(
        mask_min >= 0.0 && worst < 1e-6,
        format!("mask minimum {mask_min:.3e} over 100 updates, worst attention row-sum error {worst:.1e}"),
    )
}

fn determinism() -> Outcome {
    let clips = overfit_clips();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.optim.seed = 26;
    cfg.optim.epochs = 1;
    let train = || -> Result<Trainer, String> {
        let mut t = Trainer::new(&cfg).map_err(|e| e.to_string())?;
        t.fit(&clips, &[], None, &mut |_| {}, &mut |_| {}).map_err(|e| e.to_string())?;
        Ok(t)
    };
    let (a, b) = (train()?, train()?);
    let (la, lb) = (a.history[0].loss, b.history[0].loss);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    checkpoint::save(dir.path(), &a.meta(), &a.store, &a.adam).map_err(|e| e.to_string())?;
    let restored = checkpoint::load(dir.path(), Which::Latest).map_err(|e| e.to_string())?;
    let probe = |net: &Adenet, store: &ParamStore| -> Result<Vec<u64>, String> {
        let mut bits = Vec::new();
        for c in &clips[..4] {
            let p = ModelPredictor { net, store };
            let input = ModelInput::from_clip(c, &c.mixture, false, 0).map_err(|e| e.to_string())?;
            let (ya, ys) = p.net.predict(p.store, &input).map_err(|e| e.to_string())?;
            bits.extend(ya.iter().chain(&ys).map(|v| v.to_bits()));
        }
        Ok(bits)
    };
    let same_outputs = probe(&a.net, &a.store)? == probe(&restored.net, &restored.store)?;
    check(
        la.to_bits() == lb.to_bits() && same_outputs,
        format!("epoch-1 losses {la:.6} / {lb:.6}, restored outputs bitwise equal: {same_outputs}"),
    )
}

#![allow(dead_code)]

use adenet_core::model::ModelInput;
use adenet_core::signalio::{gen_clip, ClipRecord, ClipSpec, SpeakerKind};
use adenet_tensor::{ParamBuilder, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Registers a module's parameters in a fresh store.
pub fn build<T>(seed: u64, f: impl FnOnce(&mut ParamBuilder) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let module = f(&mut ParamBuilder::new(&mut store, &mut rng));
    (module, store)
}

/// Gradient-check closures are generic over the graph lifetime, so the
/// store they read must outlive every graph.
pub fn leak(store: ParamStore) -> &'static ParamStore {
    Box::leak(Box::new(store))
}

pub fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, seed, -1.0, 1.0)
}

/// Overwrites every parameter whose name satisfies `pick`.
pub fn fill(store: &mut ParamStore, pick: impl Fn(&str) -> bool, value: f64) -> usize {
    let ids: Vec<_> = store.ids().filter(|&id| pick(store.name(id))).collect();
    for &id in &ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = value);
    }
    ids.len()
}

/// Randomises every trainable parameter whose name satisfies `pick`.
pub fn perturb(store: &mut ParamStore, pick: impl Fn(&str) -> bool, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.trainable_ids().filter(|&id| pick(store.name(id))).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn clip(seed: u64, seconds: f64, kind: SpeakerKind, snr_db: f64) -> ClipRecord {
    let mut c = gen_clip(
        seed,
        &ClipSpec {
            duration_s: seconds,
            kind,
            snr_db,
        },
    )
    .unwrap();
    c.clip_id = format!("clip{seed}");
    c
}

/// A synthetic clip cut to `tv` video frames and converted to model input.
pub fn model_input(seed: u64, tv: usize) -> ModelInput {
    let c = clip(seed, 1.0, SpeakerKind::Speaking, 5.0);
    let full = ModelInput::from_clip(&c, &c.mixture, false, 0).unwrap();
    ModelInput::new(
        full.mixture.narrow(0, 0, 640 * tv),
        full.mfcc.narrow(0, 0, 4 * tv),
        full.faces.narrow(0, 0, tv),
    )
    .unwrap()
}

/// Eight overfit clips: four speaking, two chewing, two static, 1 s at 10 dB.
pub fn overfit_clips() -> Vec<ClipRecord> {
    let kinds = [SpeakerKind::Speaking; 4]
        .into_iter()
        .chain([SpeakerKind::SilentChewing; 2])
        .chain([SpeakerKind::SilentStatic; 2]);
    kinds.enumerate().map(|(i, k)| clip(100 + i as u64, 1.0, k, 10.0)).collect()
}

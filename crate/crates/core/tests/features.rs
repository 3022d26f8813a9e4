use std::f64::consts::PI;

use adenet_core::features::*;
use adenet_core::signalio::Waveform;
use adenet_core::Error;
use adenet_tensor::Tensor;
use proptest::prelude::*;

/// Direct-summation MFCC: naive DFT, mel filters and DCT rebuilt from
/// their textbook definitions.
fn reference_mfcc(x: &[f64]) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..42).map(|i| inv(mel(8000.0) * i as f64 / 41.0)).collect();
    let tri = |m: usize, f: f64| {
        let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f < c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };
    let frames = 1 + (x.len() - 400) / 160;
    (0..frames)
        .map(|f| {
            let seg: Vec<f64> = (0..400)
                .map(|n| x[f * 160 + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / 400.0).cos()))
                .collect();
            let mag: Vec<f64> = (0..257)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in seg.iter().enumerate() {
                        let a = -2.0 * PI * (k * n) as f64 / 512.0;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re.hypot(im)
                })
                .collect();
            let logmel: Vec<f64> = (0..40)
                .map(|m| {
                    let e: f64 = (0..257).map(|k| tri(m, k as f64 * 16000.0 / 512.0) * mag[k]).sum();
                    e.max(1e-10).ln()
                })
                .collect();
            (0..13)
                .map(|k| {
                    let s = if k == 0 { (1.0f64 / 40.0).sqrt() } else { (2.0f64 / 40.0).sqrt() };
                    s * (0..40)
                        .map(|i| logmel[i] * (PI * k as f64 * (i as f64 + 0.5) / 40.0).cos())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn sine(freq: f64, n: usize) -> Waveform {
    Waveform::at_16k((0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect()).unwrap()
}

fn rows(m: &MfccSequence) -> Vec<Vec<f64>> {
    m.coeffs().data().chunks(N_MFCC).map(<[f64]>::to_vec).collect()
}

#[test]
fn frame_count_for_one_second() {
    assert_eq!(num_mfcc_frames(16_000), 98);
    assert_eq!(mfcc(&sine(440.0, 16_000)).unwrap().num_frames(), 98);
    assert_eq!(mfcc(&sine(440.0, 400)).unwrap().num_frames(), 1);
}

#[test]
fn short_input_is_a_length_error() {
    assert!(matches!(mfcc(&sine(440.0, 399)), Err(Error::Length(_))));
}

#[test]
fn silence_gives_identical_frames() {
    let m = mfcc(&Waveform::at_16k(vec![0.0; 4000]).unwrap()).unwrap();
    let r = rows(&m);
    assert!(r.iter().all(|row| row == &r[0]));
    // ln(floor) lands only on the DC coefficient.
    assert!((r[0][0] - 1e-10f64.ln() * 40f64.sqrt()).abs() < 1e-9);
    assert!(r[0][1..].iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn tones_match_the_direct_reference() {
    let a = mfcc(&sine(1000.0, 2400)).unwrap();
    let b = mfcc(&sine(3000.0, 2400)).unwrap();
    for (m, freq) in [(&a, 1000.0), (&b, 3000.0)] {
        let want = reference_mfcc(sine(freq, 2400).samples());
        for (got, want) in rows(m).iter().zip(&want) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-3, "{freq} Hz: {g} vs {w}");
            }
        }
    }
    let dist: f64 = a.coeffs().data().iter().zip(b.coeffs().data()).map(|(x, y)| (x - y).powi(2)).sum();
    assert!(dist.sqrt() > 0.0);
}

#[test]
fn filterbank_partitions_the_spectrum() {
    let fb = mel_filterbank();
    assert_eq!(fb.len(), N_MELS);
    assert!(fb.iter().all(|f| f.len() == N_FFT / 2 + 1));
    // Overlapping triangles sum to 1 between the first and last centre.
    let lo = (mel_to_hz(hz_to_mel(8000.0) / 41.0) * 512.0 / 16000.0).ceil() as usize;
    let hi = (mel_to_hz(hz_to_mel(8000.0) * 40.0 / 41.0) * 512.0 / 16000.0).floor() as usize;
    for k in lo..=hi {
        let s: f64 = fb.iter().map(|f| f[k]).sum();
        assert!((s - 1.0).abs() < 1e-9, "bin {k}: {s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hop_shift_moves_rows_by_one(x in prop::collection::vec(-1.0f64..1.0, 2000)) {
        let a = mfcc(&Waveform::at_16k(x[..1840].to_vec()).unwrap()).unwrap();
        let b = mfcc(&Waveform::at_16k(x[160..].to_vec()).unwrap()).unwrap();
        let (ra, rb) = (rows(&a), rows(&b));
        for i in 0..rb.len() - 1 {
            for (p, q) in ra[i + 1].iter().zip(&rb[i]) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}

fn face_tensor(t: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut s = seed;
    Tensor::from_fn(&[t, h, w], |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

#[test]
fn test_mode_is_identity_at_native_size() {
    let raw = face_tensor(3, 112, 112, 1);
    assert_eq!(preprocess_faces(&raw, false, 9).unwrap().frames(), &raw);
}

#[test]
fn resize_reaches_native_size() {
    let f = preprocess_faces(&face_tensor(2, 40, 60, 2), false, 0).unwrap();
    assert_eq!(f.frames().shape(), &[2, 112, 112]);
    let flat = preprocess_faces(&Tensor::full(&[1, 7, 9], 0.3), false, 0).unwrap();
    assert!(flat.frames().data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn train_mode_is_seeded_and_flip_mirrors_columns() {
    let raw = face_tensor(2, 112, 112, 3);
    let a = preprocess_faces(&raw, true, 17).unwrap();
    assert_eq!(a, preprocess_faces(&raw, true, 17).unwrap());
    let flipped = augment(&raw, true, 0.0);
    for t in 0..2 {
        for r in 0..112 {
            for j in 0..112 {
                let at = |x: &Tensor, c: usize| x.data()[(t * 112 + r) * 112 + c];
                assert_eq!(at(&flipped, j), at(&raw, 111 - j));
            }
        }
    }
    let seeds_with_flip = (0..200).filter(|&s| draw_augmentation(s).0).count();
    assert!((70..130).contains(&seeds_with_flip));
    assert!((0..200).all(|s| draw_augmentation(s).1.abs() <= MAX_ROTATION_DEG));
}

#[test]
fn augmentation_is_shared_across_frames() {
    let one = face_tensor(1, 112, 112, 4);
    let two = Tensor::concat(&[&one, &one], 0);
    let out = preprocess_faces(&two, true, 23).unwrap();
    let d = out.frames().data();
    assert_eq!(d[..112 * 112], d[112 * 112..]);
}

#[test]
fn empty_clip_is_a_length_error() {
    assert!(matches!(preprocess_faces(&Tensor::zeros(&[0, 112, 112]), false, 0), Err(Error::Length(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_preserves_shape_and_range(seed in any::<u64>(), t in 1usize..3, h in 20usize..130) {
        let out = preprocess_faces(&face_tensor(t, h, 100, seed), true, seed).unwrap();
        prop_assert_eq!(out.frames().shape(), &[t, 112, 112]);
        prop_assert!(out.frames().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn alignment_yields_four_to_one(tv in 1usize..60, delta in -4i64..5) {
        let tm = (4 * tv as i64 + delta).max(1) as usize;
        let m = MfccSequence::new(Tensor::zeros(&[tm, N_MFCC])).unwrap();
        let f = FaceClip::new(Tensor::zeros(&[tv, 112, 112])).unwrap();
        let (m2, f2) = align_streams(&m, &f).unwrap();
        prop_assert_eq!(m2.num_frames(), MFCC_PER_VIDEO * f2.num_frames());
        prop_assert!(f2.num_frames() + 1 >= tv);
    }
}

fn align(tm: usize, tv: usize) -> Result<(usize, usize), Error> {
    let m = MfccSequence::new(Tensor::from_fn(&[tm, N_MFCC], |i| (i / N_MFCC) as f64))?;
    let f = FaceClip::new(Tensor::zeros(&[tv, 112, 112]))?;
    let (m, f) = align_streams(&m, &f)?;
    Ok((m.num_frames(), f.num_frames()))
}

#[test]
fn alignment_examples() {
    assert_eq!(align(98, 25).unwrap(), (100, 25));
    assert_eq!(align(200, 50).unwrap(), (200, 50));
    assert_eq!(align(197, 50).unwrap(), (200, 50));
    assert!(matches!(align(100, 40), Err(Error::Alignment(_))));
}

#[test]
fn alignment_pads_with_the_last_row() {
    let m = MfccSequence::new(Tensor::from_fn(&[98, N_MFCC], |i| (i / N_MFCC) as f64)).unwrap();
    let f = FaceClip::new(Tensor::zeros(&[25, 112, 112])).unwrap();
    let (m, _) = align_streams(&m, &f).unwrap();
    let d = m.coeffs().data();
    assert!(d[97 * N_MFCC..].iter().all(|&v| v == 97.0));
}

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use adenet_tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signalio::{Waveform, SAMPLE_RATE};

pub const N_MFCC: usize = 13;
pub const FRAME_LEN: usize = 400;
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
pub const LOG_FLOOR: f64 = 1e-10;

/// `T_mfcc × 13` cepstra at 100 frames per second.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccSequence {
    coeffs: Tensor,
}

impl MfccSequence {
    pub fn new(coeffs: Tensor) -> Result<Self> {
        if coeffs.ndim() != 2 || coeffs.dim(1) != N_MFCC || coeffs.dim(0) == 0 {
            return Err(Error::Shape(format!("mfcc must be T × {N_MFCC}, got {:?}", coeffs.shape())));
        }
        if !coeffs.all_finite() {
            return Err(Error::Format("non-finite mfcc".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn into_tensor(self) -> Tensor {
        self.coeffs
    }

    pub fn num_frames(&self) -> usize {
        self.coeffs.dim(0)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins, `N_MELS × (N_FFT/2 + 1)`, edges
/// equally spaced on the HTK mel scale from 0 Hz to Nyquist.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bins = N_FFT / 2 + 1;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II rows for the first `N_MFCC` coefficients.
fn dct_matrix() -> Vec<Vec<f64>> {
    let n = N_MELS as f64;
    (0..N_MFCC)
        .map(|k| {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..N_MELS)
                .map(|i| s * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

struct Extractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    mel: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
}

fn extractor() -> &'static Extractor {
    static E: OnceLock<Extractor> = OnceLock::new();
    E.get_or_init(|| Extractor {
        fft: FftPlanner::new().plan_fft_forward(N_FFT),
        window: hann(FRAME_LEN),
        mel: mel_filterbank(),
        dct: dct_matrix(),
    })
}

pub fn num_mfcc_frames(samples: usize) -> usize {
    1 + (samples - FRAME_LEN) / HOP
}

/// 25 ms Hann frames every 10 ms → |FFT₅₁₂| → 40 mel bands → ln (floored)
/// → orthonormal DCT-II, first 13 coefficients.
pub fn mfcc(wave: &Waveform) -> Result<MfccSequence> {
    if wave.sample_rate() != SAMPLE_RATE {
        return Err(Error::Format(format!("mfcc needs 16 kHz, got {} Hz", wave.sample_rate())));
    }
    let x = wave.samples();
    if x.len() < FRAME_LEN {
        return Err(Error::Length(format!("{} samples, need at least {FRAME_LEN}", x.len())));
    }
    let e = extractor();
    let frames = num_mfcc_frames(x.len());
    let mut out = Vec::with_capacity(frames * N_MFCC);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); e.fft.get_inplace_scratch_len()];
    let mut logmel = [0.0; N_MELS];
    for f in 0..frames {
        let seg = &x[f * HOP..f * HOP + FRAME_LEN];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < FRAME_LEN { seg[i] * e.window[i] } else { 0.0 }, 0.0);
        }
        e.fft.process_with_scratch(&mut buf, &mut scratch);
        for (m, filt) in e.mel.iter().enumerate() {
            let energy: f64 = filt.iter().zip(&buf).map(|(w, c)| w * c.norm()).sum();
            logmel[m] = energy.max(LOG_FLOOR).ln();
        }
        for row in &e.dct {
            out.push(row.iter().zip(&logmel).map(|(a, b)| a * b).sum());
        }
    }
    MfccSequence::new(Tensor::new(&[frames, N_MFCC], out))
}

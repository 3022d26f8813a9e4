//! Deterministic synthetic talking-face clips.
//!
//! Speech is a harmonic stack gated by a bursty envelope; the rendered
//! mouth opening follows the same envelope frame by frame, so audio and
//! video carry the correspondence a detector has to learn.

use std::f64::consts::PI;

use adenet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::wav::{power, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::{FaceClip, FACE_SIZE};

pub const VIDEO_FPS: u32 = 25;
pub const SAMPLES_PER_FRAME: usize = (SAMPLE_RATE / VIDEO_FPS) as usize;
/// Frame-mean envelope above this marks an active frame.
pub const ACTIVITY_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerKind {
    Speaking,
    SilentStatic,
    SilentChewing,
}

impl SpeakerKind {
    pub fn is_speaking(self) -> bool {
        self == SpeakerKind::Speaking
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerKind::Speaking => "speaking",
            SpeakerKind::SilentStatic => "silent_static",
            SpeakerKind::SilentChewing => "silent_chewing",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipSpec {
    pub duration_s: f64,
    pub kind: SpeakerKind,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub mixture: Waveform,
    pub clean_target: Waveform,
    /// The noise exactly as added to the mixture.
    pub noise: Waveform,
    pub faces: FaceClip,
    pub asd_labels: Vec<u8>,
    pub speaker_kind: SpeakerKind,
    pub snr_db: f64,
    /// Speech power the noise gain was computed against; for silent clips
    /// this is the power of a speech signal that was synthesised and discarded.
    pub ref_power: f64,
}

impl ClipRecord {
    pub fn num_frames(&self) -> usize {
        self.asd_labels.len()
    }
}

/// Gain `g` with `10·log10(p_speech / (g²·p_noise)) == snr_db`.
pub fn noise_gain(p_speech: f64, p_noise: f64, snr_db: f64) -> Result<f64> {
    if !(p_speech > 0.0) || !(p_noise > 0.0) {
        return Err(Error::Degenerate(format!(
            "mixing needs positive powers (speech {p_speech}, noise {p_noise})"
        )));
    }
    Ok((p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `speech + g·noise` at the requested full-clip SNR; returns the mixture
/// and the scaled noise.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    mix_with_power(speech, noise, snr_db, speech.power())
}

/// As [`mix_at_snr`] but against an explicit speech power, so a silent
/// target can be mixed at the noise level a speaking one would get.
pub fn mix_with_power(speech: &Waveform, noise: &Waveform, snr_db: f64, p_speech: f64) -> Result<(Waveform, Waveform)> {
    if speech.len() != noise.len() {
        return Err(Error::Length(format!(
            "speech has {} samples, noise {}",
            speech.len(),
            noise.len()
        )));
    }
    let g = noise_gain(p_speech, noise.power(), snr_db)?;
    let scaled: Vec<f64> = noise.samples().iter().map(|n| g * n).collect();
    let mix = speech.samples().iter().zip(&scaled).map(|(s, n)| s + n).collect();
    Ok((Waveform::at_16k(mix)?, Waveform::at_16k(scaled)?))
}

fn smooth_edge(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Bursty speech envelope in [0, 1], one value per sample.
fn speech_envelope(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut env = vec![0.0; n];
    let mut t = rng.random_range(0.05..0.25) * sr;
    while (t as usize) < n {
        let len = rng.random_range(0.15..0.6) * sr;
        let peak = rng.random_range(0.6..1.0);
        let rate = rng.random_range(3.0..6.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (attack, release) = (0.03 * sr, 0.04 * sr);
        let start = t as usize;
        let end = ((t + len) as usize).min(n);
        for (i, e) in env.iter_mut().enumerate().take(end).skip(start) {
            let u = i as f64 - t;
            let ramp = smooth_edge(u / attack).min(smooth_edge((len - u) / release));
            let syllable = 0.8 + 0.2 * (2.0 * PI * rate * u / sr + phase).cos();
            *e = peak * ramp * syllable;
        }
        t += len + rng.random_range(0.08..0.35) * sr;
    }
    env
}

fn harmonic_speech(env: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(100.0..250.0);
    let drift_rate = rng.random_range(0.3..1.2);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let harmonics = 8;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let norm: f64 = (1..=harmonics).map(|h| 1.0 / h as f64).sum();
    let mut theta = 0.0;
    env.iter()
        .enumerate()
        .map(|(i, &e)| {
            let f = f0 * (1.0 + 0.05 * (2.0 * PI * drift_rate * i as f64 / sr + drift_phase).sin());
            theta += 2.0 * PI * f / sr;
            let s: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, p)| ((h + 1) as f64 * theta + p).sin() / (h + 1) as f64)
                .sum();
            0.5 * e * s / norm
        })
        .collect()
}

/// Low-passed Gaussian noise with a white component and slow level drift.
fn colored_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let a = rng.random_range(0.3..0.9);
    let white_mix = rng.random_range(0.1..0.5);
    let rate = rng.random_range(0.1..0.6);
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut lp = 0.0;
    (0..n)
        .map(|i| {
            let w: f64 = StandardNormal.sample(rng);
            lp = a * lp + (1.0 - a) * w;
            let level = 0.75 + 0.25 * (2.0 * PI * rate * i as f64 / sr + phase).sin();
            level * (lp + white_mix * w)
        })
        .collect()
}

fn frame_means(env: &[f64], frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|i| env[i * SAMPLES_PER_FRAME..(i + 1) * SAMPLES_PER_FRAME].iter().sum::<f64>() / SAMPLES_PER_FRAME as f64)
        .collect()
}

/// Per-clip face geometry.
#[derive(Clone, Copy, Debug)]
struct FaceStyle {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    skin: f64,
    background: f64,
}

pub(crate) const MOUTH_VALUE: f64 = 0.08;
pub(crate) const MOUTH_HALF_WIDTH: f64 = 12.0;
pub(crate) const MOUTH_DROP: f64 = 20.0;
/// Mouth opening in pixels for a fully open (envelope 1) frame.
const MOUTH_RANGE: f64 = 18.0;
const MOUTH_CLOSED: f64 = 2.0;

impl FaceStyle {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            cx: 56.0 + rng.random_range(-4.0..4.0),
            cy: 58.0 + rng.random_range(-4.0..4.0),
            rx: rng.random_range(34.0..40.0),
            ry: rng.random_range(42.0..48.0),
            skin: rng.random_range(0.55..0.8),
            background: rng.random_range(0.1..0.3),
        }
    }

    fn mouth_center(&self) -> (f64, f64) {
        (self.cx, self.cy + MOUTH_DROP)
    }

    /// One `FACE_SIZE²` frame with a mouth `height` pixels tall.
    fn render(&self, height: f64, out: &mut [f64]) {
        // Coverage of an ellipse with a one-pixel soft edge.
        let cover = |x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64| {
            let (dx, dy) = ((x - cx) / a, (y - cy) / b);
            let d = (dx * dx + dy * dy).sqrt();
            ((1.0 - d) * a.min(b) + 0.5).clamp(0.0, 1.0)
        };
        let (mx, my) = self.mouth_center();
        for r in 0..FACE_SIZE {
            for c in 0..FACE_SIZE {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let head = cover(x, y, self.cx, self.cy, self.rx, self.ry);
                let mut v = self.background + (self.skin - self.background) * head;
                for ex in [self.cx - 14.0, self.cx + 14.0] {
                    let eye = cover(x, y, ex, self.cy - 12.0, 4.5, 4.5);
                    v += (0.05 - v) * eye;
                }
                let mouth = cover(x, y, mx, my, MOUTH_HALF_WIDTH, height / 2.0);
                v += (MOUTH_VALUE - v) * mouth;
                out[r * FACE_SIZE + c] = v;
            }
        }
    }
}

/// Mouth opening per frame, measured from pixels: the darkened area in
/// the mouth box divided by the mouth width.
pub fn measure_mouth_heights(faces: &FaceClip) -> Vec<f64> {
    let t = faces.num_frames();
    let data = faces.frames().data();
    (0..t)
        .map(|i| {
            let frame = &data[i * FACE_SIZE * FACE_SIZE..(i + 1) * FACE_SIZE * FACE_SIZE];
            // Darkness of the central mouth column band relative to its brightest pixel.
            let c0 = FACE_SIZE / 2 - 4;
            let mut dark = 0.0;
            for c in c0..c0 + 8 {
                let col: Vec<f64> = (50..110).map(|r| frame[r * FACE_SIZE + c]).collect();
                let top = col.iter().cloned().fold(f64::MIN, f64::max);
                dark += col.iter().map(|v| (top - v) / (top - MOUTH_VALUE)).sum::<f64>();
            }
            dark / 8.0
        })
        .collect()
}

/// Builds one clip; bit-identical for equal `(seed, spec)`.
pub fn gen_clip(seed: u64, spec: &ClipSpec) -> Result<ClipRecord> {
    if !(1.0..=4.0).contains(&spec.duration_s) {
        return Err(Error::Spec(format!("duration {} s outside [1, 4]", spec.duration_s)));
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::Spec(format!("snr {} dB", spec.snr_db)));
    }
    let frames = (spec.duration_s * VIDEO_FPS as f64).round() as usize;
    let n = frames * SAMPLES_PER_FRAME;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let env = speech_envelope(n, &mut rng);
    let speech = harmonic_speech(&env, &mut rng);
    let noise = colored_noise(n, &mut rng);
    let style = FaceStyle::draw(&mut rng);
    let chew_rate = rng.random_range(1.5..3.0);
    let chew_phase = rng.random_range(0.0..2.0 * PI);
    let rest = MOUTH_CLOSED + rng.random_range(0.0..3.0);

    let ref_power = power(&speech);
    let env_frames = frame_means(&env, frames);
    let (clean, labels, heights): (Vec<f64>, Vec<u8>, Vec<f64>) = match spec.kind {
        SpeakerKind::Speaking => (
            speech,
            env_frames.iter().map(|&m| u8::from(m > ACTIVITY_THRESHOLD)).collect(),
            env_frames.iter().map(|&m| MOUTH_CLOSED + MOUTH_RANGE * m).collect(),
        ),
        SpeakerKind::SilentChewing => (
            vec![0.0; n],
            vec![0; frames],
            (0..frames)
                .map(|i| {
                    let t = i as f64 / VIDEO_FPS as f64;
                    MOUTH_CLOSED + 0.5 * MOUTH_RANGE * (1.0 + (2.0 * PI * chew_rate * t + chew_phase).sin()) / 2.0
                })
                .collect(),
        ),
        SpeakerKind::SilentStatic => (vec![0.0; n], vec![0; frames], vec![rest; frames]),
    };

    let clean = Waveform::at_16k(clean)?;
    let (mixture, scaled_noise) = mix_with_power(&clean, &Waveform::at_16k(noise)?, spec.snr_db, ref_power)?;

    let plane = FACE_SIZE * FACE_SIZE;
    let mut pixels = vec![0.0; frames * plane];
    for (i, h) in heights.iter().enumerate() {
        style.render(*h, &mut pixels[i * plane..(i + 1) * plane]);
    }
    let faces = FaceClip::new(Tensor::new(&[frames, FACE_SIZE, FACE_SIZE], pixels))?;

    Ok(ClipRecord {
        clip_id: format!("clip-{seed:016x}"),
        mixture,
        clean_target: clean,
        noise: scaled_noise,
        faces,
        asd_labels: labels,
        speaker_kind: spec.kind,
        snr_db: spec.snr_db,
        ref_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SpeakerKind) -> ClipSpec {
        ClipSpec {
            duration_s: 2.0,
            kind,
            snr_db: 5.0,
        }
    }

    #[test]
    fn rate_arithmetic() {
        let c = gen_clip(3, &spec(SpeakerKind::Speaking)).unwrap();
        assert_eq!(c.faces.num_frames(), 50);
        assert_eq!(c.mixture.len(), 32_000);
        assert_eq!(c.clean_target.len(), 32_000);
        assert_eq!(c.noise.len(), 32_000);
        assert_eq!(c.asd_labels.len(), 50);
    }

    #[test]
    fn envelope_stays_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = speech_envelope(64_000, &mut rng);
        assert!(env.iter().all(|&e| (0.0..=1.0).contains(&e)));
        assert!(env.iter().any(|&e| e > 0.5));
        assert!(env.contains(&0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(SpeakerKind::Speaking);
        s.duration_s = 0.5;
        assert!(matches!(gen_clip(0, &s), Err(Error::Spec(_))));
        s.duration_s = 4.5;
        assert!(matches!(gen_clip(0, &s), Err(Error::Spec(_))));
        s.duration_s = 1.0;
        s.snr_db = f64::NAN;
        assert!(matches!(gen_clip(0, &s), Err(Error::Spec(_))));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn measured_mouth_follows_envelope() {
        for seed in 0..20 {
            let s = ClipSpec {
                duration_s: (1 + seed % 4) as f64,
                ..spec(SpeakerKind::Speaking)
            };
            let c = gen_clip(seed, &s).unwrap();
            let n = c.mixture.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let env = frame_means(&speech_envelope(n, &mut rng), c.num_frames());
            let r = pearson(&measure_mouth_heights(&c.faces), &env);
            assert!(r >= 0.9, "seed {seed}: r = {r}");
            for (i, &l) in c.asd_labels.iter().enumerate() {
                let frame = &c.clean_target.samples()[i * SAMPLES_PER_FRAME..(i + 1) * SAMPLES_PER_FRAME];
                assert!(l == 0 || power(frame) > 0.0, "seed {seed} frame {i}");
            }
        }
    }

    #[test]
    fn rendered_mouth_tracks_requested_height() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let style = FaceStyle::draw(&mut rng);
        let mut a = vec![0.0; FACE_SIZE * FACE_SIZE];
        let mut b = a.clone();
        style.render(4.0, &mut a);
        style.render(16.0, &mut b);
        let clip = FaceClip::new(Tensor::new(&[2, FACE_SIZE, FACE_SIZE], [a, b].concat())).unwrap();
        let h = measure_mouth_heights(&clip);
        assert!(h[1] > h[0] + 8.0, "{h:?}");
    }
}

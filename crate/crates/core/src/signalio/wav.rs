use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at [`SAMPLE_RATE`] once ingested.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Fails on empty or non-finite input.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Length("empty waveform".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn at_16k(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Linear-interpolation resampler. Output sample `i` reads the input at
/// time `i / to`, holding the last input sample past the end.
pub fn resample_linear(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let n = ((x.len() as u64 * to as u64 + from as u64 / 2) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            if j + 1 >= x.len() {
                x[x.len() - 1]
            } else {
                let t = pos - j as f64;
                x[j] * (1.0 - t) + x[j + 1] * t
            }
        })
        .collect()
}

/// Reads 16-bit PCM WAV (mono or stereo, any rate) as 16 kHz mono.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => Error::Unsupported(format!("{}: unsupported WAV variant", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{}: {:?} {}-bit samples (need 16-bit PCM)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels != 1 && channels != 2 {
        return Err(Error::Unsupported(format!("{}: {channels} channels", path.display())));
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mono: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|c| c.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    if mono.is_empty() {
        return Err(Error::Length(format!("{}: no samples", path.display())));
    }
    Waveform::at_16k(resample_linear(&mono, spec.sample_rate, SAMPLE_RATE))
}

/// Writes 16-bit mono PCM; samples are clipped to the representable range.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format(other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in wave.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)?;
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)
}

//! Waveform I/O, SNR mixing and the synthetic audio-visual corpus.

mod corpus;
mod synth;
mod wav;

pub use corpus::{
    clip_seed, gen_corpus, kind_counts, load_manifest, manifest_path, read_faces, remix, write_faces, CorpusConfig,
    CorpusManifest, ManifestRecord, Split,
};
pub use synth::{
    gen_clip, measure_mouth_heights, mix_at_snr, mix_with_power, noise_gain, ClipRecord, ClipSpec, SpeakerKind,
    ACTIVITY_THRESHOLD, SAMPLES_PER_FRAME, VIDEO_FPS,
};
pub use wav::{load_wav, power, resample_linear, write_wav, Waveform, SAMPLE_RATE};

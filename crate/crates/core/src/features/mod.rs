//! MFCC front-end and face-clip preprocessing.

mod align;
mod faces;
mod mfcc;

pub use align::{align_streams, MFCC_PER_VIDEO};
pub use faces::{augment, draw_augmentation, preprocess_faces, resize_bilinear, FaceClip, FACE_SIZE, MAX_ROTATION_DEG};
pub use mfcc::{
    hann, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, num_mfcc_frames, MfccSequence, FRAME_LEN, HOP, LOG_FLOOR,
    N_FFT, N_MELS, N_MFCC,
};

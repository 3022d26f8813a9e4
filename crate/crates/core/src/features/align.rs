use adenet_tensor::Tensor;

use super::faces::FaceClip;
use super::mfcc::MfccSequence;
use crate::error::{Error, Result};

/// MFCC frames per video frame (100 Hz over 25 fps).
pub const MFCC_PER_VIDEO: usize = 4;

/// Brings the streams to `T_mfcc == 4·T_v`. The video is cut to the
/// shorter of its own length and `ceil(T_mfcc/4)`; the MFCC is then cut
/// or edge-padded (at most 4 rows) to match.
pub fn align_streams(mfcc: &MfccSequence, faces: &FaceClip) -> Result<(MfccSequence, FaceClip)> {
    let tm = mfcc.num_frames();
    let tv = faces.num_frames();
    let tv_audio = tm.div_ceil(MFCC_PER_VIDEO);
    if tv.abs_diff(tv_audio) > 1 {
        return Err(Error::Alignment(format!(
            "{tm} mfcc frames cover {tv_audio} video frames, clip has {tv}"
        )));
    }
    let tv_out = tv.min(tv_audio);
    let want = MFCC_PER_VIDEO * tv_out;
    let coeffs = mfcc.coeffs();
    let coeffs = if tm >= want {
        coeffs.narrow(0, 0, want)
    } else {
        let short = want - tm;
        if short > MFCC_PER_VIDEO {
            return Err(Error::Alignment(format!("mfcc short by {short} frames")));
        }
        let last = coeffs.narrow(0, tm - 1, 1);
        let pad: Vec<&Tensor> = std::iter::once(coeffs).chain(std::iter::repeat_n(&last, short)).collect();
        Tensor::concat(&pad, 0)
    };
    Ok((MfccSequence::new(coeffs)?, faces.truncate(tv_out)))
}

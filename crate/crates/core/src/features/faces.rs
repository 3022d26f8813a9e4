use adenet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const FACE_SIZE: usize = 112;
pub const MAX_ROTATION_DEG: f64 = 15.0;

/// `T_v × 112 × 112` grayscale frames with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FaceClip {
    frames: Tensor,
}

impl FaceClip {
    pub fn new(frames: Tensor) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 3 || s[1] != FACE_SIZE || s[2] != FACE_SIZE {
            return Err(Error::Shape(format!("face clip must be T × {FACE_SIZE} × {FACE_SIZE}, got {s:?}")));
        }
        if s[0] == 0 {
            return Err(Error::Length("empty face clip".into()));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("face pixel {v} outside [0, 1]")));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim(0)
    }

    /// The first `n` frames.
    pub fn truncate(&self, n: usize) -> FaceClip {
        FaceClip {
            frames: self.frames.narrow(0, 0, n),
        }
    }
}

/// Bilinear sample of one plane at continuous pixel coordinates,
/// clamping to the edge.
fn sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bot * ty
}

/// Half-pixel bilinear resize of `(T, H, W)` frames.
pub fn resize_bilinear(raw: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (t, h, w) = (raw.dim(0), raw.dim(1), raw.dim(2));
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let mut out = Vec::with_capacity(t * oh * ow);
    for f in 0..t {
        let plane = &raw.data()[f * h * w..(f + 1) * h * w];
        for r in 0..oh {
            for c in 0..ow {
                let y = (r as f64 + 0.5) * sy - 0.5;
                let x = (c as f64 + 0.5) * sx - 0.5;
                out.push(sample(plane, h, w, y, x));
            }
        }
    }
    Tensor::new(&[t, oh, ow], out)
}

/// Rotates every frame by `angle_deg` about the centre, then mirrors
/// columns when `flip`. Angle 0 leaves pixels untouched.
pub fn augment(frames: &Tensor, flip: bool, angle_deg: f64) -> Tensor {
    let (t, h, w) = (frames.dim(0), frames.dim(1), frames.dim(2));
    let mut out = frames.clone();
    if angle_deg != 0.0 {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        for f in 0..t {
            let plane = &frames.data()[f * h * w..(f + 1) * h * w];
            let dst = &mut out.data_mut()[f * h * w..(f + 1) * h * w];
            for r in 0..h {
                for col in 0..w {
                    let (dy, dx) = (r as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
                    // Inverse map: rotate the output position by -angle.
                    let sy = c * dy - s * dx + cy - 0.5;
                    let sx = s * dy + c * dx + cx - 0.5;
                    dst[r * w + col] = sample(plane, h, w, sy, sx);
                }
            }
        }
    }
    if flip {
        for row in out.data_mut().chunks_mut(w) {
            row.reverse();
        }
    }
    out
}

/// Per-clip augmentation draw: (flip, angle in degrees).
pub fn draw_augmentation(seed: u64) -> (bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(0.5);
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    (flip, angle)
}

/// Resize to 112×112; in training mode also apply one seeded flip and
/// rotation to the whole clip.
pub fn preprocess_faces(raw: &Tensor, train_mode: bool, seed: u64) -> Result<FaceClip> {
    if raw.ndim() != 3 {
        return Err(Error::Shape(format!("raw frames must be (T, H, W), got {:?}", raw.shape())));
    }
    if raw.dim(0) == 0 || raw.dim(1) == 0 || raw.dim(2) == 0 {
        return Err(Error::Length("empty clip".into()));
    }
    let resized = if raw.dim(1) == FACE_SIZE && raw.dim(2) == FACE_SIZE {
        raw.clone()
    } else {
        resize_bilinear(raw, FACE_SIZE, FACE_SIZE)
    };
    let frames = if train_mode {
        let (flip, angle) = draw_augmentation(seed);
        augment(&resized, flip, angle)
    } else {
        resized
    };
    FaceClip::new(frames.map(|v| v.clamp(0.0, 1.0)))
}

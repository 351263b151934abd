//! Compact observation encodings.

use serde::{Deserialize, Serialize};

use crate::percept::{Observation, PixelPos};

pub const FEATURE_DIM: usize = 8;
/// Eyelet pixels kept by the raw encoding.
pub const RAW_EYELET_PIXELS: usize = 32;
pub const RAW_FEATURE_DIM: usize = 2 + 2 * RAW_EYELET_PIXELS;

/// `[c_col, c_row, com_col, com_row, angle, major, minor, bump]`, each in
/// [−1, 1]. Positions are offsets from the image center over the image
/// size; the angle is over 90°; half extents are over width and height; the
/// bump flag is 1 when the bump is present and −1 otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn bump_present(&self) -> bool {
        self.0[7] > 0.0
    }
}

fn norm(x: f64, dim: usize) -> f64 {
    ((x - 0.5 * (dim as f64 - 1.0)) / dim as f64).clamp(-1.0, 1.0)
}

/// Encodes an observation. Without a bump the previous poke point stands
/// in for `c` (the image center when there is none).
pub fn featurize(obs: &Observation, prev_c: Option<PixelPos>) -> FeatureVector {
    let (w, h) = (obs.width, obs.height);
    let center = PixelPos { row: 0.5 * (h as f64 - 1.0), col: 0.5 * (w as f64 - 1.0) };
    let c = obs.poke_com.or(prev_c).unwrap_or(center);
    let (com, angle, ext) = match obs.eyelet {
        Some(e) => (e.com, e.angle, e.half_extents),
        None => (center, 0.0, (0.0, 0.0)),
    };
    FeatureVector([
        norm(c.col, w),
        norm(c.row, h),
        norm(com.col, w),
        norm(com.row, h),
        (angle / 90.0).clamp(-1.0, 1.0),
        (ext.0 / w as f64).clamp(-1.0, 1.0),
        (ext.1 / h as f64).clamp(-1.0, 1.0),
        if obs.poke_com.is_some() { 1.0 } else { -1.0 },
    ])
}

/// Poke point followed by an evenly strided subset of the eyelet samples,
/// normalized like [`featurize`]. Missing samples are zero.
pub fn featurize_raw(obs: &Observation, prev_c: Option<PixelPos>) -> Vec<f64> {
    let f = featurize(obs, prev_c);
    let mut out = vec![f.0[0], f.0[1]];
    let n = obs.eyelet_pixels.len();
    for k in 0..RAW_EYELET_PIXELS {
        if n == 0 {
            out.extend([0.0, 0.0]);
        } else {
            let (r, c) = obs.eyelet_pixels[k * n / RAW_EYELET_PIXELS];
            out.extend([norm(c as f64, obs.width), norm(r as f64, obs.height)]);
        }
    }
    out
}

use rand::RngExt;

use crate::error::{Error, Result};
use crate::visual_net::FPS;

/// Frames in a one-second training crop.
pub const CROP_FRAMES: usize = FPS;

/// Number of frame-aligned one-second offsets in a clip.
pub fn crop_positions(frame_count: usize) -> Result<usize> {
    if frame_count < CROP_FRAMES {
        return Err(Error::Config(format!(
            "clip of {frame_count} frames is shorter than a {CROP_FRAMES}-frame crop"
        )));
    }
    Ok(frame_count - CROP_FRAMES + 1)
}

/// Uniform start frame of a one-second crop on the 0.2 s grid. Audio and
/// frames are both cut at this offset, so the two windows cover the same
/// interval.
pub fn random_crop_start(frame_count: usize, rng: &mut impl rand::Rng) -> Result<usize> {
    Ok(rng.random_range(0..crop_positions(frame_count)?))
}

/// Start frame of the crop centered in the clip (rounded down).
pub fn center_crop_start(frame_count: usize) -> Result<usize> {
    Ok((crop_positions(frame_count)? - 1) / 2)
}

use rand::Rng;

use crate::drift::{SampleSet, SetRole};
use crate::tensor::{PatchWindow, Tape, Var};

use super::{PatchScope, Result, TrainerError};

/// Uniform random integer crop offsets. With [`PatchScope::PerImage`], `count` windows are
/// drawn for every image in the batch (image-major order); with [`PatchScope::PerBatch`],
/// `count` windows are drawn in total, each from a uniformly chosen image.
pub fn sample_windows<R: Rng>(
    batch: usize,
    height: usize,
    width: usize,
    count: usize,
    size: usize,
    scope: PatchScope,
    rng: &mut R,
) -> Result<Vec<PatchWindow>> {
    if size == 0 || size > height || size > width {
        return Err(TrainerError::PatchTooLarge { size, height, width });
    }
    if batch == 0 {
        return Ok(Vec::new());
    }
    let mut windows = Vec::with_capacity(count * if scope == PatchScope::PerImage { batch } else { 1 });
    let mut push = |rng: &mut R, image| {
        windows.push(PatchWindow {
            image,
            y: rng.random_range(0..=height - size),
            x: rng.random_range(0..=width - size),
        })
    };
    match scope {
        PatchScope::PerImage => {
            for i in 0..batch {
                for _ in 0..count {
                    push(rng, i);
                }
            }
        }
        PatchScope::PerBatch => {
            for _ in 0..count {
                let i = rng.random_range(0..batch);
                push(rng, i);
            }
        }
    }
    Ok(windows)
}

/// Crops recorded on the tape, so gradients flow back into the source images.
#[derive(Clone, Debug)]
pub struct Patches {
    pub var: Var,
    pub windows: Vec<PatchWindow>,
}

/// Samples windows and records the crop of `images` (`[B, C, H, W]`) as `[P, C, size, size]`.
pub fn sample_patches<R: Rng>(
    tape: &mut Tape,
    images: Var,
    count: usize,
    size: usize,
    scope: PatchScope,
    rng: &mut R,
) -> Result<Patches> {
    let (b, _, h, w) = tape
        .value(images)
        .dims4()
        .ok_or_else(|| TrainerError::Config(format!("expected [B, C, H, W], got {:?}", tape.value(images).shape())))?;
    let windows = sample_windows(b, h, w, count, size, scope, rng)?;
    let var = tape.crop_patches(images, &windows, size)?;
    Ok(Patches { var, windows })
}

/// The current values of a `[P, ...]` tape node as a sample set of `P` flat points.
pub fn patch_set(tape: &Tape, patches: Var, role: SetRole) -> Result<SampleSet> {
    let t = tape.value(patches);
    let p = t.shape().first().copied().unwrap_or(0);
    let dim = t.numel().checked_div(p).unwrap_or(0);
    Ok(SampleSet::from_flat(role, dim, t.data().to_vec())?)
}

//! Training-time augmentation: horizontal flips and small non-extended
//! rotations (canvas size unchanged, out-of-frame content cropped).
//!
//! Flips mirror image and targets directly. Rotation resamples the image
//! bilinearly and the region mask by nearest neighbor, fills out-of-canvas
//! pixels with 0, and re-derives edge and distance maps from the rotated
//! region. Cached decompositions are dropped; the pipeline recomputes them
//! from the augmented image since the transform does not commute with the
//! spectrum split.

use crate::error::Result;
use crate::rng;
use crate::targets::MultiTaskTargets;
use crate::tensor::Tensor;
use crate::train::Sample;
use rand_core::RngCore;

#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip.
    pub hflip_prob: f64,
    /// Rotation angle drawn uniformly from `[-rot_deg, rot_deg]` degrees.
    pub rot_deg: f64,
}

fn hflip_tensor(t: &Tensor) -> Tensor {
    let (_, _, _, w) = t.dims();
    Tensor::from_fn(*t.shape(), |n, c, y, x| t.at(n, c, y, w - 1 - x))
}

/// Mirror a sample left-right, targets included.
pub fn hflip_sample(s: &Sample) -> Sample {
    Sample {
        image: hflip_tensor(&s.image),
        targets: MultiTaskTargets {
            region: hflip_tensor(&s.targets.region),
            edge: hflip_tensor(&s.targets.edge),
            distance: hflip_tensor(&s.targets.distance),
        },
        decomposition: None,
    }
}

/// Rotate a sample about the image center by `degrees`, keeping the canvas
/// size. Edge and distance maps are recomputed from the rotated region.
pub fn rotate_sample(s: &Sample, degrees: f64) -> Result<Sample> {
    if degrees == 0.0 {
        return Ok(s.clone());
    }
    let (_, channels, h, w) = s.image.dims();
    let theta = degrees.to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    // Inverse mapping: destination pixel samples the source at the
    // back-rotated position.
    let src = |y: usize, x: usize| -> (f64, f64) {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        (cy + (-sin_t * dx + cos_t * dy), cx + (cos_t * dx + sin_t * dy))
    };

    let mut image = Tensor::zeros(*s.image.shape());
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (ty, tx) = (sy - y0, sx - x0);
                let mut acc = 0.0;
                for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                    for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                        let (yy, xx) = (y0 + dy, x0 + dx);
                        if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                            acc += wy * wx * s.image.at(0, c, yy as usize, xx as usize);
                        }
                    }
                }
                image.set(0, c, y, x, acc);
            }
        }
    }

    let mut region = Tensor::zeros(*s.targets.region.shape());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            let (ry, rx) = (sy.round(), sx.round());
            if ry >= 0.0 && ry < h as f64 && rx >= 0.0 && rx < w as f64 {
                region.set(0, 0, y, x, s.targets.region.at(0, 0, ry as usize, rx as usize));
            }
        }
    }

    Ok(Sample {
        image,
        targets: MultiTaskTargets::from_region(region)?,
        decomposition: None,
    })
}

/// Draw flip and rotation from `rng` and apply them.
pub fn augment(s: &Sample, cfg: &AugmentConfig, rng: &mut impl RngCore) -> Result<Sample> {
    let u_flip = rng::uniform(rng);
    let angle = rng::uniform_in(rng, -cfg.rot_deg, cfg.rot_deg);
    let flipped = if u_flip < cfg.hflip_prob { hflip_sample(s) } else { s.clone() };
    if cfg.rot_deg > 0.0 {
        rotate_sample(&flipped, angle)
    } else {
        Ok(flipped)
    }
}

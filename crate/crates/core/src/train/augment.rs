//! Light train-time augmentation: per-image horizontal flip and
//! reflect-pad-4 random crop back to the original size.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const CROP_PAD: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub crop_pad: bool,
}

impl AugmentFlags {
    pub fn none() -> AugmentFlags {
        AugmentFlags::default()
    }

    pub fn all() -> AugmentFlags {
        AugmentFlags {
            hflip: true,
            crop_pad: true,
        }
    }
}

/// Mirror one image (`c * h * w`, row-major) left-right, in place.
pub fn hflip_image<T: Scalar>(img: &mut [T], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for row in 0..h {
            let base = (ch * h + row) * w;
            img[base..base + w].reverse();
        }
    }
}

/// Reflect-pad by [`CROP_PAD`] then copy the crop window at `(oy, ox)`.
fn crop_reflect<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, oy: usize, ox: usize) -> Vec<T> {
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };
    let mut out = vec![T::zero(); img.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = reflect(y as isize + oy as isize - CROP_PAD as isize, h);
            for x in 0..w {
                let sx = reflect(x as isize + ox as isize - CROP_PAD as isize, w);
                out[(ch * h + y) * w + x] = img[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Apply the enabled transforms per image; identity when all flags are off.
pub fn augment_batch<T: Scalar>(
    x: &Tensor<T>,
    flags: AugmentFlags,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if !flags.hflip && !flags.crop_pad {
        return Ok(x.clone());
    }
    let shape = x.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let per = c * h * w;
    let mut data = x.data().to_vec();
    for i in 0..n {
        let img = &mut data[i * per..(i + 1) * per];
        if flags.hflip && rng.coin() {
            hflip_image(img, c, h, w);
        }
        if flags.crop_pad {
            let oy = rng.below(2 * CROP_PAD + 1);
            let ox = rng.below(2 * CROP_PAD + 1);
            let cropped = crop_reflect(img, c, h, w, oy, ox);
            img.copy_from_slice(&cropped);
        }
    }
    Tensor::from_vec(shape, data)
}

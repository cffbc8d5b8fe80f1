//! The eight flip/rotation augmentations: horizontal flip composed with a
//! quarter-turn rotation. All transforms are exact pixel permutations, no
//! interpolation. 90/270 degree rotations require square spatial dims.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    fn inverse(self) -> Self {
        match self {
            Rotation::R0 => Rotation::R0,
            Rotation::R90 => Rotation::R270,
            Rotation::R180 => Rotation::R180,
            Rotation::R270 => Rotation::R90,
        }
    }
}

/// One of the eight augmentations: optional horizontal flip applied first,
/// then a counter-clockwise rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    pub rotation: Rotation,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: false,
        rotation: Rotation::R0,
    };

    /// The full group, flips varying fastest.
    pub fn all() -> [Augmentation; 8] {
        let rotations = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];
        let mut out = [Augmentation::IDENTITY; 8];
        for (i, &rotation) in rotations.iter().enumerate() {
            out[2 * i] = Augmentation {
                flip: false,
                rotation,
            };
            out[2 * i + 1] = Augmentation {
                flip: true,
                rotation,
            };
        }
        out
    }

    /// The transform that undoes this one. Flipped transforms are
    /// reflections, hence involutions; pure rotations invert as usual.
    pub fn inverse(self) -> Self {
        if self.flip {
            self
        } else {
            Augmentation {
                flip: false,
                rotation: self.rotation.inverse(),
            }
        }
    }
}

/// Apply an augmentation to an `H x W` or `C x H x W` tensor (channels are
/// transformed independently and the channel axis is untouched).
pub fn augment(img: &Tensor, a: Augmentation) -> Result<Tensor> {
    let (channels, height, width) = match img.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                expected: "HxW or CxHxW tensor".into(),
                actual: format!("{other:?}"),
            })
        }
    };
    if matches!(a.rotation, Rotation::R90 | Rotation::R270) && height != width {
        return Err(Error::NonSquareRotation {
            h: height,
            w: width,
        });
    }
    let (out_h, out_w) = match a.rotation {
        Rotation::R0 | Rotation::R180 => (height, width),
        Rotation::R90 | Rotation::R270 => (width, height),
    };
    let src = img.data();
    let mut data = vec![0.0f32; src.len()];
    for c in 0..channels {
        let in_base = c * height * width;
        let out_base = c * out_h * out_w;
        for y in 0..height {
            for x in 0..width {
                let sx = if a.flip { width - 1 - x } else { x };
                let v = src[in_base + y * width + sx];
                // counter-clockwise rotation of the (possibly flipped) image
                let (oy, ox) = match a.rotation {
                    Rotation::R0 => (y, x),
                    Rotation::R90 => (width - 1 - x, y),
                    Rotation::R180 => (height - 1 - y, width - 1 - x),
                    Rotation::R270 => (x, height - 1 - y),
                };
                data[out_base + oy * out_w + ox] = v;
            }
        }
    }
    let mut shape = img.shape().to_vec();
    let rank = shape.len();
    shape[rank - 2] = out_h;
    shape[rank - 1] = out_w;
    Tensor::new(shape, data)
}

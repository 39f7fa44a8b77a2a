//! Geometric dataset augmentation: quarter-turn rotations, flips, and crop
//! extraction, applied identically to an image and its label mask.

use super::{ImageRGB, PreprocessError};
use crate::mask::LabeledMask;

/// Quarter-turn rotation, clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuarterTurn {
    R0,
    R90,
    R180,
    R270,
}

/// Mirror state applied after the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipState {
    None,
    Horizontal,
    Vertical,
}

/// One geometric transform: rotate, then flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub rotation: QuarterTurn,
    pub flip: FlipState,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotation: QuarterTurn::R0,
        flip: FlipState::None,
    };

    /// Output dimensions for a `w x h` input.
    fn output_dims(&self, w: usize, h: usize) -> (usize, usize) {
        match self.rotation {
            QuarterTurn::R0 | QuarterTurn::R180 => (w, h),
            QuarterTurn::R90 | QuarterTurn::R270 => (h, w),
        }
    }

    /// Source pixel for destination `(x, y)` in the transformed image.
    fn source(&self, x: usize, y: usize, src_w: usize, src_h: usize) -> (usize, usize) {
        let (out_w, out_h) = self.output_dims(src_w, src_h);
        // Undo the flip on the output grid first, then the rotation.
        let (x, y) = match self.flip {
            FlipState::None => (x, y),
            FlipState::Horizontal => (out_w - 1 - x, y),
            FlipState::Vertical => (x, out_h - 1 - y),
        };
        match self.rotation {
            QuarterTurn::R0 => (x, y),
            // Clockwise: source top row becomes destination right column.
            QuarterTurn::R90 => (y, src_h - 1 - x),
            QuarterTurn::R180 => (src_w - 1 - x, src_h - 1 - y),
            QuarterTurn::R270 => (src_w - 1 - y, x),
        }
    }
}

/// Which crops to extract from each transformed image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropScheme {
    /// One full-size crop (no cropping).
    Full,
    /// The four half-size corner quadrants.
    Quadrants,
}

impl CropScheme {
    pub fn count(&self) -> usize {
        match self {
            CropScheme::Full => 1,
            CropScheme::Quadrants => 4,
        }
    }

    /// Crop rectangles `(x, y, w, h)` for an image of the given size.
    pub(crate) fn rects(&self, w: usize, h: usize) -> Result<Vec<(usize, usize, usize, usize)>, PreprocessError> {
        match self {
            CropScheme::Full => Ok(vec![(0, 0, w, h)]),
            CropScheme::Quadrants => {
                let (cw, ch) = (w / 2, h / 2);
                if cw == 0 || ch == 0 {
                    return Err(PreprocessError::CropTooLarge {
                        crop_w: cw.max(1),
                        crop_h: ch.max(1),
                        width: w,
                        height: h,
                    });
                }
                Ok(vec![
                    (0, 0, cw, ch),
                    (w - cw, 0, cw, ch),
                    (0, h - ch, cw, ch),
                    (w - cw, h - ch, cw, ch),
                ])
            }
        }
    }
}

/// The set of transforms and crops applied to every training pair.
#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub transforms: Vec<Transform>,
    pub crops: CropScheme,
}

impl AugmentSpec {
    /// Identity transform, full-size crop: one unchanged pair per input.
    pub fn identity() -> AugmentSpec {
        AugmentSpec {
            transforms: vec![Transform::IDENTITY],
            crops: CropScheme::Full,
        }
    }

    /// All four rotations times three flip states, with quadrant crops:
    /// 48 pairs per input image.
    pub fn rotations_flips_quadrants() -> AugmentSpec {
        let mut transforms = Vec::with_capacity(12);
        for rotation in [
            QuarterTurn::R0,
            QuarterTurn::R90,
            QuarterTurn::R180,
            QuarterTurn::R270,
        ] {
            for flip in [FlipState::None, FlipState::Horizontal, FlipState::Vertical] {
                transforms.push(Transform { rotation, flip });
            }
        }
        AugmentSpec {
            transforms,
            crops: CropScheme::Quadrants,
        }
    }

    /// Number of output pairs per input pair.
    pub fn expansion_factor(&self) -> usize {
        self.transforms.len() * self.crops.count()
    }
}

impl Default for AugmentSpec {
    fn default() -> AugmentSpec {
        AugmentSpec::rotations_flips_quadrants()
    }
}

impl Transform {
    /// Dimensions of the transformed image for a `w x h` input.
    pub fn output_size(&self, w: usize, h: usize) -> (usize, usize) {
        self.output_dims(w, h)
    }

    pub fn apply_to_image(&self, img: &ImageRGB) -> ImageRGB {
        let (ow, oh) = self.output_dims(img.width, img.height);
        let mut out = ImageRGB::new(ow, oh);
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = self.source(x, y, img.width, img.height);
                out.set(x, y, img.get(sx, sy));
            }
        }
        out
    }

    pub fn apply_to_mask(&self, mask: &LabeledMask) -> LabeledMask {
        let (ow, oh) = self.output_dims(mask.width, mask.height);
        let mut out = LabeledMask::new(ow, oh);
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = self.source(x, y, mask.width, mask.height);
                out.set(x, y, mask.get(sx, sy));
            }
        }
        out
    }
}

fn transform_image(img: &ImageRGB, t: &Transform) -> ImageRGB {
    t.apply_to_image(img)
}

fn transform_mask(mask: &LabeledMask, t: &Transform) -> LabeledMask {
    t.apply_to_mask(mask)
}

pub(crate) fn crop_image(img: &ImageRGB, (x0, y0, w, h): (usize, usize, usize, usize)) -> ImageRGB {
    let mut out = ImageRGB::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x0 + x, y0 + y));
        }
    }
    out
}

pub(crate) fn crop_mask(mask: &LabeledMask, (x0, y0, w, h): (usize, usize, usize, usize)) -> LabeledMask {
    let mut out = LabeledMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, mask.get(x0 + x, y0 + y));
        }
    }
    out
}

/// Applies every enabled transform to both image and mask identically, then
/// extracts the configured crops from each transformed pair. Output length is
/// exactly [`AugmentSpec::expansion_factor`].
pub fn augment(
    image: &ImageRGB,
    mask: &LabeledMask,
    spec: &AugmentSpec,
) -> Result<Vec<(ImageRGB, LabeledMask)>, PreprocessError> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(PreprocessError::DimensionMismatch {
            image_w: image.width,
            image_h: image.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    let mut out = Vec::with_capacity(spec.expansion_factor());
    for t in &spec.transforms {
        let timg = transform_image(image, t);
        let tmask = transform_mask(mask, t);
        for rect in spec.crops.rects(timg.width, timg.height)? {
            out.push((crop_image(&timg, rect), crop_mask(&tmask, rect)));
        }
    }
    Ok(out)
}

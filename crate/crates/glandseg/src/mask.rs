//! Pixel-grid mask types shared across the pipeline: binary masks, labeled
//! object maps, and per-pixel gland probabilities.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("label {0} exceeds the 16-bit PNG range")]
    LabelOverflow(u32),
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
}

/// Per-pixel boolean foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> BinaryMask {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// True iff every foreground pixel of `self` is foreground in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.data
            .iter()
            .zip(other.data.iter())
            .all(|(a, b)| !*a || *b)
    }

    /// 1.0 / 0.0 probability view, for the oracle evaluation path.
    pub fn to_probability(&self) -> ProbabilityMap {
        ProbabilityMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Per-pixel non-negative object IDs; 0 is background. Masks produced by
/// connected-component labeling use exactly the labels `1..=K` with no gaps
/// and each label's pixel set connected; masks loaded from external
/// annotation files are compacted to gapless labels but may contain
/// disconnected objects if the source data does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    pub width: usize,
    pub height: usize,
    data: Vec<u32>,
}

impl LabeledMask {
    pub fn new(width: usize, height: usize) -> LabeledMask {
        LabeledMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u32>) -> LabeledMask {
        assert_eq!(data.len(), width * height);
        LabeledMask {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.data[y * self.width + x] = v;
    }

    pub fn labels(&self) -> &[u32] {
        &self.data
    }

    /// Largest label present (== number of objects for compact masks).
    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Remaps labels to `1..=K` in row-major first-encounter order.
    pub fn compact(&self) -> LabeledMask {
        let mut remap = std::collections::HashMap::new();
        let mut next = 1u32;
        let data = self
            .data
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *remap.entry(l).or_insert_with(|| {
                        let v = next;
                        next += 1;
                        v
                    })
                }
            })
            .collect();
        LabeledMask {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn to_binary(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&l| l > 0).collect(),
        }
    }

    /// Writes the mask as a 16-bit single-channel PNG (pixel value = label).
    pub fn save_png(&self, path: &Path) -> Result<(), MaskError> {
        if let Some(&bad) = self.data.iter().find(|&&l| l > u16::MAX as u32) {
            return Err(MaskError::LabelOverflow(bad));
        }
        let buf: Vec<u16> = self.data.iter().map(|&l| l as u16).collect();
        let img =
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, buf)
                .expect("buffer size matches dimensions");
        image::DynamicImage::ImageLuma16(img)
            .save(path)
            .map_err(|source| MaskError::Write {
                path: path.display().to_string(),
                source,
            })
    }

    /// Reads a label map from a single-channel PNG/BMP (8- or 16-bit).
    pub fn load(path: &Path) -> Result<LabeledMask, MaskError> {
        let img = image::open(path).map_err(|source| MaskError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let gray = img.into_luma16();
        let (w, h) = gray.dimensions();
        let data = gray.pixels().map(|p| p.0[0] as u32).collect();
        Ok(LabeledMask {
            width: w as usize,
            height: h as usize,
            data,
        })
    }
}

/// Per-pixel gland probability in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> ProbabilityMap {
        assert_eq!(data.len(), width * height);
        ProbabilityMap {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_renumbers_in_first_encounter_order() {
        let m = LabeledMask::from_raw(3, 1, vec![7, 0, 3]);
        let c = m.compact();
        assert_eq!(c.labels(), &[1, 0, 2]);
    }

    #[test]
    fn png_roundtrip_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let m = LabeledMask::from_raw(2, 2, vec![0, 1, 300, 2]);
        m.save_png(&path).unwrap();
        let back = LabeledMask::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn png_rejects_labels_beyond_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabeledMask::from_raw(1, 1, vec![70000]);
        assert!(matches!(
            m.save_png(&dir.path().join("bad.png")),
            Err(MaskError::LabelOverflow(70000))
        ));
    }
}

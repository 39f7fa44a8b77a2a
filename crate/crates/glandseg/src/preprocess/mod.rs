//! Image preprocessing: optical-density conversion, H&E stain deconvolution
//! into per-stain concentration maps, Gaussian blur / unsharp masking, and
//! resizing. Geometric augmentation lives in [`augment`].
//!
//! Stain separation follows the Beer-Lambert model: per-pixel optical
//! densities are linear combinations of unit stain direction vectors, so a
//! 3x3 matrix inverse recovers the per-stain concentrations. Gland boundaries
//! are far more visible in the hematoxylin concentration plane than in the
//! raw RGB image, which is why the pipeline feeds that plane to the network.

mod augment;

pub use augment::{augment, AugmentSpec, CropScheme, FlipState, QuarterTurn, Transform};
pub(crate) use augment::{crop_image, crop_mask};

use std::path::Path;

use crate::mask::LabeledMask;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("stain matrix is singular or nearly singular (|det| = {det:.3e})")]
    SingularStainMatrix { det: f64 },
    #[error("crop {crop_w}x{crop_h} does not fit in a {width}x{height} image")]
    CropTooLarge {
        crop_w: usize,
        crop_h: usize,
        width: usize,
        height: usize,
    },
    #[error("image and mask dimensions differ: {image_w}x{image_h} vs {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
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

// ── Image types ──────────────────────────────────────────────────────

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize) -> ImageRGB {
        ImageRGB {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> ImageRGB {
        assert_eq!(data.len(), width * height * 3);
        ImageRGB {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Reads a PNG or BMP file, converting to RGB.
    pub fn load(path: &Path) -> Result<ImageRGB, PreprocessError> {
        let img = image::open(path)
            .map_err(|source| PreprocessError::Read {
                path: path.display().to_string(),
                source,
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Ok(ImageRGB {
            width: w as usize,
            height: h as usize,
            data: img.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PreprocessError> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| PreprocessError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Single-channel float image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> GrayImage {
        assert_eq!(data.len(), width * height);
        GrayImage {
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

    /// Writes the image as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), PreprocessError> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| PreprocessError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Per-pixel optical densities, one 3-vector per pixel.
#[derive(Debug, Clone)]
pub struct OdImage {
    pub width: usize,
    pub height: usize,
    data: Vec<[f32; 3]>,
}

impl OdImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    pub fn vectors(&self) -> &[[f32; 3]] {
        &self.data
    }
}

// ── Stain deconvolution ──────────────────────────────────────────────

/// Default hematoxylin OD direction (Ruifrok-Johnston), before normalization.
pub const DEFAULT_HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
/// Default eosin OD direction (Ruifrok-Johnston), before normalization.
pub const DEFAULT_EOSIN: [f64; 3] = [0.072, 0.990, 0.105];

/// Unit-normalized stain OD directions (hematoxylin, eosin, residual) with a
/// precomputed inverse. The residual direction is the normalized cross
/// product of the first two.
#[derive(Debug, Clone)]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    inv: [[f64; 3]; 3],
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl StainMatrix {
    /// Builds the matrix from hematoxylin and eosin OD directions; the
    /// residual row is their normalized cross product.
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<StainMatrix, PreprocessError> {
        let h = normalize3(hematoxylin);
        let e = normalize3(eosin);
        let c = cross3(h, e);
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if norm < 1e-6 {
            return Err(PreprocessError::SingularStainMatrix { det: norm });
        }
        StainMatrix::from_rows([h, e, normalize3(c)])
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<StainMatrix, PreprocessError> {
        let rows = [
            normalize3(rows[0]),
            normalize3(rows[1]),
            normalize3(rows[2]),
        ];
        let m = &rows;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if !det.is_finite() || det.abs() < 1e-6 {
            return Err(PreprocessError::SingularStainMatrix { det });
        }
        // Adjugate over determinant. Note: concentrations c solve od = M^T c
        // (od is a linear combination of the stain ROWS), i.e. c = (M^T)^-1 od.
        let inv_det = 1.0 / det;
        let mut inv = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = ((i + 1) % 3, (i + 2) % 3);
                let (c, d) = ((j + 1) % 3, (j + 2) % 3);
                // inv[j][i] = cofactor(i, j) / det (transposed adjugate).
                inv[j][i] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) * inv_det;
            }
        }
        Ok(StainMatrix { rows, inv })
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Concentrations of the three stains for one OD vector.
    pub fn deconvolve_vec(&self, od: [f64; 3]) -> [f64; 3] {
        // od = M^T c  =>  c = (M^-1)^T od; self.inv is M^-1.
        let mut c = [0.0f64; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            for (j, odj) in od.iter().enumerate() {
                *ci += self.inv[j][i] * odj;
            }
        }
        c
    }

    /// Rebuilds an OD vector from stain concentrations.
    pub fn recompose_vec(&self, conc: [f64; 3]) -> [f64; 3] {
        let mut od = [0.0f64; 3];
        for (j, odj) in od.iter_mut().enumerate() {
            for (i, ci) in conc.iter().enumerate() {
                *odj += self.rows[i][j] * ci;
            }
        }
        od
    }
}

impl Default for StainMatrix {
    fn default() -> StainMatrix {
        StainMatrix::new(DEFAULT_HEMATOXYLIN, DEFAULT_EOSIN).expect("default stains are independent")
    }
}

/// Per-pixel stain concentration planes. Raw values are kept (they may be
/// negative where the pixel color lies outside the stain span); accessors
/// clamp to zero.
#[derive(Debug, Clone)]
pub struct StainMaps {
    pub width: usize,
    pub height: usize,
    hematoxylin: Vec<f32>,
    eosin: Vec<f32>,
    residual: Vec<f32>,
}

impl StainMaps {
    pub fn hematoxylin_raw(&self) -> &[f32] {
        &self.hematoxylin
    }

    pub fn eosin_raw(&self) -> &[f32] {
        &self.eosin
    }

    pub fn residual_raw(&self) -> &[f32] {
        &self.residual
    }

    /// Hematoxylin plane with negative concentrations clamped to zero.
    pub fn hematoxylin_clamped(&self) -> Vec<f32> {
        self.hematoxylin.iter().map(|v| v.max(0.0)).collect()
    }

    pub fn eosin_clamped(&self) -> Vec<f32> {
        self.eosin.iter().map(|v| v.max(0.0)).collect()
    }
}

/// Converts 8-bit RGB to optical density: `od = -ln(max(v, 1) / 255)` per
/// channel. Black pixels are floored at intensity 1 so the OD stays finite.
pub fn rgb_to_od(image: &ImageRGB) -> OdImage {
    // 256-entry lookup: OD is a per-intensity constant.
    let mut lut = [0.0f32; 256];
    for (v, entry) in lut.iter_mut().enumerate() {
        *entry = -((v.max(1) as f64 / 255.0).ln()) as f32;
    }
    let data = (0..image.width * image.height)
        .map(|i| {
            let b = &image.bytes()[i * 3..i * 3 + 3];
            [lut[b[0] as usize], lut[b[1] as usize], lut[b[2] as usize]]
        })
        .collect();
    OdImage {
        width: image.width,
        height: image.height,
        data,
    }
}

/// Projects every OD vector onto the stain basis, yielding one concentration
/// plane per stain.
pub fn stain_deconvolve(od: &OdImage, matrix: &StainMatrix) -> StainMaps {
    let n = od.width * od.height;
    let mut hematoxylin = Vec::with_capacity(n);
    let mut eosin = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(n);
    for v in od.vectors() {
        let c = matrix.deconvolve_vec([v[0] as f64, v[1] as f64, v[2] as f64]);
        hematoxylin.push(c[0] as f32);
        eosin.push(c[1] as f32);
        residual.push(c[2] as f32);
    }
    StainMaps {
        width: od.width,
        height: od.height,
        hematoxylin,
        eosin,
        residual,
    }
}

/// Extracts the hematoxylin plane, clamped to non-negative and min-max
/// normalized to `[0, 1]` per image. A constant plane maps to all zeros.
pub fn hematoxylin_channel(maps: &StainMaps) -> GrayImage {
    let plane = maps.hematoxylin_clamped();
    GrayImage::from_raw(maps.width, maps.height, min_max_normalize(plane))
}

fn min_max_normalize(mut plane: Vec<f32>) -> Vec<f32> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        plane.fill(0.0);
        return plane;
    }
    let inv = 1.0 / (hi - lo);
    for v in plane.iter_mut() {
        *v = ((*v - lo) * inv).clamp(0.0, 1.0);
    }
    plane
}

/// Full RGB-to-hematoxylin extraction in one call.
pub fn extract_hematoxylin(image: &ImageRGB, matrix: &StainMatrix) -> GrayImage {
    hematoxylin_channel(&stain_deconvolve(&rgb_to_od(image), matrix))
}

// ── Blur, unsharp masking ────────────────────────────────────────────

/// Half-sample symmetric reflection of an out-of-range index.
#[inline]
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    assert!(sigma > 0.0, "gaussian_blur: sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with reflected borders. Kernel radius is
/// `ceil(3 * sigma)`; the kernel is normalized to sum 1.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> GrayImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let src = img.values();

    // Horizontal pass.
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - radius, w);
                acc += kv * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - radius, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::from_raw(w, h, out)
}

/// Edge enhancement: `clamp(img + amount * (img - blur(img, sigma)), 0, 1)`.
pub fn unsharp_mask(img: &GrayImage, sigma: f32, amount: f32) -> GrayImage {
    assert!(amount >= 0.0, "unsharp_mask: amount must be non-negative");
    let blurred = gaussian_blur(img, sigma);
    let data = img
        .values()
        .iter()
        .zip(blurred.values())
        .map(|(v, b)| (v + amount * (v - b)).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_raw(img.width, img.height, data)
}

// ── Resizing ─────────────────────────────────────────────────────────

/// Corner-aligned source coordinate for a destination index.
#[inline]
fn src_coord(dst: usize, src_len: usize, dst_len: usize) -> f32 {
    if dst_len <= 1 {
        0.0
    } else {
        dst as f32 * (src_len - 1) as f32 / (dst_len - 1) as f32
    }
}

/// Bilinear resize of a float plane with corner-aligned sampling.
pub(crate) fn resize_plane_bilinear(
    src: &[f32],
    w: usize,
    h: usize,
    tw: usize,
    th: usize,
) -> Vec<f32> {
    assert!(tw >= 1 && th >= 1, "resize: target dims must be >= 1");
    if (tw, th) == (w, h) {
        return src.to_vec();
    }
    let mut out = vec![0.0f32; tw * th];
    for ty in 0..th {
        let fy = src_coord(ty, h, th);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f32;
        for tx in 0..tw {
            let fx = src_coord(tx, w, tw);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f32;
            let top = src[y0 * w + x0] * (1.0 - dx) + src[y0 * w + x1] * dx;
            let bottom = src[y1 * w + x0] * (1.0 - dx) + src[y1 * w + x1] * dx;
            out[ty * tw + tx] = top * (1.0 - dy) + bottom * dy;
        }
    }
    out
}

/// Bilinear resize of a grayscale image.
pub fn resize_bilinear(img: &GrayImage, target_w: usize, target_h: usize) -> GrayImage {
    GrayImage::from_raw(
        target_w,
        target_h,
        resize_plane_bilinear(img.values(), img.width, img.height, target_w, target_h),
    )
}

/// Bilinear resize of an RGB image, channel by channel.
pub fn resize_rgb_bilinear(img: &ImageRGB, target_w: usize, target_h: usize) -> ImageRGB {
    if (target_w, target_h) == (img.width, img.height) {
        return img.clone();
    }
    let n = img.width * img.height;
    let mut out = ImageRGB::new(target_w, target_h);
    for ch in 0..3 {
        let plane: Vec<f32> = (0..n).map(|i| img.bytes()[i * 3 + ch] as f32).collect();
        let resized = resize_plane_bilinear(&plane, img.width, img.height, target_w, target_h);
        for (i, v) in resized.iter().enumerate() {
            let b = v.round().clamp(0.0, 255.0) as u8;
            let base = i * 3;
            let mut px = [
                out.bytes()[base],
                out.bytes()[base + 1],
                out.bytes()[base + 2],
            ];
            px[ch] = b;
            out.set(i % target_w, i / target_w, px);
        }
    }
    out
}

/// Nearest-neighbor resize for label masks; labels are never blended.
pub fn resize_nearest(mask: &LabeledMask, target_w: usize, target_h: usize) -> LabeledMask {
    assert!(target_w >= 1 && target_h >= 1, "resize: target dims must be >= 1");
    if (target_w, target_h) == (mask.width, mask.height) {
        return mask.clone();
    }
    let mut out = LabeledMask::new(target_w, target_h);
    for ty in 0..target_h {
        let sy = (src_coord(ty, mask.height, target_h) + 0.5).floor() as usize;
        let sy = sy.min(mask.height - 1);
        for tx in 0..target_w {
            let sx = (src_coord(tx, mask.width, target_w) + 0.5).floor() as usize;
            let sx = sx.min(mask.width - 1);
            out.set(tx, ty, mask.get(sx, sy));
        }
    }
    out
}

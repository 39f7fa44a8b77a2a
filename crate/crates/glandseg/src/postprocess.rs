//! Probability-map post-processing: Otsu thresholding, disk morphology, hole
//! filling, small-object removal, and connected-component labeling, composed
//! into one pipeline that turns a network probability map into a clean
//! labeled object map at the original image size.

use crate::mask::{BinaryMask, LabeledMask, ProbabilityMap};
use crate::preprocess::resize_plane_bilinear;

/// Parameters for the post-processing pipeline.
#[derive(Debug, Clone)]
pub struct PostprocessParams {
    /// Disk radius of the structuring element used for opening.
    pub morph_radius: usize,
    /// Connected components smaller than this many pixels are dropped.
    pub min_area: usize,
    /// Object connectivity: 4 or 8.
    pub connectivity: u8,
}

impl Default for PostprocessParams {
    fn default() -> PostprocessParams {
        PostprocessParams {
            morph_radius: 2,
            min_area: 100,
            connectivity: 8,
        }
    }
}

// ── Otsu thresholding ────────────────────────────────────────────────

/// 256-bin histogram over `round(v * 255)`.
pub fn histogram256(map: &ProbabilityMap) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for v in map.values() {
        let bin = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
        hist[bin.min(255)] += 1;
    }
    hist
}

/// Otsu's threshold over a 256-bin histogram: the bin index `t` maximizing
/// the between-class variance of classes `bins <= t` and `bins > t`, ties
/// broken toward the smallest `t`. Returns 255 (empty foreground) when no
/// split separates anything, i.e. the input is constant.
///
/// All sums are integer-exact; the variance expression is evaluated
/// identically for every candidate, so the argmax (including tie-breaks) is
/// deterministic.
pub fn otsu_bin(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 255;
    }
    let total_sum: u64 = hist.iter().enumerate().map(|(i, c)| i as u64 * c).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0u64;
    let mut best_t = 255u8;
    let mut best_var = 0.0f64;
    for t in 0..256usize {
        w0 += hist[t];
        sum0 += t as u64 * hist[t];
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 as f64 / w0 as f64;
        let mu1 = (total_sum - sum0) as f64 / w1 as f64;
        let d = mu0 - mu1;
        let var = w0 as f64 * w1 as f64 * d * d;
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    if best_var == 0.0 {
        // Constant input: no evidence of foreground.
        return 255;
    }
    best_t
}

/// Thresholds a probability map with Otsu's method. Foreground is every pixel
/// whose bin value is strictly greater than the selected threshold bin; the
/// returned float is `bin / 255`. A constant map yields an empty mask.
pub fn otsu_threshold(map: &ProbabilityMap) -> (f32, BinaryMask) {
    let bin = otsu_bin(&histogram256(map));
    let mut mask = BinaryMask::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            let v = (map.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u32;
            mask.set(x, y, v > bin as u32);
        }
    }
    (bin as f32 / 255.0, mask)
}

// ── Morphology ───────────────────────────────────────────────────────

/// Offsets of a disk structuring element: `{(dy, dx) : dy^2 + dx^2 <= r^2}`.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dy, dx));
            }
        }
    }
    offsets
}

/// Erosion by a disk. Out-of-image pixels count as foreground, so the
/// erosion/dilation pair forms a proper adjunction on the image domain
/// (which is what makes opening and closing idempotent and ordered with
/// respect to the input). A border pixel is still eroded whenever an
/// in-image neighbor under the disk is background.
pub fn morph_erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width as isize, mask.height as isize);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        offsets.iter().all(|(dy, dx)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                true
            } else {
                mask.get(nx as usize, ny as usize)
            }
        })
    })
}

/// Dilation by a disk; out-of-image pixels count as background.
pub fn morph_dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width as isize, mask.height as isize);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        offsets.iter().any(|(dy, dx)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            nx >= 0 && ny >= 0 && nx < w && ny < h && mask.get(nx as usize, ny as usize)
        })
    })
}

/// Opening: erosion then dilation. Anti-extensive and idempotent.
pub fn morph_open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph_dilate(&morph_erode(mask, radius), radius)
}

/// Closing: dilation then erosion. Extensive and idempotent.
pub fn morph_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph_erode(&morph_dilate(mask, radius), radius)
}

// ── Hole filling ─────────────────────────────────────────────────────

/// Fills holes: background components not 4-connected to the image border
/// become foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut reachable = vec![false; w * h];
    let mut stack = Vec::new();
    for x in 0..w {
        for y in [0, h - 1] {
            if !mask.get(x, y) && !reachable[y * w + x] {
                reachable[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            if !mask.get(x, y) && !reachable[y * w + x] {
                reachable[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            if !mask.get(nx, ny) && !reachable[ny * w + nx] {
                reachable[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    BinaryMask::from_fn(w, h, |x, y| mask.get(x, y) || !reachable[y * w + x])
}

// ── Connected components ─────────────────────────────────────────────

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> UnionFind {
        UnionFind { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass connected-component labeling. Labels are compacted to `1..=K` in
/// row-major first-encounter order.
pub fn connected_components(mask: &BinaryMask, connectivity: u8) -> LabeledMask {
    assert!(
        connectivity == 4 || connectivity == 8,
        "connectivity must be 4 or 8"
    );
    let (w, h) = (mask.width, mask.height);
    let mut provisional = vec![0u32; w * h];
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            // Previously-scanned neighbors only.
            let mut neighbor_labels = [0u32; 4];
            let mut n = 0;
            if x > 0 && mask.get(x - 1, y) {
                neighbor_labels[n] = provisional[y * w + x - 1];
                n += 1;
            }
            if y > 0 {
                if mask.get(x, y - 1) {
                    neighbor_labels[n] = provisional[(y - 1) * w + x];
                    n += 1;
                }
                if connectivity == 8 {
                    if x > 0 && mask.get(x - 1, y - 1) {
                        neighbor_labels[n] = provisional[(y - 1) * w + x - 1];
                        n += 1;
                    }
                    if x + 1 < w && mask.get(x + 1, y - 1) {
                        neighbor_labels[n] = provisional[(y - 1) * w + x + 1];
                        n += 1;
                    }
                }
            }
            let label = if n == 0 {
                uf.make()
            } else {
                let mut min = neighbor_labels[0];
                for &l in &neighbor_labels[1..n] {
                    if l < min {
                        min = l;
                    }
                }
                for &l in &neighbor_labels[..n] {
                    uf.union(min, l);
                }
                min
            };
            provisional[y * w + x] = label;
        }
    }

    // Compact roots to 1..=K in row-major first-encounter order.
    let mut remap = std::collections::HashMap::new();
    let mut next = 1u32;
    let mut out = LabeledMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = uf.find(p);
            let label = *remap.entry(root).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            });
            out.set(x, y, label);
        }
    }
    out
}

/// Removes connected components with fewer than `min_area` pixels.
pub fn remove_small(mask: &BinaryMask, min_area: usize, connectivity: u8) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let labeled = connected_components(mask, connectivity);
    let mut areas = vec![0usize; labeled.max_label() as usize + 1];
    for &l in labeled.labels() {
        areas[l as usize] += 1;
    }
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        let l = labeled.get(x, y);
        l > 0 && areas[l as usize] >= min_area
    })
}

// ── Full pipeline ────────────────────────────────────────────────────

/// resize (bilinear) -> Otsu -> open -> fill holes -> drop small objects ->
/// connected components.
pub fn postprocess_pipeline(
    map: &ProbabilityMap,
    params: &PostprocessParams,
    original_w: usize,
    original_h: usize,
) -> LabeledMask {
    let resized = ProbabilityMap::from_raw(
        original_w,
        original_h,
        resize_plane_bilinear(map.values(), map.width, map.height, original_w, original_h),
    );
    let (_, binary) = otsu_threshold(&resized);
    let opened = morph_open(&binary, params.morph_radius);
    let filled = fill_holes(&opened);
    let cleaned = remove_small(&filled, params.min_area, params.connectivity);
    connected_components(&cleaned, params.connectivity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
    }

    /// Exhaustive Otsu oracle: recomputes both class statistics from scratch
    /// for every candidate threshold.
    pub(crate) fn otsu_oracle(hist: &[u64; 256]) -> u8 {
        let mut best_t = 255u8;
        let mut best_var = 0.0f64;
        for t in 0..256usize {
            let (mut w0, mut s0, mut w1, mut s1) = (0u64, 0u64, 0u64, 0u64);
            for (i, &c) in hist.iter().enumerate() {
                if i <= t {
                    w0 += c;
                    s0 += i as u64 * c;
                } else {
                    w1 += c;
                    s1 += i as u64 * c;
                }
            }
            if w0 == 0 || w1 == 0 {
                continue;
            }
            let mu0 = s0 as f64 / w0 as f64;
            let mu1 = s1 as f64 / w1 as f64;
            let d = mu0 - mu1;
            let var = w0 as f64 * w1 as f64 * d * d;
            if var > best_var {
                best_var = var;
                best_t = t as u8;
            }
        }
        if best_var == 0.0 {
            return 255;
        }
        best_t
    }

    #[test]
    fn otsu_separates_binary_map_exactly() {
        let vals: Vec<f32> = (0..64).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let expected: Vec<bool> = vals.iter().map(|v| *v == 1.0).collect();
        let map = ProbabilityMap::from_raw(8, 8, vals);
        let (_, mask) = otsu_threshold(&map);
        assert_eq!(mask.pixels(), expected.as_slice());
    }

    #[test]
    fn otsu_of_constant_map_is_empty() {
        let map = ProbabilityMap::from_raw(4, 4, vec![0.5; 16]);
        let (t, mask) = otsu_threshold(&map);
        assert_eq!(mask.count_foreground(), 0);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn otsu_bimodal_50_50() {
        let mut vals = vec![0.1f32; 50];
        vals.extend(vec![0.9f32; 50]);
        let map = ProbabilityMap::from_raw(10, 10, vals);
        let (t, mask) = otsu_threshold(&map);
        assert!(t > 0.1 && t < 0.9, "threshold {t} not between the modes");
        assert_eq!(mask.count_foreground(), 50);
        let hist = histogram256(&map);
        assert_eq!(otsu_bin(&hist), otsu_oracle(&hist));
    }

    #[test]
    fn otsu_matches_exhaustive_oracle_on_random_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut hist = [0u64; 256];
            let modes = rng.gen_range(0..4);
            for _ in 0..modes {
                let center = rng.gen_range(0..256) as i64;
                let spread = rng.gen_range(1..40) as i64;
                for _ in 0..rng.gen_range(1..200) {
                    let b = (center + rng.gen_range(-spread..=spread)).clamp(0, 255);
                    hist[b as usize] += 1;
                }
            }
            assert_eq!(otsu_bin(&hist), otsu_oracle(&hist));
        }
    }

    #[test]
    fn open_keeps_solid_interior() {
        let mask = BinaryMask::from_fn(12, 12, |_, _| true);
        let opened = morph_open(&mask, 2);
        for y in 2..10 {
            for x in 2..10 {
                assert!(opened.get(x, y), "interior pixel ({x},{y}) must survive");
            }
        }
    }

    #[test]
    fn open_removes_isolated_pixel() {
        let mut mask = BinaryMask::new(9, 9);
        mask.set(4, 4, true);
        assert_eq!(morph_open(&mask, 1).count_foreground(), 0);
    }

    #[test]
    fn open_close_properties_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mask = random_mask(&mut rng, 20, 16, 0.45);
            for radius in [1usize, 2] {
                let opened = morph_open(&mask, radius);
                let closed = morph_close(&mask, radius);
                assert!(opened.subset_of(&mask), "open must be anti-extensive");
                assert!(mask.subset_of(&closed), "close must be extensive");
                assert_eq!(morph_open(&opened, radius), opened, "open must be idempotent");
                assert_eq!(morph_close(&closed, radius), closed, "close must be idempotent");
            }
        }
    }

    #[test]
    fn fill_holes_fills_ring() {
        let mask = BinaryMask::from_fn(11, 11, |x, y| {
            let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
            let r = (dx * dx + dy * dy).sqrt();
            (3.0..=4.6).contains(&r)
        });
        let filled = fill_holes(&mask);
        assert!(filled.get(5, 5), "ring center must fill");
        assert!(!filled.get(0, 0), "outside stays background");
        assert!(mask.subset_of(&filled));
    }

    #[test]
    fn fill_holes_leaves_solid_square_unchanged() {
        let mask = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        assert_eq!(fill_holes(&mask), mask);
    }

    #[test]
    fn fill_holes_is_idempotent_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let mask = random_mask(&mut rng, 18, 14, 0.5);
            let once = fill_holes(&mask);
            assert_eq!(fill_holes(&once), once);
            assert!(mask.subset_of(&once));
        }
    }

    #[test]
    fn remove_small_filters_by_area() {
        let mut mask = BinaryMask::new(40, 20);
        // A 2x2 (area 4) and a 10x10 (area 100) block.
        for y in 0..2 {
            for x in 0..2 {
                mask.set(x, y, true);
            }
        }
        for y in 5..15 {
            for x in 20..30 {
                mask.set(x, y, true);
            }
        }
        let out = remove_small(&mask, 50, 8);
        assert_eq!(out.count_foreground(), 100);
        assert_eq!(remove_small(&mask, 0, 8), mask);
        assert_eq!(remove_small(&mask, 4, 8), mask);
    }

    #[test]
    fn components_of_empty_mask() {
        let mask = BinaryMask::new(5, 5);
        let labeled = connected_components(&mask, 8);
        assert_eq!(labeled.max_label(), 0);
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let mut mask = BinaryMask::new(4, 4);
        mask.set(1, 1, true);
        mask.set(2, 2, true);
        assert_eq!(connected_components(&mask, 8).max_label(), 1);
        assert_eq!(connected_components(&mask, 4).max_label(), 2);
    }

    /// Flood-fill labeling oracle.
    fn flood_fill_components(mask: &BinaryMask, connectivity: u8) -> LabeledMask {
        let (w, h) = (mask.width, mask.height);
        let mut out = LabeledMask::new(w, h);
        let mut next = 0u32;
        for sy in 0..h {
            for sx in 0..w {
                if !mask.get(sx, sy) || out.get(sx, sy) != 0 {
                    continue;
                }
                next += 1;
                let mut stack = vec![(sx, sy)];
                out.set(sx, sy, next);
                while let Some((x, y)) = stack.pop() {
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            if connectivity == 4 && dx != 0 && dy != 0 {
                                continue;
                            }
                            let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                            if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if mask.get(nx, ny) && out.get(nx, ny) == 0 {
                                out.set(nx, ny, next);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn components_match_flood_fill_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let mask = random_mask(&mut rng, 32, 32, 0.4);
            for connectivity in [4u8, 8] {
                let fast = connected_components(&mask, connectivity);
                let oracle = flood_fill_components(&mask, connectivity);
                // Same memberships AND same first-encounter numbering.
                assert_eq!(fast, oracle);
            }
        }
    }

    #[test]
    fn pipeline_finds_two_crisp_blobs() {
        let map = ProbabilityMap::from_raw(
            40,
            24,
            (0..40 * 24)
                .map(|i| {
                    let (x, y) = (i % 40, i / 40);
                    let in_a = (4..14).contains(&x) && (6..18).contains(&y);
                    let in_b = (24..36).contains(&x) && (4..20).contains(&y);
                    if in_a || in_b {
                        0.95
                    } else {
                        0.05
                    }
                })
                .collect(),
        );
        let params = PostprocessParams {
            morph_radius: 1,
            min_area: 10,
            connectivity: 8,
        };
        let labeled = postprocess_pipeline(&map, &params, 40, 24);
        assert_eq!(labeled.max_label(), 2);
    }

    #[test]
    fn pipeline_of_zero_map_is_empty() {
        let map = ProbabilityMap::from_raw(16, 16, vec![0.0; 256]);
        let labeled = postprocess_pipeline(&map, &PostprocessParams::default(), 16, 16);
        assert_eq!(labeled.max_label(), 0);
    }

    #[test]
    fn pipeline_without_resize_matches_stagewise_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let vals: Vec<f32> = (0..32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let map = ProbabilityMap::from_raw(32, 32, vals);
        let params = PostprocessParams {
            morph_radius: 1,
            min_area: 5,
            connectivity: 8,
        };
        let via_pipeline = postprocess_pipeline(&map, &params, 32, 32);
        let (_, binary) = otsu_threshold(&map);
        let by_hand = connected_components(
            &remove_small(&fill_holes(&morph_open(&binary, 1)), 5, 8),
            8,
        );
        assert_eq!(via_pipeline, by_hand);
    }
}

//! Object-level segmentation metrics: object Dice, Hausdorff distance,
//! object-level Hausdorff, and object-level F1, plus per-dataset report
//! aggregation.
//!
//! All three object metrics match objects by maximum pixel overlap. Dice and
//! Hausdorff are averaged over both directions (segmented-to-truth and
//! truth-to-segmented) with size-proportional weights, so large glands
//! dominate the score the way they dominate the image.

mod edt;

pub use edt::squared_edt;

use crate::mask::LabeledMask;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("masks have different dimensions: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("hausdorff distance of an empty set is undefined")]
    EmptySet,
    #[error("cannot aggregate an empty result list")]
    EmptyInput,
}

/// Pixel coordinate as `(row, col)`.
pub type Pixel = (u32, u32);

/// Explicit per-object pixel coordinate sets extracted from a labeled mask.
#[derive(Debug, Clone)]
pub struct ObjectSet {
    pub width: usize,
    pub height: usize,
    objects: Vec<Vec<Pixel>>,
}

impl ObjectSet {
    pub fn objects(&self) -> &[Vec<Pixel>] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// All foreground pixels, across objects.
    pub fn all_pixels(&self) -> Vec<Pixel> {
        self.objects.iter().flatten().copied().collect()
    }

    /// Size-proportional weights `|obj_i| / sum_k |obj_k|`.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.objects.iter().map(Vec::len).sum();
        self.objects
            .iter()
            .map(|o| o.len() as f64 / total as f64)
            .collect()
    }
}

/// One coordinate set per nonzero label, in label order. Labels that do not
/// occur in the mask are skipped, so every returned object is non-empty.
pub fn extract_objects(mask: &LabeledMask) -> ObjectSet {
    let max = mask.max_label() as usize;
    let mut buckets: Vec<Vec<Pixel>> = vec![Vec::new(); max];
    for y in 0..mask.height {
        for x in 0..mask.width {
            let l = mask.get(x, y);
            if l > 0 {
                buckets[(l - 1) as usize].push((y as u32, x as u32));
            }
        }
    }
    ObjectSet {
        width: mask.width,
        height: mask.height,
        objects: buckets.into_iter().filter(|b| !b.is_empty()).collect(),
    }
}

/// Max-overlap matching between two object sets, both directions.
#[derive(Debug, Clone)]
pub struct MatchTable {
    /// For each object in `a`: the `b` index with maximal pixel overlap and
    /// the overlap count (ties toward the lowest `b` index); `None` when the
    /// object overlaps nothing.
    pub a_to_b: Vec<Option<(usize, usize)>>,
    /// Same, from `b` into `a`.
    pub b_to_a: Vec<Option<(usize, usize)>>,
    /// Every `(a index, b index, overlap)` triple with a positive overlap.
    pub overlaps: Vec<(usize, usize, usize)>,
}

/// Computes per-pair pixel overlaps and the max-overlap match in both
/// directions.
pub fn match_max_overlap(a: &ObjectSet, b: &ObjectSet) -> Result<MatchTable, MetricsError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    // Rasterize b, then count overlaps by scanning a's pixels.
    let mut b_grid = vec![0u32; a.width * a.height];
    for (bi, obj) in b.objects().iter().enumerate() {
        for (y, x) in obj {
            b_grid[*y as usize * a.width + *x as usize] = bi as u32 + 1;
        }
    }
    let mut counts: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for (ai, obj) in a.objects().iter().enumerate() {
        for (y, x) in obj {
            let bl = b_grid[*y as usize * a.width + *x as usize];
            if bl > 0 {
                *counts.entry((ai, (bl - 1) as usize)).or_insert(0) += 1;
            }
        }
    }
    let mut overlaps: Vec<(usize, usize, usize)> =
        counts.into_iter().map(|((ai, bi), c)| (ai, bi, c)).collect();
    overlaps.sort_unstable();

    let mut a_to_b: Vec<Option<(usize, usize)>> = vec![None; a.len()];
    let mut b_to_a: Vec<Option<(usize, usize)>> = vec![None; b.len()];
    for &(ai, bi, c) in &overlaps {
        // Strict > keeps the lowest index on ties (overlaps are sorted).
        if a_to_b[ai].map_or(true, |(_, best)| c > best) {
            a_to_b[ai] = Some((bi, c));
        }
        if b_to_a[bi].map_or(true, |(_, best)| c > best) {
            b_to_a[bi] = Some((ai, c));
        }
    }
    Ok(MatchTable {
        a_to_b,
        b_to_a,
        overlaps,
    })
}

fn pair_dice(a: &[Pixel], b: &[Pixel], overlap: usize) -> f64 {
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

/// Object-level Dice: both directional size-weighted sums of per-pair Dice
/// over max-overlap matches, averaged. Unmatched objects contribute zero;
/// two empty masks score 1.
pub fn object_dice(gt: &LabeledMask, seg: &LabeledMask) -> Result<f64, MetricsError> {
    let g = extract_objects(gt);
    let s = extract_objects(seg);
    if g.is_empty() && s.is_empty() {
        return Ok(1.0);
    }
    let table = match_max_overlap(&s, &g)?;
    let mut total = 0.0f64;
    // Direction 1: over segmented objects against their best ground truth.
    let sw = s.weights();
    for (si, obj) in s.objects().iter().enumerate() {
        if let Some((gi, overlap)) = table.a_to_b[si] {
            total += sw[si] * pair_dice(obj, &g.objects()[gi], overlap);
        }
    }
    // Direction 2: over ground-truth objects against their best segmentation.
    let gw = g.weights();
    for (gi, obj) in g.objects().iter().enumerate() {
        if let Some((si, overlap)) = table.b_to_a[gi] {
            total += gw[gi] * pair_dice(obj, &s.objects()[si], overlap);
        }
    }
    Ok(total / 2.0)
}

/// Hausdorff distance between two non-empty pixel coordinate sets, Euclidean
/// over pixel centers, computed with an exact distance transform over the
/// union bounding box.
pub fn hausdorff(a: &[Pixel], b: &[Pixel]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let all = a.iter().chain(b.iter());
    let (mut y0, mut x0, mut y1, mut x1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (y, x) in all {
        y0 = y0.min(*y);
        x0 = x0.min(*x);
        y1 = y1.max(*y);
        x1 = x1.max(*x);
    }
    let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let rasterize = |pts: &[Pixel]| {
        let mut grid = vec![false; w * h];
        for (y, x) in pts {
            grid[(y - y0) as usize * w + (x - x0) as usize] = true;
        }
        grid
    };
    let directed_max_sq = |from: &[Pixel], to_edt: &[f64]| {
        from.iter()
            .map(|(y, x)| to_edt[(y - y0) as usize * w + (x - x0) as usize])
            .fold(0.0f64, f64::max)
    };
    let edt_b = squared_edt(&rasterize(b), w, h);
    let edt_a = squared_edt(&rasterize(a), w, h);
    let worst = directed_max_sq(a, &edt_b).max(directed_max_sq(b, &edt_a));
    Ok(worst.sqrt())
}

/// Length of the image diagonal: the fallback penalty for an object with no
/// opposite foreground to compare against.
fn image_diagonal(width: usize, height: usize) -> f64 {
    ((width * width + height * height) as f64).sqrt()
}

/// Which pixels of each object enter the Hausdorff distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HausdorffMode {
    /// The full pixel coordinate set of each object.
    #[default]
    FullObject,
    /// Only boundary pixels: those with a 4-neighbor outside the set.
    Boundary,
}

/// Boundary pixels of a coordinate set under 4-connectivity; image-edge
/// pixels of the set count as boundary.
fn boundary_of(obj: &[Pixel], width: usize, height: usize) -> Vec<Pixel> {
    let set: std::collections::HashSet<Pixel> = obj.iter().copied().collect();
    obj.iter()
        .copied()
        .filter(|&(y, x)| {
            if y == 0 || x == 0 || y as usize == height - 1 || x as usize == width - 1 {
                return true;
            }
            !(set.contains(&(y - 1, x))
                && set.contains(&(y + 1, x))
                && set.contains(&(y, x - 1))
                && set.contains(&(y, x + 1)))
        })
        .collect()
}

/// Object-level Hausdorff: both directional size-weighted sums of per-pair
/// Hausdorff over max-overlap matches, averaged. An object with no overlap
/// is paired against the entire opposite foreground; if that foreground is
/// empty the pair contributes the image diagonal.
pub fn object_hausdorff(gt: &LabeledMask, seg: &LabeledMask) -> Result<f64, MetricsError> {
    object_hausdorff_with(gt, seg, HausdorffMode::FullObject)
}

/// [`object_hausdorff`] with an explicit pixel-set mode. Matching and the
/// size-proportional weights always come from the full objects; the mode
/// only changes which pixels enter the distances.
pub fn object_hausdorff_with(
    gt: &LabeledMask,
    seg: &LabeledMask,
    mode: HausdorffMode,
) -> Result<f64, MetricsError> {
    let g = extract_objects(gt);
    let s = extract_objects(seg);
    if g.is_empty() && s.is_empty() {
        return Ok(0.0);
    }
    let table = match_max_overlap(&s, &g)?;

    // The pixel sets the distances run over (boundary of a non-empty set is
    // never empty, so `hausdorff` stays well-defined).
    let distance_sets = |objs: &ObjectSet| -> Vec<Vec<Pixel>> {
        match mode {
            HausdorffMode::FullObject => objs.objects().to_vec(),
            HausdorffMode::Boundary => objs
                .objects()
                .iter()
                .map(|o| boundary_of(o, objs.width, objs.height))
                .collect(),
        }
    };
    let g_sets = distance_sets(&g);
    let s_sets = distance_sets(&s);
    let g_all: Vec<Pixel> = g_sets.iter().flatten().copied().collect();
    let s_all: Vec<Pixel> = s_sets.iter().flatten().copied().collect();
    let diagonal = image_diagonal(gt.width, gt.height);

    let directed = |objs: &ObjectSet,
                    sets: &[Vec<Pixel>],
                    matches: &[Option<(usize, usize)>],
                    opposite_sets: &[Vec<Pixel>],
                    opposite_all: &[Pixel]|
     -> Result<f64, MetricsError> {
        let weights = objs.weights();
        let mut sum = 0.0f64;
        for (i, set) in sets.iter().enumerate() {
            let h = match matches[i] {
                Some((j, _)) => hausdorff(set, &opposite_sets[j])?,
                None if opposite_all.is_empty() => diagonal,
                None => hausdorff(set, opposite_all)?,
            };
            sum += weights[i] * h;
        }
        Ok(sum)
    };

    let d1 = if s.is_empty() {
        0.0
    } else {
        directed(&s, &s_sets, &table.a_to_b, &g_sets, &g_all)?
    };
    let d2 = if g.is_empty() {
        0.0
    } else {
        directed(&g, &g_sets, &table.b_to_a, &s_sets, &s_all)?
    };
    Ok((d1 + d2) / 2.0)
}

/// Object-detection counts and scores from [`f1_object`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct F1Result {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Object-level F1. A segmented object is a true positive when its overlap
/// with a still-unmatched ground-truth object exceeds `overlap_frac` of that
/// ground-truth object's area; matching is one-to-one, greedy by descending
/// overlap. Zero-denominator precision/recall/F1 yield 0, except that two
/// empty masks score 1.
pub fn f1_object(
    gt: &LabeledMask,
    seg: &LabeledMask,
    overlap_frac: f64,
) -> Result<F1Result, MetricsError> {
    let g = extract_objects(gt);
    let s = extract_objects(seg);
    if g.is_empty() && s.is_empty() {
        return Ok(F1Result {
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
            tp: 0,
            fp: 0,
            fn_: 0,
        });
    }
    let table = match_max_overlap(&s, &g)?;
    let mut pairs = table.overlaps.clone();
    // Descending overlap; index order breaks ties deterministically.
    pairs.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));

    let mut seg_used = vec![false; s.len()];
    let mut gt_used = vec![false; g.len()];
    let mut tp = 0usize;
    for (si, gi, overlap) in pairs {
        if seg_used[si] || gt_used[gi] {
            continue;
        }
        if (overlap as f64) > overlap_frac * g.objects()[gi].len() as f64 {
            seg_used[si] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    let fp = s.len() - tp;
    let fn_ = g.len() - tp;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Result {
        f1,
        precision,
        recall,
        tp,
        fp,
        fn_,
    })
}

// ── Reports ──────────────────────────────────────────────────────────

/// Metrics for one evaluated image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub object_dice: f64,
    pub f1_score: f64,
    pub hausdorff: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ImageMetrics {
    /// Evaluates all object metrics for one image pair.
    pub fn compute(
        name: &str,
        gt: &LabeledMask,
        seg: &LabeledMask,
        overlap_frac: f64,
    ) -> Result<ImageMetrics, MetricsError> {
        let f1 = f1_object(gt, seg, overlap_frac)?;
        Ok(ImageMetrics {
            name: name.to_string(),
            object_dice: object_dice(gt, seg)?,
            f1_score: f1.f1,
            hausdorff: object_hausdorff(gt, seg)?,
            precision: f1.precision,
            recall: f1.recall,
            tp: f1.tp,
            fp: f1.fp,
            fn_: f1.fn_,
        })
    }
}

/// Per-image rows plus unweighted means, mirroring the result-table layout
/// (object Dice, F1 score, Hausdorff).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_object_dice: f64,
    pub mean_f1_score: f64,
    pub mean_hausdorff: f64,
    pub total_tp: usize,
    pub total_fp: usize,
    pub total_fn: usize,
}

/// Unweighted mean of each metric across images; per-image rows preserved.
pub fn aggregate_report(per_image: Vec<ImageMetrics>) -> Result<MetricsReport, MetricsError> {
    if per_image.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = per_image.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mean_object_dice: mean(|m| m.object_dice),
        mean_f1_score: mean(|m| m.f1_score),
        mean_hausdorff: mean(|m| m.hausdorff),
        total_tp: per_image.iter().map(|m| m.tp).sum(),
        total_fp: per_image.iter().map(|m| m.fp).sum(),
        total_fn: per_image.iter().map(|m| m.fn_).sum(),
        per_image,
    })
}

impl MetricsReport {
    /// CSV with one row per image and a final aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "image,object_dice,f1_score,hausdorff,precision,recall,tp,fp,fn\n",
        );
        for m in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
                m.name,
                m.object_dice,
                m.f1_score,
                m.hausdorff,
                m.precision,
                m.recall,
                m.tp,
                m.fp,
                m.fn_
            ));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6},{:.6},,,{},{},{}\n",
            self.mean_object_dice,
            self.mean_f1_score,
            self.mean_hausdorff,
            self.total_tp,
            self.total_fp,
            self.total_fn
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&[u32]]) -> LabeledMask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = LabeledMask::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                m.set(x, y, v);
            }
        }
        m
    }

    #[test]
    fn extract_objects_collects_label_coordinates() {
        let m = mask_from_rows(&[&[0, 1, 1], &[2, 0, 1]]);
        let objs = extract_objects(&m);
        assert_eq!(objs.len(), 2);
        assert_eq!(objs.objects()[0], vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(objs.objects()[1], vec![(1, 0)]);
        let total: usize = objs.objects().iter().map(Vec::len).sum();
        assert_eq!(total, m.labels().iter().filter(|l| **l > 0).count());
        assert_eq!(extract_objects(&LabeledMask::new(3, 3)).len(), 0);
    }

    #[test]
    fn match_prefers_larger_overlap() {
        // One object in `a` overlapping b1 by 2 pixels and b2 by 3.
        let a = mask_from_rows(&[&[1, 1, 1, 1, 1]]);
        let b = mask_from_rows(&[&[1, 1, 2, 2, 2]]);
        let table = match_max_overlap(&extract_objects(&a), &extract_objects(&b)).unwrap();
        assert_eq!(table.a_to_b[0], Some((1, 3)));
        assert_eq!(table.b_to_a[0], Some((0, 2)));
        assert_eq!(table.b_to_a[1], Some((0, 3)));
    }

    #[test]
    fn match_flags_disjoint_objects_unmatched() {
        let a = mask_from_rows(&[&[1, 0, 0]]);
        let b = mask_from_rows(&[&[0, 0, 1]]);
        let table = match_max_overlap(&extract_objects(&a), &extract_objects(&b)).unwrap();
        assert_eq!(table.a_to_b[0], None);
        assert_eq!(table.b_to_a[0], None);
    }

    #[test]
    fn identical_masks_have_perfect_scores() {
        let m = mask_from_rows(&[&[1, 1, 0, 2], &[1, 0, 0, 2], &[0, 0, 0, 0]]);
        assert_eq!(object_dice(&m, &m).unwrap(), 1.0);
        assert_eq!(object_hausdorff(&m, &m).unwrap(), 0.0);
        assert_eq!(f1_object(&m, &m, 0.5).unwrap().f1, 1.0);
    }

    #[test]
    fn object_dice_of_offset_squares_is_half() {
        // 2x2 ground truth at cols 0-1, 2x2 segmentation at cols 1-2:
        // overlap 2, per-pair dice 2*2/(4+4) = 0.5, both directions.
        let gt = mask_from_rows(&[&[1, 1, 0], &[1, 1, 0]]);
        let seg = mask_from_rows(&[&[0, 1, 1], &[0, 1, 1]]);
        assert!((object_dice(&gt, &seg).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let empty = LabeledMask::new(4, 4);
        let row: &[u32] = &[1, 1, 0, 0];
        let solid = mask_from_rows(&[row, row, row, row]);
        assert_eq!(object_dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(object_dice(&solid, &empty).unwrap(), 0.0);
        assert_eq!(object_hausdorff(&empty, &empty).unwrap(), 0.0);
        assert_eq!(f1_object(&empty, &empty, 0.5).unwrap().f1, 1.0);
        assert_eq!(f1_object(&solid, &empty, 0.5).unwrap().f1, 0.0);
        // One side empty: the non-empty direction pays the image diagonal,
        // the empty direction contributes nothing.
        let expected = image_diagonal(4, 4) / 2.0;
        assert!((object_hausdorff(&solid, &empty).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[(0, 0)], &[(0, 0)]).unwrap(), 0.0);
        assert_eq!(hausdorff(&[(0, 0)], &[(3, 4)]).unwrap(), 5.0);
        let a = vec![(0, 0), (0, 1), (1, 0)];
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert!(matches!(hausdorff(&a, &[]), Err(MetricsError::EmptySet)));
    }

    #[test]
    fn object_hausdorff_of_rigid_shift_is_shift_length() {
        let gt = mask_from_rows(&[
            &[1, 1, 0, 0, 0, 0],
            &[1, 1, 0, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0],
        ]);
        let seg = mask_from_rows(&[
            &[0, 0, 0, 1, 1, 0],
            &[0, 0, 0, 1, 1, 0],
            &[0, 0, 0, 0, 0, 0],
        ]);
        assert!((object_hausdorff(&gt, &seg).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_counts_detections() {
        // Two ground-truth objects; segmentation reproduces one exactly.
        let gt = mask_from_rows(&[&[1, 1, 0, 2, 2], &[1, 1, 0, 2, 2]]);
        let seg = mask_from_rows(&[&[1, 1, 0, 0, 0], &[1, 1, 0, 0, 0]]);
        let r = f1_object(&gt, &seg, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 1));
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_rejects_forty_percent_overlap() {
        // Segmented object covers 4 of 10 ground-truth pixels: below half.
        let gt = mask_from_rows(&[&[1; 10]]);
        let seg = mask_from_rows(&[&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0]]);
        let r = f1_object(&gt, &seg, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        assert_eq!(r.f1, 0.0);
        // 60% overlap clears the bar.
        let seg6 = mask_from_rows(&[&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0]]);
        assert_eq!(f1_object(&gt, &seg6, 0.5).unwrap().tp, 1);
    }

    #[test]
    fn aggregate_means_and_row_order() {
        let a = ImageMetrics {
            name: "img1".into(),
            object_dice: 0.8,
            f1_score: 0.7,
            hausdorff: 10.0,
            precision: 1.0,
            recall: 0.6,
            tp: 3,
            fp: 0,
            fn_: 2,
        };
        let mut b = a.clone();
        b.name = "img2".into();
        b.object_dice = 0.9;
        b.f1_score = 0.9;
        b.hausdorff = 20.0;
        let report = aggregate_report(vec![a.clone(), b]).unwrap();
        assert!((report.mean_object_dice - 0.85).abs() < 1e-12);
        assert!((report.mean_f1_score - 0.8).abs() < 1e-12);
        assert!((report.mean_hausdorff - 15.0).abs() < 1e-12);
        assert_eq!(report.total_tp, 6);

        let single = aggregate_report(vec![a.clone()]).unwrap();
        assert_eq!(single.mean_object_dice, a.object_dice);

        // Column layout: object Dice, then F1 score, then Hausdorff.
        let csv = report.to_csv();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("image,object_dice,f1_score,hausdorff"));
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
        assert!(matches!(
            aggregate_report(vec![]),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let gt = mask_from_rows(&[
            &[1, 1, 0, 0, 0, 0, 0, 0],
            &[1, 1, 0, 2, 2, 0, 0, 0],
            &[0, 0, 0, 2, 2, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0, 0, 0],
        ]);
        let seg = mask_from_rows(&[
            &[1, 1, 0, 0, 0, 0, 0, 0],
            &[1, 0, 0, 2, 2, 0, 0, 0],
            &[0, 0, 0, 2, 2, 2, 0, 0],
            &[0, 0, 0, 0, 0, 0, 0, 0],
        ]);
        let shift = |m: &LabeledMask, dx: usize, dy: usize| {
            let mut out = LabeledMask::new(m.width, m.height);
            for y in 0..m.height - dy {
                for x in 0..m.width - dx {
                    out.set(x + dx, y + dy, m.get(x, y));
                }
            }
            out
        };
        let (gt2, seg2) = (shift(&gt, 0, 0), shift(&seg, 0, 0));
        let (gt3, seg3) = (shift(&gt, 2, 1), shift(&seg, 2, 1));
        assert_eq!(
            object_dice(&gt2, &seg2).unwrap(),
            object_dice(&gt3, &seg3).unwrap()
        );
        assert_eq!(
            object_hausdorff(&gt2, &seg2).unwrap(),
            object_hausdorff(&gt3, &seg3).unwrap()
        );
        assert_eq!(
            f1_object(&gt2, &seg2, 0.5).unwrap().f1,
            f1_object(&gt3, &seg3, 0.5).unwrap().f1
        );
    }
}

#[cfg(test)]
mod boundary_tests {
    use super::*;

    #[test]
    fn boundary_mode_matches_full_mode_on_identical_masks() {
        let mut m = LabeledMask::new(8, 8);
        for y in 2..6 {
            for x in 2..6 {
                m.set(x, y, 1);
            }
        }
        assert_eq!(
            object_hausdorff_with(&m, &m, HausdorffMode::Boundary).unwrap(),
            0.0
        );
    }

    #[test]
    fn boundary_mode_sees_holes_differently() {
        // Same 7x7 square; segmentation has a one-pixel hole at the center.
        // Full mode: the missing pixel is 1 away from the rest. Boundary
        // mode: the hole's inner ring sits 2 away from the square outline.
        let mut gt = LabeledMask::new(11, 11);
        for y in 1..8 {
            for x in 1..8 {
                gt.set(x, y, 1);
            }
        }
        let mut seg = gt.clone();
        seg.set(4, 4, 0);
        let full = object_hausdorff_with(&gt, &seg, HausdorffMode::FullObject).unwrap();
        let boundary = object_hausdorff_with(&gt, &seg, HausdorffMode::Boundary).unwrap();
        assert_eq!(full, 1.0);
        assert_eq!(boundary, 2.0);
    }

    #[test]
    fn boundary_of_single_pixel_is_itself() {
        assert_eq!(boundary_of(&[(3, 3)], 8, 8), vec![(3, 3)]);
    }
}

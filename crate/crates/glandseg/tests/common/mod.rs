//! Independent brute-force oracles for the object-level metrics, plus random
//! mask generators. Everything here is deliberately naive: exhaustive set
//! intersections, pairwise distance scans, no shared code with the library's
//! implementations.

// Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use glandseg::mask::LabeledMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Obj = Vec<(u32, u32)>;

/// Label -> pixel set, in ascending label order.
pub fn objects_of(mask: &LabeledMask) -> Vec<Obj> {
    let mut by_label: HashMap<u32, Obj> = HashMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let l = mask.get(x, y);
            if l > 0 {
                by_label.entry(l).or_default().push((y as u32, x as u32));
            }
        }
    }
    let mut labels: Vec<u32> = by_label.keys().copied().collect();
    labels.sort_unstable();
    labels.into_iter().map(|l| by_label.remove(&l).unwrap()).collect()
}

fn overlap(a: &Obj, b: &Obj) -> usize {
    let set: HashSet<&(u32, u32)> = a.iter().collect();
    b.iter().filter(|p| set.contains(p)).count()
}

/// Index of the object in `others` with maximal overlap (ties toward the
/// lowest index), or None if nothing overlaps.
fn best_match(obj: &Obj, others: &[Obj]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (i, other) in others.iter().enumerate() {
        let ov = overlap(obj, other);
        if ov > 0 && best.map_or(true, |(_, b)| ov > b) {
            best = Some((i, ov));
        }
    }
    best
}

fn dice_pair(a: &Obj, b: &Obj) -> f64 {
    2.0 * overlap(a, b) as f64 / (a.len() + b.len()) as f64
}

pub fn brute_object_dice(gt: &LabeledMask, seg: &LabeledMask) -> f64 {
    let g = objects_of(gt);
    let s = objects_of(seg);
    if g.is_empty() && s.is_empty() {
        return 1.0;
    }
    let total_s: usize = s.iter().map(Vec::len).sum();
    let total_g: usize = g.iter().map(Vec::len).sum();
    let mut sum = 0.0;
    for obj in &s {
        if let Some((gi, _)) = best_match(obj, &g) {
            sum += (obj.len() as f64 / total_s as f64) * dice_pair(obj, &g[gi]);
        }
    }
    for obj in &g {
        if let Some((si, _)) = best_match(obj, &s) {
            sum += (obj.len() as f64 / total_g as f64) * dice_pair(obj, &s[si]);
        }
    }
    sum / 2.0
}

/// Naive pairwise Hausdorff over pixel centers.
pub fn pairwise_hausdorff(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    let directed = |from: &[(u32, u32)], to: &[(u32, u32)]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        let dy = p.0 as f64 - q.0 as f64;
                        let dx = p.1 as f64 - q.1 as f64;
                        dy * dy + dx * dx
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    directed(a, b).max(directed(b, a)).sqrt()
}

pub fn brute_object_hausdorff(gt: &LabeledMask, seg: &LabeledMask) -> f64 {
    let g = objects_of(gt);
    let s = objects_of(seg);
    if g.is_empty() && s.is_empty() {
        return 0.0;
    }
    let g_all: Obj = g.iter().flatten().copied().collect();
    let s_all: Obj = s.iter().flatten().copied().collect();
    let diagonal = ((gt.width * gt.width + gt.height * gt.height) as f64).sqrt();
    let directed = |objs: &[Obj], opposite: &[Obj], opposite_all: &Obj| -> f64 {
        if objs.is_empty() {
            return 0.0;
        }
        let total: usize = objs.iter().map(Vec::len).sum();
        objs.iter()
            .map(|obj| {
                let h = match best_match(obj, opposite) {
                    Some((j, _)) => pairwise_hausdorff(obj, &opposite[j]),
                    None if opposite_all.is_empty() => diagonal,
                    None => pairwise_hausdorff(obj, opposite_all),
                };
                (obj.len() as f64 / total as f64) * h
            })
            .sum()
    };
    (directed(&s, &g, &g_all) + directed(&g, &s, &s_all)) / 2.0
}

pub struct BruteF1 {
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn brute_f1(gt: &LabeledMask, seg: &LabeledMask, frac: f64) -> BruteF1 {
    let g = objects_of(gt);
    let s = objects_of(seg);
    if g.is_empty() && s.is_empty() {
        return BruteF1 {
            f1: 1.0,
            tp: 0,
            fp: 0,
            fn_: 0,
        };
    }
    // Every overlapping pair, greedily matched by descending overlap.
    let mut pairs = Vec::new();
    for (si, sobj) in s.iter().enumerate() {
        for (gi, gobj) in g.iter().enumerate() {
            let ov = overlap(sobj, gobj);
            if ov > 0 {
                pairs.push((si, gi, ov));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut s_used = vec![false; s.len()];
    let mut g_used = vec![false; g.len()];
    let mut tp = 0;
    for (si, gi, ov) in pairs {
        if !s_used[si] && !g_used[gi] && ov as f64 > frac * g[gi].len() as f64 {
            s_used[si] = true;
            g_used[gi] = true;
            tp += 1;
        }
    }
    let (fp, fn_) = (s.len() - tp, g.len() - tp);
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    BruteF1 { f1, tp, fp, fn_ }
}

/// Random labeled mask with up to `max_objects` elliptical blobs. Later
/// blobs may overwrite earlier ones, so labels can end up with odd shapes;
/// the result is compacted either way.
pub fn random_labeled_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, max_objects: usize) -> LabeledMask {
    let count = rng.gen_range(0..=max_objects);
    let mut mask = LabeledMask::new(w, h);
    for label in 1..=count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let a = rng.gen_range(1.5..w as f64 / 3.0);
        let b = rng.gen_range(1.5..h as f64 / 3.0);
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / a;
                let dy = (y as f64 - cy) / b;
                if dx * dx + dy * dy <= 1.0 {
                    mask.set(x, y, label as u32);
                }
            }
        }
    }
    mask.compact()
}

/// Deterministic RNG for test data.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

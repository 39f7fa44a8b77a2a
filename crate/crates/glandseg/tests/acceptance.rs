//! Acceptance suite: one test per criterion, each printing a PASS line on
//! success (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use glandseg::losses::{composite_loss, total_loss, LossKind};
use glandseg::mask::ProbabilityMap;
use glandseg::metrics::{f1_object, hausdorff, object_dice, object_hausdorff};
use glandseg::network::{build, num_params, NetworkConfig};
use glandseg::pipeline::{
    evaluate, evaluate_with, generate_synthetic, gradient_verification_suite, load_checkpoint,
    train, ExperimentConfig, Split, SyntheticSpec,
};
use glandseg::postprocess::{fill_holes, morph_close, morph_open, otsu_bin};
use glandseg::BinaryMask;
use glandseg::preprocess::StainMatrix;
use glandseg::tensor::Tensor;
use rand::Rng;

const E2: f64 = 7.389_056_098_930_65; // e^2

#[test]
fn criterion_1_gradient_verification() {
    let start = Instant::now();
    let outcomes = gradient_verification_suite(20).expect("suite must run");
    for o in &outcomes {
        assert!(
            o.pass,
            "criterion 1: {} failed with worst rel err {}",
            o.name, o.worst_rel_err
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "criterion 1: suite took {elapsed:?}, budget is one minute"
    );
    println!(
        "criterion 1: PASS — {} ops/losses x 20 instances within rel tol 1e-3 in {elapsed:?}",
        outcomes.len()
    );
}

#[test]
fn criterion_2_analytic_loss_values() {
    let g = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let l1 = composite_loss(LossKind::L1, &g, &g, 1.0).unwrap().item() as f64;
    let l2 = composite_loss(LossKind::L2, &g, &g, 1.0).unwrap().item() as f64;
    let l3 = composite_loss(LossKind::L3, &g, &g, 1.0).unwrap().item() as f64;
    assert!((l1 + E2).abs() < 1e-3, "L1 at perfection: {l1}");
    assert!((l2 + E2 + 1.0).abs() < 1e-3, "L2 at perfection: {l2}");
    assert!((l3 + E2 + 1.0).abs() < 1e-3, "L3 at perfection: {l3}");

    let g_coarse = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
    let (total, _) = total_loss(LossKind::L3, &g, &g, &g_coarse, &g_coarse, 1.0).unwrap();
    let expected = 3.0 * (-E2 - 1.0);
    assert!(
        (total.item() as f64 - expected).abs() < 1e-3,
        "L_final at double perfection: {} vs {expected}",
        total.item()
    );
    println!(
        "criterion 2: PASS — L1 = -e^2, L2 = L3 = -e^2-1, L_final = 3(-e^2-1) ~ -25.167, all within 1e-3"
    );
}

#[test]
fn criterion_3_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = common::rng(2024);
    let mut nonempty_pairs = 0;
    for case in 0..100 {
        let gt = common::random_labeled_mask(&mut rng, 32, 32, 5);
        let seg = common::random_labeled_mask(&mut rng, 32, 32, 5);

        let dice = object_dice(&gt, &seg).unwrap();
        let dice_oracle = common::brute_object_dice(&gt, &seg);
        assert!(
            (dice - dice_oracle).abs() < 1e-9,
            "case {case}: object dice {dice} vs oracle {dice_oracle}"
        );

        let h = object_hausdorff(&gt, &seg).unwrap();
        let h_oracle = common::brute_object_hausdorff(&gt, &seg);
        assert!(
            (h - h_oracle).abs() < 1e-9,
            "case {case}: object hausdorff {h} vs oracle {h_oracle}"
        );

        let f1 = f1_object(&gt, &seg, 0.5).unwrap();
        let f1_oracle = common::brute_f1(&gt, &seg, 0.5);
        assert!((f1.f1 - f1_oracle.f1).abs() < 1e-9, "case {case}: f1");
        assert_eq!(
            (f1.tp, f1.fp, f1.fn_),
            (f1_oracle.tp, f1_oracle.fp, f1_oracle.fn_),
            "case {case}: detection counts"
        );
        if gt.max_label() > 0 && seg.max_label() > 0 {
            nonempty_pairs += 1;
        }
    }
    assert!(nonempty_pairs > 50, "generator degenerated: {nonempty_pairs}");

    // Hausdorff via distance transform equals pairwise search bit for bit.
    for case in 0..100 {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for y in 0..20u32 {
            for x in 0..20u32 {
                if rng.gen_bool(0.25) {
                    a.push((y, x));
                }
                if rng.gen_bool(0.25) {
                    b.push((y, x));
                }
            }
        }
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let fast = hausdorff(&a, &b).unwrap();
        let naive = common::pairwise_hausdorff(&a, &b);
        assert_eq!(fast, naive, "case {case}: exact equality required");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 3 took {elapsed:?}");
    println!(
        "criterion 3: PASS — 100 labeled-mask pairs match brute-force oracles within 1e-9; \
         distance-transform Hausdorff exact ({elapsed:?})"
    );
}

#[test]
fn criterion_4_otsu_exhaustive_agreement() {
    /// Exhaustive between-class-variance argmax, smallest threshold on ties.
    fn otsu_oracle(hist: &[u64; 256]) -> u8 {
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
            let d = s0 as f64 / w0 as f64 - s1 as f64 / w1 as f64;
            let var = w0 as f64 * w1 as f64 * d * d;
            if var > best_var {
                best_var = var;
                best_t = t as u8;
            }
        }
        if best_var == 0.0 {
            255
        } else {
            best_t
        }
    }

    let mut rng = common::rng(404);
    for case in 0..1000 {
        let mut hist = [0u64; 256];
        match case % 4 {
            // Mixtures of narrow modes.
            0 | 1 => {
                for _ in 0..rng.gen_range(1..4) {
                    let center = rng.gen_range(0..256) as i64;
                    let spread = rng.gen_range(1..50) as i64;
                    for _ in 0..rng.gen_range(1..300) {
                        let b = (center + rng.gen_range(-spread..=spread)).clamp(0, 255);
                        hist[b as usize] += 1;
                    }
                }
            }
            // Sparse spikes; includes exact-tie layouts.
            2 => {
                for _ in 0..rng.gen_range(1..6) {
                    hist[rng.gen_range(0..256)] += rng.gen_range(1..100);
                }
            }
            // Degenerate: constant or empty.
            _ => {
                if rng.gen_bool(0.5) {
                    hist[rng.gen_range(0..256)] += rng.gen_range(1..50);
                }
            }
        }
        assert_eq!(
            otsu_bin(&hist),
            otsu_oracle(&hist),
            "case {case}: histogram {hist:?}"
        );
    }
    println!("criterion 4: PASS — Otsu equals exhaustive argmax (incl. tie-breaks) on 1000 histograms");
}

#[test]
fn criterion_5_morphology_properties() {
    let mut rng = common::rng(505);
    for case in 0..500 {
        let density = rng.gen_range(0.15..0.85);
        let w = rng.gen_range(8..28);
        let h = rng.gen_range(8..28);
        let mask = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density));
        let radius = rng.gen_range(1..=2usize);

        let opened = morph_open(&mask, radius);
        let closed = morph_close(&mask, radius);
        assert!(opened.subset_of(&mask), "case {case}: open not anti-extensive");
        assert!(mask.subset_of(&closed), "case {case}: close not extensive");
        assert_eq!(morph_open(&opened, radius), opened, "case {case}: open not idempotent");
        assert_eq!(morph_close(&closed, radius), closed, "case {case}: close not idempotent");

        let filled = fill_holes(&mask);
        assert!(mask.subset_of(&filled), "case {case}: fill_holes removed foreground");
        assert_eq!(fill_holes(&filled), filled, "case {case}: fill_holes not idempotent");
    }
    println!("criterion 5: PASS — open/close/fill_holes properties hold on 500 random masks");
}

#[test]
fn criterion_6_stain_round_trip() {
    let matrix = StainMatrix::default();
    let mut rng = common::rng(606);
    for case in 0..200 {
        let c = [
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.0..0.5),
        ];
        let od = matrix.recompose_vec(c);
        let back = matrix.deconvolve_vec(od);
        for i in 0..3 {
            assert!(
                (back[i] - c[i]).abs() <= 1e-6,
                "case {case}: channel {i}: {} vs {}",
                back[i],
                c[i]
            );
        }
    }
    // A white pixel has zero optical density, hence zero concentrations.
    let white = matrix.deconvolve_vec([0.0, 0.0, 0.0]);
    assert_eq!(white, [0.0, 0.0, 0.0]);
    println!("criterion 6: PASS — deconvolve/recompose round trip <= 1e-6; white maps to zero");
}

#[test]
fn criterion_7_parameter_count_claim() {
    let net = build(&NetworkConfig::full(7)).unwrap();
    let count = num_params(&net);
    assert!(
        (10_000_000..=13_000_000).contains(&count),
        "full preset has {count} learnable parameters"
    );
    println!("criterion 7: PASS — full preset has {count} parameters, within [10M, 13M]");
}

fn synthetic_config(data_dir: &std::path::Path, out_dir: &std::path::Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.data_dir = data_dir.to_path_buf();
    config.out_dir = out_dir.to_path_buf();
    config.preset = "tiny".into();
    config.seed = 7;
    config.epochs = 100;
    config.max_steps = 400;
    config.batch_size = 4;
    config.resize_width = 0;
    config.resize_height = 0;
    config.augment = glandseg::pipeline::AugmentKind::None;
    config.morph_radius = 1;
    config.min_area = 20;
    config
}

#[test]
fn criterion_8_desk_scale_end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let spec = SyntheticSpec {
        seed: 7,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, 32, &data_dir, "train").unwrap();
    generate_synthetic(&spec, 8, &data_dir, "testA").unwrap();

    let config = synthetic_config(&data_dir, &dir.path().join("run"));
    let outcome = train(&config).unwrap();
    assert!(outcome.steps >= 300, "trained only {} steps", outcome.steps);

    // Training-curve check: the final loss sits strictly below the moving
    // average of the first ten steps.
    let log = std::fs::read_to_string(&outcome.log_path).unwrap();
    let losses: Vec<f32> = log
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let early: f32 = losses[..10].iter().sum::<f32>() / 10.0;
    assert!(
        outcome.final_loss < early,
        "final loss {} not below early average {early}",
        outcome.final_loss
    );

    let eval = evaluate(&config, &outcome.checkpoint_path, Split::TestA).unwrap();
    let report = &eval.report;
    assert_eq!(report.per_image.len(), 8);
    assert!(
        report.mean_object_dice >= 0.80,
        "mean object dice {:.4} below 0.80",
        report.mean_object_dice
    );
    assert!(
        report.mean_f1_score >= 0.80,
        "mean F1 {:.4} below 0.80",
        report.mean_f1_score
    );

    // Determinism: a second training run with the same config and seed
    // produces bit-identical parameters.
    let mut quick_a = config.clone();
    quick_a.max_steps = 15;
    quick_a.out_dir = dir.path().join("det_a");
    let mut quick_b = quick_a.clone();
    quick_b.out_dir = dir.path().join("det_b");
    let ck_a = load_checkpoint(&train(&quick_a).unwrap().checkpoint_path).unwrap();
    let ck_b = load_checkpoint(&train(&quick_b).unwrap().checkpoint_path).unwrap();
    assert_eq!(ck_a.entries.len(), ck_b.entries.len());
    for ((na, sa, da), (nb, sb, db)) in ck_a.entries.iter().zip(ck_b.entries.iter()) {
        assert_eq!(na, nb);
        assert_eq!(sa, sb);
        assert_eq!(da, db, "parameter {na} differs between identical runs");
    }

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 900,
        "end-to-end run took {elapsed:?}, beyond the 15-minute budget"
    );
    println!(
        "criterion 8: PASS — {} steps on 32 synthetic images: object Dice {:.3}, F1 {:.3} \
         on 8 held-out images; deterministic; total {elapsed:?}",
        outcome.steps, report.mean_object_dice, report.mean_f1_score
    );
}

#[test]
fn criterion_9_oracle_probability_evaluation() {
    // Full-scale claims (e.g. object Dice 0.874 / F1 0.846 / Hausdorff 55.13
    // on the 60-image testA split) need the real dataset and hours of GPU
    // training, so they are not asserted here; instead the evaluation path
    // is validated end to end by feeding the ground truth itself as the
    // probability map, which must score perfectly on every image.
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let spec = SyntheticSpec {
        seed: 909,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, 8, &data_dir, "testA").unwrap();

    let mut config = synthetic_config(&data_dir, &dir.path().join("run"));
    // No morphology or area filtering: the oracle map is already clean, and
    // the check isolates resize/threshold/fill/label/metrics wiring.
    config.morph_radius = 0;
    config.min_area = 0;

    let outcome = evaluate_with(&config, Split::TestA, |_, _, gt| {
        Ok(gt.to_binary().to_probability())
    })
    .unwrap();
    let report = &outcome.report;
    assert_eq!(report.per_image.len(), 8);
    for row in &report.per_image {
        assert_eq!(row.object_dice, 1.0, "{}: dice", row.name);
        assert_eq!(row.f1_score, 1.0, "{}: f1", row.name);
        assert_eq!(row.hausdorff, 0.0, "{}: hausdorff", row.name);
    }
    // Report shape: one row per image plus the aggregate row.
    let csv = std::fs::read_to_string(&outcome.csv_path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 + 1);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    // Sanity on a non-identity map too: a half-resolution oracle map still
    // recovers every object after the resize step.
    let half = evaluate_with(&config, Split::TestA, |_, _, gt| {
        let full = gt.to_binary().to_probability();
        let half_w = gt.width / 2;
        let half_h = gt.height / 2;
        let mut vals = Vec::with_capacity(half_w * half_h);
        for y in 0..half_h {
            for x in 0..half_w {
                vals.push(full.get(x * 2, y * 2));
            }
        }
        Ok(ProbabilityMap::from_raw(half_w, half_h, vals))
    })
    .unwrap();
    assert!(half.report.mean_f1_score > 0.99);

    println!(
        "criterion 9: PASS — ground-truth probability maps score Dice 1 / F1 1 / Hausdorff 0 \
         on every image; table-scale reproduction documented as out of desk scope"
    );
}

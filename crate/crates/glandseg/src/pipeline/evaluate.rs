//! Evaluation and single-image inference: image -> network input ->
//! probability map -> post-processed label map -> object metrics,
//! with CSV/JSON reports in the result-table layout.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, restore_network, Checkpoint};
use super::config::{ExperimentConfig, InputMode};
use super::dataset::{load_dataset, DatasetRecord, Split};
use super::{PipelineError, Result};
use crate::mask::{LabeledMask, ProbabilityMap};
use crate::metrics::{aggregate_report, ImageMetrics, MetricsReport};
use crate::network::{build, MiniLinkNet, INPUT_DIVISOR};
use crate::postprocess::postprocess_pipeline;
use crate::preprocess::{
    extract_hematoxylin, resize_rgb_bilinear, unsharp_mask, ImageRGB, StainMatrix,
};
use crate::tensor::{no_grad, Mode, Tensor};

/// Turns an RGB image into the per-channel float planes the network expects.
pub fn build_network_input(
    img: &ImageRGB,
    mode: InputMode,
    stain: &StainMatrix,
    config: &ExperimentConfig,
) -> Vec<Vec<f32>> {
    match mode {
        InputMode::Rgb => {
            let n = img.width * img.height;
            (0..3)
                .map(|ch| {
                    (0..n)
                        .map(|i| img.bytes()[i * 3 + ch] as f32 / 255.0)
                        .collect()
                })
                .collect()
        }
        InputMode::Hematoxylin => vec![extract_hematoxylin(img, stain).values().to_vec()],
        InputMode::HematoxylinUnsharp => {
            let hema = extract_hematoxylin(img, stain);
            vec![
                unsharp_mask(&hema, config.unsharp_sigma, config.unsharp_amount)
                    .values()
                    .to_vec(),
            ]
        }
    }
}

/// Zero-pads planes on the right/bottom so both dimensions are multiples of
/// `divisor`. Returns the padded planes and the padded size.
pub(crate) fn pad_to_multiple(
    planes: Vec<Vec<f32>>,
    w: usize,
    h: usize,
    divisor: usize,
) -> (Vec<Vec<f32>>, usize, usize) {
    let pw = w.div_ceil(divisor) * divisor;
    let ph = h.div_ceil(divisor) * divisor;
    if (pw, ph) == (w, h) {
        return (planes, w, h);
    }
    let padded = planes
        .into_iter()
        .map(|plane| {
            let mut out = vec![0.0f32; pw * ph];
            for y in 0..h {
                out[y * pw..y * pw + w].copy_from_slice(&plane[y * w..y * w + w]);
            }
            out
        })
        .collect();
    (padded, pw, ph)
}

/// Runs the network on one image and returns the full-resolution probability
/// map at the network working size (after any configured resize, padding
/// cropped away).
pub fn predict_probability(
    net: &MiniLinkNet,
    img: &ImageRGB,
    config: &ExperimentConfig,
    stain: &StainMatrix,
) -> Result<ProbabilityMap> {
    let working = if config.resize_width > 0 {
        resize_rgb_bilinear(img, config.resize_width, config.resize_height)
    } else {
        img.clone()
    };
    let (w, h) = (working.width, working.height);
    let planes = build_network_input(&working, config.input_mode, stain, config);
    let channels = planes.len();
    let (planes, pw, ph) = pad_to_multiple(planes, w, h, INPUT_DIVISOR);
    let mut data = Vec::with_capacity(channels * pw * ph);
    for plane in &planes {
        data.extend_from_slice(plane);
    }
    let input = Tensor::from_vec(&[1, channels, ph, pw], data)?;
    let outputs = no_grad(|| net.forward(&input, Mode::Eval))?;
    let full = outputs.final_map.to_vec();
    // Crop the padding back off.
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        values.extend_from_slice(&full[y * pw..y * pw + w]);
    }
    Ok(ProbabilityMap::from_raw(w, h, values))
}

/// Builds the network described by a checkpoint and loads its weights,
/// verifying that the runtime config asks for a compatible network.
pub fn network_from_checkpoint(
    config: &ExperimentConfig,
    ckpt: &Checkpoint,
) -> Result<MiniLinkNet> {
    let saved = ckpt.config()?;
    if saved.preset != config.preset
        || saved.input_mode != config.input_mode
        || saved.coarse_tap_stage != config.coarse_tap_stage
    {
        return Err(PipelineError::CheckpointMismatch(format!(
            "checkpoint was trained with preset={} input_mode={} tap={}, runtime asks for \
             preset={} input_mode={} tap={}",
            saved.preset,
            saved.input_mode,
            saved.coarse_tap_stage,
            config.preset,
            config.input_mode,
            config.coarse_tap_stage
        )));
    }
    let net = build(&config.network_config()?)?;
    restore_network(&net, ckpt)?;
    Ok(net)
}

pub struct EvalOutcome {
    pub report: MetricsReport,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

/// Evaluates a split with an arbitrary probability-map provider. The
/// provider receives each record's image and must return per-pixel gland
/// probabilities (at any size; the post-processing resizes to the original).
pub fn evaluate_with<F>(config: &ExperimentConfig, split: Split, mut provider: F) -> Result<EvalOutcome>
where
    F: FnMut(&DatasetRecord, &ImageRGB, &LabeledMask) -> Result<ProbabilityMap>,
{
    let index = load_dataset(&config.data_dir)?;
    let records = index.split(split);
    if records.is_empty() {
        return Err(PipelineError::EmptySplit {
            split: split.to_string(),
            dir: config.data_dir.clone(),
        });
    }
    let params = config.postprocess_params();
    let mut rows = Vec::with_capacity(records.len());
    for record in records {
        let img = record.load_image()?;
        let gt = record.load_annotation()?;
        let prob = provider(record, &img, &gt)?;
        let labeled = postprocess_pipeline(&prob, &params, record.width, record.height);
        rows.push(ImageMetrics::compute(
            &record.name,
            &gt,
            &labeled,
            config.overlap_frac,
        )?);
    }
    let report = aggregate_report(rows)?;

    std::fs::create_dir_all(&config.out_dir).map_err(super::io_err(&config.out_dir))?;
    let csv_path = config.out_dir.join(format!("report_{split}.csv"));
    let json_path = config.out_dir.join(format!("report_{split}.json"));
    std::fs::write(&csv_path, report.to_csv()).map_err(super::io_err(&csv_path))?;
    std::fs::write(&json_path, report.to_json()).map_err(super::io_err(&json_path))?;
    Ok(EvalOutcome {
        report,
        csv_path,
        json_path,
    })
}

/// Full evaluation of a checkpoint on one split.
pub fn evaluate(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    split: Split,
) -> Result<EvalOutcome> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let net = network_from_checkpoint(config, &ckpt)?;
    let stain = config.stain_matrix()?;
    evaluate_with(config, split, |_, img, _| {
        predict_probability(&net, img, config, &stain)
    })
}

/// Segments one image: writes the labeled mask as a 16-bit PNG and,
/// optionally, the raw probability map.
pub fn segment(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    image_path: &Path,
    out_path: &Path,
    prob_out: Option<&Path>,
) -> Result<LabeledMask> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let net = network_from_checkpoint(config, &ckpt)?;
    let stain = config.stain_matrix()?;
    let img = ImageRGB::load(image_path)?;
    let prob = predict_probability(&net, &img, config, &stain)?;
    let labeled = postprocess_pipeline(&prob, &config.postprocess_params(), img.width, img.height);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(super::io_err(out_path))?;
        }
    }
    labeled.save_png(out_path)?;
    if let Some(prob_path) = prob_out {
        write_probability_map(&prob, prob_path)?;
    }
    Ok(labeled)
}

// ── Probability-map binary format ────────────────────────────────────

const PROB_MAGIC: &[u8; 4] = b"GSPM";

/// Writes a probability map: magic `GSPM`, u32 version (1), u32 width,
/// u32 height, then `width * height` little-endian f32 values, row-major.
pub fn write_probability_map(map: &ProbabilityMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + map.values().len() * 4);
    out.extend_from_slice(PROB_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(super::io_err(path))?;
    file.write_all(&out).map_err(super::io_err(path))?;
    Ok(())
}

pub fn read_probability_map(path: &Path) -> Result<ProbabilityMap> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(super::io_err(path))?
        .read_to_end(&mut buf)
        .map_err(super::io_err(path))?;
    let bad = |msg: &str| PipelineError::BadFile(path.to_path_buf(), msg.to_string());
    if buf.len() < 16 || &buf[0..4] != PROB_MAGIC {
        return Err(bad("not a probability map file"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    if u32_at(4) != 1 {
        return Err(bad("unsupported version"));
    }
    let (w, h) = (u32_at(8) as usize, u32_at(12) as usize);
    if buf.len() != 16 + w * h * 4 {
        return Err(bad("size does not match header"));
    }
    let values = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ProbabilityMap::from_raw(w, h, values))
}

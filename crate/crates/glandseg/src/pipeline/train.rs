//! The training loop: adaptive-moment gradient descent on the dual-output
//! loss, with per-step CSV logging and periodic checkpoints. Fully
//! deterministic for a given config and seed.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use super::dataset::{load_dataset, Split};
use super::evaluate::{build_network_input, pad_to_multiple};
use super::{PipelineError, Result};
use crate::losses::total_loss_with;
use crate::mask::{BinaryMask, LabeledMask};
use crate::network::{build, downsample_target, MiniLinkNet, INPUT_DIVISOR};
use crate::preprocess::{
    crop_image, crop_mask, resize_nearest, resize_rgb_bilinear, ImageRGB, StainMatrix, Transform,
};
use crate::tensor::{backward, Mode, Tensor};

// ── Optimizer ────────────────────────────────────────────────────────

/// Adam with bias correction. Moment buffers are kept in the network's
/// parameter visitation order.
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &MiniLinkNet, config: &ExperimentConfig) -> Adam {
        let sizes: Vec<usize> = net.parameters().iter().map(|(_, t)| t.numel()).collect();
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.adam_epsilon,
            t: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// One update over all parameters; parameters without a gradient this
    /// step are left untouched. Gradients are cleared afterwards.
    pub fn step(&mut self, params: &[(String, Tensor)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut data = p.data_mut();
            for (j, g) in grad.iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            drop(data);
            p.zero_grad();
        }
    }

    /// Moment buffers named after their parameters, for checkpointing.
    pub fn moment_entries(&self, net: &MiniLinkNet) -> Vec<(String, Vec<f32>, Vec<f32>)> {
        net.parameters()
            .into_iter()
            .enumerate()
            .map(|(i, (name, _))| (name, self.m[i].clone(), self.v[i].clone()))
            .collect()
    }

    /// Restores moments (and the step counter) from a checkpoint, if the
    /// optimizer state was saved.
    pub fn restore(&mut self, ckpt: &Checkpoint, net: &MiniLinkNet) -> Result<()> {
        for (i, (name, _)) in net.parameters().into_iter().enumerate() {
            let m = ckpt.get(&format!("adam.m.{name}"));
            let v = ckpt.get(&format!("adam.v.{name}"));
            match (m, v) {
                (Some((_, _, m)), Some((_, _, v)))
                    if m.len() == self.m[i].len() && v.len() == self.v[i].len() =>
                {
                    self.m[i].copy_from_slice(m);
                    self.v[i].copy_from_slice(v);
                }
                _ => {
                    return Err(PipelineError::CheckpointMismatch(format!(
                        "optimizer state for '{name}' missing or mismatched"
                    )))
                }
            }
        }
        self.t = ckpt.step;
        Ok(())
    }
}

// ── Training samples ─────────────────────────────────────────────────

struct SampleRef {
    source: usize,
    transform: Transform,
    rect: (usize, usize, usize, usize),
}

struct TrainingSet {
    /// Source pairs, resized to the configured working size.
    sources: Vec<(ImageRGB, LabeledMask)>,
    samples: Vec<SampleRef>,
}

fn build_training_set(config: &ExperimentConfig) -> Result<TrainingSet> {
    let index = load_dataset(&config.data_dir)?;
    let records = index.split(Split::Train);
    if records.is_empty() {
        return Err(PipelineError::EmptySplit {
            split: "train".into(),
            dir: config.data_dir.clone(),
        });
    }
    let mut sources = Vec::with_capacity(records.len());
    for record in &records {
        let mut img = record.load_image()?;
        let mut mask = record.load_annotation()?;
        if config.resize_width > 0 {
            img = resize_rgb_bilinear(&img, config.resize_width, config.resize_height);
            mask = resize_nearest(&mask, config.resize_width, config.resize_height);
        }
        sources.push((img, mask));
    }
    let spec = config.augment.spec();
    let mut samples = Vec::new();
    for (source, (img, _)) in sources.iter().enumerate() {
        for transform in &spec.transforms {
            let (tw, th) = transform.output_size(img.width, img.height);
            for rect in spec.crops.rects(tw, th)? {
                samples.push(SampleRef {
                    source,
                    transform: *transform,
                    rect,
                });
            }
        }
    }
    Ok(TrainingSet { sources, samples })
}

/// One materialized training example: network input planes plus targets.
struct Example {
    planes: Vec<Vec<f32>>,
    g_full: BinaryMask,
    g_coarse: BinaryMask,
    width: usize,
    height: usize,
}

fn materialize(
    set: &TrainingSet,
    sample: &SampleRef,
    config: &ExperimentConfig,
    stain: &StainMatrix,
    coarse_factor: usize,
) -> Result<Example> {
    let (src_img, src_mask) = &set.sources[sample.source];
    let timg = sample.transform.apply_to_image(src_img);
    let tmask = sample.transform.apply_to_mask(src_mask);
    let img = crop_image(&timg, sample.rect);
    let mask = crop_mask(&tmask, sample.rect);

    let planes = build_network_input(&img, config.input_mode, stain, config);
    let (planes, pw, ph) = pad_to_multiple(planes, img.width, img.height, INPUT_DIVISOR);
    let mut g_full = BinaryMask::new(pw, ph);
    for y in 0..mask.height {
        for x in 0..mask.width {
            g_full.set(x, y, mask.get(x, y) > 0);
        }
    }
    let g_coarse = downsample_target(&g_full, coarse_factor)?;
    Ok(Example {
        planes,
        g_full,
        g_coarse,
        width: pw,
        height: ph,
    })
}

fn stack_batch(examples: &[Example]) -> Result<(Tensor, Tensor, Tensor)> {
    let (w, h) = (examples[0].width, examples[0].height);
    let channels = examples[0].planes.len();
    let bsz = examples.len();
    let mut input = Vec::with_capacity(bsz * channels * w * h);
    let mut g_full = Vec::with_capacity(bsz * w * h);
    let mut g_coarse = Vec::new();
    for ex in examples {
        for plane in &ex.planes {
            input.extend_from_slice(plane);
        }
        g_full.extend(ex.g_full.pixels().iter().map(|b| *b as u8 as f32));
        g_coarse.extend(ex.g_coarse.pixels().iter().map(|b| *b as u8 as f32));
    }
    let (cw, ch) = (examples[0].g_coarse.width, examples[0].g_coarse.height);
    Ok((
        Tensor::from_vec(&[bsz, channels, h, w], input)?,
        Tensor::from_vec(&[bsz, 1, h, w], g_full)?,
        Tensor::from_vec(&[bsz, 1, ch, cw], g_coarse)?,
    ))
}

// ── The loop ─────────────────────────────────────────────────────────

pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub steps: usize,
    pub final_loss: f32,
}

/// Shape-homogeneous batches for one epoch, deterministically shuffled.
fn epoch_batches(
    set: &TrainingSet,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
    // Bucket samples by crop size (rotations swap width and height).
    let mut buckets: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, s) in set.samples.iter().enumerate() {
        buckets.entry((s.rect.2, s.rect.3)).or_default().push(i);
    }
    let mut batches = Vec::new();
    for bucket in buckets.values_mut() {
        bucket.shuffle(&mut rng);
        for chunk in bucket.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches.shuffle(&mut rng);
    batches
}

/// Trains per the config and writes the training log and final checkpoint
/// into `out_dir`.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let stain = config.stain_matrix()?;
    let net_config = config.network_config()?;
    let coarse_factor = net_config.coarse_factor();
    let net = build(&net_config)?;
    let params = net.parameters();
    let mut adam = Adam::new(&net, config);
    let set = build_training_set(config)?;

    std::fs::create_dir_all(&config.out_dir).map_err(super::io_err(&config.out_dir))?;
    let log_path = config.out_dir.join("training_log.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(super::io_err(&log_path))?,
    );
    writeln!(log, "step,bce,dice,accuracy,l_i,l_o,l_final").map_err(super::io_err(&log_path))?;

    let checkpoint_path = config.out_dir.join("checkpoint_final.ckpt");
    let mut step = 0usize;
    let mut final_loss = f32::NAN;

    'training: for epoch in 0..config.epochs {
        for batch in epoch_batches(&set, config.batch_size, config.seed, epoch) {
            let examples = batch
                .iter()
                .map(|&i| materialize(&set, &set.samples[i], config, &stain, coarse_factor))
                .collect::<Result<Vec<_>>>()?;
            let (input, g_full, g_coarse) = stack_batch(&examples)?;

            let outputs = net.forward(&input, Mode::Train)?;
            let (loss, values) = total_loss_with(
                config.loss_internal_kind(),
                config.loss,
                &g_full,
                &outputs.final_map,
                &g_coarse,
                &outputs.coarse,
                config.dice_smoothing,
            )?;
            step += 1;
            if !values.l_final.is_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    step,
                    value: values.l_final,
                });
            }
            backward(&loss)?;
            adam.step(&params);

            writeln!(
                log,
                "{step},{},{},{},{},{},{}",
                values.bce, values.dice, values.accuracy, values.l_i, values.l_o, values.l_final
            )
            .map_err(super::io_err(&log_path))?;
            final_loss = values.l_final;

            if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
                let path = config.out_dir.join(format!("checkpoint_step{step}.ckpt"));
                save_checkpoint(&path, config, &net, Some(&adam), adam.t)?;
            }
            if config.max_steps > 0 && step >= config.max_steps {
                break 'training;
            }
        }
    }
    log.flush().map_err(super::io_err(&log_path))?;
    save_checkpoint(&checkpoint_path, config, &net, Some(&adam), adam.t)?;
    Ok(TrainOutcome {
        checkpoint_path,
        log_path,
        steps: step,
        final_loss,
    })
}

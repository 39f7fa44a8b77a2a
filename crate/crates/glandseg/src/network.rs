//! The segmentation network: a residual encoder-decoder in the LinkNet
//! family with additive skip links, plus a second, coarse-scale output head
//! so the early layers receive direct supervision.
//!
//! Layout for an `H x W` input (both divisible by 32):
//!
//! * stem: 7x7 stride-2 conv, norm, relu, 2x max-pool            -> H/4
//! * encoder stages 1-4 (residual blocks; stages 2-4 downsample) -> H/4..H/32
//! * decoder blocks 4-1 (1x1 reduce, upsample, 1x1 expand), each
//!   receiving the matching encoder output as an additive skip   -> back to H/4
//! * final head: two 2x transposed convs around a 3x3 conv, then
//!   a 1x1 conv and sigmoid                                      -> H x W
//! * coarse head: 1x1 conv + sigmoid on a configurable decoder
//!   stage output (default: the last, at H/4)
//!
//! Decoder block 1 keeps its resolution (its skip partner, the stem output,
//! is already at H/4); the other three upsample by 2.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::mask::BinaryMask;
use crate::tensor::{
    add, batchnorm2d, conv2d, conv_transpose2d, maxpool2d, relu, sigmoid, Mode, RunningStats,
    Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("spatial dims {width}x{height} must be divisible by {divisor}")]
    IndivisibleDims {
        width: usize,
        height: usize,
        divisor: usize,
    },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Spatial downscale factor between network input and the stem/decoder grid.
pub const INPUT_DIVISOR: usize = 32;

// ── Configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// 1 for the hematoxylin plane, 3 for RGB.
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Widths of the four encoder stages.
    pub encoder_channels: [usize; 4],
    pub blocks_per_stage: usize,
    /// Which decoder stage feeds the coarse head, 1 (last, resolution H/4)
    /// through 4 (deepest, resolution H/16).
    pub coarse_tap_stage: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Small preset for CPU-scale experiments and tests.
    pub fn tiny(seed: u64) -> NetworkConfig {
        NetworkConfig {
            in_channels: 1,
            stem_channels: 8,
            encoder_channels: [8, 16, 32, 64],
            blocks_per_stage: 1,
            coarse_tap_stage: 1,
            seed,
        }
    }

    /// Full-size preset (ResNet-18-shaped encoder, ~11.5M parameters).
    pub fn full(seed: u64) -> NetworkConfig {
        NetworkConfig {
            in_channels: 1,
            stem_channels: 64,
            encoder_channels: [64, 128, 256, 512],
            blocks_per_stage: 2,
            coarse_tap_stage: 1,
            seed,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<NetworkConfig> {
        match name {
            "tiny" => Ok(NetworkConfig::tiny(seed)),
            "full" => Ok(NetworkConfig::full(seed)),
            other => Err(NetworkError::InvalidConfig(format!(
                "unknown preset '{other}' (expected tiny|full)"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.stem_channels == 0
            || self.encoder_channels.iter().any(|c| *c == 0)
            || self.blocks_per_stage == 0
        {
            return Err(NetworkError::InvalidConfig(
                "channel and block counts must be >= 1".into(),
            ));
        }
        if !(1..=4).contains(&self.coarse_tap_stage) {
            return Err(NetworkError::InvalidConfig(format!(
                "coarse_tap_stage {} out of range 1..=4",
                self.coarse_tap_stage
            )));
        }
        Ok(())
    }

    /// Input-to-coarse-map downscale factor for the configured tap.
    pub fn coarse_factor(&self) -> usize {
        match self.coarse_tap_stage {
            1 | 2 => 4,
            3 => 8,
            _ => 16,
        }
    }
}

// ── Layers ───────────────────────────────────────────────────────────

fn init_weight(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap().requires_grad()
}

struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Conv {
        Conv {
            weight: init_weight(&[cout, cin, k, k], cin * k * k, rng),
            bias: bias.then(|| Tensor::zeros(&[cout]).requires_grad()),
            stride,
            padding,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)?)
    }
}

struct ConvT {
    weight: Tensor,
    stride: usize,
}

impl ConvT {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> ConvT {
        ConvT {
            weight: init_weight(&[cin, cout, k, k], cin * k * k, rng),
            stride,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv_transpose2d(x, &self.weight, None, self.stride)?)
    }
}

struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    stats: std::cell::RefCell<RunningStats>,
    momentum: f32,
    eps: f32,
}

impl BatchNorm {
    fn new(channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: Tensor::ones(&[channels]).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
            stats: std::cell::RefCell::new(RunningStats::new(channels)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(batchnorm2d(
            x,
            &self.gamma,
            &self.beta,
            &mut self.stats.borrow_mut(),
            self.momentum,
            self.eps,
            mode,
        )?)
    }
}

/// conv-norm-relu-conv-norm plus the identity (or projected) skip, relu
/// after the addition.
struct ResidualBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    projection: Option<(Conv, BatchNorm)>,
}

impl ResidualBlock {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> ResidualBlock {
        let projection = (stride != 1 || cin != cout)
            .then(|| (Conv::new(cin, cout, 1, stride, 0, false, rng), BatchNorm::new(cout)));
        ResidualBlock {
            conv1: Conv::new(cin, cout, 3, stride, 1, false, rng),
            bn1: BatchNorm::new(cout),
            conv2: Conv::new(cout, cout, 3, 1, 1, false, rng),
            bn2: BatchNorm::new(cout),
            projection,
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(relu(&add(&y, &shortcut)?))
    }
}

/// 1x1 reduce to m/4, upsample (or 3x3 conv at stride 1), 1x1 expand, each
/// followed by norm and relu.
struct DecoderBlock {
    reduce: Conv,
    bn1: BatchNorm,
    up: UpPath,
    bn2: BatchNorm,
    expand: Conv,
    bn3: BatchNorm,
}

enum UpPath {
    Doubling(ConvT),
    SameSize(Conv),
}

impl DecoderBlock {
    fn new(cin: usize, cout: usize, upsample: bool, rng: &mut ChaCha8Rng) -> DecoderBlock {
        let mid = (cin / 4).max(1);
        let up = if upsample {
            UpPath::Doubling(ConvT::new(mid, mid, 2, 2, rng))
        } else {
            UpPath::SameSize(Conv::new(mid, mid, 3, 1, 1, false, rng))
        };
        DecoderBlock {
            reduce: Conv::new(cin, mid, 1, 1, 0, false, rng),
            bn1: BatchNorm::new(mid),
            up,
            bn2: BatchNorm::new(mid),
            expand: Conv::new(mid, cout, 1, 1, 0, false, rng),
            bn3: BatchNorm::new(cout),
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = relu(&self.bn1.forward(&self.reduce.forward(x)?, mode)?);
        let y = match &self.up {
            UpPath::Doubling(tconv) => tconv.forward(&y)?,
            UpPath::SameSize(conv) => conv.forward(&y)?,
        };
        let y = relu(&self.bn2.forward(&y, mode)?);
        Ok(relu(&self.bn3.forward(&self.expand.forward(&y)?, mode)?))
    }
}

// ── The network ──────────────────────────────────────────────────────

/// Both network outputs: per-pixel gland probabilities at full resolution
/// and at the coarse tap resolution. All values lie strictly in (0, 1).
pub struct NetworkOutputs {
    pub final_map: Tensor,
    pub coarse: Tensor,
}

pub struct MiniLinkNet {
    config: NetworkConfig,
    stem_conv: Conv,
    stem_bn: BatchNorm,
    /// Encoder stages 1-4, each a chain of residual blocks.
    stages: Vec<Vec<ResidualBlock>>,
    /// Decoder blocks in application order: decoders[0] is the deepest
    /// (stage 4), decoders[3] the last (stage 1).
    decoders: Vec<DecoderBlock>,
    final_up1: ConvT,
    final_bn1: BatchNorm,
    final_conv: Conv,
    final_bn2: BatchNorm,
    final_up2: ConvT,
    final_bn3: BatchNorm,
    final_out: Conv,
    coarse_out: Conv,
}

/// Builds the network with deterministic fan-in-scaled normal initialization.
pub fn build(config: &NetworkConfig) -> Result<MiniLinkNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [e1, e2, e3, e4] = config.encoder_channels;
    let stem = config.stem_channels;

    let stem_conv = Conv::new(config.in_channels, stem, 7, 2, 3, false, &mut rng);
    let stem_bn = BatchNorm::new(stem);

    let mut stages = Vec::with_capacity(4);
    let mut cin = stem;
    for (stage_idx, &cout) in [e1, e2, e3, e4].iter().enumerate() {
        let stride = if stage_idx == 0 { 1 } else { 2 };
        let mut blocks = Vec::with_capacity(config.blocks_per_stage);
        blocks.push(ResidualBlock::new(cin, cout, stride, &mut rng));
        for _ in 1..config.blocks_per_stage {
            blocks.push(ResidualBlock::new(cout, cout, 1, &mut rng));
        }
        stages.push(blocks);
        cin = cout;
    }

    // Decoder 4: e4 -> e3 (x2), 3: e3 -> e2 (x2), 2: e2 -> e1 (x2),
    // 1: e1 -> stem (same size; its skip partner is the stem output).
    let decoders = vec![
        DecoderBlock::new(e4, e3, true, &mut rng),
        DecoderBlock::new(e3, e2, true, &mut rng),
        DecoderBlock::new(e2, e1, true, &mut rng),
        DecoderBlock::new(e1, stem, false, &mut rng),
    ];

    let half = (stem / 2).max(1);
    let quarter = (stem / 4).max(1);
    let final_up1 = ConvT::new(stem, half, 2, 2, &mut rng);
    let final_bn1 = BatchNorm::new(half);
    let final_conv = Conv::new(half, half, 3, 1, 1, false, &mut rng);
    let final_bn2 = BatchNorm::new(half);
    let final_up2 = ConvT::new(half, quarter, 2, 2, &mut rng);
    let final_bn3 = BatchNorm::new(quarter);
    let final_out = Conv::new(quarter, 1, 1, 1, 0, true, &mut rng);

    let tap_channels = match config.coarse_tap_stage {
        1 => stem,
        s => config.encoder_channels[s - 2],
    };
    let coarse_out = Conv::new(tap_channels, 1, 1, 1, 0, true, &mut rng);

    Ok(MiniLinkNet {
        config: config.clone(),
        stem_conv,
        stem_bn,
        stages,
        decoders,
        final_up1,
        final_bn1,
        final_conv,
        final_bn2,
        final_up2,
        final_bn3,
        final_out,
        coarse_out,
    })
}

impl MiniLinkNet {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Runs the network on a `[B, C, H, W]` batch (H, W divisible by 32).
    /// Train mode updates the normalization running statistics; eval mode
    /// reads them and leaves the network untouched.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<NetworkOutputs> {
        let (h, w) = (batch.shape()[2], batch.shape()[3]);
        if h % INPUT_DIVISOR != 0 || w % INPUT_DIVISOR != 0 {
            return Err(NetworkError::IndivisibleDims {
                width: w,
                height: h,
                divisor: INPUT_DIVISOR,
            });
        }

        let stem = relu(&self.stem_bn.forward(&self.stem_conv.forward(batch)?, mode)?);
        let stem = maxpool2d(&stem, 2, 2)?; // H/4

        let mut encoder_outputs = Vec::with_capacity(4);
        let mut x = stem.clone();
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x, mode)?;
            }
            encoder_outputs.push(x.clone());
        }

        // Decoder with additive skips. decoders[i] consumes the current map
        // and adds the matching shallower encoder output (or the stem).
        let mut decoder_outputs: Vec<Tensor> = Vec::with_capacity(4);
        let mut y = encoder_outputs[3].clone();
        for (i, decoder) in self.decoders.iter().enumerate() {
            let skip = if i < 3 {
                &encoder_outputs[2 - i]
            } else {
                &stem
            };
            y = add(&decoder.forward(&y, mode)?, skip)?;
            decoder_outputs.push(y.clone());
        }

        let f = relu(&self.final_bn1.forward(&self.final_up1.forward(&y)?, mode)?);
        let f = relu(&self.final_bn2.forward(&self.final_conv.forward(&f)?, mode)?);
        let f = relu(&self.final_bn3.forward(&self.final_up2.forward(&f)?, mode)?);
        let final_map = sigmoid(&self.final_out.forward(&f)?);

        // decoder_outputs[3] is stage 1, [0] is stage 4.
        let tap = &decoder_outputs[4 - self.config.coarse_tap_stage];
        let coarse = sigmoid(&self.coarse_out.forward(tap)?);

        Ok(NetworkOutputs { final_map, coarse })
    }

    /// Visits every learnable parameter with a stable name, in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let conv = |name: &str, c: &Conv, f: &mut dyn FnMut(&str, &Tensor)| {
            f(&format!("{name}.weight"), &c.weight);
            if let Some(b) = &c.bias {
                f(&format!("{name}.bias"), b);
            }
        };
        let bn = |name: &str, b: &BatchNorm, f: &mut dyn FnMut(&str, &Tensor)| {
            f(&format!("{name}.gamma"), &b.gamma);
            f(&format!("{name}.beta"), &b.beta);
        };

        conv("stem.conv", &self.stem_conv, f);
        bn("stem.bn", &self.stem_bn, f);
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                let p = format!("enc{}.block{}", si + 1, bi);
                conv(&format!("{p}.conv1"), &block.conv1, f);
                bn(&format!("{p}.bn1"), &block.bn1, f);
                conv(&format!("{p}.conv2"), &block.conv2, f);
                bn(&format!("{p}.bn2"), &block.bn2, f);
                if let Some((pc, pb)) = &block.projection {
                    conv(&format!("{p}.proj.conv"), pc, f);
                    bn(&format!("{p}.proj.bn"), pb, f);
                }
            }
        }
        for (di, d) in self.decoders.iter().enumerate() {
            let p = format!("dec{}", 4 - di);
            conv(&format!("{p}.reduce"), &d.reduce, f);
            bn(&format!("{p}.bn1"), &d.bn1, f);
            match &d.up {
                UpPath::Doubling(t) => f(&format!("{p}.up.weight"), &t.weight),
                UpPath::SameSize(c) => conv(&format!("{p}.up"), c, f),
            }
            bn(&format!("{p}.bn2"), &d.bn2, f);
            conv(&format!("{p}.expand"), &d.expand, f);
            bn(&format!("{p}.bn3"), &d.bn3, f);
        }
        f("final.up1.weight", &self.final_up1.weight);
        bn("final.bn1", &self.final_bn1, f);
        conv("final.conv", &self.final_conv, f);
        bn("final.bn2", &self.final_bn2, f);
        f("final.up2.weight", &self.final_up2.weight);
        bn("final.bn3", &self.final_bn3, f);
        conv("final.out", &self.final_out, f);
        conv("coarse.out", &self.coarse_out, f);
    }

    /// Visits every normalization layer (for running-statistics I/O).
    pub fn visit_norms(&self, f: &mut dyn FnMut(&str, &std::cell::RefCell<RunningStats>)) {
        f("stem.bn", &self.stem_bn.stats);
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                let p = format!("enc{}.block{}", si + 1, bi);
                f(&format!("{p}.bn1"), &block.bn1.stats);
                f(&format!("{p}.bn2"), &block.bn2.stats);
                if let Some((_, pb)) = &block.projection {
                    f(&format!("{p}.proj.bn"), &pb.stats);
                }
            }
        }
        for (di, d) in self.decoders.iter().enumerate() {
            let p = format!("dec{}", 4 - di);
            f(&format!("{p}.bn1"), &d.bn1.stats);
            f(&format!("{p}.bn2"), &d.bn2.stats);
            f(&format!("{p}.bn3"), &d.bn3.stats);
        }
        f("final.bn1", &self.final_bn1.stats);
        f("final.bn2", &self.final_bn2.stats);
        f("final.bn3", &self.final_bn3.stats);
    }

    /// All learnable parameter tensors, in visitation order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Clears all parameter gradients.
    pub fn zero_grads(&self) {
        self.visit_params(&mut |_, t| t.zero_grad());
    }
}

/// Exact count of scalar learnable parameters (running stats excluded).
pub fn num_params(net: &MiniLinkNet) -> usize {
    let mut total = 0usize;
    net.visit_params(&mut |_, t| total += t.numel());
    total
}

/// Coarse ground truth: average-pool a binary mask by `factor`, then
/// binarize at mean >= 0.5.
pub fn downsample_target(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 || mask.width % factor != 0 || mask.height % factor != 0 {
        return Err(NetworkError::IndivisibleDims {
            width: mask.width,
            height: mask.height,
            divisor: factor.max(1),
        });
    }
    let (ow, oh) = (mask.width / factor, mask.height / factor);
    let mut out = BinaryMask::new(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut count = 0usize;
            for dy in 0..factor {
                for dx in 0..factor {
                    if mask.get(ox * factor + dx, oy * factor + dy) {
                        count += 1;
                    }
                }
            }
            out.set(ox, oy, 2 * count >= factor * factor);
        }
    }
    Ok(out)
}

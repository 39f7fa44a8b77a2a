//! Experiment configuration: a flat `key = value` text format plus typed
//! accessors. Command-line flags override file values; the file overrides
//! the defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::{PipelineError, Result};
use crate::losses::LossKind;
use crate::network::NetworkConfig;
use crate::postprocess::PostprocessParams;
use crate::preprocess::{AugmentSpec, StainMatrix, DEFAULT_EOSIN, DEFAULT_HEMATOXYLIN};

/// What the network sees as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Raw RGB, three channels.
    Rgb,
    /// Hematoxylin concentration plane, one channel.
    Hematoxylin,
    /// Hematoxylin plane with unsharp masking, one channel.
    HematoxylinUnsharp,
}

impl InputMode {
    pub fn channels(&self) -> usize {
        match self {
            InputMode::Rgb => 3,
            _ => 1,
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<InputMode, String> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(InputMode::Rgb),
            "hematoxylin" => Ok(InputMode::Hematoxylin),
            "hematoxylin_unsharp" | "hematoxylin+unsharp" => Ok(InputMode::HematoxylinUnsharp),
            other => Err(format!(
                "unknown input mode '{other}' (expected rgb|hematoxylin|hematoxylin_unsharp)"
            )),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.kv_value())
    }
}

impl InputMode {
    fn kv_value(&self) -> &'static str {
        match self {
            InputMode::Rgb => "rgb",
            InputMode::Hematoxylin => "hematoxylin",
            InputMode::HematoxylinUnsharp => "hematoxylin_unsharp",
        }
    }
}

/// Augmentation policy by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    /// Identity transform, full-size crop.
    None,
    /// 4 rotations x 3 flip states x 4 quadrant crops (48 per image).
    Full,
}

impl AugmentKind {
    pub fn spec(&self) -> AugmentSpec {
        match self {
            AugmentKind::None => AugmentSpec::identity(),
            AugmentKind::Full => AugmentSpec::rotations_flips_quadrants(),
        }
    }

    fn kv_value(&self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Full => "full",
        }
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<AugmentKind, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AugmentKind::None),
            "full" => Ok(AugmentKind::Full),
            other => Err(format!("unknown augment kind '{other}' (expected none|full)")),
        }
    }
}

/// Everything one experiment needs. See the README for the key reference.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub input_mode: InputMode,
    pub loss: LossKind,
    /// Loss for the internal (coarse) head; defaults to `loss`.
    pub loss_internal: Option<LossKind>,
    pub preset: String,
    pub coarse_tap_stage: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_epsilon: f32,
    /// Target size images are resized to before augmentation; 0 keeps the
    /// original size.
    pub resize_width: usize,
    pub resize_height: usize,
    pub augment: AugmentKind,
    pub unsharp_sigma: f32,
    pub unsharp_amount: f32,
    pub stain_hematoxylin: [f64; 3],
    pub stain_eosin: [f64; 3],
    pub dice_smoothing: f32,
    pub morph_radius: usize,
    pub min_area: usize,
    pub connectivity: u8,
    /// Minimum overlap fraction of a ground-truth object for an F1 match.
    pub overlap_frac: f64,
    /// Save a checkpoint every N steps; 0 saves only the final one.
    pub checkpoint_interval: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            input_mode: InputMode::Hematoxylin,
            loss: LossKind::L3,
            loss_internal: None,
            preset: "full".into(),
            coarse_tap_stage: 1,
            seed: 1,
            epochs: 100,
            max_steps: 0,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            resize_width: 832,
            resize_height: 576,
            augment: AugmentKind::Full,
            unsharp_sigma: 2.0,
            unsharp_amount: 1.0,
            stain_hematoxylin: DEFAULT_HEMATOXYLIN,
            stain_eosin: DEFAULT_EOSIN,
            dice_smoothing: 1.0,
            morph_radius: 2,
            min_area: 100,
            connectivity: 8,
            overlap_frac: 0.5,
            checkpoint_interval: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_vec3(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(PipelineError::Config(format!(
            "key '{key}': expected three comma-separated numbers, got '{value}'"
        )));
    }
    Ok([
        parse_num(key, parts[0])?,
        parse_num(key, parts[1])?,
        parse_num(key, parts[2])?,
    ])
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "input_mode" => {
                self.input_mode = value.parse().map_err(PipelineError::Config)?
            }
            "loss" => self.loss = value.parse().map_err(PipelineError::Config)?,
            "loss_internal" => {
                self.loss_internal = Some(value.parse().map_err(PipelineError::Config)?)
            }
            "preset" => self.preset = value.to_string(),
            "coarse_tap_stage" => self.coarse_tap_stage = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "max_steps" => self.max_steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(key, value)?,
            "resize_width" => self.resize_width = parse_num(key, value)?,
            "resize_height" => self.resize_height = parse_num(key, value)?,
            "augment" => self.augment = value.parse().map_err(PipelineError::Config)?,
            "unsharp_sigma" => self.unsharp_sigma = parse_num(key, value)?,
            "unsharp_amount" => self.unsharp_amount = parse_num(key, value)?,
            "stain_hematoxylin" => self.stain_hematoxylin = parse_vec3(key, value)?,
            "stain_eosin" => self.stain_eosin = parse_vec3(key, value)?,
            "dice_smoothing" => self.dice_smoothing = parse_num(key, value)?,
            "morph_radius" => self.morph_radius = parse_num(key, value)?,
            "min_area" => self.min_area = parse_num(key, value)?,
            "connectivity" => self.connectivity = parse_num(key, value)?,
            "overlap_frac" => self.overlap_frac = parse_num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, value)?,
            other => {
                return Err(PipelineError::Config(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    /// Parses flat `key = value` text ('#' starts a comment). Returns the
    /// config and the set of keys the text assigned.
    pub fn parse(text: &str) -> Result<(ExperimentConfig, BTreeSet<String>)> {
        let mut config = ExperimentConfig::default();
        let mut keys = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            config.apply_kv(key, value)?;
            keys.insert(key.to_string());
        }
        config.validate()?;
        Ok((config, keys))
    }

    pub fn from_file(path: &Path) -> Result<(ExperimentConfig, BTreeSet<String>)> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        ExperimentConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(PipelineError::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("beta1", self.beta1 as f64),
            ("beta2", self.beta2 as f64),
            ("adam_epsilon", self.adam_epsilon as f64),
            ("unsharp_sigma", self.unsharp_sigma as f64),
            ("dice_smoothing", self.dice_smoothing as f64),
            ("overlap_frac", self.overlap_frac),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(PipelineError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(PipelineError::Config(format!(
                "connectivity must be 4 or 8, got {}",
                self.connectivity
            )));
        }
        if (self.resize_width == 0) != (self.resize_height == 0) {
            return Err(PipelineError::Config(
                "resize_width and resize_height must both be set or both be 0".into(),
            ));
        }
        Ok(())
    }

    /// Serializes back to the flat `key = value` format (checkpoint blob).
    pub fn to_kv_string(&self) -> String {
        let v3 = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let mut s = String::new();
        let mut push = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        push("data_dir", self.data_dir.display().to_string());
        push("out_dir", self.out_dir.display().to_string());
        push("input_mode", self.input_mode.kv_value().into());
        push("loss", self.loss.to_string().to_lowercase());
        if let Some(li) = self.loss_internal {
            push("loss_internal", li.to_string().to_lowercase());
        }
        push("preset", self.preset.clone());
        push("coarse_tap_stage", self.coarse_tap_stage.to_string());
        push("seed", self.seed.to_string());
        push("epochs", self.epochs.to_string());
        push("max_steps", self.max_steps.to_string());
        push("batch_size", self.batch_size.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("beta1", self.beta1.to_string());
        push("beta2", self.beta2.to_string());
        push("adam_epsilon", self.adam_epsilon.to_string());
        push("resize_width", self.resize_width.to_string());
        push("resize_height", self.resize_height.to_string());
        push("augment", self.augment.kv_value().into());
        push("unsharp_sigma", self.unsharp_sigma.to_string());
        push("unsharp_amount", self.unsharp_amount.to_string());
        push("stain_hematoxylin", v3(self.stain_hematoxylin));
        push("stain_eosin", v3(self.stain_eosin));
        push("dice_smoothing", self.dice_smoothing.to_string());
        push("morph_radius", self.morph_radius.to_string());
        push("min_area", self.min_area.to_string());
        push("connectivity", self.connectivity.to_string());
        push("overlap_frac", self.overlap_frac.to_string());
        push("checkpoint_interval", self.checkpoint_interval.to_string());
        s
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        let mut cfg = NetworkConfig::by_name(&self.preset, self.seed)?;
        cfg.in_channels = self.input_mode.channels();
        cfg.coarse_tap_stage = self.coarse_tap_stage;
        Ok(cfg)
    }

    pub fn stain_matrix(&self) -> Result<StainMatrix> {
        Ok(StainMatrix::new(self.stain_hematoxylin, self.stain_eosin)?)
    }

    pub fn postprocess_params(&self) -> PostprocessParams {
        PostprocessParams {
            morph_radius: self.morph_radius,
            min_area: self.min_area,
            connectivity: self.connectivity,
        }
    }

    pub fn loss_internal_kind(&self) -> LossKind {
        self.loss_internal.unwrap_or(self.loss)
    }
}

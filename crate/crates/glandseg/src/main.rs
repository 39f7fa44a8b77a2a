//! Command-line interface for the gland segmentation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glandseg::pipeline::{
    evaluate, generate_synthetic, gradient_verification_suite, load_dataset, segment, train,
    ExperimentConfig, Split, SyntheticSpec,
};
use glandseg::preprocess::{extract_hematoxylin, unsharp_mask, ImageRGB};

#[derive(Parser)]
#[command(
    name = "glandseg",
    about = "Gland segmentation for H&E histopathology images",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file plus flag overrides shared by the experiment subcommands.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// rgb | hematoxylin | hematoxylin_unsharp
    #[arg(long)]
    input_mode: Option<String>,
    /// l1 | l2 | l3
    #[arg(long)]
    loss: Option<String>,
    /// tiny | full
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hard cap on optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// none | full
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    resize_width: Option<usize>,
    #[arg(long)]
    resize_height: Option<usize>,
}

impl ConfigArgs {
    /// Loads the config file (if any) and applies flag overrides on top.
    /// When a flag overrides a value the file set, the override is echoed.
    fn resolve(&self) -> Result<ExperimentConfig, String> {
        let (mut config, file_keys) = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
            None => (ExperimentConfig::default(), Default::default()),
        };
        let mut overrides: Vec<(&str, String)> = Vec::new();
        let mut add = |key: &'static str, value: Option<String>| {
            if let Some(v) = value {
                overrides.push((key, v));
            }
        };
        add("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        add("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        add("input_mode", self.input_mode.clone());
        add("loss", self.loss.clone());
        add("preset", self.preset.clone());
        add("seed", self.seed.map(|v| v.to_string()));
        add("epochs", self.epochs.map(|v| v.to_string()));
        add("max_steps", self.steps.map(|v| v.to_string()));
        add("batch_size", self.batch_size.map(|v| v.to_string()));
        add("learning_rate", self.learning_rate.map(|v| v.to_string()));
        add("augment", self.augment.clone());
        add("resize_width", self.resize_width.map(|v| v.to_string()));
        add("resize_height", self.resize_height.map(|v| v.to_string()));

        for (key, value) in overrides {
            if file_keys.contains(key) {
                println!("note: --{} overrides the config file value", key.replace('_', "-"));
            }
            config.apply_kv(key, &value).map_err(|e| e.to_string())?;
        }
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic H&E-like dataset.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of training images.
        #[arg(long, default_value_t = 32)]
        train: usize,
        /// Number of testA images.
        #[arg(long, default_value_t = 8)]
        test_a: usize,
        /// Number of testB images.
        #[arg(long, default_value_t = 0)]
        test_b: usize,
        /// Image side length (square images).
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Glands per image, as min,max.
        #[arg(long, default_value = "2,4")]
        glands: String,
    },
    /// Extract and write the preprocessing planes for one image.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input RGB image (PNG or BMP).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the hematoxylin and unsharp PNGs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network per the config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a dataset split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | testA | testB
        #[arg(long)]
        split: String,
    },
    /// Segment one image with a trained checkpoint.
    Segment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input RGB image.
        #[arg(long)]
        input: PathBuf,
        /// Output 16-bit label PNG.
        #[arg(long)]
        output: PathBuf,
        /// Optionally also write the raw probability map (GSPM binary).
        #[arg(long)]
        prob_out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient verification suite.
    Gradcheck {
        /// Random instances per op.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Synth {
            config,
            out,
            train,
            test_a,
            test_b,
            size,
            glands,
        } => {
            let seed = config.resolve()?.seed;
            let (lo, hi) = glands
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| format!("--glands expects 'min,max', got '{glands}'"))?;
            let spec = SyntheticSpec {
                width: size,
                height: size,
                gland_count: (lo, hi),
                seed,
                ..SyntheticSpec::default()
            };
            for (prefix, count) in [("train", train), ("testA", test_a), ("testB", test_b)] {
                if count > 0 {
                    generate_synthetic(&spec, count, &out, prefix).map_err(|e| e.to_string())?;
                }
            }
            let index = load_dataset(&out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} images to {} ({} train / {} testA / {} testB)",
                index.records.len(),
                out.display(),
                index.split(Split::Train).len(),
                index.split(Split::TestA).len(),
                index.split(Split::TestB).len()
            );
            Ok(())
        }
        Command::Preprocess { config, input, out } => {
            let config = config.resolve()?;
            let stain = config.stain_matrix().map_err(|e| e.to_string())?;
            let img = ImageRGB::load(&input).map_err(|e| e.to_string())?;
            let hema = extract_hematoxylin(&img, &stain);
            let sharp = unsharp_mask(&hema, config.unsharp_sigma, config.unsharp_amount);
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let stem = input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let hema_path = out.join(format!("{stem}_hematoxylin.png"));
            let sharp_path = out.join(format!("{stem}_unsharp.png"));
            hema.save_png(&hema_path).map_err(|e| e.to_string())?;
            sharp.save_png(&sharp_path).map_err(|e| e.to_string())?;
            println!("wrote {} and {}", hema_path.display(), sharp_path.display());
            Ok(())
        }
        Command::Train { config } => {
            let config = config.resolve()?;
            let outcome = train(&config).map_err(|e| e.to_string())?;
            println!(
                "trained {} steps (final l_final = {:.4});\n  checkpoint: {}\n  log: {}",
                outcome.steps,
                outcome.final_loss,
                outcome.checkpoint_path.display(),
                outcome.log_path.display()
            );
            Ok(())
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
        } => {
            let config = config.resolve()?;
            let split: Split = split.parse()?;
            let outcome = evaluate(&config, &checkpoint, split).map_err(|e| e.to_string())?;
            let r = &outcome.report;
            println!(
                "{} images | object Dice {:.4} | F1 {:.4} | Hausdorff {:.3}",
                r.per_image.len(),
                r.mean_object_dice,
                r.mean_f1_score,
                r.mean_hausdorff
            );
            println!(
                "reports: {} / {}",
                outcome.csv_path.display(),
                outcome.json_path.display()
            );
            Ok(())
        }
        Command::Segment {
            config,
            checkpoint,
            input,
            output,
            prob_out,
        } => {
            let config = config.resolve()?;
            let labeled = segment(&config, &checkpoint, &input, &output, prob_out.as_deref())
                .map_err(|e| e.to_string())?;
            println!(
                "segmented {} objects -> {}",
                labeled.max_label(),
                output.display()
            );
            Ok(())
        }
        Command::Gradcheck { instances } => {
            let outcomes = gradient_verification_suite(instances).map_err(|e| e.to_string())?;
            let mut all_pass = true;
            for o in &outcomes {
                println!(
                    "{:18} {:3} instances   worst rel err {:>10.3e}   {}",
                    o.name,
                    o.instances,
                    o.worst_rel_err,
                    if o.pass { "PASS" } else { "FAIL" }
                );
                all_pass &= o.pass;
            }
            if all_pass {
                println!("all gradient checks passed");
                Ok(())
            } else {
                Err("gradient verification failed".into())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

//! `undive`: train the diffusion prior and the enhancer, enhance videos,
//! score them, and generate synthetic data.
//!
//! Exit status: 0 on success, 2 on invalid input, 1 on runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use undive::checkpoint::Checkpoint;
use undive::diffusion::train_prior;
use undive::enhancer::SpatialModel;
use undive::harness::{
    enhance_video, load_paired_dataset, load_video, make_synthetic_dataset, make_synthetic_video, save_paired_dataset,
    save_video, select_training_crops, train_spatial, train_temporal, Config, DepthMode, EnhanceOptions, StepLog,
    SynthSettings,
};
use undive::imgcore::io::{ensure_dir, frame_file_name};
use undive::imgcore::save_frame;
use undive::metrics::{evaluate_video, EvalOptions};
use undive::{Error, Result};

#[derive(Parser)]
#[command(name = "undive", version, about = "Underwater video enhancement with a diffusion prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key-value config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale defaults instead of full scale.
    #[arg(long)]
    desk: bool,
    /// Override one config key, e.g. `--set spatial_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let base = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None if self.desk => Config::desk().to_toml_string()?,
            None => String::new(),
        };
        Config::with_overrides(&base, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Curate crops from an underwater corpus and train the diffusion prior.
    TrainPrior {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the enhancer on a paired dataset (`degraded/`, `gt/`, `depth/`).
    TrainSpatial {
        #[arg(long)]
        data: PathBuf,
        /// Prior checkpoint whose encoder is frozen.
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write every step's losses here as JSON lines.
        #[arg(long)]
        steps: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a spatial checkpoint on videos with the temporal loss.
    TrainTemporal {
        /// Video directory (`frames/`, `depth/`, optional `gt/`, `flow_fwd/`,
        /// `flow_bwd/`). Repeatable.
        #[arg(long = "video", required = true)]
        videos: Vec<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Enhance every frame of a directory.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip backscatter estimation and removal.
        #[arg(long)]
        no_backscatter: bool,
    },
    /// Score the frames of a directory.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Ground-truth frames with matching names; adds PSNR and SSIM.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Structured text report (stdout if omitted).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        no_temporal: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate synthetic degraded data: a paired dataset, or a video with
    /// exact flow when `--video-frames` is given.
    Degrade {
        #[arg(long)]
        out: PathBuf,
        /// Clean images to degrade; procedural scenes when omitted.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "smooth")]
        depth_mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        video_frames: Option<usize>,
        /// Camera motion per frame for videos, `DX,DY` pixels.
        #[arg(long, default_value = "2,1", allow_hyphen_values = true)]
        velocity: String,
    },
    /// Write the most histogram-uniform random crops of a corpus.
    SelectCrops {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_steps(path: Option<&Path>, steps: &[StepLog]) -> Result<()> {
    if let Some(p) = path {
        let mut s = String::new();
        for step in steps {
            s.push_str(&serde_json::to_string(step).map_err(Error::Json)?);
            s.push('\n');
        }
        write_text(p, &s)?;
    }
    Ok(())
}

fn parse_velocity(s: &str) -> Result<(i64, i64)> {
    let bad = || Error::Parameter(format!("velocity must be DX,DY integers, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainPrior { corpus, out, cfg } => {
            let c = cfg.load()?;
            let sel = select_training_crops(&corpus, c.prior_crop, c.crop_fraction, c.crops_per_image, c.seed)?;
            log::info!("training prior on {} crops", sel.selected.len());
            let ck = train_prior(&sel.crops(), &c.unet(), &c.schedule(), &c.prior_training())?;
            ck.save(&out)?;
            println!("prior checkpoint {} ({} parameters)", out.display(), ck.num_params());
        }
        Command::TrainSpatial { data, prior, out, steps, cfg } => {
            let c = cfg.load()?;
            let prior = Checkpoint::load(&prior)?;
            let pairs = load_paired_dataset(&data)?;
            let model = SpatialModel::from_prior(&prior, &c.enhancer(), c.seed, &candle_core::Device::Cpu)?;
            let outcome = train_spatial(model, &pairs, &c.spatial_training(), &c.weights())?;
            outcome.checkpoint.save(&out)?;
            write_steps(steps.as_deref(), &outcome.steps)?;
            println!("spatial checkpoint {}: loss {:.5} -> {:.5}", out.display(), outcome.initial_loss, outcome.final_loss);
        }
        Command::TrainTemporal { videos, ckpt, out, steps, cfg } => {
            let c = cfg.load()?;
            let ck = Checkpoint::load(&ckpt)?;
            let mut pairs = Vec::new();
            for v in &videos {
                pairs.extend(load_video(v)?.pairs()?);
            }
            let outcome = train_temporal(&ck, &pairs, &c.temporal_training(), &c.weights())?;
            outcome.checkpoint.save(&out)?;
            write_steps(steps.as_deref(), &outcome.steps)?;
            println!("temporal checkpoint {}: loss {:.5} -> {:.5}", out.display(), outcome.initial_loss, outcome.final_loss);
        }
        Command::Enhance { input, depth, ckpt, out, no_backscatter } => {
            let ck = Checkpoint::load(&ckpt)?;
            let opts = EnhanceOptions { remove_backscatter: !no_backscatter };
            let m = enhance_video(&input, &out, &ck, &depth, &opts)?;
            println!("enhanced {} frames in {:.2}s", m.frames, m.seconds_total);
        }
        Command::Evaluate { input, reference, report, csv, no_temporal, cfg } => {
            let c = cfg.load()?;
            let opts = EvalOptions {
                temporal: !no_temporal,
                flow_alpha: c.flow_alpha,
                flow_iters: c.flow_iters,
                ..EvalOptions::default()
            };
            let r = evaluate_video(&input, reference.as_deref(), &opts)?;
            let text = r.to_text()?;
            match report {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
            if let Some(p) = csv {
                write_text(&p, &r.to_csv())?;
            }
        }
        Command::Degrade { out, clean, count, size, depth_mode, seed, video_frames, velocity } => {
            let s = SynthSettings {
                size,
                depth_mode: depth_mode.parse::<DepthMode>()?,
                seed,
                ..SynthSettings::default()
            };
            if size == 0 {
                return Err(Error::Parameter("size must be >= 1".into()));
            }
            match video_frames {
                Some(n) => {
                    let scene = match &clean {
                        Some(dir) => Some(undive::imgcore::load_frame(
                            undive::imgcore::io::list_frames(dir)?
                                .first()
                                .ok_or_else(|| Error::Empty(format!("no clean frames in {}", dir.display())))?,
                        )?),
                        None => None,
                    };
                    let (video, water) = make_synthetic_video(n, parse_velocity(&velocity)?, &s, scene.as_ref())?;
                    save_video(&out, &video)?;
                    write_text(&out.join("water.toml"), &water.to_kv_string())?;
                    println!("wrote {n}-frame video to {}", out.display());
                }
                None => {
                    let (pairs, water) = make_synthetic_dataset(clean.as_deref(), count, &s)?;
                    save_paired_dataset(&out, &pairs)?;
                    let json = serde_json::to_string_pretty(&water)?;
                    write_text(&out.join("water.json"), &json)?;
                    println!("wrote {} pairs to {}", pairs.len(), out.display());
                }
            }
        }
        Command::SelectCrops { corpus, out, cfg } => {
            let c = cfg.load()?;
            let sel = select_training_crops(&corpus, c.prior_crop, c.crop_fraction, c.crops_per_image, c.seed)?;
            ensure_dir(&out)?;
            for (i, (crop, _)) in sel.selected.iter().enumerate() {
                save_frame(crop, out.join(frame_file_name(i + 1)))?;
            }
            println!("kept {} crops, rejected {}", sel.selected.len(), sel.rejected_scores.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

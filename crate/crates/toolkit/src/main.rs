use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spxrefine::commands::{
    cmd_affinity, cmd_calibrate, cmd_eval, cmd_refine, cmd_segment, cmd_synth, cmd_train, output_dir,
};
use spxrefine::config::RunConfig;
use spxrefine::{Result, ToolkitError};
use spxrefine_core::fh::Connectivity;
use spxrefine_core::postprocess::Steps;

#[derive(Debug, Parser)]
#[command(name = "spxrefine", version, about = "DeepFH superpixels and superpixel-based proposal refinement")]
struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Skip filtering, morphology and NMS.
    #[arg(long, global = true)]
    no_postprocess: bool,
    /// Blend weight of the feature distance for every level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of levels, interpolated geometrically between the finest and
    /// coarsest configured targets.
    #[arg(long, global = true)]
    levels: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment one image at every level.
    Segment {
        image: PathBuf,
        /// Feature map used for all levels.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Calibrate k per level and write the updated configuration.
    Calibrate {
        /// Directory of calibration images (default: paths.images).
        dir: Option<PathBuf>,
        /// Where to write the configuration (default: overwrite --config).
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
    /// Train the superpixel classifier.
    Train,
    /// Refine the coarse proposals of the dataset.
    Refine,
    /// Evaluate coarse and refined proposals.
    Eval,
    /// Write pixel-pair affinity labels of a GT manifest.
    Affinity {
        gt: PathBuf,
        #[arg(long, default_value_t = 4)]
        connectivity: u32,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = cli.alpha {
        cfg.fh.alpha = alpha;
    }
    if let Some(n) = cli.levels {
        if n == 0 {
            return Err(ToolkitError::Config("--levels must be at least 1".into()));
        }
        cfg.set_level_count(n);
    }
    if let Some(out) = &cli.out {
        cfg.paths.output = Some(std::path::absolute(out).map_err(|e| ToolkitError::io(out, e))?);
    }
    cfg.validate()?;
    let out = output_dir(&cfg);
    let steps = if cli.no_postprocess { Steps::NONE } else { Steps::ALL };

    match cli.command {
        Command::Segment { image, features } => {
            let outcome = cmd_segment(&cfg, &image, features.as_deref(), &out)?;
            println!("{}", outcome.summary(&image));
        }
        Command::Calibrate { dir, write } => {
            let dir = match dir {
                Some(d) => d,
                None => cfg.require_path(&cfg.paths.images, "images")?,
            };
            let results = cmd_calibrate(&mut cfg, &dir)?;
            let target = write
                .or(cli.config.clone())
                .ok_or_else(|| ToolkitError::Config("calibrate needs --write or --config".into()))?;
            cfg.save(&target)?;
            for (level, c) in cfg.levels.iter().zip(&results) {
                let status = if c.reached { "ok" } else { "WARNING: not reached" };
                println!(
                    "level {}: target {} mean {:.1} k {:.6} ({} iterations) {status}",
                    level.index, level.target, c.mean_count, c.params.k, c.iterations
                );
            }
            println!("wrote {}", target.display());
        }
        Command::Synth { count } => {
            let manifest = cmd_synth(&cfg, count, cfg.seed, &out)?;
            println!("wrote {} images to {}", manifest.images.len(), out.display());
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!(
                "{} positives, {} of {} negatives; final loss {:.5}; wrote {}",
                s.samples.positives,
                s.samples.negatives_kept,
                s.samples.negatives_available,
                s.loss_curve.last().copied().unwrap_or(f64::NAN),
                s.weights.display()
            );
        }
        Command::Refine => {
            let n = cmd_refine(&cfg, steps)?;
            println!("wrote {n} refined proposals to {}", out.join("refined").display());
        }
        Command::Eval => {
            let report = cmd_eval(&cfg, !cli.no_postprocess)?;
            print!("{}", report.to_table());
        }
        Command::Affinity { gt, connectivity } => {
            let conn = Connectivity::from_count(connectivity)?;
            let stem = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "gt".into());
            let path = out.join(format!("{stem}_affinity.fmap"));
            let fm = cmd_affinity(&gt, conn, &path)?;
            println!("wrote {} ({}×{}×{})", path.display(), fm.width(), fm.height(), fm.dim());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

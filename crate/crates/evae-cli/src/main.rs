//! Experiment runner: train VAEs under evolutionary or scheduled KL-weight
//! control, render latent traversals, export plot-ready CSVs and generate
//! the sprites dataset.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evae::checkpoint::Checkpoint;
use evae::config::ExperimentConfig;
use evae::error::EvaeError;
use evae::export;
use evae::sprites::{write_pgm, SpritesDataset};
use evae::trainer::run_to_dir;
use evae::traverse::{traverse, TraverseSpec};
use evae::vae::VaeModel;

#[derive(Parser)]
#[command(
    name = "evae",
    version,
    about = "Evolutionary KL-weight control for VAEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the controller kind (vga, constant, cost, cyclical, pid).
        #[arg(long)]
        controller: Option<String>,
        /// Flip the VGA gate order (crossover-first <-> mutation-first).
        #[arg(long)]
        swap_gates: bool,
    },
    /// Render a latent traversal grid from a checkpoint.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sprites dataset cache supplying the seed image.
        #[arg(long)]
        data: PathBuf,
        /// Seed image index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Latent dimension to sweep, or "all".
        #[arg(long, default_value = "all")]
        dim: String,
        #[arg(long, default_value_t = -3.0)]
        min: f64,
        #[arg(long, default_value_t = 3.0)]
        max: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        /// Output PGM path.
        #[arg(long, default_value = "traverse.pgm")]
        out: PathBuf,
    },
    /// Derive plot-ready CSVs (R-D curve, per-dimension KL, beta trace).
    Export {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate the sprites dataset cache (and optional PGM samples).
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Cache file to write.
        #[arg(long)]
        out: PathBuf,
        /// Directory for PGM sample images.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
        /// How many evenly spaced samples to export as PGM.
        #[arg(long, default_value_t = 16)]
        pgm_count: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            controller,
            swap_gates,
        } => cmd_run(&config, seed, out, controller, swap_gates),
        Command::Traverse {
            checkpoint,
            data,
            index,
            dim,
            min,
            max,
            steps,
            out,
        } => cmd_traverse(&checkpoint, &data, index, &dim, min, max, steps, &out),
        Command::Export { metrics, out_dir } => cmd_export(&metrics, &out_dir),
        Command::GenData {
            config,
            out,
            pgm_dir,
            pgm_count,
        } => cmd_gen_data(&config, &out, pgm_dir.as_deref(), pgm_count),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("evae: {err}");
            match err {
                EvaeError::Config(_) | EvaeError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    controller: Option<String>,
    swap_gates: bool,
) -> Result<(), EvaeError> {
    // Validate everything before creating any output.
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    if let Some(kind) = controller {
        cfg.override_controller(&kind)?;
    }
    if swap_gates {
        cfg.swap_gates()?;
    }
    if let Some(out) = out {
        cfg.run.out_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;

    let artifacts = run_to_dir(&cfg)?;
    if let Some(last) = &artifacts.last_row {
        println!(
            "done: iteration {} beta {:.6} distortion {:.4} rate {:.4}",
            last.iteration, last.beta, last.recon_loss, last.kl_total
        );
    }
    println!("artifacts in {}", artifacts.out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_traverse(
    checkpoint: &Path,
    data: &Path,
    index: usize,
    dim: &str,
    min: f64,
    max: f64,
    steps: usize,
    out: &Path,
) -> Result<(), EvaeError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = VaeModel::attach(
        &ckpt.store,
        ckpt.input_dim,
        &ckpt.encoder_hidden,
        &ckpt.decoder_hidden,
        ckpt.latent_dim,
        ckpt.likelihood,
    )?;
    let dataset = SpritesDataset::load(data)?;
    if index >= dataset.len() {
        return Err(EvaeError::Usage(format!(
            "image index {index} out of range ({} images)",
            dataset.len()
        )));
    }
    let dims = match dim {
        "all" => None,
        d => Some(vec![d.parse::<usize>().map_err(|_| {
            EvaeError::Usage(format!("--dim must be an index or \"all\", got {d}"))
        })?]),
    };
    let spec = TraverseSpec {
        dims,
        min,
        max,
        steps,
    };
    let grid = traverse(
        &model,
        &ckpt.store,
        &dataset.row(index),
        dataset.canvas(),
        &spec,
    )?;
    write_pgm(out, grid.width, grid.height, &grid.gray)?;
    println!(
        "wrote {} ({}x{}, {} dims x {} steps)",
        out.display(),
        grid.width,
        grid.height,
        grid.dims.len(),
        steps
    );
    Ok(())
}

fn cmd_export(metrics: &Path, out_dir: &Path) -> Result<(), EvaeError> {
    let text = std::fs::read_to_string(metrics)?;
    let table = export::CsvTable::parse(&text)?;
    std::fs::create_dir_all(out_dir)?;
    export::write_text(&out_dir.join("rd_curve.csv"), &export::export_rd(&table)?)?;
    export::write_text(
        &out_dir.join("kl_dims_long.csv"),
        &export::export_kl_long(&table)?,
    )?;
    export::write_text(
        &out_dir.join("beta_trace.csv"),
        &export::export_beta_trace(&table)?,
    )?;
    println!(
        "wrote rd_curve.csv, kl_dims_long.csv, beta_trace.csv in {}",
        out_dir.display()
    );
    Ok(())
}

fn cmd_gen_data(
    config: &Path,
    out: &Path,
    pgm_dir: Option<&Path>,
    pgm_count: usize,
) -> Result<(), EvaeError> {
    let cfg = ExperimentConfig::load(config)?;
    let dataset = SpritesDataset::generate(&cfg.data.dataset)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    dataset.save(out)?;
    println!(
        "wrote {} ({} images, {}x{}, hash {})",
        out.display(),
        dataset.len(),
        dataset.canvas(),
        dataset.canvas(),
        dataset.content_hash()
    );
    if let Some(dir) = pgm_dir {
        std::fs::create_dir_all(dir)?;
        let count = pgm_count.min(dataset.len());
        let stride = (dataset.len() / count.max(1)).max(1);
        for i in 0..count {
            let idx = i * stride;
            let gray: Vec<u8> = dataset
                .row(idx)
                .iter()
                .map(|&v| if v != 0.0 { 255 } else { 0 })
                .collect();
            let path = dir.join(format!("sprite_{idx:05}.pgm"));
            write_pgm(&path, dataset.canvas(), dataset.canvas(), &gray)?;
        }
        println!("wrote {count} samples to {}", dir.display());
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikeseg::config::RunConfig;
use spikeseg::harness;

/// Spiking motion segmentation for event-camera streams.
#[derive(Parser, Debug)]
#[command(name = "spikeseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and save the best checkpoint.
    Train(Common),
    /// Evaluate a checkpoint at every configured test window.
    Eval(Common),
    /// Sweep the input prefix length with and without Kalman filtering.
    Incremental(Common),
    /// Report synaptic operations and the energy benefit over a dense network.
    Cost(Common),
    /// Generate the synthetic dataset into the output directory.
    Datagen(Common),
    /// Check the configuration, dataset and checkpoint.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: u64,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory; overrides `paths.data_dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint file; overrides `paths.checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides `train.lr`.
    #[arg(long)]
    lr: Option<f64>,
    /// Overrides `loss.lambda`.
    #[arg(long)]
    lambda: Option<f64>,
}

impl Common {
    fn load(&self) -> spikeseg::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.seed = self.seed;
        cfg.paths.out_dir = self.out.clone();
        if let Some(d) = &self.data {
            cfg.paths.data_dir = d.clone();
        }
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
        if let Some(l) = self.lambda {
            cfg.loss.lambda = l;
        }
        Ok(cfg)
    }
}

/// Size the global thread pool from `SPIKESEG_THREADS` when set.
fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SPIKESEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| format!("SPIKESEG_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn run(cli: Cli) -> spikeseg::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let out = harness::cmd_train(&c.load()?)?;
            println!("best validation IoU {:.2}", out.best_val_iou);
        }
        Command::Eval(c) => {
            for s in harness::cmd_eval(&c.load()?)? {
                println!("dt {:>2} ms  IoU {:6.2} +- {:5.2}  ({} windows)", s.window_ms, s.iou_mean, s.iou_std, s.windows);
            }
        }
        Command::Incremental(c) => {
            for r in harness::cmd_incremental(&c.load()?)? {
                println!("prefix {:>2} ms  raw {:6.2}  filtered {:6.2}", r.prefix_ms, r.raw_iou, r.kalman_iou);
            }
        }
        Command::Cost(c) => {
            let r = harness::cmd_cost(&c.load()?)?;
            let benefit = r.energy_benefit.map_or("undefined".to_string(), |b| format!("{b:.2}x"));
            println!(
                "synaptic ops {:.0}  dense MACs {:.0}  density {:.4}  energy benefit {benefit}",
                r.synaptic_ops, r.ann_ops_equiv, r.spike_density
            );
        }
        Command::Datagen(c) => {
            let m = harness::cmd_datagen(&c.load()?)?;
            println!("{} sequences written", m.sequences.len());
        }
        Command::Validate(c) => {
            let checks = harness::cmd_validate(&c.load()?)?;
            println!("{} checks passed", checks.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

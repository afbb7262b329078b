use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gonogo_cli::config::Config;
use gonogo_cli::pipeline::{self, ClassifierChoice, Layout};
use gonogo_cli::{CliError, Result};
use gonogo_core::evalkit::format_table;

#[derive(Parser)]
#[command(name = "gonogo", version, about = "GO/NO GO traversability from a single camera image")]
struct Cli {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding every input and output of the pipeline.
    #[arg(long, global = true, default_value = "gonogo-out")]
    out: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Load checkpoints whose fingerprint does not match the config.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate drives and write the train, labeled and test datasets.
    GenData,
    /// Train the generator and discriminator on the training positives.
    TrainGan,
    /// Train the inverse generator and calibrate the anomaly threshold.
    TrainInv,
    /// Train the fully connected fusion head on the labeled split.
    TrainFc,
    /// Score a dataset (the test split by default) to JSON lines.
    Score {
        /// Dataset directory with a manifest.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate every ablation row on the test split.
    Eval,
    /// Time feedforward against iterative inversion.
    Bench,
    /// Drive a simulated mission that fills a costmap from decisions.
    CostmapDemo {
        #[arg(long, value_enum, default_value = "auto")]
        classifier: Choice,
    },
    /// Write mean saliency maps and the residual weight image as PGM.
    Saliency {
        /// Images averaged per class.
        #[arg(long, default_value_t = 100)]
        images: usize,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Choice {
    Auto,
    Anomaly,
    Head,
    Truth,
}

impl From<Choice> for ClassifierChoice {
    fn from(c: Choice) -> Self {
        match c {
            Choice::Auto => ClassifierChoice::Auto,
            Choice::Anomaly => ClassifierChoice::Anomaly,
            Choice::Head => ClassifierChoice::Head,
            Choice::Truth => ClassifierChoice::Truth,
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let layout = Layout::new(&cli.out);
    let force = cli.force;
    match &cli.command {
        Command::GenData => {
            let data = pipeline::generate_data(&cfg)?;
            pipeline::write_datasets(&layout, &data)?;
            println!(
                "wrote {} training, {} labeled and {} test frames under {}",
                data.train.len(),
                data.labeled.len(),
                data.test.len(),
                layout.root.join("data").display()
            );
        }
        Command::TrainGan => {
            let h = pipeline::train_gan_stage(&cfg, &layout)?;
            if let Some(last) = h.epochs.last() {
                println!("epoch {}: d_loss {:.4} g_loss {:.4}", last.epoch, last.d_loss, last.g_loss);
            }
        }
        Command::TrainInv => {
            let h = pipeline::train_inv_stage(&cfg, &layout, force)?;
            if let Some(last) = h.last() {
                println!("epoch {}: loss {:.5}", last.epoch, last.loss);
            }
            if cfg.scoring.calibrate {
                let s = pipeline::effective_scoring(&cfg, &layout)?;
                println!("calibrated threshold {:.6}", s.threshold);
            }
        }
        Command::TrainFc => {
            let h = pipeline::train_fc_stage(&cfg, &layout, force)?;
            println!(
                "kept epoch {} of {} (validation loss {:.4})",
                h.best_epoch,
                h.val_loss.len(),
                h.val_loss.get(h.best_epoch).copied().unwrap_or(f64::NAN)
            );
        }
        Command::Score { input } => {
            let records = pipeline::score_stage(&cfg, &layout, input.as_deref(), force)?;
            let go = records.iter().filter(|r| r.t_d.is_go()).count();
            println!("scored {} images, {go} GO; wrote {}", records.len(), layout.scores().display());
        }
        Command::Eval => {
            let report = pipeline::eval_stage(&cfg, &layout, force)?;
            print!("{}", format_table(&report.rows));
            println!("# AUC {:.4}", report.auc);
        }
        Command::Bench => {
            let r = pipeline::bench_stage(&cfg, &layout, force)?;
            println!(
                "feedforward {:.2} Hz, iterative ({} steps) {:.3} Hz, speedup {:.1}x",
                r.feedforward.hz, r.iterations, r.iterative.hz, r.speedup
            );
        }
        Command::CostmapDemo { classifier } => {
            let s = pipeline::costmap_stage(&cfg, &layout, (*classifier).into(), force)?;
            println!(
                "{:?} after {} steps, {} lethal cells, agreement with ground truth {:.3}",
                s.outcome, s.steps, s.lethal_cells, s.agreement
            );
        }
        Command::Saliency { images } => {
            let s = pipeline::saliency_stage(&cfg, &layout, *images, force)?;
            println!(
                "{} positives, bottom-half saliency share {:.3}",
                s.images, s.bottom_half_share
            );
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e))
        }
    }
}

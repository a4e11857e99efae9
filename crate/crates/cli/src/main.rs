use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resattn::model::ModelConfig;
use resattn::Result;
use resattn_cli::{commands, RunConfig};

/// Residual-attention U-Net for binary wound segmentation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value run config; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on DATA/train, validating on DATA/validation every epoch.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a binary mask for every PNG in DATA.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input images.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vote over the eight dihedral transforms.
        #[arg(long)]
        tta: bool,
    },
    /// Score predicted masks against ground truth with matching names.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write metrics.txt and config.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the layer table, parameter count and FLOPs.
    Info {
        #[command(flatten)]
        common: Common,
        /// proposed, vanilla or reduced; takes precedence over --config.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
    /// Generate a synthetic corpus in the train/validation layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { common, data, out } => {
            let cfg = common.resolve()?;
            let outcome = commands::train(&cfg, &data, &out)?;
            match outcome.best {
                Some(b) => println!("best epoch {} val_dsc {:.6}", b.epoch, b.dsc),
                None => println!("no epochs run; wrote initial checkpoint"),
            }
        }
        Command::Predict {
            common,
            checkpoint,
            data,
            out,
            tta,
        } => {
            let mut cfg = common.resolve()?;
            cfg.tta |= tta;
            let model = common.config.is_some().then_some(&cfg.model);
            let net = commands::load_network(&checkpoint, model)?;
            cfg.model = net.config().clone();
            let written = commands::predict(&cfg, &net, &data, &out)?;
            println!("wrote {} masks to {}", written.len(), out.display());
        }
        Command::Evaluate {
            common,
            pred,
            gt,
            out,
        } => {
            let cfg = common.resolve()?;
            let text = commands::format_evaluation(&commands::evaluate(&cfg, &pred, &gt)?);
            print!("{text}");
            if let Some(dir) = out {
                cfg.write_to_dir(&dir)?;
                let path = dir.join(commands::METRICS_FILE);
                std::fs::write(&path, text).map_err(|e| resattn::Error::io(&path, e))?;
            }
        }
        Command::Info {
            common,
            preset,
            size,
        } => {
            let model = match preset {
                Some(p) => ModelConfig::preset(&p)?,
                None => common.resolve()?.model,
            };
            print!("{}", commands::info(&model, size, size)?);
        }
        Command::Synth {
            out,
            n,
            val,
            seed,
            size,
        } => {
            commands::synth(&out, n, val, seed, size)?;
            println!("wrote {n}+{val} images to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error[{}]: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::FAILURE
        }
    }
}

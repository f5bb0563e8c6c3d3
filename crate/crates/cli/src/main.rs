use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecg_robust_cli::{config, stages, CliError, Overrides, PipelineConfig, PlotInputs};

#[derive(Parser)]
#[command(name = "ecg-robust", version, about = "Adversarially robust ECG beat classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every stage; they override values from `--config`.
#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of fgsm,bim,pgd,cw,dbb,hsj.
    #[arg(long)]
    attack_kinds: Option<String>,
    /// GAN training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// `synthetic` or a beat CSV path.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build, split and balance the beat dataset.
    Prepare(Common),
    /// Train the undefended classifier used as the attack target.
    Pretrain(Common),
    /// Attack the train and test splits with every configured kind.
    Attack(Common),
    /// Adversarially train the generator and discriminator.
    Train(Common),
    /// Score both classifiers, the attack detector and the generator.
    Eval(Common),
    /// Draw clean-versus-attacked overlays, one SVG per attack kind.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Clean CSV (default: the prepared test split).
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Attacked CSV (default: the attacked test split).
        #[arg(long)]
        attacked: Option<PathBuf>,
        /// Record index drawn for each kind.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Every stage in order.
    Run(Common),
}

fn resolve(c: &Common) -> Result<PipelineConfig, CliError> {
    let overrides = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        attack_kinds: c.attack_kinds.as_deref().map(config::parse_kinds).transpose()?,
        epochs: c.epochs,
        dataset: c.dataset.clone(),
    };
    PipelineConfig::resolve(c.config.as_deref(), &overrides)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Prepare(c) => stages::prepare(&resolve(&c)?).map(drop),
        Command::Pretrain(c) => stages::pretrain(&resolve(&c)?).map(drop),
        Command::Attack(c) => stages::attack(&resolve(&c)?).map(drop),
        Command::Train(c) => stages::train(&resolve(&c)?).map(drop),
        Command::Eval(c) => stages::eval(&resolve(&c)?).map(drop),
        Command::Plot { common, clean, attacked, index } => {
            stages::plot(&resolve(&common)?, &PlotInputs { clean, attacked, index }).map(drop)
        }
        Command::Run(c) => stages::run_all(&resolve(&c)?).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use atrada_core::pipeline::{
    cmd_build_dataset, cmd_evaluate, cmd_fit_latent, cmd_generate, cmd_pipeline, cmd_plot, cmd_simulate, cmd_train_ae,
    Baseline, PipelineConfig,
};
use atrada_core::Error;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "atrada", version, about = "Trajectory dataset augmentation in a learned latent space")]
struct Cli {
    /// TOML configuration; flags given here override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_baseline)]
    baseline: Option<Baseline>,
    /// Number of trajectories to generate.
    #[arg(long = "m-count", global = true, value_name = "M")]
    m_count: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate arrivals over the configured airspace.
    Simulate,
    /// Resample, normalise and pad trajectories into a dataset file.
    BuildDataset,
    /// Train the sequence autoencoder.
    TrainAe,
    /// Fit the density model used by the selected baseline.
    FitLatent,
    /// Sample synthetic trajectories.
    Generate,
    /// Score the synthetic trajectories against the dataset.
    Evaluate,
    /// Draw a top view of a trajectory file.
    Plot {
        /// Trajectory CSV to draw; the generated set when omitted.
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline,
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        // an unreadable config file is a usage error, not a data error
        Some(path) => PipelineConfig::load(path).map_err(|e| Error::Config(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if let Some(b) = cli.baseline {
        cfg.generate.baseline = b;
    }
    if let Some(m) = cli.m_count {
        cfg.generate.m_count = Some(m);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Simulate => println!("{}", cmd_simulate(&cfg)?.display()),
        Command::BuildDataset => {
            let ds = cmd_build_dataset(&cfg)?;
            println!("{} sequences of {} frames in {}", ds.len(), ds.max_len(), cfg.dataset_path().display());
        }
        Command::TrainAe => {
            let s = cmd_train_ae(&cfg)?;
            println!("recon_rmse = {}", s.recon_rmse);
            println!("checkpoint = {}", cfg.checkpoint_path().display());
        }
        Command::FitLatent => match cmd_fit_latent(&cfg)? {
            Some(m) => println!(
                "P = {}, K = {} in {}",
                m.pca.n_components(),
                m.gmm.k(),
                cfg.latent_model_path().display()
            ),
            None => println!("{} needs no density model", cfg.generate.baseline),
        },
        Command::Generate => {
            let g = cmd_generate(&cfg)?;
            println!("{} trajectories in {}", g.trajectories.len(), cfg.generated_path().display());
        }
        Command::Evaluate => print!("{}", cmd_evaluate(&cfg)?.to_toml()),
        Command::Plot { input } => println!("{}", cmd_plot(&cfg, input.as_deref())?.display()),
        Command::Pipeline => print!("{}", cmd_pipeline(&cfg)?.to_toml()),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if e.is_config() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vgs::experiment::{run_experiment, ExperimentConfig, ProviderSpec};
use vgs::image_io::{load_image, save_image};
use vgs::synth::{generate, SynthOptions};
use vgs::vgs_core::{distort, NoiseMode, NoiseParams, Strategy};

#[derive(Parser)]
#[command(
    name = "vgs",
    version,
    about = "Visual grounding score guided decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a dataset with each strategy and write reports.
    Run(Box<RunArgs>),
    /// Write a synthetic benchmark (dataset.jsonl + model.json).
    Synth(SynthArgs),
    /// Apply seeded noise to an image file.
    Distort(DistortArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Vcd,
    Vgs,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Vcd => Strategy::Vcd,
            StrategyArg::Vgs => Strategy::Vgs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Shot,
    Literal,
}

impl From<ModeArg> for NoiseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Shot => NoiseMode::Shot,
            ModeArg::Literal => NoiseMode::Literal,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Repeatable.
    #[arg(long, value_enum)]
    strategy: Vec<StrategyArg>,
    /// Repeatable; each value adds a vgs run.
    #[arg(long)]
    alpha: Vec<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Use `inf` to disable the Poisson term in shot mode.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    noise_mode: Option<ModeArg>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-item JSONL traces.
    #[arg(long)]
    trace: bool,
    /// Remote distribution server base URL.
    #[arg(long, conflicts_with_all = ["scripted", "synthetic"])]
    endpoint: Option<String>,
    /// Scripted model table (JSON).
    #[arg(long, conflicts_with = "synthetic")]
    scripted: Option<PathBuf>,
    /// Synthetic model spec (JSON).
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = self.dataset {
            cfg.dataset = Some(d);
        }
        if !self.strategy.is_empty() {
            cfg.strategies = self.strategy.into_iter().map(Strategy::from).collect();
        }
        if !self.alpha.is_empty() {
            cfg.alphas = self.alpha;
        }
        if let Some(e) = self.endpoint {
            cfg.provider = Some(ProviderSpec::remote(e));
        }
        if let Some(path) = self.scripted {
            cfg.provider = Some(ProviderSpec::Scripted { path });
        }
        if let Some(path) = self.synthetic {
            cfg.provider = Some(ProviderSpec::Synthetic { path });
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(
            sigma,
            lambda,
            delta,
            max_len,
            seed,
            out,
            bootstrap_resamples
        );
        if let Some(m) = self.noise_mode {
            cfg.noise_mode = m.into();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.trace |= self.trace;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    n_open: usize,
    #[arg(long, default_value_t = 60)]
    n_closed: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DistortArgs {
    input: PathBuf,
    /// `.png` writes PNG; anything else the raw float format.
    output: PathBuf,
    #[arg(long, default_value_t = 0.07)]
    sigma: f64,
    #[arg(long, default_value_t = 70.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "shot")]
    noise_mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VGS_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = match args.into_config() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(2);
                }
            };
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    for p in &outcome.report_paths {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Command::Synth(args) => {
            let bench = generate(&SynthOptions {
                n_open: args.n_open,
                n_closed: args.n_closed,
                seed: args.seed,
                ..SynthOptions::default()
            });
            match bench.write(&args.out) {
                Ok((d, m)) => {
                    println!("wrote {}\nwrote {}", d.display(), m.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", args.out.display());
                    ExitCode::from(2)
                }
            }
        }
        Command::Distort(args) => {
            let result = (|| -> anyhow::Result<()> {
                let img = load_image(&args.input)?;
                let noisy = distort(
                    &img,
                    &NoiseParams {
                        sigma: args.sigma,
                        lambda: args.lambda,
                        mode: args.noise_mode.into(),
                        seed: args.seed,
                    },
                )?;
                save_image(&noisy, &args.output)?;
                Ok(())
            })();
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridpinn::{Error, Result};
use gridpinn_cli::{cmd_bench, cmd_eval, cmd_generate, cmd_simulate, cmd_train, error_line, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "gridpinn", version, about = "Physics-informed surrogates for power-system components")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file, or a bundled config name (sm9.reference, sm9.desk).
    #[arg(long)]
    config: Option<String>,
    /// Run directory; stages write into `<out>/<stage>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set training.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample ICs, simulate ground truth and write the split dataset.
    Generate(Common),
    /// Train the surrogate on a generated dataset.
    Train(Common),
    /// Accuracy metrics, per-timestep errors and overlays on the test split.
    Eval(Common),
    /// Inference time of the solver versus the surrogate.
    Bench(Common),
    /// Solve and write a single trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state as comma-separated values; defaults to the domain midpoint.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate(c) | Command::Train(c) | Command::Eval(c) | Command::Bench(c) => c,
            Command::Simulate { common, .. } => common,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides, common.seed)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::config("--out", "no output directory given"))?;
    match &cli.command {
        Command::Generate(_) => {
            let dir = cmd_generate(&cfg, &out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train(_) => {
            let dir = cmd_train(&cfg, &out)?;
            println!("model written to {}", dir.display());
        }
        Command::Eval(_) => print!("{}", cmd_eval(&cfg, &out)?.report()),
        Command::Bench(_) => print!("{}", cmd_bench(&cfg, &out)?.report()),
        Command::Simulate { x0, .. } => {
            let path = cmd_simulate(&cfg, &out, x0.as_deref())?;
            println!("trajectory written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command.common().threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Error::config("--threads", e.to_string())),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anbn_cli::plan::Stage;
use anbn_cli::{run_stages, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anbn", version, about = "Noise-robust speaker verification experiments")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set noise.test_snrs=[0.0,10.0]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Run name (directory under the runs directory).
    #[arg(long, global = true)]
    name: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, default_value = "runs", global = true)]
    runs_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the clean corpus and its manifest.
    GenCorpus,
    /// Mix noise into every configured (role, noise, SNR) set.
    Mix,
    /// 57-dim MFCCs and VAD masks of the observed signals.
    Featurize,
    /// Train the adversarial bottleneck networks.
    TrainAn,
    /// Train the mask-estimation enhancement networks.
    TrainDnnse,
    /// Enhance signals (STSA-MMSE or DNN mask) and compute their MFCCs.
    Enhance,
    /// Extract bottleneck features.
    Extract,
    /// Train one UBM per front end on clean training data.
    TrainUbm,
    /// MAP-adapt speaker models for each enrollment condition.
    Enroll,
    /// Score every trial of every test condition.
    Score,
    /// Equal error rates of all score files.
    Eval,
    /// Result tables per enrollment condition.
    Report,
    /// The whole pipeline.
    Run,
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(n) = &cli.name {
        overrides.push(format!("name={}", toml::Value::String(n.clone())));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let report = anbn_core::nnet::gradcheck::run_suite(seed)
        .map_err(|e| CliError::stage("gradcheck", "-", e))?;
    for c in &report.cases {
        println!("{:<40} {:>6} checked  max rel error {:.3e}", c.name, c.checked, c.max_rel_error);
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e}");
    if worst < 1e-5 {
        Ok(())
    } else {
        Err(CliError::stage(
            "gradcheck",
            "-",
            anbn_core::Error::Numerical(format!("gradient error {worst:e} exceeds 1e-5")),
        ))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            use std::io::Write;
            writeln!(buf, "[{}] {}", record.target(), record.args())
        })
        .init();
    let cli = Cli::parse();
    let stage = match &cli.command {
        Command::GenCorpus => Some(Stage::GenCorpus),
        Command::Mix => Some(Stage::Mix),
        Command::Featurize => Some(Stage::Featurize),
        Command::TrainAn => Some(Stage::TrainAn),
        Command::TrainDnnse => Some(Stage::TrainDnnse),
        Command::Enhance => Some(Stage::Enhance),
        Command::Extract => Some(Stage::Extract),
        Command::TrainUbm => Some(Stage::TrainUbm),
        Command::Enroll => Some(Stage::Enroll),
        Command::Score => Some(Stage::Score),
        Command::Eval => Some(Stage::Eval),
        Command::Report => Some(Stage::Report),
        Command::Run | Command::ShowConfig | Command::Gradcheck { .. } => None,
    };
    let result = match &cli.command {
        Command::Gradcheck { seed } => gradcheck(*seed),
        Command::ShowConfig => load(&cli).map(|c| print!("{}", c.to_toml())),
        _ => load(&cli).and_then(|cfg| {
            let only = stage.map(|s| vec![s]);
            let out = run_stages(&cfg, &cli.runs_dir, only.as_deref())?;
            log::info!(
                target: "run",
                "{} units executed, {} up to date; results in {}",
                out.executed.len(),
                out.skipped.len(),
                cli.runs_dir.join(&cfg.name).display()
            );
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!(target: "anbn", "{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

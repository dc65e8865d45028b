use std::path::PathBuf;
use std::process::ExitCode;

use beltrami_cli::commands;
use beltrami_cli::config::RunSettings;
use beltrami_cli::{verify, CliError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "beltrami",
    version,
    about = "Joint positional-feature graph diffusion: encoding, simulation, training, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key without a dedicated flag: `--set ppr_beta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (encode) or directory (other commands).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Edge-list file (`i<TAB>j` per line, `#` comments).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Feature matrix file (`n d` header).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Labels file (one integer per line, -1 = unlabeled).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Positional source: ppr | poincare | file | none.
    #[arg(long)]
    positional: Option<String>,
    #[arg(long)]
    positional_file: Option<PathBuf>,
    /// Solver: euler | rk4 | dopri5.
    #[arg(long)]
    method: Option<String>,
    /// Attention kernel: scaled_dot | cosine_sim | pearson | exp_kernel.
    #[arg(long)]
    kernel: Option<String>,
    /// Normalizer: softmax | squareplus.
    #[arg(long)]
    normalizer: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Trained model file produced by `train` (eval only).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Evaluations without improvement tolerated by flexible-horizon eval.
    #[arg(long)]
    patience: Option<usize>,
    /// Hold attention weights at their initial values (diffuse only).
    #[arg(long)]
    freeze_weights: bool,
    /// Restrict all inputs to the largest connected component.
    #[arg(long)]
    lcc: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute positional encodings and write them as a matrix file.
    Encode(CommonArgs),
    /// Integrate the diffusion and dump state snapshots plus solver stats.
    Diffuse(CommonArgs),
    /// Train the classifier and write per-epoch metrics, a summary, and the model.
    Train(CommonArgs),
    /// Evaluate a trained model; with --patience, extend the horizon adaptively.
    Eval(CommonArgs),
    /// Run seeded verification suites and emit a JSON report.
    Verify {
        /// polyakov | solvers | attention | rewiring | all
        #[arg(default_value = "all")]
        suite: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn build_settings(common: &CommonArgs) -> Result<RunSettings, CliError> {
    let mut s = RunSettings::default();
    if let Some(path) = &common.config {
        s.apply_config_file(path)?;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        s.apply_kv(k.trim(), v.trim())?;
    }
    if let Some(v) = common.seed {
        s.seed = v;
    }
    if let Some(v) = &common.out {
        s.out = Some(v.clone());
    }
    if let Some(v) = &common.graph {
        s.graph = Some(v.clone());
    }
    if let Some(v) = &common.features {
        s.features = Some(v.clone());
    }
    if let Some(v) = &common.labels {
        s.labels = Some(v.clone());
    }
    if let Some(v) = &common.positional {
        s.apply_kv("positional", v)?;
    }
    if let Some(v) = &common.positional_file {
        s.positional_file = Some(v.clone());
    }
    if let Some(v) = &common.method {
        s.apply_kv("method", v)?;
    }
    if let Some(v) = &common.kernel {
        s.apply_kv("kernel", v)?;
    }
    if let Some(v) = &common.normalizer {
        s.apply_kv("normalizer", v)?;
    }
    if let Some(v) = common.tau {
        s.tau = v;
    }
    if let Some(v) = common.t_end {
        s.t_end = v;
    }
    if let Some(v) = &common.params {
        s.params = Some(v.clone());
    }
    if let Some(v) = common.patience {
        s.patience = Some(v);
    }
    if common.freeze_weights {
        s.freeze_weights = true;
    }
    if common.lcc {
        s.lcc = true;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Encode(common) => commands::cmd_encode(&build_settings(&common)?),
        Command::Diffuse(common) => commands::cmd_diffuse(&build_settings(&common)?),
        Command::Train(common) => commands::cmd_train(&build_settings(&common)?),
        Command::Eval(common) => commands::cmd_eval(&build_settings(&common)?),
        Command::Verify { suite, common } => {
            let settings = build_settings(&common)?;
            let report = verify::run(&suite, settings.graph.as_deref())?;
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            if let Some(out) = &settings.out {
                std::fs::create_dir_all(out).map_err(|e| CliError::Input(e.into()))?;
                std::fs::write(out.join("verify.json"), json.clone() + "\n")
                    .map_err(|e| CliError::Input(e.into()))?;
            }
            println!("{json}");
            if report.pass {
                Ok(())
            } else {
                Err(CliError::VerifyFailed)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsdt_core::data::sources::CACHE_ENV;
use nsdt_core::data::DatasetId;
use nsdt_core::experiments::{
    cmd_ablate, cmd_eval, cmd_explain, cmd_prepare, cmd_report, cmd_robustness, cmd_train, default_encoded_for,
    render_comparison, ExperimentManifest, ModelKind, RunConfig,
};
use nsdt_core::{NsdtError, Result};

#[derive(Parser)]
#[command(name = "nsdt", version, about = "Neural symbolic decision tree experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, split and encode a dataset.
    Prepare(RunArgs),
    /// Train models over seeds x repeats and compare with reference values.
    Train(RunArgs),
    /// Score a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Encoded dataset; defaults to the one stored with the training run.
        #[arg(long)]
        encoded: Option<PathBuf>,
    },
    /// All-regularizer vs no-regularizer arms.
    Ablate(RunArgs),
    /// Clean vs corrupted inputs.
    Robustness(RunArgs),
    /// Validity report, decoded rules and response tables for a checkpoint.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated feature names to leave out of rendered rules.
        #[arg(long, value_delimiter = ',')]
        redact: Vec<String>,
        #[arg(long, default_value = "runs/explain")]
        out_dir: PathBuf,
    },
    /// Collect every comparison table under the output directory.
    Report {
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: DatasetId,
    /// Comma-separated: nsdt, gnsdt, knn, dtree, rforest.
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Stratified cap on the number of rows.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, env = CACHE_ENV, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Use generated stand-in data when the source files are missing.
    #[arg(long)]
    proxy: bool,
}

impl RunArgs {
    fn manifest(&self, command: &str) -> Result<ExperimentManifest> {
        let config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut m = ExperimentManifest::new(command, self.dataset, &self.out_dir);
        m.models = self.model.clone();
        m.config_path = self.config.clone();
        m.seeds = self.seeds.clone();
        m.repeats = self.repeats;
        m.subsample = self.subsample;
        m.data_dir = self.data_dir.clone();
        m.allow_proxy = self.proxy;
        m.config = config;
        Ok(m)
    }
}

fn print_table(dir: &Path) -> Result<()> {
    print!("{}", std::fs::read_to_string(dir.join("table.txt"))?);
    println!("outputs in {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let m = a.manifest("prepare")?;
            let report = cmd_prepare(&m)?;
            print!("{}", report.render());
            println!("outputs in {}", m.run_dir().display());
        }
        Command::Train(a) => {
            let m = a.manifest("train")?;
            cmd_train(&m)?;
            print_table(&m.run_dir())?;
        }
        Command::Ablate(a) => {
            let m = a.manifest("ablate")?;
            let r = cmd_ablate(&m)?;
            print_table(&m.run_dir())?;
            if r.pairs.iter().any(|p| !p.batches_match) {
                return Err(NsdtError::ContractViolation("ablation arms saw different batches".into()));
            }
        }
        Command::Robustness(a) => {
            let m = a.manifest("robustness")?;
            cmd_robustness(&m)?;
            print_table(&m.run_dir())?;
        }
        Command::Eval { checkpoint, encoded } => {
            let encoded = encoded.unwrap_or_else(|| default_encoded_for(&checkpoint));
            let r = cmd_eval(&checkpoint, &encoded)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Explain { checkpoint, redact, out_dir } => {
            let r = cmd_explain(&checkpoint, &redact, &out_dir)?;
            print!("{}", render_comparison("threshold validity", &r.table));
            println!("outputs in {}", out_dir.display());
        }
        Command::Report { out_dir } => print!("{}", cmd_report(&out_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use valuekit::config::PipelineConfig;
use valuekit::features::FeatureMatrix;
use valuekit::pipeline::{self, TrainedModel};
use valuekit::select;
use valuekit::synth::{self, SyntheticSpec};

/// Company-valuation regression pipeline: features, boosting, selection,
/// stacking.
#[derive(Parser)]
#[command(name = "valuekit", version)]
struct Cli {
    /// Worker threads; overrides the config (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LabelledArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Feature matrix CSV written by `features`.
    #[arg(long)]
    matrix: PathBuf,
    /// `id,score` CSV.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic corpus and its labels.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = synth::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = synth::DEFAULT_COMPANIES)]
        companies: usize,
        #[arg(long, default_value_t = 3.0)]
        noise_sd: f64,
    },
    /// Build the feature matrix from a corpus directory.
    Features {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured model and write the model file.
    Train(LabelledArgs),
    /// Cross-validate every model on all and on selected features.
    Evaluate(LabelledArgs),
    /// Rank features and write the selection list.
    Select(LabelledArgs),
    /// Write the top features of a trained model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every row of a feature matrix.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn output(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| anyhow!("no output path: pass --out or set output.{what} in the config"))
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::read_csv(path).with_context(|| format!("reading matrix {}", path.display()))
}

fn labelled(args: &LabelledArgs) -> Result<(PipelineConfig, FeatureMatrix, Vec<f64>)> {
    let config = load_config(&args.config)?;
    let matrix = read_matrix(&args.matrix)?;
    let labels = pipeline::read_labels(&args.labels)
        .with_context(|| format!("reading labels {}", args.labels.display()))?;
    let y = pipeline::align_labels(&matrix, &labels, config.labels.duplicates)?;
    Ok((config, matrix, y))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic {
            out,
            seed,
            companies,
            noise_sd,
        } => {
            let spec = SyntheticSpec {
                companies,
                seed,
                noise_sd,
            };
            let written = synth::generate(&spec, &out)?;
            println!("companies: {}", written.n_companies);
            println!("labels: {}", written.labels.display());
        }
        Command::Features {
            config,
            corpus,
            out,
        } => {
            let config = load_config(&config)?;
            let path = output(&out, &config.output.matrix, "matrix")?;
            let matrix = pipeline::build_matrix(&config, &corpus)?;
            matrix.write_csv(&path)?;
            println!("features: {}", matrix.n_features());
        }
        Command::Train(args) => {
            let (config, matrix, y) = labelled(&args)?;
            let path = output(&args.out, &config.output.model, "model")?;
            let summary = pipeline::train_model(&config, &matrix, &y)?;
            summary.model.save(&path)?;
            println!("training rmse: {:.6}", summary.train_rmse);
        }
        Command::Evaluate(args) => {
            let (config, matrix, y) = labelled(&args)?;
            let path = output(&args.out, &config.output.report, "report")?;
            let report = pipeline::evaluate(&config, &matrix, &y)?;
            std::fs::write(&path, report.to_json()?)
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{}", report.render_table());
        }
        Command::Select(args) => {
            let (config, matrix, y) = labelled(&args)?;
            let path = output(&args.out, &config.output.selection, "selection")?;
            let result = pipeline::run_selection(&config, &matrix, &y)?;
            select::write_selection(&result, &path)?;
            println!("kept: {} of {}", result.kept.len(), matrix.n_features());
        }
        Command::Importance { model, top_n, out } => {
            let model = TrainedModel::load(&model)?;
            let rows = pipeline::importance_rows(&model, top_n);
            pipeline::write_importance(&rows, &out)?;
            for (rank, name, value) in &rows {
                println!("{rank:>3}  {name}  {value}");
            }
        }
        Command::Predict { model, matrix, out } => {
            let model = TrainedModel::load(&model)?;
            let matrix = read_matrix(&matrix)?;
            let predictions = model.predict(&matrix)?;
            pipeline::write_predictions(matrix.ids(), &predictions, &out)?;
            println!("predictions: {}", predictions.len());
        }
    }
    Ok(())
}

/// Worker count: flag, then config, then all cores.
fn workers(cli: &Cli) -> usize {
    if let Some(w) = cli.workers {
        return w;
    }
    let config = match &cli.command {
        Command::Features { config, .. } => Some(&config.config),
        Command::Train(a) | Command::Evaluate(a) | Command::Select(a) => Some(&a.config.config),
        _ => None,
    };
    config
        .and_then(|p| PipelineConfig::load(p).ok())
        .map_or(0, |c| c.workers)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VALUEKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    let threads = workers(&cli);
    info!("running with {threads} worker threads (0 = all cores)");
    match valuekit::with_workers(threads, || run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

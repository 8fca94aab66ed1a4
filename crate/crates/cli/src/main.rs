//! `car`: data generation, training, evaluation, ablation and diagnostics.

mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use settings::Settings;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: Self::FAILURE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: Self::IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<car_core::Error> for CliError {
    fn from(e: car_core::Error) -> Self {
        use car_core::Error as E;
        let code = match &e {
            E::Io { .. } | E::Parse { .. } | E::Json(_) | E::Checkpoint(_) => Self::IO,
            E::Config(_) | E::Input(_) | E::Contract(_) | E::Schema(_) => Self::USAGE,
            _ => Self::FAILURE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "car", version, about = "Condition-revising answer selection")]
struct Cli {
    /// TOML settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model preset: reference, micro, desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Dataset directory.
    #[arg(long, global = true, env = settings::DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset into the data directory.
    GenData(GenArgs),
    /// Train one variant and save its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train both variants over several seeds and compare them.
    Ablation(AblationArgs),
    /// Finite-difference check of every operation and of the joint loss.
    GradCheck(GradCheckArgs),
    /// Show observed, revised and true conditions with the chosen answer.
    Revise(ReviseArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target fraction of samples with a defective condition.
    #[arg(long)]
    defect_rate: Option<f64>,
    /// Per-slot probability of a wrong value (with --p-unknown).
    #[arg(long, requires = "p_unknown")]
    p_wrong: Option<f64>,
    /// Per-slot probability of a missing value (with --p-wrong).
    #[arg(long, requires = "p_wrong")]
    p_unknown: Option<f64>,
    /// Generator configuration (JSON).
    #[arg(long)]
    synth_config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    reviser_layers: Option<usize>,
    /// Weight of the condition loss.
    #[arg(long)]
    eta: Option<f64>,
    /// Feed the classifier straight-through revised conditions.
    #[arg(long)]
    straight_through: bool,
}

#[derive(Args, Debug, Default)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// car (with reviser) or ca (without).
    #[arg(long, default_value = "car")]
    variant: String,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the metrics as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one prediction record per line.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblationArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    report: PathBuf,
    /// Write a PCA projection of the conditions vectors as CSV.
    #[arg(long)]
    pca: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReviseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Sample ids; the first defective samples when absent.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<u64>>,
    /// Number of samples shown when no ids are given.
    #[arg(long, default_value_t = 5)]
    limit: usize,
}

fn set(obj: &mut Map<String, Value>, section: &str, key: &str, v: Option<Value>) {
    if let Some(v) = v {
        obj.entry(section)
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("sections are objects")
            .insert(key.into(), v);
    }
}

impl ModelArgs {
    fn write(&self, obj: &mut Map<String, Value>) {
        set(obj, "model", "dim", self.dim.map(|v| json!(v)));
        set(obj, "model", "heads", self.heads.map(|v| json!(v)));
        set(obj, "model", "encoder_layers", self.encoder_layers.map(|v| json!(v)));
        set(obj, "model", "reviser_layers", self.reviser_layers.map(|v| json!(v)));
        set(obj, "model", "eta", self.eta.map(|v| json!(v)));
        set(obj, "model", "straight_through", self.straight_through.then(|| json!(true)));
        if let Some(d) = self.dim {
            // the feed-forward width follows --dim
            set(obj, "model", "ffn_dim", Some(json!(4 * d)));
        }
    }
}

impl TrainingArgs {
    fn write(&self, obj: &mut Map<String, Value>) {
        set(obj, "train", "epochs", self.epochs.map(|v| json!(v)));
        set(obj, "train", "batch_size", self.batch_size.map(|v| json!(v)));
        if let Some(lr) = self.lr {
            let adam = obj
                .entry("train")
                .or_insert_with(|| json!({}))
                .as_object_mut()
                .expect("sections are objects")
                .entry("adam")
                .or_insert_with(|| json!({}));
            adam["lr"] = json!(lr);
        }
    }
}

fn flags(cli: &Cli) -> Value {
    let mut obj = Map::new();
    if let Some(d) = &cli.data_dir {
        obj.insert("data_dir".into(), json!(d));
    }
    match &cli.command {
        Command::GenData(a) => {
            set(&mut obj, "gen", "size", a.size.map(|v| json!(v)));
            set(&mut obj, "gen", "seed", a.seed.map(|v| json!(v)));
            set(&mut obj, "gen", "defect_rate", a.defect_rate.map(|v| json!(v)));
            set(&mut obj, "gen", "p_wrong", a.p_wrong.map(|v| json!(v)));
            set(&mut obj, "gen", "p_unknown", a.p_unknown.map(|v| json!(v)));
            set(&mut obj, "gen", "synth_config", a.synth_config.as_ref().map(|v| json!(v)));
        }
        Command::Train(a) => {
            a.model.write(&mut obj);
            a.training.write(&mut obj);
            set(&mut obj, "train", "seed", a.seed.map(|v| json!(v)));
        }
        Command::Ablation(a) => {
            a.model.write(&mut obj);
            a.training.write(&mut obj);
            set(&mut obj, "ablation", "seeds", a.seeds.as_ref().map(|v| json!(v)));
        }
        Command::Eval(_) | Command::GradCheck(_) | Command::Revise(_) => {}
    }
    Value::Object(obj)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.config.as_deref(), cli.preset.as_deref(), flags(&cli))?;
    eprintln!("# effective settings\n{}", settings.to_toml());
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&settings),
        Command::Train(a) => commands::train(&settings, &a.variant, &a.out),
        Command::Eval(a) => commands::eval(
            &settings,
            &a.checkpoint,
            &a.split,
            a.report.as_deref(),
            a.predictions.as_deref(),
        ),
        Command::Ablation(a) => commands::ablation(&settings, &a.report, a.pca.as_deref()),
        Command::GradCheck(a) => commands::grad_check(a.seed),
        Command::Revise(a) => commands::revise(&settings, &a.checkpoint, &a.split, a.ids.as_deref(), a.limit),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

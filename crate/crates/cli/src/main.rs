//! `mixem`: command-line driver for data generation, training, evaluation
//! and clustering.
//!
//! Exit codes: 0 success, 1 I/O error, 2 contract error (including bad
//! flags), 3 format error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixem_core::clustering::{cluster_pipeline, ClusterMode, Components, KMeansParams};
use mixem_core::harness::{
    evaluate, generate_blobs, load_labels, load_matrix, loss_gradient_check, run_experiment, save_labels,
    save_matrix, summarize_runs, ClusterSelection, Dataset, ExperimentConfig, NormalizeSelection,
};
use mixem_core::losses::LossWeights;
use mixem_core::model::{
    dominant_components, load_checkpoint, Activation, EncoderConfig, HeadConfig, MixtureHeadConfig, Model,
    ModelConfig,
};
use mixem_core::numcore::Tensor;
use mixem_core::rng::{stream_with_index, Stream};
use mixem_core::{Error, Result};
use rand::Rng;

#[derive(Parser)]
#[command(name = "mixem", version, about = "Mixture-of-embeddings contrastive clustering on feature matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled Gaussian-blob dataset as MXMAT1 features and MXLAB1 labels.
    GenData(GenDataArgs),
    /// Train a model and evaluate it, writing a run directory.
    Train(TrainArgs),
    /// Cluster the representations of a checkpoint and score them against labels.
    Evaluate(EvaluateArgs),
    /// Cluster the representations of a checkpoint and write the assignments.
    Cluster(ClusterArgs),
    /// Compare analytic and finite-difference gradients of the total loss.
    Gradcheck(GradcheckArgs),
    /// Aggregate the evaluation records of several run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Distance between class means, in noise standard deviations.
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output feature file (MXMAT1).
    #[arg(long)]
    features: PathBuf,
    /// Output label file (MXLAB1).
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Configuration file of `key = value` lines; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Feature matrix (MXMAT1). Without it a blob dataset is generated from
    /// the `data_*` keys.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Labels (MXLAB1) used for evaluation only.
    #[arg(long, requires = "features")]
    labels: Option<PathBuf>,
    /// Run directory; overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Args)]
struct ClusterSettings {
    /// Initialization: kmeans-random, kmeans-mixem or max-component.
    #[arg(long, default_value = "kmeans-mixem")]
    mode: ClusterSelection,
    /// L2-normalize representations before clustering: on or off.
    #[arg(long, default_value = "on")]
    normalize: NormalizeSelection,
    /// Random restarts for kmeans-random.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Seed for kmeans-random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// kmeans-random, kmeans-mixem, max-component or all.
    #[arg(long, default_value = "all")]
    mode: ClusterSelection,
    /// on, off or both.
    #[arg(long, default_value = "both")]
    normalize: NormalizeSelection,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the confusion matrix of every mode.
    #[arg(long)]
    confusion: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    settings: ClusterSettings,
    /// Output assignments (MXLAB1).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random model/batch configurations to check.
    #[arg(long, default_value_t = 20)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference half-width.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing `reports.txt`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn load_dataset(features: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let x = load_matrix(features)?;
    let y = labels.map(load_labels).transpose()?;
    Dataset::new(x, y)
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let ds = generate_blobs(args.classes, args.per_class, args.dim, args.separation, args.seed)?;
    save_matrix(&ds.features, &args.features)?;
    save_labels(ds.require_labels()?, &args.labels)?;
    println!(
        "wrote {} rows x {} features to {}, labels to {}",
        ds.len(),
        ds.dim(),
        args.features.display(),
        args.labels.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    if args.print_defaults {
        print!("{}", ExperimentConfig::default().to_text());
        return Ok(());
    }
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Contract(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    config.validate()?;

    let dataset = match &args.features {
        Some(f) => load_dataset(f, args.labels.as_deref())?,
        None => generate_blobs(
            config.data_classes,
            config.data_per_class,
            config.data_dim,
            config.data_separation,
            config.data_seed,
        )?,
    };
    let record = run_experiment(&config, &dataset, &config.output_dir)?;
    if let Some(last) = record.steps.last() {
        println!("step {} {}", last.step, last.losses.total);
    }
    if let Some(d) = record.degeneracy.last() {
        println!("max_marginal={:.4}", d.max_marginal);
    }
    for r in &record.reports {
        println!("{}", r.to_record());
    }
    println!(
        "run directory {} ({:.1}s)",
        config.output_dir.display(),
        record.wall_clock.as_secs_f64()
    );
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.features, Some(&args.labels))?;
    let selection = ExperimentConfig {
        cluster_mode: args.mode,
        normalize: args.normalize,
        restarts: args.restarts,
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    selection.validate()?;
    let modes = selection.eval_modes(model.num_components().is_some())?;
    for r in evaluate(&model, &dataset, &modes, &selection.kmeans_params())? {
        println!("{}", r.to_record());
        if args.confusion {
            println!("{}", r.confusion);
        }
    }
    Ok(())
}

fn cluster_mode(s: &ClusterSettings) -> Result<ClusterMode> {
    match s.mode {
        ClusterSelection::Random => Ok(ClusterMode::RandomRestart {
            restarts: s.restarts,
            seed: s.seed,
        }),
        ClusterSelection::Mixem => Ok(ClusterMode::MixemInit),
        ClusterSelection::MaxComponent => Ok(ClusterMode::MaxComponent),
        ClusterSelection::All => Err(Error::Contract("cluster needs a single mode, not `all`".into())),
    }
}

fn cluster_cmd(args: ClusterArgs) -> Result<()> {
    let normalize = match args.settings.normalize {
        NormalizeSelection::On => true,
        NormalizeSelection::Off => false,
        NormalizeSelection::Both => return Err(Error::Contract("cluster needs --normalize on or off".into())),
    };
    let mode = cluster_mode(&args.settings)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let features = load_matrix(&args.features)?;
    let reps = model.representations(&features)?;
    let dominant = match model.num_components() {
        Some(_) => Some(dominant_components(&model.mixture_batch(&features)?.1.coefficients)),
        None => None,
    };
    let components = dominant.as_deref().map(|d| Components {
        dominant: d,
        num_components: model.num_components().unwrap_or(0),
    });
    let params = KMeansParams {
        max_iter: args.settings.max_iter,
        tol: args.settings.tol,
    };
    let res = cluster_pipeline(&reps, components, args.k, mode, normalize, &params)?;
    save_labels(&res.assignments, &args.output)?;
    println!(
        "mode={} normalized={} init={} inertia={} iterations={} restarts={}",
        mode.name(),
        normalize,
        res.init_kind.name(),
        res.inertia,
        res.iterations,
        res.restarts_used
    );
    Ok(())
}

fn random_case(seed: u64, attempt: u64) -> Result<(Model, Tensor, LossWeights)> {
    let mut rng = stream_with_index(seed, Stream::Init, attempt);
    let n = rng.random_range(1..=4);
    let input_dim = rng.random_range(2..=8);
    let rep = rng.random_range(2..=8);
    let config = ModelConfig {
        encoder: EncoderConfig {
            input_dim,
            hidden_dims: vec![rng.random_range(2..=8)],
            representation_dim: rep,
            activation: Activation::Tanh,
        },
        base_head: None,
        head: HeadConfig::Mixture(MixtureHeadConfig {
            num_components: rng.random_range(2..=4),
            embedding_dim: rng.random_range(2..=rep),
            hidden_dim: rng.random_range(2..=8),
        }),
    };
    let model = Model::init(&config, &mut rng)?;
    let data = (0..2 * n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = Tensor::matrix(2 * n, input_dim, data)?;
    let weights = LossWeights {
        comp_entropy: rng.random_range(0.1..1.0),
        inst_entropy: rng.random_range(0.1..1.0),
        push: rng.random_range(0.1..1.0),
        pull: rng.random_range(0.1..1.0),
        temperature: rng.random_range(0.2..1.0),
    };
    Ok((model, x, weights))
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempt = 0;
    while checked < args.configs {
        attempt += 1;
        let (model, x, weights) = random_case(args.seed, attempt)?;
        // Skip cases where the fixed component assignment flips under perturbation.
        let Some(report) = loss_gradient_check(&model, &x, &weights, args.step, args.tol)? else {
            continue;
        };
        println!(
            "config {checked}: {} coordinates, max relative error {:.3e}",
            report.coordinates, report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
        checked += 1;
    }
    println!("worst relative error {worst:.3e} (tolerance {:.1e})", args.tol);
    if worst > args.tol {
        return Err(Error::Domain(format!(
            "gradient check failed: {worst:.3e} exceeds {:.1e}",
            args.tol
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Report(a) => {
            print!("{}", summarize_runs(&a.runs)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

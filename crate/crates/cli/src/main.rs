//! Command-line front end: synthetic data generation, training, decoding,
//! and evaluation of partition metrics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use partmetric::dp::SequentialConstraints;
use partmetric::hermite::{embed_series, HermiteConfig};
use partmetric::io;
use partmetric::metric::pca_init;
use partmetric::partition::{hausdorff, partition_loss, rand_index, HausdorffResult};
use partmetric::trainer::{
    decode, train, train_ncuts_cccp, train_partial, CccpConfig, PartialLabels, PartialSample,
    TrainerConfig, TrainingSample,
};
use partmetric::{Error, KMode, Metric, MetricKind, MetricModel, RegKind, Regularizer, Task};

#[derive(Parser)]
#[command(name = "partmetric", version, about = "Metric learning for partitioning problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a multivariate change-point dataset with distractor dimensions.
    SynthCpd(SynthCpdArgs),
    /// Generate a univariate series with piecewise-constant variance.
    SynthVar(SynthVarArgs),
    /// Train a metric from labelled datasets.
    Train(TrainArgs),
    /// Partition a dataset with a trained model.
    Decode(DecodeArgs),
    /// Compare predicted labels against ground truth.
    Eval(EvalArgs),
    /// Print the metric stored in a model for inspection.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthCpdArgs {
    #[arg(long, default_value_t = 30)]
    dims: usize,
    #[arg(long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 3)]
    relevant: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    k_min: usize,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[arg(long, default_value_t = 5)]
    min_segment: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes <prefix>.data.txt and <prefix>.labels.json.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SynthVarArgs {
    #[arg(long, default_value_t = 400)]
    length: usize,
    /// Comma-separated per-segment standard deviations, e.g. "1,3".
    #[arg(long, default_value = "1,3")]
    stds: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = ["changepoint", "cluster", "ncuts"])]
    task: String,
    #[arg(long, default_value = "diag", value_parser = ["full", "diag"])]
    metric: String,
    #[arg(long, default_value = "l2", value_parser = ["l2", "l1", "trace"])]
    reg: String,
    #[arg(long, default_value_t = 1e-3)]
    reg_weight: f64,
    /// "penalized" or "known:K".
    #[arg(long, default_value = "penalized")]
    mode: String,
    /// Glob matching the dataset files (sorted, paired with --labels).
    #[arg(long)]
    data: String,
    /// Glob matching the label files (sorted, paired with --data).
    #[arg(long)]
    labels: String,
    /// Train from partial labels: keep only this fraction of each sequence
    /// annotated (label files carrying explicit constraints override it).
    #[arg(long)]
    partial: Option<f64>,
    /// Hermite embedding "R" (standardized) or "R,SIGMA" for raw series.
    #[arg(long)]
    hermite: Option<String>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    step0: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Outer iterations of the convex-concave loop (ncuts only).
    #[arg(long, default_value_t = 8)]
    outer_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Override the cluster count stored in the model.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_parser = ["frobenius", "rand", "hausdorff"])]
    loss: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
}

fn parse_stds(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad standard deviation '{tok}'")))
        })
        .collect()
}

fn parse_hermite(s: &str) -> Result<HermiteConfig, Error> {
    let parts: Vec<&str> = s.split(',').collect();
    let order: usize = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad hermite order '{}'", parts[0])))?;
    match parts.len() {
        1 => HermiteConfig::new(order),
        2 => {
            let sigma: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad hermite sigma '{}'", parts[1])))?;
            HermiteConfig::with_sigma(order, sigma)
        }
        _ => Err(Error::Parse("expected --hermite R or R,SIGMA".into())),
    }
}

fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, Error> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::Parse(format!("bad glob '{pattern}': {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Parse(format!("no files match '{pattern}'")));
    }
    Ok(paths)
}

fn column_vector(series: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(series.len(), 1, series)
}

fn with_suffix(prefix: &PathBuf, suffix: &str) -> PathBuf {
    let mut s = prefix.clone().into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_synth_cpd(args: SynthCpdArgs) -> Result<(), Error> {
    let cfg = io::SynthChangepointConfig {
        dims: args.dims,
        length: args.length,
        relevant: args.relevant,
        k_range: (args.k_min, args.k_max),
        noise: args.noise,
        min_segment_len: args.min_segment,
    };
    let (x, truth) = io::synth_changepoint(&cfg, args.seed)?;
    io::write_dataset(with_suffix(&args.out_prefix, ".data.txt"), &x)?;
    io::write_labels(with_suffix(&args.out_prefix, ".labels.json"), &truth, None)?;
    Ok(())
}

fn run_synth_var(args: SynthVarArgs) -> Result<(), Error> {
    let stds = parse_stds(&args.stds)?;
    let (series, truth) = io::synth_varchange(args.length, &stds, args.seed)?;
    io::write_dataset(
        with_suffix(&args.out_prefix, ".data.txt"),
        &column_vector(&series),
    )?;
    io::write_labels(with_suffix(&args.out_prefix, ".labels.json"), &truth, None)?;
    Ok(())
}

struct LoadedSample {
    x: DMatrix<f64>,
    truth: partmetric::Partition,
    constraints: Option<SequentialConstraints>,
}

fn load_samples(
    data_glob: &str,
    labels_glob: &str,
    hermite: Option<&HermiteConfig>,
) -> Result<Vec<LoadedSample>, Error> {
    let data_paths = expand_glob(data_glob)?;
    let label_paths = expand_glob(labels_glob)?;
    if data_paths.len() != label_paths.len() {
        return Err(Error::Parse(format!(
            "{} data files but {} label files",
            data_paths.len(),
            label_paths.len()
        )));
    }
    let mut samples = Vec::with_capacity(data_paths.len());
    for (dp, lp) in data_paths.iter().zip(&label_paths) {
        let raw = io::read_dataset(dp)?;
        let (truth, constraints) = io::read_labels(lp)?;
        let x = match hermite {
            Some(cfg) => {
                if raw.ncols() != 1 {
                    return Err(Error::InvalidInput(format!(
                        "{}: hermite embedding needs a univariate series",
                        dp.display()
                    )));
                }
                let series: Vec<f64> = raw.column(0).iter().copied().collect();
                embed_series(&series, cfg)?
            }
            None => raw,
        };
        if x.nrows() != truth.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} rows but {} labels",
                dp.display(),
                x.nrows(),
                truth.len()
            )));
        }
        samples.push(LoadedSample {
            x,
            truth,
            constraints,
        });
    }
    Ok(samples)
}

fn run_train(args: TrainArgs) -> Result<(), Error> {
    let task = match args.task.as_str() {
        "changepoint" => Task::Changepoint,
        "cluster" => Task::Cluster,
        _ => Task::Ncuts,
    };
    let kind = if args.metric == "full" {
        MetricKind::Full
    } else {
        MetricKind::Diagonal
    };
    let reg = Regularizer {
        kind: match args.reg.as_str() {
            "l1" => RegKind::L1Diag,
            "trace" => RegKind::Trace,
            _ => RegKind::FrobeniusSq,
        },
        weight: args.reg_weight,
    };
    let mode = io::parse_k_mode(&args.mode)?;
    let hermite = args.hermite.as_deref().map(parse_hermite).transpose()?;
    let samples = load_samples(&args.data, &args.labels, hermite.as_ref())?;
    let dim = samples[0].x.ncols();

    let cfg = TrainerConfig {
        task,
        mode,
        reg,
        max_iters: args.max_iters,
        step0: args.step0,
        tol: args.tol,
        seed: args.seed,
    };

    let (metric, iterations, objective) = match task {
        Task::Ncuts => {
            let training: Vec<TrainingSample> = samples
                .into_iter()
                .map(|s| TrainingSample::new(s.x, s.truth))
                .collect::<Result<_, _>>()?;
            let datasets: Vec<DMatrix<f64>> =
                training.iter().map(|s| s.data().clone()).collect();
            let init = pca_init(&datasets, kind, None)?;
            let cccp = CccpConfig {
                mode,
                reg,
                outer_iters: args.outer_iters,
                inner_iters: args.max_iters,
                step0: args.step0,
                tol: args.tol,
            };
            let out = train_ncuts_cccp(&training, &cccp, &init)?;
            let obj = *out.outer_objectives.last().unwrap();
            (out.metric, out.outer_objectives.len() - 1, obj)
        }
        _ if args.partial.is_some() || samples.iter().any(|s| s.constraints.is_some()) => {
            let fraction = args.partial.unwrap_or(0.0);
            let partial: Vec<PartialSample> = samples
                .into_iter()
                .map(|s| {
                    let partial = match s.constraints {
                        Some(constraints) => PartialLabels {
                            constraints,
                            fraction,
                        },
                        None => partmetric::trainer::prefix_partial_labels(&s.truth, fraction)?,
                    };
                    Ok(PartialSample { x: s.x, partial })
                })
                .collect::<Result<_, Error>>()?;
            let out = train_partial(&partial, &cfg, kind, 10)?;
            (out.metric, out.objective_trace.len(), out.best_objective)
        }
        _ => {
            let training: Vec<TrainingSample> = samples
                .into_iter()
                .map(|s| TrainingSample::new(s.x, s.truth))
                .collect::<Result<_, _>>()?;
            let init = Metric::identity(kind, dim);
            let out = train(&training, &cfg, &init)?;
            (out.metric, out.objective_trace.len(), out.best_objective)
        }
    };

    let mut model = MetricModel::new(metric, task, mode);
    if let Some(h) = hermite {
        model.hermite = Some(h);
    }
    io::save_model(
        &args.out,
        &model,
        &io::ModelMetadata {
            iterations,
            final_objective: objective,
            seed: args.seed,
        },
    )?;
    println!("{objective}");
    Ok(())
}

fn run_decode(args: DecodeArgs) -> Result<(), Error> {
    let (model, _) = io::load_model(&args.model)?;
    let x = io::read_dataset(&args.data)?;
    let partition = decode(&x, &model, args.k)?;
    io::write_labels(&args.out, &partition, None)?;
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Error> {
    let (pred, _) = io::read_labels(&args.pred)?;
    let (truth, _) = io::read_labels(&args.truth)?;
    let value = match args.loss.as_str() {
        "frobenius" => partition_loss(
            &pred.rescaled_equivalence(),
            &truth.rescaled_equivalence(),
        )?,
        "rand" => rand_index(&pred, &truth)?,
        _ => match hausdorff(&pred, &truth)? {
            HausdorffResult::Distance(d) => d,
            HausdorffResult::Incomparable => f64::INFINITY,
        },
    };
    println!("{value}");
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<(), Error> {
    let (model, meta) = io::load_model(&args.model)?;
    let task = match model.task {
        Task::Changepoint => "changepoint",
        Task::Cluster => "cluster",
        Task::Ncuts => "ncuts",
    };
    let mode = match model.k_mode {
        KMode::Known(k) => format!("known:{k}"),
        KMode::Penalized => "penalized".into(),
    };
    match &model.metric {
        Metric::Diagonal(b) => {
            println!("diagonal {task} {mode} iterations={}", meta.iterations);
            let entries: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            println!("{}", entries.join(" "));
        }
        Metric::Full(b) => {
            println!("full {task} {mode} iterations={}", meta.iterations);
            // report the spectrum rather than P^2 raw entries
            let e = b.clone().symmetric_eigen();
            let mut eigs: Vec<f64> = e.eigenvalues.iter().copied().collect();
            eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let entries: Vec<String> = eigs.iter().map(|v| v.to_string()).collect();
            println!("{}", entries.join(" "));
        }
    }
    Ok(())
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::SynthCpd(args) => run_synth_cpd(args),
        Command::SynthVar(args) => run_synth_var(args),
        Command::Train(args) => run_train(args),
        Command::Decode(args) => run_decode(args),
        Command::Eval(args) => run_eval(args),
        Command::Report(args) => run_report(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

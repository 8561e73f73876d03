use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ief_core::check::{run_checks, CheckConfig};
use ief_core::data::{generate_split, load_dataset, save_dataset, skeleton, Dataset, GeneratorConfig};
use ief_core::eval::{compare_report, evaluate, MetricReport, REFERENCE_FBODY};
use ief_core::infer::{parse_trajectories_csv, predict_dataset, predictions_from_trajectories, test_crops, trajectories_csv, Prediction};
use ief_core::model::{Model, Regime};
use ief_core::svg::{line_chart, pose_overlay};
use ief_core::train::{log_csv, train, Curriculum, LossMask, TrainConfig};
use ief_core::Error;

mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_PATH: u8 = 3;
    pub const CONTRADICTION: u8 = 4;
    pub const DATA: u8 = 5;
    pub const DIVERGENCE: u8 = 6;
    pub const CHECK_FAILED: u8 = 7;
}

/// Iterative error feedback for keypoint estimation on synthetic figures.
#[derive(Parser, Debug)]
#[command(name = "ief", version)]
struct Cli {
    /// Replay a `run_config.toml` written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and test sets.
    Gen(GenArgs),
    /// Train a model with one of the regimes ief, joint, direct, iterdirect.
    Train(TrainArgs),
    /// Run the feedback loop on a test set and write trajectories.
    Infer(InferArgs),
    /// Score trajectories with PCKh and PCP.
    Eval(EvalArgs),
    /// Draw pose overlays and the per-step PCKh curve.
    Plot(PlotArgs),
    /// Run the gradient oracle and invariant sweeps.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    test_n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory; `train/` and `test/` are created under it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// ief, joint, direct, or iterdirect.
    regime: String,
    /// Curriculum override: fpc or joint.
    #[arg(long)]
    curriculum: Option<String>,
    /// Training set directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-keypoint correction bound in pixels.
    #[arg(long = "L")]
    bound: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs_per_stage: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    test_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated keypoint names to render and predict.
    #[arg(long)]
    subset: Option<String>,
    /// Train on the canonical crop only.
    #[arg(long)]
    no_augment: bool,
    /// Train every predicted keypoint, annotated or not.
    #[arg(long)]
    unmasked: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Directory holding a trained model (the `model/` folder of a train run).
    #[arg(long)]
    model: PathBuf,
    /// Test set directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the step count stored with the model.
    #[arg(long)]
    test_steps: Option<usize>,
    /// Run on mirrored images and map the results back.
    #[arg(long)]
    mirrored: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Infer output directories, optionally `name=dir`; the first is the
    /// comparison baseline.
    #[arg(long = "pred", required = true)]
    preds: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Infer output directory.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// How many examples get a pose overlay.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    inputs: usize,
    #[arg(long, default_value_t = 20)]
    samples_per_input: usize,
    #[arg(long, default_value_t = 10_000)]
    cases: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The effective configuration of one command, written before any work so
/// the run can be replayed with `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum RunConfig {
    Gen { out: PathBuf, train: usize, test: usize, seed: u64, threads: usize, generator: GeneratorConfig },
    Train { out: PathBuf, data: PathBuf, train: TrainConfig },
    Infer { out: PathBuf, model: PathBuf, data: PathBuf, steps: usize, mirrored: bool, threads: usize },
    Eval { out: PathBuf, runs: Vec<(String, PathBuf)>, alpha: f64 },
    Plot { out: PathBuf, pred: PathBuf, count: usize, alpha: f64 },
    Check { out: PathBuf, seed: u64, inputs: usize, samples_per_input: usize, cases: usize },
}

impl RunConfig {
    fn out(&self) -> &Path {
        match self {
            RunConfig::Gen { out, .. }
            | RunConfig::Train { out, .. }
            | RunConfig::Infer { out, .. }
            | RunConfig::Eval { out, .. }
            | RunConfig::Plot { out, .. }
            | RunConfig::Check { out, .. } => out,
        }
    }
}

/// Sidecar written by `infer` so later commands know what produced the
/// trajectories.
#[derive(Debug, Serialize, Deserialize)]
struct InferRecord {
    model: PathBuf,
    data: PathBuf,
    out_size: usize,
    steps: usize,
    mirrored: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    MissingPath(PathBuf),
    Contradiction(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::MissingPath(_) => exit::MISSING_PATH,
            Failure::Contradiction(_) => exit::CONTRADICTION,
            Failure::Check(_) => exit::CHECK_FAILED,
            Failure::Lib(e) => lib_code(e),
        }
    }

    fn category(&self) -> &'static str {
        match self.code() {
            exit::USAGE => "usage",
            exit::MISSING_PATH => "missing path",
            exit::CONTRADICTION => "contradictory configuration",
            exit::DATA => "data",
            exit::DIVERGENCE => "divergence",
            exit::CHECK_FAILED => "check failed",
            _ => "error",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Contradiction(m) | Failure::Check(m) => m.clone(),
            Failure::MissingPath(p) => format!("{} does not exist", p.display()),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

fn lib_code(e: &Error) -> u8 {
    match e {
        Error::Example { source, .. } => lib_code(source),
        Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::Checksum { .. }
        | Error::Format { .. }
        | Error::DimensionMismatch { .. } => exit::DATA,
        Error::GradientDivergence { .. } | Error::LossDivergence { .. } | Error::InferenceDivergence { .. } | Error::NonFinite(_) => {
            exit::DIVERGENCE
        }
        Error::Usage(_) | Error::InvalidArgument(_) | Error::UnannotatedKeypoint { .. } => exit::USAGE,
        Error::Io(_) => exit::OTHER,
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn default_out(name: &str) -> PathBuf {
    std::env::var_os("IEF_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")).join(name)
}

fn existing(path: &Path) -> Outcome<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Failure::MissingPath(path.to_path_buf()))
    }
}

fn parse_subset(list: &str) -> Outcome<Vec<usize>> {
    list.split(',')
        .map(|name| {
            let name = name.trim();
            skeleton::index_of(name).ok_or_else(|| {
                Failure::Usage(format!("unknown keypoint `{name}` (expected one of {})", skeleton::KEYPOINT_NAMES.join(", ")))
            })
        })
        .collect()
}

fn resolve_train(args: TrainArgs) -> Outcome<RunConfig> {
    let (regime, mut curriculum) = match args.regime.as_str() {
        "joint" => (Regime::Ief, Curriculum::Joint),
        other => (other.parse::<Regime>().map_err(|e| Failure::Usage(e.to_string()))?, Curriculum::Fpc),
    };
    if let Some(c) = &args.curriculum {
        curriculum = match c.as_str() {
            "fpc" => Curriculum::Fpc,
            "joint" => Curriculum::Joint,
            _ => return Err(Failure::Usage(format!("unknown curriculum `{c}` (expected fpc or joint)"))),
        };
    }
    let d = TrainConfig::default();
    let train = TrainConfig {
        regime,
        curriculum,
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        momentum: args.momentum.unwrap_or(d.momentum),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        epochs_per_stage: args.epochs_per_stage.unwrap_or(d.epochs_per_stage),
        steps: args.steps.unwrap_or(d.steps),
        test_steps: args.test_steps.unwrap_or(d.test_steps),
        bound: args.bound.unwrap_or(d.bound),
        sigma: args.sigma.or(d.sigma),
        seed: args.seed.unwrap_or(d.seed),
        loss_mask: if args.unmasked { LossMask::All } else { LossMask::Annotated },
        subset: args.subset.as_deref().map(parse_subset).transpose()?,
        augment: !args.no_augment,
    };
    Ok(RunConfig::Train {
        out: args.out.unwrap_or_else(|| default_out(&format!("run-{}", args.regime))),
        data: args.data.unwrap_or_else(|| default_out("data").join("train")),
        train,
    })
}

fn resolve(command: Command) -> Outcome<RunConfig> {
    Ok(match command {
        Command::Gen(a) => RunConfig::Gen {
            out: a.out.unwrap_or_else(|| default_out("data")),
            train: a.n,
            test: a.test_n,
            seed: a.seed,
            threads: a.threads,
            generator: GeneratorConfig::square(a.dims),
        },
        Command::Train(a) => resolve_train(a)?,
        Command::Infer(a) => {
            let model = Model::load(&existing(&a.model)?)?;
            RunConfig::Infer {
                out: a.out.unwrap_or_else(|| default_out("infer")),
                steps: a.test_steps.unwrap_or(model.test_steps),
                model: a.model,
                data: a.data.unwrap_or_else(|| default_out("data").join("test")),
                mirrored: a.mirrored,
                threads: a.threads,
            }
        }
        Command::Eval(a) => RunConfig::Eval {
            out: a.out.unwrap_or_else(|| default_out("eval")),
            runs: a
                .preds
                .iter()
                .map(|p| match p.split_once('=') {
                    Some((name, dir)) => (name.to_string(), PathBuf::from(dir)),
                    None => {
                        let dir = PathBuf::from(p);
                        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.clone());
                        (name, dir)
                    }
                })
                .collect(),
            alpha: a.alpha,
        },
        Command::Plot(a) => {
            RunConfig::Plot { out: a.out.unwrap_or_else(|| default_out("plot")), pred: a.pred, count: a.count, alpha: a.alpha }
        }
        Command::Check(a) => RunConfig::Check {
            out: a.out.unwrap_or_else(|| default_out("check")),
            seed: a.seed,
            inputs: a.inputs,
            samples_per_input: a.samples_per_input,
            cases: a.cases,
        },
    })
}

/// Rejects settings that cannot hold together, before anything is written.
fn validate(config: &RunConfig) -> Outcome {
    match config {
        RunConfig::Train { train, .. } => match train.validate() {
            Err(Error::Usage(m)) => Err(Failure::Contradiction(m)),
            Err(e) => Err(e.into()),
            Ok(()) => Ok(()),
        },
        RunConfig::Gen { generator, .. } if generator.width < 32 => {
            Err(Failure::Usage(format!("--dims must be at least 32, got {}", generator.width)))
        }
        RunConfig::Infer { steps: 0, .. } => Err(Failure::Usage("--test-steps must be at least 1".into())),
        RunConfig::Eval { alpha, .. } | RunConfig::Plot { alpha, .. } if !(alpha.is_finite() && *alpha > 0.0) => {
            Err(Failure::Usage(format!("--alpha must be positive, got {alpha}")))
        }
        _ => Ok(()),
    }
}

fn write_config(config: &RunConfig) -> Outcome {
    let text = toml::to_string_pretty(config).map_err(|e| Failure::Usage(format!("cannot encode config: {e}")))?;
    println!("effective config:\n{text}");
    fs::create_dir_all(config.out())?;
    fs::write(config.out().join("run_config.toml"), text)?;
    Ok(())
}

fn read_config(path: &Path) -> Outcome<RunConfig> {
    let text = fs::read_to_string(existing(path)?)?;
    toml::from_str(&text).map_err(|e| Failure::Lib(Error::Format { path: path.to_path_buf(), reason: e.to_string() }))
}

fn run_gen(out: &Path, train: usize, test: usize, seed: u64, threads: usize, generator: &GeneratorConfig) -> Outcome {
    let (train_set, test_set) = generate_split(train, test, seed, generator, threads)?;
    save_dataset(&train_set, &out.join("train"))?;
    save_dataset(&test_set, &out.join("test"))?;
    println!("wrote {} training and {} test examples under {}", train_set.len(), test_set.len(), out.display());
    Ok(())
}

fn run_train(out: &Path, data: &Path, config: &TrainConfig) -> Outcome {
    let dataset = load_dataset(&existing(data)?)?;
    let mut extra = BTreeMap::new();
    extra.insert("data".to_string(), data.display().to_string());
    extra.insert("curriculum".to_string(), format!("{:?}", config.curriculum).to_lowercase());
    let outcome = train(&dataset, config, &mut |stage, model| {
        model.save(&out.join(format!("stage{stage}")), &extra)?;
        println!("stage {stage} done");
        Ok(())
    })?;
    extra.insert("updates".to_string(), outcome.updates.to_string());
    outcome.model.save(&out.join("model"), &extra)?;
    fs::write(out.join("train_log.csv"), log_csv(&outcome.log))?;
    println!("{} updates; model in {}", outcome.updates, out.join("model").display());
    Ok(())
}

fn run_infer(out: &Path, model_dir: &Path, data: &Path, steps: usize, mirrored: bool, threads: usize) -> Outcome {
    let model = Model::load(&existing(model_dir)?)?;
    let dataset = load_dataset(&existing(data)?)?;
    let predictions = predict_dataset(&model, &dataset, steps, mirrored, threads)?;
    fs::write(out.join("trajectories.csv"), trajectories_csv(&predictions))?;
    let record = InferRecord { model: model_dir.to_path_buf(), data: data.to_path_buf(), out_size: model.width(), steps, mirrored };
    fs::write(out.join("infer.toml"), toml::to_string_pretty(&record).expect("plain record"))?;
    println!("wrote {} trajectories of {steps} steps", predictions.len());
    Ok(())
}

fn load_predictions(dir: &Path) -> Outcome<(InferRecord, Dataset, Vec<Prediction>)> {
    let record_path = existing(&dir.join("infer.toml"))?;
    let record: InferRecord = toml::from_str(&fs::read_to_string(&record_path)?)
        .map_err(|e| Failure::Lib(Error::Format { path: record_path, reason: e.to_string() }))?;
    let csv_path = existing(&dir.join("trajectories.csv"))?;
    let rows = parse_trajectories_csv(&fs::read_to_string(&csv_path)?, &csv_path)?;
    let dataset = load_dataset(&existing(&record.data)?)?;
    let predictions = predictions_from_trajectories(&dataset, record.out_size, rows)?;
    Ok((record, dataset, predictions))
}

fn step_curve_svg(runs: &[(String, MetricReport)]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> =
        runs.iter().map(|(name, r)| (name.clone(), r.per_step.iter().enumerate().map(|(t, v)| (t as f64, 100.0 * v)).collect())).collect();
    line_chart("Full-body PCKh per step", "step", "PCKh (%)", &series)
}

fn run_eval(out: &Path, runs: &[(String, PathBuf)], alpha: f64) -> Outcome {
    let mut reports = Vec::with_capacity(runs.len());
    for (name, dir) in runs {
        let (_, _, predictions) = load_predictions(dir)?;
        let report = evaluate(&predictions, alpha)?;
        println!("{name}: fbody PCKh@{alpha} = {:.2}", 100.0 * report.fbody());
        reports.push((name.clone(), report));
    }
    if let [(_, report)] = reports.as_slice() {
        fs::write(out.join("metrics.csv"), report.to_csv())?;
    } else {
        for (name, report) in &reports {
            fs::write(out.join(format!("metrics-{name}.csv")), report.to_csv())?;
        }
    }
    let mut comparison = compare_report(&reports, 0)?;
    comparison.annotations = REFERENCE_FBODY.iter().map(|(name, v)| format!("reference fbody {name}: {v:.1}")).collect();
    fs::write(out.join("comparison.csv"), comparison.to_csv())?;
    fs::write(out.join("pckh.svg"), comparison.to_svg())?;
    fs::write(out.join("pckh_per_step.svg"), step_curve_svg(&reports))?;
    Ok(())
}

fn run_plot(out: &Path, pred: &Path, count: usize, alpha: f64) -> Outcome {
    let (record, dataset, predictions) = load_predictions(pred)?;
    let crops = test_crops(&dataset, record.out_size);
    let limbs = &dataset.manifest.limbs;
    for (p, (_, ex)) in predictions.iter().zip(&crops).take(count) {
        let svg = pose_overlay(&ex.image, &p.trajectory.poses, &p.truth, limbs, 6.0);
        fs::write(out.join(format!("overlay-{}.svg", p.id)), svg)?;
    }
    let report = evaluate(&predictions, alpha)?;
    fs::write(out.join("pckh_per_step.svg"), step_curve_svg(&[("model".into(), report)]))?;
    println!("wrote {} overlays", count.min(predictions.len()));
    Ok(())
}

fn run_check(out: &Path, seed: u64, inputs: usize, samples_per_input: usize, cases: usize) -> Outcome {
    let config =
        CheckConfig { seed, gradient_inputs: inputs, gradient_samples: samples_per_input, property_cases: cases, ..CheckConfig::default() };
    let outcomes = run_checks(&config)?;
    let mut report = String::new();
    for o in &outcomes {
        let line = format!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
    }
    fs::write(out.join("check.txt"), report)?;
    match outcomes.iter().find(|o| !o.passed) {
        Some(o) => Err(Failure::Check(format!("{} check failed: {}", o.name, o.detail))),
        None => Ok(()),
    }
}

fn execute(config: &RunConfig) -> Outcome {
    validate(config)?;
    write_config(config)?;
    let out = config.out();
    match config {
        RunConfig::Gen { train, test, seed, threads, generator, .. } => run_gen(out, *train, *test, *seed, *threads, generator),
        RunConfig::Train { data, train, .. } => run_train(out, data, train),
        RunConfig::Infer { model, data, steps, mirrored, threads, .. } => run_infer(out, model, data, *steps, *mirrored, *threads),
        RunConfig::Eval { runs, alpha, .. } => run_eval(out, runs, *alpha),
        RunConfig::Plot { pred, count, alpha, .. } => run_plot(out, pred, *count, *alpha),
        RunConfig::Check { seed, inputs, samples_per_input, cases, .. } => run_check(out, *seed, *inputs, *samples_per_input, *cases),
    }
}

fn run() -> Outcome {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::Usage(e.to_string()));
        }
    };
    let config = match (cli.config, cli.command) {
        (Some(path), None) => read_config(&path)?,
        (None, Some(command)) => resolve(command)?,
        (Some(_), Some(_)) => return Err(Failure::Usage("--config replays a whole run; give it without a subcommand".into())),
        (None, None) => return Err(Failure::Usage("missing subcommand (gen, train, infer, eval, plot, check)".into())),
    };
    execute(&config)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ief: {}: {}", f.category(), f.message().trim_end());
            ExitCode::from(f.code())
        }
    }
}

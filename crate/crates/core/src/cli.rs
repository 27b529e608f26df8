//! The `talfuse` command-line tool.
//!
//! Exit codes: 0 success, 1 validation or evaluation failure, 2 usage
//! error, 3 I/O or schema error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::datasetio::{
    build_label_mapping, load_ground_truth, load_label_overrides, load_predictions, merge_datasets,
    prediction_labels, save_ground_truth, save_predictions, to_canonical_json,
};
use crate::domain::{canonicalize_label, GroundTruthSet, LabelSpace, PredictionSet};
use crate::error::Error;
use crate::eval::{evaluate, report_csv, EvalConfig, EvalReport, UnknownVideoPolicy};
use crate::fusion::{
    nms_fuse, soft_nms_fuse, wbf_fuse_with_stats, FusionConfig, RescaleMode, ScoreCombine,
};
use crate::simulator::{format_table, run_ensemble_experiment_with_data, MethodResult, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Usage,
    Io,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Io => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        CliError {
            status,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError::new(ExitStatus::Usage, message)
    }

    /// Wraps a library error, prefixing the file it came from if any.
    fn from_lib(err: Error, file: Option<&Path>) -> Self {
        let status = match err {
            Error::MalformedJson { .. }
            | Error::SchemaViolation(_)
            | Error::InvariantViolation { .. } => ExitStatus::Io,
            Error::WeightLengthMismatch { .. }
            | Error::EmptyModelList
            | Error::InvalidConfig(_)
            | Error::InfeasibleConfig(_)
            | Error::BadOverrideTarget { .. } => ExitStatus::Usage,
            Error::UnknownVideo(_)
            | Error::UnknownLabel { .. }
            | Error::VideoIdCollision(_)
            | Error::ZeroGroundTruth
            | Error::EmptyCluster => ExitStatus::Failure,
        };
        let message = match file {
            Some(path) => format!("{}: {err}", path.display()),
            None => err.to_string(),
        };
        CliError::new(status, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "talfuse",
    version,
    about = "Fuse, evaluate and merge temporal action detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse several prediction files into one.
    Fuse(FuseArgs),
    /// Evaluate a prediction file against ground truth.
    Eval(EvalArgs),
    /// Merge an auxiliary ground-truth file into a primary one.
    Merge(MergeArgs),
    /// Run a seeded synthetic ensemble experiment.
    Simulate(SimulateArgs),
    /// Tabulate avg mAP of several prediction files.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RescaleArg {
    Min,
    Ratio,
    None,
}

impl From<RescaleArg> for RescaleMode {
    fn from(arg: RescaleArg) -> Self {
        match arg {
            RescaleArg::Min => RescaleMode::MinClamp,
            RescaleArg::Ratio => RescaleMode::Ratio,
            RescaleArg::None => RescaleMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CombineArg {
    Wmean,
    Mean,
    Max,
}

impl From<CombineArg> for ScoreCombine {
    fn from(arg: CombineArg) -> Self {
        match arg {
            CombineArg::Wmean => ScoreCombine::WeightedMean,
            CombineArg::Mean => ScoreCombine::Mean,
            CombineArg::Max => ScoreCombine::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum FuseMethod {
    #[default]
    Wbf,
    Nms,
    SoftNms,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Prediction files, one per model.
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    /// Model weights, one per prediction file. Defaults to each file's weight.
    #[arg(long = "weight")]
    weights: Vec<f64>,
    #[arg(long)]
    iou_thr: Option<f64>,
    #[arg(long)]
    skip_thr: Option<f64>,
    #[arg(long, value_enum)]
    rescale: Option<RescaleArg>,
    #[arg(long, value_enum)]
    score_combine: Option<CombineArg>,
    #[arg(long, value_enum, default_value_t)]
    method: FuseMethod,
    /// Fusion config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth file supplying the label space. Without it the labels
    /// found in the prediction files are used.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    options: EvalOptions,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalOptions {
    /// Comma-separated, strictly increasing tIoU thresholds.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    max_dets: Option<usize>,
    #[arg(long)]
    min_score: Option<f64>,
    /// Drop detections for videos absent from the ground truth instead of failing.
    #[arg(long)]
    drop_unknown_videos: bool,
    /// Eval config JSON; flags override its values.
    #[arg(long = "eval-config")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(long)]
    primary: PathBuf,
    #[arg(long)]
    aux: PathBuf,
    /// JSON object of "source label": "target label" overrides.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value = "ssv2")]
    prefix: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation config JSON. Defaults to the built-in two-model setup.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fusion_config: Option<PathBuf>,
    #[arg(long)]
    eval_config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the experiment report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the generated ground truth and predictions here.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    fused: Option<PathBuf>,
    #[command(flatten)]
    options: EvalOptions,
    /// Write the table rows as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitStatus::Usage.code()
            } else {
                0
            };
        }
    };
    let result = match cli.command {
        Command::Fuse(args) => cmd_fuse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Merge(args) => cmd_merge(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitStatus::Success.code(),
        Err(err) => {
            eprintln!("error: {err}");
            err.status.code()
        }
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes)
        .map_err(|e| CliError::new(ExitStatus::Io, format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::from_lib(e.into(), Some(path)))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    let bytes = to_canonical_json(value).map_err(|e| CliError::from_lib(e, Some(path)))?;
    write(path, &bytes)
}

fn load_gt(path: &Path) -> CliResult<GroundTruthSet> {
    load_ground_truth(&read(path)?).map_err(|e| CliError::from_lib(e, Some(path)))
}

fn load_preds(path: &Path, space: &LabelSpace) -> CliResult<PredictionSet> {
    load_predictions(&read(path)?, space).map_err(|e| CliError::from_lib(e, Some(path)))
}

fn parse_thresholds(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("invalid threshold {t:?}")))
        })
        .collect()
}

fn fusion_config(args: &FuseArgs) -> CliResult<FusionConfig> {
    let mut config: FusionConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => FusionConfig::default(),
    };
    if !args.weights.is_empty() {
        if args.weights.len() != args.preds.len() {
            return Err(CliError::usage(format!(
                "{} --weight values given for {} --pred files",
                args.weights.len(),
                args.preds.len()
            )));
        }
        config.model_weights = args.weights.clone();
    }
    if let Some(t) = args.iou_thr {
        config.iou_threshold = t;
    }
    if let Some(t) = args.skip_thr {
        config.skip_threshold = t;
    }
    if let Some(mode) = args.rescale {
        config.rescale_mode = mode.into();
    }
    if let Some(combine) = args.score_combine {
        config.score_combine = combine.into();
    }
    config.validate().map_err(|e| CliError::from_lib(e, None))?;
    Ok(config)
}

fn cmd_fuse(args: FuseArgs) -> CliResult {
    let config = fusion_config(&args)?;
    let files: Vec<Vec<u8>> = args
        .preds
        .iter()
        .map(|p| read(p))
        .collect::<CliResult<_>>()?;
    let space = match &args.labels {
        Some(path) => load_gt(path)?.label_space().clone(),
        None => {
            let mut names: Vec<String> = Vec::new();
            for (path, bytes) in args.preds.iter().zip(&files) {
                for name in
                    prediction_labels(bytes).map_err(|e| CliError::from_lib(e, Some(path)))?
                {
                    if !names
                        .iter()
                        .any(|n| canonicalize_label(n) == canonicalize_label(&name))
                    {
                        names.push(name);
                    }
                }
            }
            LabelSpace::new(names).map_err(|e| CliError::from_lib(e, None))?
        }
    };
    let inputs: Vec<PredictionSet> = args
        .preds
        .iter()
        .zip(&files)
        .map(|(path, bytes)| {
            load_predictions(bytes, &space).map_err(|e| CliError::from_lib(e, Some(path)))
        })
        .collect::<CliResult<_>>()?;

    let fused = match args.method {
        FuseMethod::Wbf => {
            let (fused, stats) =
                wbf_fuse_with_stats(&inputs, &config).map_err(|e| CliError::from_lib(e, None))?;
            eprintln!(
                "fused {} groups: {} detections in, {} skipped, {} clusters out",
                stats.groups, stats.input_detections, stats.skipped_detections, stats.clusters
            );
            fused
        }
        FuseMethod::Nms => nms_fuse(&inputs, &config).map_err(|e| CliError::from_lib(e, None))?,
        FuseMethod::SoftNms => {
            soft_nms_fuse(&inputs, &config).map_err(|e| CliError::from_lib(e, None))?
        }
    };
    let bytes = save_predictions(&fused, &space).map_err(|e| CliError::from_lib(e, None))?;
    write(&args.out, &bytes)
}

fn eval_config(options: &EvalOptions) -> CliResult<EvalConfig> {
    let mut config: EvalConfig = match &options.config {
        Some(path) => read_json(path)?,
        None => EvalConfig::default(),
    };
    if let Some(text) = &options.thresholds {
        config.tiou_thresholds = parse_thresholds(text)?;
    }
    if let Some(n) = options.max_dets {
        config.max_detections_per_video = Some(n);
    }
    if let Some(s) = options.min_score {
        config.min_score = s;
    }
    if options.drop_unknown_videos {
        config.unknown_video = UnknownVideoPolicy::Drop;
    }
    config.validate().map_err(|e| CliError::from_lib(e, None))?;
    Ok(config)
}

fn evaluate_file(
    path: &Path,
    gt: &GroundTruthSet,
    config: &EvalConfig,
) -> CliResult<(PredictionSet, EvalReport)> {
    let preds = load_preds(path, gt.label_space())?;
    let report = evaluate(&preds, gt, config).map_err(|e| CliError::from_lib(e, Some(path)))?;
    Ok((preds, report))
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let config = eval_config(&args.options)?;
    let gt = load_gt(&args.gt)?;
    let (_, report) = evaluate_file(&args.pred, &gt, &config)?;
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    if let Some(path) = &args.csv {
        write(
            path,
            &report_csv(&report).map_err(|e| CliError::from_lib(e, Some(path)))?,
        )?;
    }
    println!("{:.4}", report.avg_map);
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> CliResult {
    let primary = load_gt(&args.primary)?;
    let aux = load_gt(&args.aux)?;
    let overrides = match &args.map {
        Some(path) => {
            load_label_overrides(&read(path)?).map_err(|e| CliError::from_lib(e, Some(path)))?
        }
        None => BTreeMap::new(),
    };
    let (mapping, unmapped) =
        build_label_mapping(aux.label_space(), primary.label_space(), &overrides)
            .map_err(|e| CliError::from_lib(e, args.map.as_deref()))?;
    let (merged, report) = merge_datasets(&primary, &aux, &mapping, &args.prefix)
        .map_err(|e| CliError::from_lib(e, None))?;
    write(&args.out, &save_ground_truth(&merged))?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    eprintln!(
        "merged: {} instances in {} videos added, {} labels mapped, {} unmapped",
        report.instances_added,
        report.videos_added,
        report.labels_mapped,
        unmapped.len()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let mut sim: SimConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    let fusion: FusionConfig = match &args.fusion_config {
        Some(path) => read_json(path)?,
        None => FusionConfig::default(),
    };
    let eval: EvalConfig = match &args.eval_config {
        Some(path) => read_json(path)?,
        None => EvalConfig::default(),
    };
    let (report, data) = run_ensemble_experiment_with_data(&sim, &fusion, &eval)
        .map_err(|e| CliError::from_lib(e, None))?;
    if let Some(dir) = &args.dump_dir {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::new(ExitStatus::Io, format!("{}: {e}", dir.display())))?;
        let space = data.ground_truth.label_space();
        write(&dir.join("gt.json"), &save_ground_truth(&data.ground_truth))?;
        for set in data.predictions.iter().chain([&data.wbf]) {
            let bytes = save_predictions(set, space).map_err(|e| CliError::from_lib(e, None))?;
            write(&dir.join(format!("{}.json", set.model_name)), &bytes)?;
        }
    }
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    println!("{report}");
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let config = eval_config(&args.options)?;
    let gt = load_gt(&args.gt)?;
    let mut rows: Vec<MethodResult> = Vec::new();
    for path in args.preds.iter().chain(args.fused.as_ref()) {
        let (preds, report) = evaluate_file(path, &gt, &config)?;
        rows.push(MethodResult {
            name: preds.model_name,
            avg_map: report.avg_map,
            map_per_threshold: report.map_per_threshold,
        });
    }
    print!("{}", format_table(&config.tiou_thresholds, &rows));
    if let Some(path) = &args.out {
        write_json(path, &rows)?;
    }
    Ok(())
}

//! `mocp` command line: `simulate → calibrate → predict → evaluate → export-region`.
//!
//! Exit codes: 0 ok, 2 config, 3 data, 4 alignment, 5 format.

mod records;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibrate::{uncertainty, CalibratorConfig, CalibratorSet, Method, PointSource};
use crate::error::{Error, Result};
use crate::eval::{self, Observation, ReportSet};
use crate::export::{self, Slice, SlicePosition};
use crate::io::{self, Example, Split};
use crate::synthetic::{self, ScenarioConfig};

pub use records::{PredictionFile, RegionRecord};

/// Environment variable holding the log filter, e.g. `MOCP_LOG=debug`.
pub const LOG_ENV: &str = "MOCP_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "mocp",
    version,
    about = "Conformal prediction regions for landmark heatmaps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scenario config.
    Simulate(SimulateArgs),
    /// Fit a method on a calibration manifest.
    Calibrate(CalibrateArgs),
    /// Predict one region per test example.
    Predict(PredictArgs),
    /// Coverage, efficiency, adaptivity and point metrics.
    Evaluate(EvaluateArgs),
    /// Write one region as canonical JSON or as an SVG slice.
    ExportRegion(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's split.
    #[arg(long)]
    pub split: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "manifest.json")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub method: String,
    /// Calibration manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Method options (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One calibrator for all landmarks instead of one per landmark.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub calibrator: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output of `predict`.
    #[arg(long)]
    pub regions: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// SDR radii in mm.
    #[arg(long, value_delimiter = ',', default_values_t = eval::DEFAULT_SDR_THRESHOLDS)]
    pub sdr: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// A region, a region record, or a `predict` output file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `json` or `svg-slice`.
    #[arg(long)]
    pub format: String,
    /// Record to pick from a `predict` output; defaults to the first.
    #[arg(long)]
    pub id: Option<String>,
    /// Axis held fixed when slicing a 3-D region.
    #[arg(long, default_value_t = 2)]
    pub axis: usize,
    /// Cell layer along `--axis` (grid masks).
    #[arg(long, conflicts_with = "coord")]
    pub index: Option<usize>,
    /// Coordinate in mm along `--axis`.
    #[arg(long)]
    pub coord: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. } | Error::InvalidAlpha(_) | Error::UnknownMethod(_) => 2,
        Error::IdMismatch(_) | Error::LengthMismatch { .. } => 4,
        Error::UnknownFormat(_) => 5,
        _ => 3,
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(field, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(field, e.to_string()))
}

fn parse_split(s: &str) -> Result<Split> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::config("split", format!("unknown split {s:?}")))
}

pub fn simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let mut config: ScenarioConfig = read_config(&args.config, "config")?;
    if let Some(s) = &args.split {
        config.split = parse_split(s)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = synthetic::generate_dataset(&config)?;
    let path = io::save_dataset(&dataset, &args.out, &args.name, config.tensor_dtype.into())?;
    log::info!("wrote {} examples to {}", dataset.len(), path.display());
    Ok(path)
}

pub fn calibrate(args: &CalibrateArgs) -> Result<CalibratorSet> {
    let method: Method = args.method.parse()?;
    let config: CalibratorConfig = match &args.config {
        Some(p) => read_config(p, "config")?,
        None => CalibratorConfig::default(),
    };
    let data = io::load_dataset(&args.data)?;
    if data.split != Split::Calibration {
        return Err(Error::Manifest(format!(
            "calibrate needs a calibration split, got {}",
            data.split
        )));
    }
    let set = CalibratorSet::fit(method, &data.examples, config, args.pooled)?;
    io::write_json(&args.out, &set)?;
    log::info!("fitted {method} on {} examples", data.len());
    Ok(set)
}

/// One region record per example, in example order.
pub fn predict_examples(set: &CalibratorSet, examples: &[Example], alpha: f64) -> Result<PredictionFile> {
    crate::error::check_alpha(alpha)?;
    let records = examples
        .iter()
        .map(|ex| {
            let p = set.predict_full(ex, alpha)?;
            Ok(RegionRecord {
                id: ex.id.clone(),
                landmark: ex.landmark,
                measure: p.region.measure()?,
                region: p.region,
                thresholds: p.thresholds,
                flags: p.flags,
                point: uncertainty::point_prediction(ex, PointSource::Auto, "predict").ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionFile {
        method: set.method,
        alpha,
        records,
    })
}

pub fn predict(args: &PredictArgs) -> Result<PredictionFile> {
    crate::error::check_alpha(args.alpha)?;
    let set: CalibratorSet = io::read_json(&args.calibrator)?;
    let data = io::load_dataset(&args.data)?;
    let file = predict_examples(&set, &data.examples, args.alpha)?;
    io::write_json(&args.out, &file)?;
    Ok(file)
}

/// Pairs records with examples by id and builds the pooled and per-landmark
/// reports.
pub fn evaluate_examples(file: &PredictionFile, examples: &[Example], sdr: &[f64]) -> Result<ReportSet> {
    let by_id = records::align(&file.records, examples)?;
    let obs = by_id
        .iter()
        .map(|(rec, ex)| {
            let point = match &rec.point {
                Some(p) => p.clone(),
                None => uncertainty::point_prediction(ex, PointSource::Auto, "evaluate")?,
            };
            Ok(Observation {
                landmark: ex.landmark,
                covered: rec.region.contains(&ex.truth)?,
                measure: rec.region.measure()?,
                error: eval::euclidean(&point, &ex.truth),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ReportSet::build(file.method.name(), file.alpha, &obs, sdr)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<ReportSet> {
    let file: PredictionFile = io::read_json(&args.regions)?;
    let data = io::load_dataset(&args.data)?;
    let report = evaluate_examples(&file, &data.examples, &args.sdr)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    io::write_json(&args.out.join("report.json"), &report)?;
    io::write_atomic(&args.out.join("report.txt"), report.to_table().as_bytes())?;
    Ok(report)
}

pub fn export_region(args: &ExportArgs) -> Result<String> {
    let region = records::load_region(&args.input, args.id.as_deref())?;
    let text = match args.format.as_str() {
        "json" => serde_json::to_string_pretty(&region)? + "\n",
        "svg-slice" => {
            let position = match (args.index, args.coord) {
                (Some(i), _) => SlicePosition::Index(i),
                (None, Some(c)) => SlicePosition::Coord(c),
                (None, None) => SlicePosition::Center,
            };
            export::to_svg(
                &region,
                &Slice {
                    axis: args.axis,
                    position,
                },
            )?
        }
        other => return Err(Error::UnknownFormat(other.to_string())),
    };
    match &args.out {
        Some(p) => io::write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(text)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(drop),
        Command::Calibrate(a) => calibrate(a).map(drop),
        Command::Predict(a) => predict(a).map(drop),
        Command::Evaluate(a) => evaluate(a).map(drop),
        Command::ExportRegion(a) => export_region(a).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.name());
            exit_code(&e)
        }
    }
}

//! Command-line entry point: `fit`, `forecast`, `evaluate`, `explain` and
//! `synth`. Exit codes: 0 success, 1 bad input, 2 numeric or training
//! failure. Machine-readable results go to files; standard output carries
//! short human-readable summaries only.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fluxcube_core::forecast::{baseline_seasonal_naive, evaluate, forecast, MetricTable, DEFAULT_HORIZONS};
use fluxcube_core::mdl::select;
use fluxcube_core::synth::{generate, scenario, SynthSpec, SCENARIO_NAMES};
use fluxcube_core::tensor::normalize;
use fluxcube_core::training::TrainConfig;
use fluxcube_core::{ActivityTensor, FluxCubeModel};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::artifacts;
use crate::calendar::{date_labels, parse_date, Cadence, DEFAULT_START};
use crate::csvio::{load_csv, write_long_csv};
use crate::exec::Threaded;
use crate::model_file;

#[derive(Debug, Parser)]
#[command(name = "fluxcube", version, about = "Reaction-diffusion modeling and forecasting of activity tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a CSV, select the number of location groups and write a model file.
    Fit(FitArgs),
    /// Roll a fitted model forward and write the predictions as CSV.
    Forecast(ForecastArgs),
    /// Score a model's forecast and the seasonal-naive baseline against held-out data.
    Evaluate(EvaluateArgs),
    /// Write keyword relationships, group flows, seasonal profiles and groups.
    Explain(ExplainArgs),
    /// Generate a synthetic dataset with known parameters.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format CSV with columns date,location,keyword,value.
    #[arg(long)]
    pub input: PathBuf,
    /// Training configuration (JSON, every field optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for hidden-size candidates (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fill isolated missing cells from their time neighbors.
    #[arg(long)]
    pub interpolate: bool,
    /// Trailing steps left out of the modeling window.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub horizon: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV covering at least the steps after the modeling window.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HORIZONS)]
    pub horizons: Vec<usize>,
    /// Metric table as CSV; a JSON copy is written next to it.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Score in the data's original units instead of normalized units.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub interpolate: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Interaction coefficients at or below this magnitude count as zero.
    #[arg(long, default_value_t = fluxcube_core::interpret::DEFAULT_ZERO_THRESHOLD)]
    pub zero_threshold: f64,
    /// Keep only the strongest edges per location.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub scenario: Option<String>,
    /// Full generator specification as JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar (default: truth.json next to the CSV).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Overrides the scenario's or specification's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Date of the first step.
    #[arg(long)]
    pub start_date: Option<String>,
    #[arg(long, default_value_t = 7)]
    pub step_days: u64,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Numeric(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

/// Training and arithmetic problems exit with 2, everything else with 1.
fn from_core(e: fluxcube_core::Error) -> Failure {
    use fluxcube_core::Error as E;
    match e {
        E::Training(_) | E::NonFinite(_) | E::Divergence { .. } | E::NonScalarLoss(_) => Failure::Numeric(e.to_string()),
        E::Shape(_) | E::InvalidArgument(_) => Failure::Input(e.to_string()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable value")
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_model(path: &Path) -> Result<FluxCubeModel, Failure> {
    model_file::load(path).map_err(input)
}

fn fit(a: FitArgs) -> Result<(), Failure> {
    let mut config: TrainConfig = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate().map_err(from_core)?;
    let exec = match a.threads {
        Some(n) => Threaded::new(n),
        None => Threaded::all_cores(),
    };

    let data = load_csv(&a.input, a.interpolate).map_err(input)?;
    if a.holdout + 2 > data.len_t() {
        return Err(Failure::Input(format!(
            "holdout of {} steps leaves fewer than 2 of the {} steps for modeling",
            a.holdout,
            data.len_t()
        )));
    }
    let t_c = data.len_t() - a.holdout;
    let window = data.time_slice(0, t_c);
    let (normalized, stats) = normalize(&window, t_c).map_err(from_core)?;
    let constant = stats.constant.iter().filter(|c| **c).count();

    let start = Instant::now();
    let selection = select(&normalized, &config, &exec).map_err(from_core)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut model = selection.model;
    model.norm = Some(stats);
    if let Some(report) = model.report.as_mut() {
        report.wall_time_secs = elapsed;
    }
    model_file::save(&model, &a.out).map_err(input)?;

    println!(
        "modeling window: {} steps ({} .. {}), {} locations, {} keywords",
        t_c,
        window.time_labels()[0],
        window.time_labels()[t_c - 1],
        window.locations(),
        window.keywords()
    );
    if constant > 0 {
        println!("{constant} constant series normalized to zero");
    }
    println!("{:>4} {:>16} {:>16} {:>16} {:>10}  accepted", "d_l", "data_cost", "model_cost", "total", "nonzero_d");
    for s in &model.trace {
        println!(
            "{:>4} {:>16.3} {:>16.3} {:>16.3} {:>10}  {}",
            s.d_l,
            s.data_cost,
            s.model_cost,
            s.total,
            s.nonzero_d,
            if s.accepted { "yes" } else { "no" }
        );
    }
    for w in &selection.warnings {
        println!("warning: {w}");
    }
    let hidden = model.report.as_ref().map_or(0, |r| r.selected_hidden);
    println!(
        "selected {} group(s), hidden size {hidden}, in {elapsed:.1} s on {} thread(s); wrote {}",
        model.group_count(),
        exec.threads(),
        a.out.display()
    );
    Ok(())
}

/// Future time labels of a model.
fn future_labels(model: &FluxCubeModel, n: usize) -> Result<Vec<String>, Failure> {
    Cadence::of_labels(model.history.time_labels())
        .and_then(|c| c.next_labels(n))
        .map_err(Failure::Input)
}

fn cmd_forecast(a: ForecastArgs) -> Result<(), Failure> {
    if a.horizon <= 0 {
        return Err(Failure::Input(format!("horizon must be positive, got {}", a.horizon)));
    }
    let horizon = a.horizon as usize;
    let model = load_model(&a.model)?;
    let result = forecast(&model, &model.history, horizon).map_err(from_core)?;
    let labels = future_labels(&model, horizon)?;
    let values = result.denormalized.as_ref().unwrap_or(&result.normalized);
    let h = &model.history;
    let file = create_file(&a.out)?;
    write_long_csv(file, &labels, h.location_labels(), h.keyword_labels(), values)
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", a.out.display())))?;
    println!(
        "forecast {horizon} steps ({} .. {}), {} rows; wrote {}",
        labels[0],
        labels[horizon - 1],
        values.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluation<'a> {
    units: &'static str,
    forecast_start: &'a str,
    steps_available: usize,
    fluxcube: &'a MetricTable,
    seasonal_naive: &'a MetricTable,
}

/// The truth steps that follow the modeling window, checked against the
/// model's axes and cadence.
fn future_truth(model: &FluxCubeModel, truth: &ActivityTensor) -> Result<ActivityTensor, Failure> {
    let h = &model.history;
    if truth.location_labels() != h.location_labels() {
        return Err(Failure::Input(format!(
            "truth locations {:?} differ from model locations {:?}",
            truth.location_labels(),
            h.location_labels()
        )));
    }
    if truth.keyword_labels() != h.keyword_labels() {
        return Err(Failure::Input(format!(
            "truth keywords {:?} differ from model keywords {:?}",
            truth.keyword_labels(),
            h.keyword_labels()
        )));
    }
    let next = future_labels(model, 1)?.remove(0);
    let first = truth.time_labels().iter().position(|l| *l == next).ok_or_else(|| {
        Failure::Input(format!(
            "truth has no entry for {next}, the first step after the modeling window"
        ))
    })?;
    if truth.len_t() >= 2 {
        let step = |labels: &[String]| Cadence::of_labels(&labels[..2]).ok();
        let (a, b) = (step(truth.time_labels()), step(h.time_labels()));
        if let (Some(Cadence::Days { step_days: x, .. }), Some(Cadence::Days { step_days: y, .. })) = (a, b) {
            if x != y {
                return Err(Failure::Input(format!("truth cadence is {x} days, model cadence is {y} days")));
            }
        }
    }
    Ok(truth.time_slice(first, truth.len_t()))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    if a.horizons.is_empty() || a.horizons.contains(&0) {
        return Err(Failure::Input("horizons must be positive".into()));
    }
    let model = load_model(&a.model)?;
    let truth = load_csv(&a.truth, a.interpolate).map_err(input)?;
    let future = future_truth(&model, &truth)?;
    let longest = *a.horizons.iter().max().expect("nonempty");
    let steps = longest.min(future.len_t());
    let frame = future.frame_len();
    let period = model.params.seasonality.period;

    let predicted = forecast(&model, &model.history, steps).map_err(from_core)?;
    let naive = baseline_seasonal_naive(&model.history, steps, period).map_err(from_core)?;
    let truth_raw = &future.values()[..steps * frame];
    let (units, pred, base, target) = match (&model.norm, a.raw) {
        (Some(norm), true) => ("raw", norm.denormalize(&predicted.normalized), norm.denormalize(&naive), truth_raw.to_vec()),
        (Some(norm), false) => ("normalized", predicted.normalized.clone(), naive, norm.apply(truth_raw)),
        (None, _) => ("normalized", predicted.normalized.clone(), naive, truth_raw.to_vec()),
    };
    let ours = evaluate(&pred, &target, frame, &a.horizons).map_err(from_core)?;
    let baseline = evaluate(&base, &target, frame, &a.horizons).map_err(from_core)?;

    let mut w = csv::Writer::from_writer(create_file(&a.out)?);
    let io = |e: csv::Error| Failure::Input(format!("cannot write {}: {e}", a.out.display()));
    w.write_record(["method", "horizon", "metric", "value"]).map_err(io)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| v.to_string());
    println!("{:<15} {:>8} {:>12} {:>12}   ({units} units)", "method", "horizon", "rmse", "mae");
    for (name, table) in [("fluxcube", &ours), ("seasonal-naive", &baseline)] {
        for m in &table.horizons {
            let h = m.horizon.to_string();
            w.write_record([name, h.as_str(), "rmse", fmt(m.rmse).as_str()]).map_err(io)?;
            w.write_record([name, h.as_str(), "mae", fmt(m.mae).as_str()]).map_err(io)?;
            let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
            println!("{name:<15} {:>8} {:>12} {:>12}", m.horizon, show(m.rmse), show(m.mae));
        }
    }
    w.flush().map_err(|e| Failure::Input(format!("cannot write {}: {e}", a.out.display())))?;
    let json_path = a.out.with_extension("json");
    let doc = Evaluation {
        units,
        forecast_start: &future.time_labels()[0],
        steps_available: future.len_t(),
        fluxcube: &ours,
        seasonal_naive: &baseline,
    };
    write_file(&json_path, to_json(&doc))?;
    if future.len_t() < longest {
        println!("truth covers {} steps; longer horizons are n/a", future.len_t());
    }
    println!("wrote {} and {}", a.out.display(), json_path.display());
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let dir = &a.out_dir;

    let interactions = artifacts::interactions(&model, a.zero_threshold, a.top_k).map_err(from_core)?;
    write_file(&dir.join("interactions.json"), to_json(&interactions))?;
    let flows = artifacts::flows(&model).map_err(from_core)?;
    write_file(&dir.join("flows.json"), to_json(&flows))?;
    let rows = artifacts::seasonality_rows(&model).map_err(from_core)?;
    let path = dir.join("seasonality.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    let io = |e: csv::Error| Failure::Input(format!("cannot write {}: {e}", path.display()));
    w.write_record(["phase", "week", "location", "keyword", "value"]).map_err(io)?;
    for r in &rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    let groups = artifacts::groups(&model).map_err(from_core)?;
    write_file(&dir.join("groups.json"), to_json(&groups))?;

    let edges: usize = interactions.locations.iter().map(|l| l.edges.len()).sum();
    println!(
        "{} locations, {} keyword edges, {} group(s), {} flow series, {} seasonal rows; wrote {}",
        interactions.locations.len(),
        edges,
        groups.count,
        flows.series.len(),
        rows.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Truth<'a> {
    spec: &'a SynthSpec,
    start_date: String,
    step_days: u64,
    /// SHA-256 of the generated values as little-endian f64 bytes.
    trajectory_sha256: String,
}

pub fn trajectory_hash(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match (&a.scenario, &a.spec) {
        (Some(name), _) => scenario(name, 0).ok_or_else(|| {
            Failure::Input(format!("unknown scenario {name:?}; available: {}", SCENARIO_NAMES.join(", ")))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Failure::Input("give --scenario or --spec".into())),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if a.step_days == 0 {
        return Err(Failure::Input("step-days must be positive".into()));
    }
    let start = match &a.start_date {
        Some(s) => parse_date(s).ok_or_else(|| Failure::Input(format!("`{s}` is not an ISO date (YYYY-MM-DD)")))?,
        None => {
            let (y, m, d) = DEFAULT_START;
            chrono::NaiveDate::from_ymd_opt(y, m, d).expect("valid default date")
        }
    };
    let x = generate(&spec).map_err(from_core)?;
    let labels = date_labels(start, a.step_days, x.len_t()).map_err(Failure::Input)?;
    let file = create_file(&a.out)?;
    write_long_csv(file, &labels, x.location_labels(), x.keyword_labels(), x.values())
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", a.out.display())))?;
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new("")).join("truth.json"));
    let truth = Truth {
        spec: &spec,
        start_date: labels[0].clone(),
        step_days: a.step_days,
        trajectory_sha256: trajectory_hash(x.values()),
    };
    write_file(&truth_path, to_json(&truth))?;
    println!(
        "{}: {} steps x {} locations x {} keywords ({} .. {}), seed {}; wrote {} and {}",
        spec.name,
        x.len_t(),
        x.locations(),
        x.keywords(),
        labels[0],
        labels[labels.len() - 1],
        spec.seed,
        a.out.display(),
        truth_path.display()
    );
    Ok(())
}

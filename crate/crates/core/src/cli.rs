//! The `ringflow` command line: argument parsing, command dispatch and
//! artifact writing.
//!
//! Every command prints one JSON line on stdout. Warnings and errors go to
//! stderr, one JSON object per line. Exit status is 0 on success, 2 for a
//! bad configuration and 3 when a computation does not converge.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagram::{
    density_grid, diagram_for_model, fit_concave, fit_minmax, normalize_measurements,
    simulated_sweep, DiagramStructure, MeasuredDiagram, MinMaxOptions, DEFAULT_GRID,
};
use crate::error::Error;
use crate::minplus::{build_traffic_matrix, WEIGHT_TOL};
use crate::models::{uniform_eigenvector, verify_eigenpair, Model, RingConfig};
use crate::simulate::{
    default_stride, estimate_growth_rate, gap_stats_cumulative, initial_state, measure_speed,
    ring_positions, run_trajectory, InitialCondition, DEFAULT_SEED,
};

pub const SEED_ENV: &str = "RINGFLOW_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const DEFAULT_PREFIX: &str = "ringflow";
const DEFAULT_SIM_STEPS: usize = 1_000;
const DEFAULT_MEASURE_STEPS: usize = 10_000;
const DEFAULT_SWEEP_GRID: usize = 11;
const DEFAULT_MAX_SEGMENTS: usize = 6;
/// Largest ring length a decimal density is rounded to.
const MAX_DENOMINATOR: usize = 50;

#[derive(Parser, Debug)]
#[command(
    name = "ringflow",
    version,
    about = "Ring-road traffic: eigenvalues, simulation and fundamental diagrams"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Average speed of a model on one ring: closed form, Karp and power iteration.
    Eigen(CommonArgs),
    /// Simulate one ring and write snapshots plus a summary.
    Simulate(CommonArgs),
    /// Closed-form fundamental diagram.
    Diagram(CommonArgs),
    /// Fundamental diagram with a simulated column next to the closed form.
    Sweep(CommonArgs),
    /// Fit a piecewise-affine diagram to occupancy/flow data.
    Fit(FitArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Model JSON (`minplus`, `control` or `game`).
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// One ring as `N,M`.
    #[arg(long, value_name = "N,M")]
    ring: Option<String>,
    /// Comma-separated densities, each `n/m` or a decimal.
    #[arg(long, value_name = "LIST")]
    densities: Option<String>,
    /// Number of evenly spaced densities on [0, 1].
    #[arg(long, value_name = "K")]
    grid: Option<usize>,
    #[arg(long, value_name = "K")]
    steps: Option<usize>,
    #[arg(long = "burn-in", value_name = "K")]
    burn_in: Option<usize>,
    /// Overridden by the RINGFLOW_SEED environment variable.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
    #[arg(long, value_name = "K")]
    stride: Option<usize>,
    /// Output path prefix.
    #[arg(long, value_name = "PREFIX")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Report max(f, 0) instead of the raw diagram value.
    #[arg(long = "clamp-zero")]
    clamp_zero: bool,
    /// Initial condition: uniform, platoon or random.
    #[arg(long, value_name = "KIND")]
    init: Option<InitialCondition>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with header `occupancy,flow`.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Model JSON whose diagram gives the structure and starting coefficients.
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    /// Segment budget of the concave fit used without a template.
    #[arg(long = "max-segments", value_name = "K")]
    max_segments: Option<usize>,
    /// Raw low-density reference `D,FLOW`; flows are then divided by FLOW/D.
    #[arg(long = "free-speed-ref", value_name = "D,FLOW")]
    free_speed_ref: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Eigen,
    Simulate,
    Diagram,
    Sweep,
    Fit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: Option<PathBuf>,
    /// From `--ring` or `--densities`; empty when neither was given.
    pub rings: Vec<RingConfig>,
    pub grid: Option<usize>,
    pub steps: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub stride: Option<usize>,
    pub init: InitialCondition,
    pub out: PathBuf,
    pub format: Format,
    pub clamp_zero: bool,
    pub input: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub max_segments: usize,
    pub free_speed_ref: Option<(f64, f64)>,
    /// Remarks produced while parsing, e.g. decimal densities made rational.
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Config,
    Numerical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub kind: FailureKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: FailureKind::Config,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            kind: FailureKind::Numerical,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Config => EXIT_CONFIG,
            FailureKind::Numerical => EXIT_NUMERICAL,
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({"error": self.kind, "message": self.message}).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoPeriodicity { .. } | Error::NonFinite { .. } | Error::NoUniqueEigenvalue => {
                CliError::numerical(e.to_string())
            }
            _ => CliError::config(e.to_string()),
        }
    }
}

/// What a successful run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    /// The JSON line printed on stdout.
    pub summary: Value,
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// Parses command-line arguments (program name first). `env_seed` is the
    /// value of `RINGFLOW_SEED`, if set.
    pub fn from_args<I, T>(args: I, env_seed: Option<&str>) -> Result<RunConfig, CliError>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(clap_message(&e)))?;
        RunConfig::from_cli(cli, env_seed)
    }

    fn from_cli(cli: Cli, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
        let (command, common, fit) = match cli.command {
            CliCommand::Eigen(c) => (Command::Eigen, c, None),
            CliCommand::Simulate(c) => (Command::Simulate, c, None),
            CliCommand::Diagram(c) => (Command::Diagram, c, None),
            CliCommand::Sweep(c) => (Command::Sweep, c, None),
            CliCommand::Fit(mut f) => {
                let c = std::mem::take(&mut f.common);
                (Command::Fit, c, Some(f))
            }
        };

        let mut warnings = Vec::new();
        let mut rings = Vec::new();
        if let Some(text) = &common.ring {
            rings.push(parse_ring(text)?);
        }
        if let Some(text) = &common.densities {
            rings.extend(parse_densities(text, &mut warnings)?);
        }
        let seed = match env_seed {
            Some(text) => text.trim().parse().map_err(|_| {
                CliError::config(format!("{SEED_ENV}={text:?} is not a non-negative integer"))
            })?,
            None => common.seed.unwrap_or(DEFAULT_SEED),
        };
        let free_speed_ref = match fit.as_ref().and_then(|f| f.free_speed_ref.as_deref()) {
            Some(text) => Some(parse_pair(text, "--free-speed-ref")?),
            None => None,
        };
        if common.stride == Some(0) {
            return Err(CliError::config("--stride must be at least 1"));
        }

        Ok(RunConfig {
            command,
            model: common.model,
            rings,
            grid: common.grid,
            steps: common.steps,
            burn_in: common.burn_in,
            seed,
            stride: common.stride,
            init: common.init.unwrap_or(InitialCondition::Random),
            out: common.out.unwrap_or_else(|| PathBuf::from(DEFAULT_PREFIX)),
            format: common.format,
            clamp_zero: common.clamp_zero,
            input: fit.as_ref().map(|f| f.input.clone()),
            template: fit.as_ref().and_then(|f| f.template.clone()),
            max_segments: fit
                .as_ref()
                .and_then(|f| f.max_segments)
                .unwrap_or(DEFAULT_MAX_SEGMENTS),
            free_speed_ref,
            warnings,
        })
    }

    fn load_model(&self) -> Result<Model, CliError> {
        let path = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::config("--model is required"))?;
        read_model(path)
    }

    fn single_ring(&self) -> Result<RingConfig, CliError> {
        match self.rings.as_slice() {
            [ring] => Ok(*ring),
            [] => Err(CliError::config("--ring N,M is required")),
            _ => Err(CliError::config("this command takes exactly one ring")),
        }
    }

    fn artifact(&self, suffix: &str) -> PathBuf {
        let mut name = self.out.as_os_str().to_owned();
        name.push(format!("_{suffix}"));
        PathBuf::from(name)
    }
}

fn clap_message(e: &clap::Error) -> String {
    e.to_string()
        .lines()
        .next()
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ")
        .to_owned()
}

fn parse_count(text: &str, what: &str) -> Result<usize, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::config(format!("{what}: {text:?} is not a count")))
}

/// `N,M`, `N/M` or `N:M`.
pub fn parse_ring(text: &str) -> Result<RingConfig, CliError> {
    let (n, m) = text
        .split_once([',', '/', ':'])
        .ok_or_else(|| CliError::config(format!("ring {text:?} is not of the form N,M")))?;
    Ok(RingConfig::new(
        parse_count(n, "ring")?,
        parse_count(m, "ring")?,
    )?)
}

/// Comma-separated items, each `n/m` (exact) or a decimal (closest ratio
/// with `m <= 50`, reported in `warnings`).
pub fn parse_densities(
    text: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<RingConfig>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|item| !item.is_empty())
        .map(|item| {
            if item.contains(['/', ':']) {
                parse_ring(item)
            } else {
                let d: f64 = item
                    .parse()
                    .map_err(|_| CliError::config(format!("density {item:?} is not a number")))?;
                let ring = RingConfig::from_density(d, MAX_DENOMINATOR)?;
                warnings.push(format!(
                    "density {item} used as {}/{} = {}",
                    ring.n(),
                    ring.m(),
                    fmt_float(ring.density())
                ));
                Ok(ring)
            }
        })
        .collect()
}

fn parse_pair(text: &str, what: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::config(format!("{what}: {text:?} is not of the form A,B"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn read_model(path: &Path) -> Result<Model, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Model::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// 12 significant digits, printed in the shortest form that reads back
/// to the rounded value.
pub fn fmt_float(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        "0".to_owned()
    } else {
        r.to_string()
    }
}

fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Rounds every non-integer number in `v` to 12 significant digits.
fn round_json(v: &mut Value) {
    match v {
        Value::Number(num) if num.is_f64() => {
            if let Some(r) = num
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *num = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::config(e.to_string()))?;
    round_json(&mut v);
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let fail =
        |e: std::io::Error| CliError::config(format!("cannot write {}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(fail)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        fail(e)
    })
}

/// Renders rows as CSV (every float via [`fmt_float`]) or as a JSON array of
/// objects keyed by the header.
fn table_text(format: Format, header: &[&str], rows: &[Vec<Cell>]) -> Result<String, CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fail = |e: csv::Error| CliError::config(e.to_string());
            w.write_record(header).map_err(fail)?;
            for row in rows {
                w.write_record(row.iter().map(|c| c.to_csv()))
                    .map_err(fail)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| CliError::config(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| CliError::config(e.to_string()))
        }
        Format::Json => {
            let records: Vec<Value> = rows
                .iter()
                .map(|row| {
                    Value::Object(
                        header
                            .iter()
                            .zip(row)
                            .map(|(k, c)| (k.to_string(), c.to_json()))
                            .collect(),
                    )
                })
                .collect();
            to_json_text(&records)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Cell {
    Int(usize),
    Float(f64),
    Empty,
}

impl Cell {
    fn to_csv(self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_float(v),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) => json!(v),
            Cell::Empty => Value::Null,
        }
    }
}

/// Executes one command and writes its artifacts. Parse-time warnings stay
/// in `config.warnings`; `Outcome::warnings` holds only those from the run.
pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = match config.command {
        Command::Eigen => run_eigen(config)?,
        Command::Simulate => run_simulate(config)?,
        Command::Diagram => run_diagram(config)?,
        Command::Sweep => run_sweep(config)?,
        Command::Fit => run_fit(config)?,
    };
    round_json(&mut outcome.summary);
    Ok(outcome)
}

fn run_eigen(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = config.load_model()?;
    let ring = config.single_ring()?;
    let d = ring.density();
    let mu = model.closed_form_speed(d)?;
    let eigenvector = uniform_eigenvector(&ring);
    let verified = verify_eigenpair(mu, &eigenvector, &model, &ring, WEIGHT_TOL);
    let max_steps = config.steps.unwrap_or(DEFAULT_MEASURE_STEPS);
    let x0 = initial_state(config.init, &ring, config.seed);

    let mut summary = json!({
        "model": model.kind(),
        "n": ring.n(),
        "m": ring.m(),
        "density": d,
        "mu": mu,
        "flow": d * mu,
        "eigenpair_verified": verified,
    });
    let fields = summary.as_object_mut().expect("object literal");
    if let Model::MinPlus { v, sigma } = model {
        let matrix = build_traffic_matrix(v, sigma, &ring);
        let karp = matrix.karp_eigenvalue()?;
        let power = matrix.power_iteration(&x0, max_steps, WEIGHT_TOL)?;
        fields.insert("mu_karp".into(), json!(karp));
        fields.insert("mu_power".into(), json!(power.mu));
        fields.insert("transient".into(), json!(power.transient));
        fields.insert("period".into(), json!(power.period));
    } else {
        let measured = measure_speed(&model, &ring, &x0, max_steps)?;
        fields.insert("mu_simulated".into(), json!(measured.mu));
        fields.insert("steps_used".into(), json!(measured.steps_used));
        fields.insert("regime".into(), json!(measured.regime));
    }
    fields.insert("init".into(), json!(config.init));
    fields.insert("seed".into(), json!(config.seed));

    let mut written = Vec::new();
    if config.out != Path::new(DEFAULT_PREFIX) {
        let path = config.artifact("eigen.json");
        write_atomic(&path, to_json_text(&summary)?.as_bytes())?;
        written.push(path);
    }
    Ok(Outcome {
        summary,
        written,
        warnings: model.warnings(),
    })
}

fn run_simulate(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = config.load_model()?;
    let ring = config.single_ring()?;
    let steps = config.steps.unwrap_or(DEFAULT_SIM_STEPS);
    if steps == 0 {
        return Err(CliError::config("--steps must be at least 1"));
    }
    let burn_in = config.burn_in.unwrap_or(steps / 2);
    let stride = config
        .stride
        .unwrap_or_else(|| default_stride(ring.n(), steps));
    let x0 = initial_state(config.init, &ring, config.seed);
    let trajectory = run_trajectory(&model, &ring, &x0, steps, stride)?;
    let estimate = estimate_growth_rate(&trajectory, burn_in)?;
    let d = ring.density();
    let closed = model.closed_form_speed(d)?;
    let m = ring.m() as f64;

    let rows: Vec<Vec<Cell>> = trajectory
        .snapshots
        .iter()
        .flat_map(|s| {
            let positions = ring_positions(&s.state, m);
            s.state
                .iter()
                .zip(positions)
                .enumerate()
                .map(|(i, (&x, p))| {
                    vec![
                        Cell::Int(s.step),
                        Cell::Int(i + 1),
                        Cell::Float(p),
                        Cell::Float(x),
                    ]
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let snapshot_path = config.artifact(&format!("snapshots.{}", config.format.extension()));
    write_atomic(
        &snapshot_path,
        table_text(
            config.format,
            &["step", "car", "position", "cumulative"],
            &rows,
        )?
        .as_bytes(),
    )?;

    let gaps = gap_stats_cumulative(&trajectory.last().state, m, steps);
    let summary = json!({
        "mu_estimate": estimate.mu,
        "mu_closed_form": closed,
        "abs_error": (estimate.mu - closed).abs(),
        "steps_used": steps,
        "seed": config.seed,
        "model": model.kind(),
        "n": ring.n(),
        "m": ring.m(),
        "density": d,
        "init": config.init,
        "burn_in": burn_in,
        "stride": stride,
        "mu_car_mean": estimate.mean_mu,
        "car_spread": estimate.spread,
        "gap_max_dev": gaps.max_dev,
    });
    let summary_path = config.artifact("summary.json");
    write_atomic(&summary_path, to_json_text(&summary)?.as_bytes())?;
    Ok(Outcome {
        summary,
        written: vec![snapshot_path, summary_path],
        warnings: model.warnings(),
    })
}

const DIAGRAM_HEADER: [&str; 3] = ["density", "flow_closed_form", "flow_simulated"];

fn run_diagram(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = config.load_model()?;
    let curve = diagram_for_model(&model);
    let densities: Vec<f64> = if config.rings.is_empty() {
        density_grid(config.grid.unwrap_or(DEFAULT_GRID))
    } else {
        config.rings.iter().map(RingConfig::density).collect()
    };
    if densities.is_empty() {
        return Err(CliError::config("--grid must be at least 1"));
    }
    let rows: Vec<Vec<Cell>> = densities
        .iter()
        .map(|&d| {
            let f = curve.value_at(d);
            let f = if config.clamp_zero { f.max(0.0) } else { f };
            vec![Cell::Float(d), Cell::Float(f), Cell::Empty]
        })
        .collect();
    let path = config.artifact(&format!("diagram.{}", config.format.extension()));
    write_atomic(
        &path,
        table_text(config.format, &DIAGRAM_HEADER, &rows)?.as_bytes(),
    )?;
    let summary = json!({
        "model": model.kind(),
        "points": rows.len(),
        "segments": curve.structure.segment_count(),
        "written": [path.display().to_string()],
    });
    Ok(Outcome {
        summary,
        written: vec![path],
        warnings: model.warnings(),
    })
}

fn run_sweep(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = config.load_model()?;
    let rings = if config.rings.is_empty() {
        let k = config.grid.unwrap_or(DEFAULT_SWEEP_GRID);
        if k < 2 {
            return Err(CliError::config("--grid must be at least 2 for a sweep"));
        }
        (1..k)
            .map(|j| RingConfig::new(j, k - 1))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        config.rings.clone()
    };
    let steps = config.steps.unwrap_or(DEFAULT_MEASURE_STEPS);
    let points = simulated_sweep(&model, &rings, steps, config.init, config.seed)?;
    let clamp = |f: f64| if config.clamp_zero { f.max(0.0) } else { f };
    let rows: Vec<Vec<Cell>> = points
        .iter()
        .map(|p| {
            vec![
                Cell::Float(p.density),
                Cell::Float(clamp(p.flow_closed_form)),
                Cell::Float(clamp(p.flow_simulated)),
            ]
        })
        .collect();
    let path = config.artifact(&format!("sweep.{}", config.format.extension()));
    let text = match config.format {
        Format::Csv => table_text(Format::Csv, &DIAGRAM_HEADER, &rows)?,
        Format::Json => to_json_text(&points)?,
    };
    write_atomic(&path, text.as_bytes())?;
    let max_abs_error = points
        .iter()
        .map(|p| (p.flow_simulated - p.flow_closed_form).abs())
        .fold(0.0, f64::max);
    let summary = json!({
        "model": model.kind(),
        "points": points.len(),
        "max_abs_flow_error": max_abs_error,
        "init": config.init,
        "seed": config.seed,
        "written": [path.display().to_string()],
    });
    Ok(Outcome {
        summary,
        written: vec![path],
        warnings: model.warnings(),
    })
}

#[derive(Debug, Deserialize)]
struct MeasuredRow {
    occupancy: f64,
    flow: f64,
}

fn read_measurements(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let fail = |e: csv::Error| CliError::config(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(fail)?;
    reader
        .deserialize::<MeasuredRow>()
        .map(|row| row.map(|r| (r.occupancy, r.flow)).map_err(fail))
        .collect()
}

fn run_fit(config: &RunConfig) -> Result<Outcome, CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::config("--input is required"))?;
    let mut points = read_measurements(input)?;
    let mut summary = json!({});
    let fields = summary.as_object_mut().expect("object literal");
    if let Some(reference) = config.free_speed_ref {
        let normalized = normalize_measurements(&MeasuredDiagram {
            points,
            free_speed_ref: reference,
        })?;
        fields.insert("free_speed".into(), json!(normalized.free_speed));
        fields.insert("scale".into(), json!(normalized.scale));
        points = normalized.points;
    }

    let (structure, max_residual, mean_residual, converged) = match &config.template {
        Some(path) => {
            let template = DiagramStructure::from_model(&read_model(path)?);
            let options = MinMaxOptions {
                seed: config.seed,
                ..MinMaxOptions::default()
            };
            let fit = fit_minmax(&points, &template, &options)?;
            fields.insert("method".into(), json!("minmax"));
            fields.insert("iterations".into(), json!(fit.iterations));
            (
                fit.structure,
                fit.max_residual,
                fit.mean_residual,
                fit.converged,
            )
        }
        None => {
            let fit = fit_concave(&points, config.max_segments)?;
            fields.insert("method".into(), json!("concave"));
            (
                DiagramStructure::Min(fit.segments),
                fit.max_residual,
                fit.mean_residual,
                true,
            )
        }
    };
    fields.insert("max_residual".into(), json!(max_residual));
    fields.insert("mean_residual".into(), json!(mean_residual));
    fields.insert("converged".into(), json!(converged));
    fields.insert("segments".into(), json!(structure.segment_count()));

    let model = structure.to_model();
    let mut warnings = Vec::new();
    if let Err(violations) = model.validate() {
        for v in violations {
            warnings.push(format!("fitted model is not admissible: {}", v.message));
        }
    }
    let model_path = config.artifact("model.json");
    write_atomic(&model_path, to_json_text(&model)?.as_bytes())?;

    let rows: Vec<Vec<Cell>> = points
        .iter()
        .map(|&(d, f)| {
            let fitted = structure.value_at(d);
            vec![
                Cell::Float(d),
                Cell::Float(f),
                Cell::Float(fitted),
                Cell::Float(fitted - f),
            ]
        })
        .collect();
    let residual_path = config.artifact(&format!("residuals.{}", config.format.extension()));
    write_atomic(
        &residual_path,
        table_text(
            config.format,
            &["occupancy", "flow", "fitted", "residual"],
            &rows,
        )?
        .as_bytes(),
    )?;
    fields.insert(
        "written".into(),
        json!([
            model_path.display().to_string(),
            residual_path.display().to_string()
        ]),
    );

    if !converged {
        return Err(CliError::numerical(format!(
            "min-max fit hit the iteration cap with max residual {}; best fit written to {}",
            fmt_float(max_residual),
            model_path.display()
        )));
    }
    Ok(Outcome {
        summary,
        written: vec![model_path, residual_path],
        warnings,
    })
}

fn warning_line(message: &str) -> String {
    json!({"warning": message}).to_string()
}

/// Full CLI behaviour: parse, run, print. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let err = CliError::config(clap_message(&e));
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = RunConfig::from_cli(cli, env_seed.as_deref()).and_then(|config| {
        for w in &config.warnings {
            eprintln!("{}", warning_line(w));
        }
        run(&config)
    });
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("{}", warning_line(w));
            }
            println!("{}", outcome.summary);
            EXIT_OK
        }
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_print_with_twelve_digits() {
        assert_eq!(fmt_float(5.0 / 24.0), "0.208333333333");
        assert_eq!(fmt_float(1.5), "1.5");
        assert_eq!(fmt_float(-0.0), "0");
        assert_eq!(fmt_float(0.1 + 0.2), "0.3");
        assert_eq!(fmt_float(600.0), "600");
    }

    #[test]
    fn ring_and_density_parsing() {
        assert_eq!(parse_ring("2,5").unwrap(), RingConfig::new(2, 5).unwrap());
        assert_eq!(parse_ring("3/8").unwrap(), RingConfig::new(3, 8).unwrap());
        assert!(parse_ring("5,2").is_err());
        assert!(parse_ring("five").is_err());

        let mut warnings = Vec::new();
        let rings = parse_densities("1/4, 0.5,0.333333", &mut warnings).unwrap();
        let pairs: Vec<_> = rings.iter().map(|r| (r.n(), r.m())).collect();
        assert_eq!(pairs, vec![(1, 4), (1, 2), (1, 3)]);
        assert_eq!(warnings.len(), 2);
        assert!(warnings[1].contains("1/3"), "{warnings:?}");
        assert!(parse_densities("0", &mut warnings).is_err());
    }

    #[test]
    fn env_seed_overrides_flag() {
        let args = ["ringflow", "eigen", "--seed", "5"];
        assert_eq!(RunConfig::from_args(args, None).unwrap().seed, 5);
        assert_eq!(RunConfig::from_args(args, Some("9")).unwrap().seed, 9);
        let err = RunConfig::from_args(args, Some("x")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn usage_errors_are_config_errors() {
        let err = RunConfig::from_args(["ringflow", "eigen", "--bogus"], None).unwrap_err();
        assert_eq!(err.kind, FailureKind::Config);
        assert!(!err.to_json_line().contains('\n'));
    }

    #[test]
    fn error_classes() {
        assert_eq!(
            CliError::from(Error::InvalidRing { n: 3, m: 2 }).exit_code(),
            EXIT_CONFIG
        );
        let e = Error::NoPeriodicity {
            steps: 10,
            mu_estimate: 1.0,
        };
        assert_eq!(CliError::from(e).exit_code(), EXIT_NUMERICAL);
    }

    #[test]
    fn json_rounding_keeps_integers() {
        let mut v = json!({"a": 1.0 / 3.0, "b": [7, 0.1 + 0.2]});
        round_json(&mut v);
        assert_eq!(v.to_string(), r#"{"a":0.333333333333,"b":[7,0.3]}"#);
    }
}

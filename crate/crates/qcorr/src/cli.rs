//! Command-line front end: `simulate`, `calibrate`, `analyze`, `bounds` and
//! `reference`.
//!
//! Results go to `--out` (written atomically) or standard output. Warnings
//! and errors are emitted on standard error as one JSON object per line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use crate::calibration::{NoiseMoments, RecoveryOptions};
use crate::error::{Error, Result};
use crate::estimator::{CorrelationFunction, CorrelationKind, CorrelationSet, EstimatorOptions, LagGrid, Variant};
use crate::filtering::FilterSpec;
use crate::formats::{curve_csv, write_atomic, NamedCurve, Provenance, ResultFile};
use crate::model::{validate_config, CavityPreparation, ExperimentConfig, ValidConfig};
use crate::pipeline::{self, AnalysisOptions, Simulation};
use crate::reference::{expected_g1, expected_g2};
use crate::statistics::{chebyshev_repetitions, confidence_two_point, BoundQuery, BoundVariant, RepetitionBound};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "QCORR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qcorr", version, about = "Simulate and analyse pulsed single-photon correlation measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate records of the configured experiment into a record file.
    Simulate(SimulateArgs),
    /// Measure noise moments from a vacuum run and write a calibration file.
    Calibrate(CalibrateArgs),
    /// Estimate correlations and recover the coherence functions.
    Analyze(AnalyzeArgs),
    /// Repetition bounds for estimating moments of Gaussian noise.
    Bounds(BoundsArgs),
    /// Analytic coherence functions on the configured lag grid.
    Reference(ReferenceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Alpha,
    Beta,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Alpha => Variant::Alpha,
            VariantArg::Beta => Variant::Beta,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    /// One `tau_s,re,im,stderr` file per curve in the `--out` directory.
    Csv,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of lag periods on each side of zero.
    #[arg(long = "lags-periods")]
    pub lags_periods: Option<usize>,
    /// Filter assignment (JSON list), replacing any filters in the configuration.
    #[arg(long)]
    pub filter: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub shots: usize,
    /// Output record file.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the cavity in vacuum, for a calibration run.
    #[arg(long)]
    pub vacuum: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Vacuum record files. Without them a vacuum run is simulated.
    pub records: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Signal record files. Without them the configured state is simulated.
    pub records: Vec<PathBuf>,
    /// Calibration file from `calibrate`.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_enum, default_value_t = VariantArg::Beta)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the cross-correlated noise in place.
    #[arg(long)]
    pub keep_cross_noise: bool,
    /// Skip the four-point estimate and `G⁽²⁾` recovery.
    #[arg(long)]
    pub no_g2: bool,
    /// Attach analytic curves for the configured cavity state.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Query file (JSON with `m`, `sigma`, `epsilon`, `confidence` and
    /// optionally `repetitions`); `-` reads standard input.
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Lag step in seconds; defaults to the configured time step.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Structured line on standard error.
#[derive(Serialize)]
struct LogLine<'a> {
    level: &'a str,
    message: &'a str,
}

fn log(level: &str, message: &str) {
    let line = serde_json::to_string(&LogLine { level, message }).expect("log line serializes");
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Sizes the global worker pool from `QCORR_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Invalid(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool that already exists (e.g. in tests) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Loads, overrides and validates the configuration.
pub fn load_config(args: &ConfigArgs) -> Result<(ValidConfig, Option<Vec<FilterSpec>>)> {
    let mut config = ExperimentConfig::from_json(&read_text(&args.config)?)?;
    if let Some(l) = args.lags_periods {
        config.lag_periods = l;
    }
    if let Some(path) = &args.filter {
        let filters: Vec<FilterSpec> = serde_json::from_str(&read_text(path)?)?;
        config.filters = Some(filters);
    }
    let filters = config.filters.clone();
    Ok((validate_config(&config)?, filters))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_curves(out: Option<&Path>, format: Format, result: &ResultFile) -> Result<()> {
    match format {
        Format::Json => emit(out, &result.to_json()),
        Format::Csv => {
            let dir = out.ok_or_else(|| Error::Invalid("--format csv needs an --out directory".into()))?;
            std::fs::create_dir_all(dir)?;
            for c in &result.curves {
                write_atomic(&dir.join(format!("{}.csv", c.name)), curve_csv(&c.curve).as_bytes())?;
            }
            Ok(())
        }
    }
}

fn correlate_inputs(
    config: &ValidConfig,
    records: &[PathBuf],
    simulate: Option<(&CavityPreparation, u64, usize)>,
    request: crate::estimator::CorrelationRequest,
    filters: Option<&[FilterSpec]>,
) -> Result<(CorrelationSet, Vec<u64>)> {
    let opts = EstimatorOptions::new(config.lag_periods);
    if records.is_empty() {
        let (prep, seed, shots) =
            simulate.ok_or_else(|| Error::Invalid("give record files or --shots to simulate".into()))?;
        let mut sim = Simulation::new(config, prep, seed, shots)?;
        return Ok((pipeline::correlate_source(&mut sim, request, opts, filters)?, vec![seed]));
    }
    let mut total: Option<CorrelationSet> = None;
    let mut seeds = Vec::new();
    for path in records {
        let mut reader = pipeline::open_records(path, config)?;
        seeds.push(reader.header.seed);
        let set = pipeline::correlate_source(&mut reader, request, opts, filters)?;
        total = Some(match total {
            None => set,
            Some(acc) => acc.merge(set)?,
        });
    }
    Ok((total.expect("at least one record file"), seeds))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (config, _) = load_config(&args.config)?;
    let prep = if args.vacuum {
        CavityPreparation::vacuum()
    } else {
        config.preparation
    };
    pipeline::simulate_to_file(&config, &prep, args.seed, args.shots, &args.out)
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<NoiseMoments> {
    let (config, filters) = load_config(&args.config)?;
    let filters = pipeline::active_filters(filters.as_deref());
    let vacuum = CavityPreparation::vacuum();
    let simulate = args.shots.map(|s| (&vacuum, args.seed, s));
    let (set, _) = correlate_inputs(
        &config,
        &args.records,
        simulate,
        crate::estimator::CorrelationRequest::all(),
        filters,
    )?;
    let noise = crate::calibration::noise_from_correlations(set, &config, filters)?;
    for flag in &noise.flags {
        log("warning", flag);
    }
    emit(args.out.as_deref(), &noise.to_json())?;
    Ok(noise)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<ResultFile> {
    let (config, filters) = load_config(&args.config)?;
    let filters = pipeline::active_filters(filters.as_deref());
    let calib = args
        .calib
        .as_ref()
        .ok_or_else(|| Error::MissingCalibration("analyze needs --calib".into()))?;
    let noise = NoiseMoments::from_json(&read_text(calib)?)?;
    if noise.config_digest != config.digest_hex() {
        return Err(Error::DigestMismatch {
            expected: config.digest_hex(),
            found: noise.config_digest,
        });
    }
    let mut opts = AnalysisOptions::new(args.variant.into());
    opts.g2 = !args.no_g2;
    opts.recovery = RecoveryOptions {
        subtract_cross: !args.keep_cross_noise,
        ..RecoveryOptions::default()
    };
    if args.reference {
        opts.reference = Some(config.preparation);
    }
    let simulate = args.shots.map(|s| (&config.preparation, args.seed, s));
    let (gammas, seeds) = correlate_inputs(&config, &args.records, simulate, opts.request(), filters)?;
    let analysis = pipeline::analyze(gammas, &noise, &config, filters, &opts)?;
    for w in &analysis.warnings {
        log("warning", w);
    }
    let result = analysis.to_result_file(Provenance::new(config.digest_hex(), seeds));
    emit_curves(args.out.as_deref(), args.format, &result)?;
    Ok(result)
}

/// The JSON document printed by `bounds`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub query: BoundQuery,
    pub real: RepetitionBound,
    pub complex: RepetitionBound,
    /// Probability that the mean of `repetitions` two-point products lies
    /// within `±ε/2`, when repetitions were given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_two_point: Option<f64>,
}

pub fn bounds_report(query: &BoundQuery) -> Result<BoundsReport> {
    let real = chebyshev_repetitions(query, BoundVariant::Real)?;
    let complex = chebyshev_repetitions(query, BoundVariant::Complex)?;
    let confidence_two_point = query
        .repetitions
        .map(|r| confidence_two_point(query.epsilon, r, query.sigma))
        .transpose()?;
    Ok(BoundsReport {
        query: *query,
        real,
        complex,
        confidence_two_point,
    })
}

pub fn cmd_bounds(args: &BoundsArgs) -> Result<BoundsReport> {
    let mut query = match &args.query {
        Some(p) if p.as_os_str() == "-" => {
            let mut text = String::new();
            std::io::Read::read_to_string(&mut std::io::stdin(), &mut text)?;
            serde_json::from_str(&text)?
        }
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => {
            let need = |v: Option<f64>, name: &str| {
                v.ok_or_else(|| Error::Invalid(format!("--{name} is required without a query file")))
            };
            BoundQuery::new(
                args.m.ok_or_else(|| Error::Invalid("--m is required without a query file".into()))?,
                need(args.sigma, "sigma")?,
                need(args.epsilon, "epsilon")?,
                need(args.confidence, "confidence")?,
            )
        }
    };
    if let Some(r) = args.repetitions {
        query.repetitions = Some(r);
    }
    let report = bounds_report(&query)?;
    let text = serde_json::to_string_pretty(&report).expect("bounds report serializes");
    emit(args.out.as_deref(), &(text + "\n"))?;
    Ok(report)
}

/// Analytic `G⁽¹⁾` and `G⁽²⁾` of the configured state on a lag grid.
pub fn reference_result(config: &ExperimentConfig, dt: f64) -> Result<ResultFile> {
    let t_p = config.grid.t_p();
    let bins = (t_p / dt).round();
    if bins.is_nan() || bins < 1.0 || ((bins * dt - t_p) / t_p).abs() > 1e-9 {
        return Err(Error::Invalid(format!("lag step {dt} does not divide the period {t_p}")));
    }
    let grid = LagGrid::new(t_p / bins, bins as usize, config.lag_periods);
    let lags = grid.lags();
    let prep = &config.preparation;
    let topo = &config.topology;
    let curve = |kind, values: Vec<Complex64>| {
        CorrelationFunction::from_values(kind, grid, values, vec![0.0; grid.len()], 0, config.digest_hex())
    };
    let g1 = lags.iter().map(|&t| expected_g1(topo, prep, t_p, t)).collect();
    let g2 = lags
        .iter()
        .map(|&t| Complex64::new(expected_g2(topo, prep, t_p, t), 0.0))
        .collect();
    Ok(ResultFile {
        curves: vec![
            NamedCurve {
                name: "g1_reference".into(),
                curve: curve(CorrelationKind::G1, g1),
            },
            NamedCurve {
                name: "g2_reference".into(),
                curve: curve(CorrelationKind::G2, g2),
            },
        ],
        peaks: vec![],
        warnings: vec![],
        provenance: Provenance::new(config.digest_hex(), vec![]),
    })
}

pub fn cmd_reference(args: &ReferenceArgs) -> Result<ResultFile> {
    let (config, _) = load_config(&args.config)?;
    let result = reference_result(&config, args.dt.unwrap_or(config.grid.dt))?;
    emit_curves(args.out.as_deref(), args.format, &result)?;
    Ok(result)
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a).map(drop),
        Command::Analyze(a) => cmd_analyze(a).map(drop),
        Command::Bounds(a) => cmd_bounds(a).map(drop),
        Command::Reference(a) => cmd_reference(a).map(drop),
    }
}

/// Parses the process arguments, runs the command and maps errors to a
/// nonzero exit status.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log("error", &e.to_string());
            ExitCode::FAILURE
        }
    }
}

//! Chunked drivers that stream shots through filtering, estimation, noise
//! calibration and recovery, so memory is bounded by the chunk size rather
//! than by the run length.

use std::path::Path;

use num_complex::Complex64;

use crate::calibration::{noise_from_correlations, recover_g1_with, recover_g2_with, NoiseMoments, RecoveryOptions};
use crate::error::{Error, Result};
use crate::estimator::{
    correlate, CorrelationFunction, CorrelationKind, CorrelationRequest, CorrelationSet, EstimatorOptions, Variant,
};
use crate::filtering::{apply_filter, filter_reference_g1, FilterSpec};
use crate::formats::{NamedCurve, NamedPeakReport, Provenance, RecordReader, RecordWriter, ResultFile};
use crate::model::{CavityPreparation, ExperimentConfig, ValidConfig};
use crate::reference::{expected_g1, expected_g2, peak_report, PeakMethod, PeakReport};
use crate::sampler::{check_run, RecordSet, Sampler};

/// Shots generated or read per chunk.
pub const CHUNK_SHOTS: usize = 128;

/// A run of shots that can be produced chunk by chunk.
pub trait ShotSource {
    fn shots(&self) -> usize;
    fn chunk(&mut self, start: usize, count: usize) -> Result<RecordSet>;
}

/// Shots drawn on demand from the sampler.
pub struct Simulation {
    sampler: Sampler,
    seed: u64,
    shots: usize,
}

impl Simulation {
    pub fn new(config: &ValidConfig, prep: &CavityPreparation, seed: u64, shots: usize) -> Result<Self> {
        check_run(config, prep, shots)?;
        Ok(Self {
            sampler: Sampler::new(config, prep),
            seed,
            shots,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl ShotSource for Simulation {
    fn shots(&self) -> usize {
        self.shots
    }

    fn chunk(&mut self, start: usize, count: usize) -> Result<RecordSet> {
        Ok(self.sampler.records(self.seed, start, count))
    }
}

impl ShotSource for RecordReader {
    fn shots(&self) -> usize {
        self.shots
    }

    fn chunk(&mut self, start: usize, count: usize) -> Result<RecordSet> {
        self.read_shots(start, count)
    }
}

impl ShotSource for RecordSet {
    fn shots(&self) -> usize {
        self.shots
    }

    fn chunk(&mut self, start: usize, count: usize) -> Result<RecordSet> {
        Ok(self.shot_range(start, start + count))
    }
}

fn chunks(shots: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..shots).step_by(CHUNK_SHOTS).map(move |s| (s, CHUNK_SHOTS.min(shots - s)))
}

/// Filters that actually change the records, or `None` if all are identities.
pub fn active_filters(filters: Option<&[FilterSpec]>) -> Option<&[FilterSpec]> {
    filters.filter(|f| f.iter().any(|s| !s.is_identity()))
}

/// Streams every shot of `source` through the optional filters and the estimator.
pub fn correlate_source(
    source: &mut dyn ShotSource,
    request: CorrelationRequest,
    opts: EstimatorOptions,
    filters: Option<&[FilterSpec]>,
) -> Result<CorrelationSet> {
    let filters = active_filters(filters);
    let mut total: Option<CorrelationSet> = None;
    for (start, count) in chunks(source.shots()) {
        let mut records = source.chunk(start, count)?;
        if !records.all_finite() {
            return Err(Error::Invalid(format!("non-finite samples in shots {start}..{}", start + count)));
        }
        if let Some(f) = filters {
            records = apply_filter(&records, f)?;
        }
        let set = correlate(&records, request, opts)?;
        total = Some(match total {
            None => set,
            Some(acc) => acc.merge(set)?,
        });
    }
    total.ok_or_else(|| Error::Invalid("no shots to correlate".into()))
}

/// Simulates `shots` shots straight into a record file.
pub fn simulate_to_file(
    config: &ValidConfig,
    prep: &CavityPreparation,
    seed: u64,
    shots: usize,
    path: &Path,
) -> Result<()> {
    let mut sim = Simulation::new(config, prep, seed, shots)?;
    let mut writer = RecordWriter::create(path, config.grid, shots, seed, config.digest())?;
    for (start, count) in chunks(shots) {
        writer.write_chunk(&sim.chunk(start, count)?)?;
    }
    writer.finish()
}

fn check_source_grid(source: &RecordReader, config: &ExperimentConfig) -> Result<()> {
    let digest = hex::encode(source.header.config_digest);
    if digest != config.digest_hex() {
        return Err(Error::DigestMismatch {
            expected: config.digest_hex(),
            found: digest,
        });
    }
    if source.grid() != config.grid {
        return Err(Error::GridMismatch("record file grid differs from the configuration".into()));
    }
    Ok(())
}

/// Opens a record file and checks it belongs to `config`.
pub fn open_records(path: &Path, config: &ExperimentConfig) -> Result<RecordReader> {
    let reader = RecordReader::open(path, config.grid.periods)?;
    check_source_grid(&reader, config)?;
    Ok(reader)
}

/// Noise moments from a vacuum source. The two-point moments are always
/// measured; `request` selects which four-point moments are added.
pub fn calibrate(
    vacuum: &mut dyn ShotSource,
    config: &ValidConfig,
    filters: Option<&[FilterSpec]>,
    request: CorrelationRequest,
) -> Result<NoiseMoments> {
    let filters = active_filters(filters);
    let request = CorrelationRequest {
        auto: [true; 2],
        cross: true,
        ..request
    };
    let set = correlate_source(vacuum, request, EstimatorOptions::new(config.lag_periods), filters)?;
    noise_from_correlations(set, config, filters)
}

/// Noise moments, including both four-point variants, from a freshly
/// simulated vacuum run.
pub fn simulate_calibration(
    config: &ValidConfig,
    seed: u64,
    shots: usize,
    filters: Option<&[FilterSpec]>,
) -> Result<NoiseMoments> {
    simulate_calibration_for(config, seed, shots, filters, CorrelationRequest::all())
}

pub fn simulate_calibration_for(
    config: &ValidConfig,
    seed: u64,
    shots: usize,
    filters: Option<&[FilterSpec]>,
    request: CorrelationRequest,
) -> Result<NoiseMoments> {
    let mut vacuum = Simulation::new(config, &CavityPreparation::vacuum(), seed, shots)?;
    calibrate(&mut vacuum, config, filters, request)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOptions {
    pub variant: Variant,
    pub recovery: RecoveryOptions,
    /// Peak extraction; by default a decay template for unfiltered curves and
    /// window maxima for filtered ones.
    pub peak_method: Option<PeakMethod>,
    /// Also recover `G⁽²⁾` from the four-point estimate.
    pub g2: bool,
    /// State whose analytic curves are attached for comparison.
    pub reference: Option<CavityPreparation>,
}

impl AnalysisOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            recovery: RecoveryOptions::default(),
            peak_method: None,
            g2: true,
            reference: None,
        }
    }

    pub fn request(&self) -> CorrelationRequest {
        let base = CorrelationRequest::two_point();
        if self.g2 {
            base.with_g2(self.variant)
        } else {
            base
        }
    }
}

/// Estimates, recovered curves and peak reports of one analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub gammas: CorrelationSet,
    /// Per-channel recoveries from the auto-correlations.
    pub g1_auto: [CorrelationFunction; 2],
    pub g1: CorrelationFunction,
    pub g2: Option<CorrelationFunction>,
    pub g1_peaks: PeakReport,
    pub g2_peaks: Option<PeakReport>,
    pub g1_reference: Option<CorrelationFunction>,
    pub g2_reference: Option<CorrelationFunction>,
    pub warnings: Vec<String>,
}

fn same_filters(a: Option<&[FilterSpec]>, b: Option<&[FilterSpec]>) -> bool {
    let norm = |f: Option<&[FilterSpec]>| {
        let mut v: Vec<FilterSpec> = active_filters(f)
            .map(|f| f.iter().filter(|s| !s.is_identity()).cloned().collect())
            .unwrap_or_default();
        v.sort_by_key(|s| s.channel);
        v
    };
    norm(a) == norm(b)
}

fn mean_curve(a: &CorrelationFunction, b: &CorrelationFunction) -> CorrelationFunction {
    let values = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    let stderr = a.stderr.iter().zip(&b.stderr).map(|(x, y)| 0.5 * x.hypot(*y)).collect();
    CorrelationFunction::from_values(CorrelationKind::G1, a.lag_grid(), values, stderr, a.shots, a.config_digest.clone())
}

/// Recovers `G⁽¹⁾` and `G⁽²⁾` from signal estimates and reports their peaks.
///
/// The α variant takes `G⁽¹⁾` as the mean of the two per-channel recoveries,
/// the β variant from the cross-correlation.
pub fn analyze(
    gammas: CorrelationSet,
    noise: &NoiseMoments,
    config: &ExperimentConfig,
    filters: Option<&[FilterSpec]>,
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    if !same_filters(filters, noise.filters.as_deref()) {
        return Err(Error::Invalid(
            "the calibration was measured with different filters than the signal".into(),
        ));
    }
    let filtered = active_filters(filters).is_some();
    let missing = |what: &str| Error::Invalid(format!("signal estimates lack the {what}"));
    let auto = [
        gammas.auto[0].as_ref().ok_or_else(|| missing("channel 0 auto-correlation"))?,
        gammas.auto[1].as_ref().ok_or_else(|| missing("channel 1 auto-correlation"))?,
    ];
    let cross = gammas.cross.as_ref().ok_or_else(|| missing("cross-correlation"))?;
    let g1_auto = [
        recover_g1_with(auto[0], noise, config, opts.recovery)?,
        recover_g1_with(auto[1], noise, config, opts.recovery)?,
    ];
    let g1 = match opts.variant {
        Variant::Alpha => mean_curve(&g1_auto[0], &g1_auto[1]),
        Variant::Beta => recover_g1_with(cross, noise, config, opts.recovery)?,
    };

    let mut warnings = noise.flags.clone();
    let g2 = if opts.g2 {
        let gamma2 = gammas
            .g2(opts.variant)
            .ok_or_else(|| missing("four-point estimate"))?;
        let rec = recover_g2_with(gamma2, &g1, noise, config, opts.variant, opts.recovery)?;
        warnings.extend(rec.warnings);
        Some(rec.curve)
    } else {
        None
    };

    let kappa = config.topology.kappa();
    let t_p = config.grid.t_p();
    let method = |rate: f64| match opts.peak_method {
        Some(m) => m,
        None if filtered => PeakMethod::WindowMax,
        None => PeakMethod::Template { rate },
    };
    let g1_peaks = peak_report(&g1, t_p, method(0.5 * kappa));
    let g2_peaks = g2.as_ref().map(|c| peak_report(c, t_p, method(kappa)));

    let (g1_reference, g2_reference) = match &opts.reference {
        Some(prep) => reference_curves(config, prep, &g1, filters)?,
        None => (None, None),
    };

    Ok(Analysis {
        gammas,
        g1_auto,
        g1,
        g2,
        g1_peaks,
        g2_peaks,
        g1_reference,
        g2_reference,
        warnings,
    })
}

/// Analytic curves on the lag grid of `like`. Filtered `G⁽¹⁾` is the analytic
/// curve convolved with the cross-channel kernel; no filtered `G⁽²⁾` is given.
fn reference_curves(
    config: &ExperimentConfig,
    prep: &CavityPreparation,
    like: &CorrelationFunction,
    filters: Option<&[FilterSpec]>,
) -> Result<(Option<CorrelationFunction>, Option<CorrelationFunction>)> {
    let grid = like.lag_grid();
    let t_p = grid.t_p();
    let topo = config.topology;
    let zeros = vec![0.0; grid.len()];
    let make = |kind, values: Vec<Complex64>| {
        CorrelationFunction::from_values(kind, grid, values, zeros.clone(), 0, like.config_digest.clone())
    };
    let g1 = |tau: f64| expected_g1(&topo, prep, t_p, tau);
    if let Some(active) = active_filters(filters) {
        let [_, _, kx] = crate::calibration::kernels(Some(active), grid.dt)?;
        let values = filter_reference_g1(g1, &kx, grid);
        return Ok((Some(make(CorrelationKind::G1, values)), None));
    }
    let lags = grid.lags();
    let v1 = lags.iter().map(|&t| g1(t)).collect();
    let v2 = lags
        .iter()
        .map(|&t| Complex64::new(expected_g2(&topo, prep, t_p, t), 0.0))
        .collect();
    Ok((Some(make(CorrelationKind::G1, v1)), Some(make(CorrelationKind::G2, v2))))
}

impl Analysis {
    /// The analysis as a result document.
    pub fn to_result_file(&self, provenance: Provenance) -> ResultFile {
        let mut curves = Vec::new();
        let mut push = |name: &str, curve: &CorrelationFunction| {
            curves.push(NamedCurve {
                name: name.to_string(),
                curve: curve.clone(),
            })
        };
        for (c, curve) in self.gammas.auto.iter().enumerate() {
            if let Some(curve) = curve {
                push(&format!("gamma1_alpha_{c}"), curve);
            }
        }
        if let Some(c) = &self.gammas.cross {
            push("gamma1_beta", c);
        }
        if let Some(c) = &self.gammas.g2_alpha {
            push("gamma2_alpha", c);
        }
        if let Some(c) = &self.gammas.g2_beta {
            push("gamma2_beta", c);
        }
        push("g1_alpha_0", &self.g1_auto[0]);
        push("g1_alpha_1", &self.g1_auto[1]);
        push("g1", &self.g1);
        if let Some(c) = &self.g2 {
            push("g2", c);
        }
        if let Some(c) = &self.g1_reference {
            push("g1_reference", c);
        }
        if let Some(c) = &self.g2_reference {
            push("g2_reference", c);
        }
        let mut peaks = vec![NamedPeakReport {
            name: "g1".into(),
            report: self.g1_peaks.clone(),
        }];
        if let Some(r) = &self.g2_peaks {
            peaks.push(NamedPeakReport {
                name: "g2".into(),
                report: r.clone(),
            });
        }
        ResultFile {
            curves,
            peaks,
            warnings: self.warnings.clone(),
            provenance,
        }
    }
}

/// Simulates a signal run and a vacuum run from independent seeds and
/// analyses the signal against the vacuum calibration.
pub fn simulate_and_analyze(
    config: &ValidConfig,
    prep: &CavityPreparation,
    seeds: [u64; 2],
    shots: [usize; 2],
    filters: Option<&[FilterSpec]>,
    opts: &AnalysisOptions,
) -> Result<(Analysis, NoiseMoments)> {
    let noise = simulate_calibration_for(config, seeds[1], shots[1], filters, opts.request())?;
    let mut signal = Simulation::new(config, prep, seeds[0], shots[0])?;
    let gammas = correlate_source(&mut signal, opts.request(), EstimatorOptions::new(config.lag_periods), filters)?;
    let analysis = analyze(gammas, &noise, config, filters, opts)?;
    Ok((analysis, noise))
}

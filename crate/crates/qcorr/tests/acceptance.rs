//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test --test acceptance`; `-- 3 7` runs only criteria 3 and 7.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::{Complex32, Complex64};
use qcorr::calibration::RecoveryOptions;
use qcorr::estimator::{
    correlate, CorrelationFunction, CorrelationRequest, EstimatorOptions, TwoPointMethod, Variant,
};
use qcorr::filtering::{convolve_lags, effective_kernel, filter_reference_g1, FilterSpec};
use qcorr::model::{
    validate_config, AmplifierChannel, CavityPreparation, ExperimentConfig, TimeGrid, ValidConfig,
};
use qcorr::pipeline::{self, AnalysisOptions, ShotSource, Simulation};
use qcorr::reference::{expected_g1, g1_analytic, peak_report, PeakMethod, Verdict};
use qcorr::sampler::{sample_husimi, RecordSet};
use qcorr::statistics::{
    chebyshev_repetitions, confidence_two_point, empirical_failure_rate, BoundQuery, BoundVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

// Tolerances and sizes fixed by the acceptance criteria.
const MOMENT_DRAWS: usize = 100_000;
const MOMENT_SE: f64 = 4.0;
const MOMENT_BUDGET: Duration = Duration::from_secs(10);

// At least 1e5 periods are required; more are used so that the 5% ratio
// tolerance is several standard errors wide.
const G1_PERIODS: usize = 1_500_000;
const G1_VACUUM_PERIODS: usize = 100_000;
const G1_BINS: usize = 256;
const KAPPA_TP: f64 = 20.0;
const G1_RATIO: f64 = 3.0;
const G1_RATIO_TOL: f64 = 0.05;
const G1_BUDGET: Duration = Duration::from_secs(120);

const ANTIBUNCH_PERIODS: usize = 10_000_000;
const ANTIBUNCH_SIDE_TOL: f64 = 0.10;
const ANTIBUNCH_SE: f64 = 4.0;
const ANTIBUNCH_BUDGET: Duration = Duration::from_secs(600);

const AGREE_SE: f64 = 4.0;
const AGREE_FRACTION: f64 = 0.95;
const ARTIFACT_SE: f64 = 5.0;

const FILTER_BANDWIDTHS: [f64; 3] = [31.0, 14.0, 10.0];
const FILTER_RATIO_TOL: f64 = 0.01;

const BOUND_EXPECTED: u64 = 8000;
const BOUND_TRIALS: u64 = 1000;
const BOUND_MC_SE: f64 = 3.0;
const ORACLE_DRAWS: usize = 10_000_000;

const FFT_RECORDS: usize = 100;
const FFT_REL_TOL: f64 = 1e-9;
const ISSERLIS_SE: f64 = 4.0;

const KAPPA: f64 = 1.0;
const T_P: f64 = KAPPA_TP / KAPPA;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hbt(bins: usize, periods: usize) -> ExperimentConfig {
    ExperimentConfig::hbt(KAPPA, TimeGrid::from_period(T_P, bins, periods))
}

fn valid(cfg: &ExperimentConfig) -> ValidConfig {
    validate_config(cfg).expect("acceptance configuration is valid")
}

/// Fraction of lags where `curve` lies within `k` standard errors of `expected`.
fn agreement(curve: &CorrelationFunction, expected: impl Fn(f64) -> Complex64, k: f64) -> f64 {
    let hits = curve
        .lags
        .iter()
        .zip(&curve.values)
        .zip(&curve.stderr)
        .filter(|((&tau, v), &se)| (*v - expected(tau)).norm() <= k * se)
        .count();
    hits as f64 / curve.lags.len() as f64
}

fn third() -> CavityPreparation {
    CavityPreparation::superposition(2.0 / 3.0)
}

// ---------------------------------------------------------------- criterion 1

/// `E[s]`, `E|s|²`, `E|s|⁴` of the Husimi function by brute-force quadrature.
fn husimi_quadrature(prep: &CavityPreparation) -> (Complex64, f64, f64) {
    let (h, n) = (0.01, 800);
    let mut acc = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for i in -n..n {
        for j in -n..n {
            let s = Complex64::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let q = (-s.norm_sqr()).exp() * (prep.alpha + prep.beta * s.conj()).norm_sqr() / std::f64::consts::PI;
            let w = q * h * h;
            acc.0 += s * w;
            acc.1 += s.norm_sqr() * w;
            acc.2 += s.norm_sqr().powi(2) * w;
        }
    }
    acc
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let preps = [
        ("(1,0)", CavityPreparation::vacuum()),
        ("(0,1)", CavityPreparation::single_photon()),
        ("(1/sqrt3,sqrt(2/3))", third()),
    ];
    let mut worst: f64 = 0.0;
    let mut quad_err: f64 = 0.0;
    for (i, (_, prep)) in preps.iter().enumerate() {
        // Anti-normally ordered moments: <a>, <a a†> = <n> + 1, <a² a†²> = <(n+1)(n+2)>.
        let p1 = prep.beta.norm_sqr();
        let closed = (prep.alpha.conj() * prep.beta, 1.0 + p1, 2.0 + 4.0 * p1);
        let quad = husimi_quadrature(prep);
        quad_err = quad_err
            .max((quad.0 - closed.0).norm())
            .max((quad.1 - closed.1).abs())
            .max((quad.2 - closed.2).abs());

        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let draws: Vec<Complex64> = (0..MOMENT_DRAWS).map(|_| sample_husimi(prep, &mut rng)).collect();
        let n = MOMENT_DRAWS as f64;
        let stat = |f: &dyn Fn(Complex64) -> f64, target: f64| {
            let xs: Vec<f64> = draws.iter().map(|&s| f(s)).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean - target).abs() / (var / n).sqrt()
        };
        for z in [
            stat(&|s| s.re, closed.0.re),
            stat(&|s| s.im, closed.0.im),
            stat(&|s| s.norm_sqr(), closed.1),
            stat(&|s| s.norm_sqr().powi(2), closed.2),
        ] {
            worst = worst.max(z);
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst < MOMENT_SE && quad_err < 1e-6 && elapsed < MOMENT_BUDGET,
        format!(
            "max deviation {worst:.2} SE (limit {MOMENT_SE}), quadrature vs closed form {quad_err:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Check {
    let start = Instant::now();
    let k = 41;
    let shots = G1_PERIODS.div_ceil(k);
    let cfg = valid(&hbt(G1_BINS, k));
    let mut opts = AnalysisOptions::new(Variant::Beta);
    opts.g2 = false;
    let prep = third();
    let vacuum = G1_VACUUM_PERIODS.div_ceil(k);
    let (analysis, _) = pipeline::simulate_and_analyze(&cfg, &prep, [21, 22], [shots, vacuum], None, &opts)
        .map_err(|e| e.to_string())?;
    let (ratio, ratio_se) = analysis.g1_peaks.center_to_side();
    let frac = agreement(&analysis.g1, |t| expected_g1(&cfg.topology, &prep, T_P, t), AGREE_SE);
    let elapsed = start.elapsed();
    ensure(
        (ratio / G1_RATIO - 1.0).abs() <= G1_RATIO_TOL && frac >= AGREE_FRACTION && elapsed < G1_BUDGET,
        format!(
            "center/side {ratio:.4} +/- {ratio_se:.4} (target {G1_RATIO} +/- {:.0}%), {:.1}% of lags within {AGREE_SE} SE of the analytic curve, {} periods, {:.1}s",
            G1_RATIO_TOL * 100.0,
            frac * 100.0,
            shots * k,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Check {
    let start = Instant::now();
    let (bins, k) = (32, 25);
    let shots = ANTIBUNCH_PERIODS.div_ceil(k);
    let cfg = hbt(bins, k).with_channels([AmplifierChannel::new(2.0, 1.0); 2]);
    let cfg = valid(&cfg);
    let opts = AnalysisOptions::new(Variant::Beta);
    let prep = CavityPreparation::single_photon();
    let (analysis, _) = pipeline::simulate_and_analyze(&cfg, &prep, [31, 32], [shots, shots], None, &opts)
        .map_err(|e| e.to_string())?;
    let report = analysis.g2_peaks.as_ref().expect("G2 was requested");
    let center = &report.center;
    let (side, side_se) = report.mean_side();
    let target = 1.0 / KAPPA;
    let center_ok = center.height.abs() < ANTIBUNCH_SE * center.stderr;
    let side_ok = (side / target - 1.0).abs() <= ANTIBUNCH_SIDE_TOL;
    let verdict_ok = report.verdict == Verdict::Antibunched;
    let elapsed = start.elapsed();
    // Side height of the sampled pulse, 1/(2 kappa) up to the discretization of the mode.
    let dt = cfg.grid.dt;
    let sampled = (KAPPA * dt / 2.0).tanh() / dt;
    ensure(
        center_ok && side_ok && verdict_ok && elapsed < ANTIBUNCH_BUDGET,
        format!(
            "center {:.4} +/- {:.4} [{}], mean side {side:.4} +/- {side_se:.4} vs 1/kappa = {target} [{}] \
             (1/(2 kappa) sampled on this grid: {:.4}), verdict {:?}, {} periods, {:.1}s",
            center.height,
            center.stderr,
            if center_ok { "ok" } else { "fail" },
            if side_ok { "ok" } else { "fail" },
            sampled,
            report.verdict,
            shots * k,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Check {
    let (bins, k) = (32, 25);
    let shots = 12_000;
    let cfg = hbt(bins, k)
        .with_channels([AmplifierChannel::new(1.0, 0.5); 2])
        .with_noise_cross(Complex64::new(0.5, 0.0));
    let cfg = valid(&cfg);
    let prep = third();
    let mut opts = AnalysisOptions::new(Variant::Beta);
    opts.reference = Some(prep);
    let noise = pipeline::simulate_calibration(&cfg, 42, shots, None).map_err(|e| e.to_string())?;
    let mut signal = Simulation::new(&cfg, &prep, 41, shots).map_err(|e| e.to_string())?;
    let gammas = pipeline::correlate_source(&mut signal, opts.request(), EstimatorOptions::new(cfg.lag_periods), None)
        .map_err(|e| e.to_string())?;
    let full = pipeline::analyze(gammas.clone(), &noise, &cfg, None, &opts).map_err(|e| e.to_string())?;

    let g1_ref = full.g1_reference.clone().expect("reference requested");
    let g2_ref = full.g2_reference.clone().expect("reference requested");
    let near = |c: &CorrelationFunction, r: &CorrelationFunction| {
        let hits = c
            .values
            .iter()
            .zip(&r.values)
            .zip(&c.stderr)
            .filter(|((v, e), &se)| (*v - *e).norm() <= AGREE_SE * se)
            .count();
        hits as f64 / c.values.len() as f64
    };
    let g1_frac = near(&full.g1, &g1_ref);
    let g2_frac = near(full.g2.as_ref().expect("G2 requested"), &g2_ref);

    opts.recovery = RecoveryOptions {
        subtract_cross: false,
        ..RecoveryOptions::default()
    };
    let raw = pipeline::analyze(gammas, &noise, &cfg, None, &opts).map_err(|e| e.to_string())?;
    let z = raw.g1.zero_index();
    let artifact = (raw.g1.values[z] - g1_ref.values[z]).norm() / raw.g1.stderr[z];
    let off_delta = (raw.g1.values[z + 1] - full.g1.values[z + 1]).norm();

    ensure(
        g1_frac >= AGREE_FRACTION && g2_frac >= AGREE_FRACTION && artifact >= ARTIFACT_SE && off_delta == 0.0,
        format!(
            "G1 {:.1}% and G2 {:.1}% of lags within {AGREE_SE} SE; without cross subtraction the zero-lag bin is off by {artifact:.0} SE and other lags are unchanged",
            g1_frac * 100.0,
            g2_frac * 100.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Check {
    let (bins, k) = (64, 9);
    let shots = 6_000;
    let half = KAPPA / 2.0;
    let cfg = ExperimentConfig::two_sided(half, half, TimeGrid::from_period(T_P, bins, k));
    let cfg = valid(&cfg);
    let prep = third();
    let opts = EstimatorOptions::new(cfg.lag_periods);
    let req = CorrelationRequest::two_point();

    let mut signal = Simulation::new(&cfg, &prep, 51, shots).map_err(|e| e.to_string())?;
    let cross = pipeline::correlate_source(&mut signal, req, opts, None)
        .map_err(|e| e.to_string())?
        .cross
        .expect("cross requested");
    let coupling = (half * half).sqrt();
    let frac = agreement(&cross, |t| g1_analytic(t, &prep, KAPPA, T_P) * coupling, AGREE_SE);

    let mut vacuum = Simulation::new(&cfg, &CavityPreparation::vacuum(), 52, shots).map_err(|e| e.to_string())?;
    let vac = pipeline::correlate_source(&mut vacuum, req, opts, None)
        .map_err(|e| e.to_string())?
        .cross
        .expect("cross requested");
    let floor = vac.at_lag(0).norm() / vac.stderr_at_lag(0);
    let vac_frac = agreement(&vac, |_| Complex64::new(0.0, 0.0), AGREE_SE);

    ensure(
        frac >= AGREE_FRACTION && floor < AGREE_SE && vac_frac >= AGREE_FRACTION,
        format!(
            "{:.1}% of lags within {AGREE_SE} SE of sqrt(kb kc) G1; vacuum cross-covariance at zero lag {floor:.2} SE, {:.1}% of vacuum lags consistent with zero",
            frac * 100.0,
            vac_frac * 100.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Check {
    let (bins, k) = (128, 9);
    let shots = 2_000;
    let prep = third();
    let base = hbt(bins, k).with_channels([AmplifierChannel::new(1.0, 1.0); 2]);
    let cfg = valid(&base);
    let dt = cfg.grid.dt;
    let grid = qcorr::estimator::LagGrid::new(dt, bins, cfg.lag_periods);
    let lags = grid.lags();
    let unfiltered_values: Vec<Complex64> = lags.iter().map(|&t| g1_analytic(t, &prep, KAPPA, T_P)).collect();
    let unfiltered = CorrelationFunction::from_values(
        qcorr::estimator::CorrelationKind::G1,
        grid,
        unfiltered_values,
        vec![0.0; grid.len()],
        0,
        String::new(),
    );
    let ratios_u = peak_report(&unfiltered, T_P, PeakMethod::WindowMax).ratios;

    let mut signal = Simulation::new(&cfg, &prep, 61, shots).map_err(|e| e.to_string())?;
    let records: RecordSet = signal.chunk(0, shots).map_err(|e| e.to_string())?;
    let opts = EstimatorOptions::new(cfg.lag_periods);
    let raw_cross = correlate(&records, CorrelationRequest::two_point(), opts)
        .map_err(|e| e.to_string())?
        .cross
        .expect("cross requested");

    let mut lines = Vec::new();
    let mut ok = true;
    for factor in FILTER_BANDWIDTHS {
        let filters = FilterSpec::gaussian_pair(factor, T_P);
        let kx = effective_kernel(&filters[0], &filters[1], dt).map_err(|e| e.to_string())?;
        let k0 = effective_kernel(&filters[0], &filters[0], dt).map_err(|e| e.to_string())?;

        let filtered_values = filter_reference_g1(|t| g1_analytic(t, &prep, KAPPA, T_P), &kx, grid);
        let filtered = CorrelationFunction::from_values(
            qcorr::estimator::CorrelationKind::G1,
            grid,
            filtered_values,
            vec![0.0; grid.len()],
            0,
            String::new(),
        );
        let ratios_f = peak_report(&filtered, T_P, PeakMethod::WindowMax).ratios;
        let ratio_dev = ratios_f
            .iter()
            .zip(&ratios_u)
            .map(|(f, u)| (f / u - 1.0).abs())
            .fold(0.0f64, f64::max);

        let mut source = records.clone();
        let filtered_cross = pipeline::correlate_source(&mut source, CorrelationRequest::two_point(), opts, Some(&filters))
            .map_err(|e| e.to_string())?
            .cross
            .expect("cross requested");
        let predicted = convolve_lags(&raw_cross, &kx);
        let reach = kx.lags().map(|n| n.unsigned_abs()).max().unwrap_or(0) as isize;
        let m_max = grid.max_lag() as isize;
        let interior: Vec<isize> = (-m_max + reach..=m_max - reach).collect();
        let conv_hits = interior
            .iter()
            .filter(|&&m| {
                let i = grid.index(m);
                (filtered_cross.values[i] - predicted.values[i]).norm() <= AGREE_SE * filtered_cross.stderr[i]
            })
            .count();
        let conv_frac = conv_hits as f64 / interior.len() as f64;

        let spec_cfg = ExperimentConfig {
            filters: Some(filters.to_vec()),
            ..base.clone()
        };
        let spec_cfg = valid(&spec_cfg);
        let noise = pipeline::simulate_calibration(&spec_cfg, 62, shots, Some(&filters)).map_err(|e| e.to_string())?;
        let level = cfg.channels[0].gain + cfg.channels[0].nbar;
        let auto = &noise.two_point_auto[0];
        let vac_frac = agreement(
            auto,
            |tau| {
                let m = (tau / dt).round() as isize;
                Complex64::new(level * T_P * k0.at(m), 0.0)
            },
            AGREE_SE,
        );
        let nbar = noise.nbar[0];
        let nbar_ok = (nbar.value - cfg.channels[0].nbar).abs() <= AGREE_SE * nbar.stderr;

        let pass = ratio_dev <= FILTER_RATIO_TOL && conv_frac >= AGREE_FRACTION && vac_frac >= AGREE_FRACTION && nbar_ok;
        ok &= pass;
        lines.push(format!(
            "B={factor}/t_p: ratio dev {:.3}%, f_eff*raw {:.1}%, vacuum {:.1}%, N {:.3}+/-{:.3}",
            ratio_dev * 100.0,
            conv_frac * 100.0,
            vac_frac * 100.0,
            nbar.value,
            nbar.stderr
        ));
    }
    ensure(ok, lines.join("; "))
}

// ---------------------------------------------------------------- criterion 7

/// Monte Carlo estimate of `P(|mean of R products of N(0,σ²) pairs| < ε/2)`,
/// drawing each sum as `σ²(χ²_R - χ'²_R)/2`.
fn two_point_oracle(epsilon: f64, r: u64, sigma: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(r as f64).expect("positive degrees of freedom");
    let hits = (0..draws)
        .filter(|_| {
            let sum = sigma * sigma * (chi.sample(&mut rng) - chi.sample(&mut rng)) / 2.0;
            (sum / r as f64).abs() < epsilon / 2.0
        })
        .count();
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

fn criterion_7() -> Check {
    let query = BoundQuery::new(2, 1.0, 0.1, 0.95);
    let bound = chebyshev_repetitions(&query, BoundVariant::Real).map_err(|e| e.to_string())?;
    let rate = empirical_failure_rate(2, 1.0, 0.1, bound.repetitions, BOUND_TRIALS, 71, BoundVariant::Real)
        .map_err(|e| e.to_string())?;
    let limit = 0.05 + BOUND_MC_SE * (0.05 * 0.95 / BOUND_TRIALS as f64).sqrt();

    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, r) in [1u64, 10, 100].into_iter().enumerate() {
        let epsilon = 0.5;
        let p = confidence_two_point(epsilon, r, 1.0).map_err(|e| e.to_string())?;
        let (mc, se) = two_point_oracle(epsilon, r, 1.0, ORACLE_DRAWS, 700 + i as u64);
        let z = (p - mc).abs() / se;
        worst = worst.max(z);
        detail.push(format!("R={r}: {p:.5} vs {mc:.5}"));
    }
    ensure(
        bound.repetitions == BOUND_EXPECTED && rate <= limit && worst < BOUND_MC_SE,
        format!(
            "R bound {} (expected {BOUND_EXPECTED}), failure rate {:.3} (limit {limit:.3}), two-point confidence {} (max {worst:.2} MC SE)",
            bound.repetitions,
            rate,
            detail.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn random_records(rng: &mut ChaCha8Rng, shots: usize, k: usize, p: usize) -> RecordSet {
    let n = shots * k * p;
    let mut draw = || Complex32::new(rng.sample::<f32, _>(StandardNormal), rng.sample::<f32, _>(StandardNormal));
    let channels = (0..2).map(|_| (0..n).map(|_| draw()).collect()).collect();
    RecordSet {
        grid: TimeGrid::new(0.1, p, k),
        shots,
        first_shot: 0,
        channels,
        seed: 0,
        config_digest: [0; 32],
        edge_guard: 0,
    }
}

/// Moving-average records `C_t = a z_t + b z_{t-1} + e_t`, `D_t = c z_t + d z_{t-2} + f_t`
/// with unit-variance complex white `z`, `e`, `f`.
const MA: [f64; 4] = [0.9, 0.5, 0.7, -0.6];
const EXTRA: f64 = 0.4;

fn ma_records(rng: &mut ChaCha8Rng, shots: usize, k: usize, p: usize) -> RecordSet {
    let len = k * p;
    let mut c = Vec::with_capacity(shots * len);
    let mut d = Vec::with_capacity(shots * len);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut draw = || Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * scale;
    for _ in 0..shots {
        let z: Vec<Complex64> = (0..len + 2).map(|_| draw()).collect();
        for t in 0..len {
            let (zt, z1, z2) = (z[t + 2], z[t + 1], z[t]);
            let cv = zt * MA[0] + z1 * MA[1] + draw() * EXTRA;
            let dv = zt * MA[2] + z2 * MA[3] + draw() * EXTRA;
            c.push(Complex32::new(cv.re as f32, cv.im as f32));
            d.push(Complex32::new(dv.re as f32, dv.im as f32));
        }
    }
    RecordSet {
        grid: TimeGrid::new(0.25, p, k),
        shots,
        first_shot: 0,
        channels: vec![c, d],
        seed: 0,
        config_digest: [0; 32],
        edge_guard: 0,
    }
}

/// `E[conj(C_t) D_{t+τ}]` of the moving-average records.
fn ma_cross(tau: isize) -> f64 {
    let [a, b, c, d] = MA;
    match tau {
        0 => a * c,
        2 => a * d,
        -1 => b * c,
        1 => b * d,
        _ => 0.0,
    }
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst: f64 = 0.0;
    for _ in 0..FFT_RECORDS {
        let shots = rng.random_range(1..4);
        let k = rng.random_range(5..8);
        let p = rng.random_range(3..24);
        let records = random_records(&mut rng, shots, k, p);
        let fft = correlate(&records, CorrelationRequest::two_point(), EstimatorOptions::new(2)).map_err(|e| e.to_string())?;
        let direct = correlate(&records, CorrelationRequest::two_point(), EstimatorOptions::direct(2)).map_err(|e| e.to_string())?;
        assert_eq!(EstimatorOptions::direct(2).method, TwoPointMethod::Direct);
        for (a, b) in fft.iter().zip(direct.iter()) {
            let scale = b.values.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            for (x, y) in a.values.iter().zip(&b.values) {
                worst = worst.max((x - y).norm() / scale);
            }
        }
    }

    let (shots, k, p) = (4000, 5, 8);
    let records = ma_records(&mut rng, shots, k, p);
    let set = correlate(&records, CorrelationRequest::default().with_g2(Variant::Beta).with_g2(Variant::Alpha), EstimatorOptions::new(2))
        .map_err(|e| e.to_string())?;
    // Base bins per shot times dt over base periods: the estimator integrates over one period.
    let t_p = 0.25 * p as f64;
    let var_c = MA[0].powi(2) + MA[1].powi(2) + EXTRA * EXTRA;
    let var_d = MA[2].powi(2) + MA[3].powi(2) + EXTRA * EXTRA;
    let mut isserlis_worst: f64 = 0.0;
    for (curve, expected) in [
        (
            set.g2_beta.as_ref().expect("beta requested"),
            Box::new(|m: isize| t_p * (ma_cross(0).powi(2) + ma_cross(m) * ma_cross(-m))) as Box<dyn Fn(isize) -> f64>,
        ),
        (
            set.g2_alpha.as_ref().expect("alpha requested"),
            Box::new(|m: isize| t_p * (var_c * var_d + ma_cross(m).powi(2))),
        ),
    ] {
        let m_max = curve.lag_grid().max_lag() as isize;
        for m in -m_max..=m_max {
            let z = (curve.at_lag(m) - expected(m)).norm() / curve.stderr_at_lag(m);
            isserlis_worst = isserlis_worst.max(z);
        }
    }
    ensure(
        worst <= FFT_REL_TOL && isserlis_worst < ISSERLIS_SE,
        format!(
            "FFT vs direct max relative difference {worst:.1e} over {FFT_RECORDS} records; four-point vs Isserlis max {isserlis_worst:.2} SE"
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn run_once(dir: &std::path::Path, tag: &str, threads: usize) -> Result<(Vec<u8>, String), String> {
    let cfg = hbt(32, 7).with_channels([AmplifierChannel::new(2.0, 0.5); 2]);
    let cfg = valid(&cfg);
    let prep = third();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let path = dir.join(format!("{tag}.qenv"));
        pipeline::simulate_to_file(&cfg, &prep, 91, 300, &path).map_err(|e| e.to_string())?;
        let noise = pipeline::simulate_calibration(&cfg, 92, 300, None).map_err(|e| e.to_string())?;
        let mut opts = AnalysisOptions::new(Variant::Beta);
        opts.reference = Some(prep);
        let mut reader = pipeline::open_records(&path, &cfg).map_err(|e| e.to_string())?;
        let gammas = pipeline::correlate_source(&mut reader, opts.request(), EstimatorOptions::new(cfg.lag_periods), None)
            .map_err(|e| e.to_string())?;
        let analysis = pipeline::analyze(gammas, &noise, &cfg, None, &opts).map_err(|e| e.to_string())?;
        let json = analysis
            .to_result_file(qcorr::formats::Provenance::new(cfg.digest_hex(), vec![91, 92]))
            .to_json();
        Ok((std::fs::read(&path).map_err(|e| e.to_string())?, json))
    })
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [run_once(dir.path(), "a", 1)?, run_once(dir.path(), "b", 1)?, run_once(dir.path(), "c", 4)?];
    let records_same = runs.iter().all(|r| r.0 == runs[0].0);
    let json_same = runs.iter().all(|r| r.1 == runs[0].1);
    ensure(
        records_same && json_same,
        format!(
            "record files identical: {records_same}, result JSON identical: {json_same} (3 runs, 1 and 4 threads, {} record bytes)",
            runs[0].0.len()
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "sampler moments", criterion_1),
        (2, "G1 round trip", criterion_2),
        (3, "anti-bunching", criterion_3),
        (4, "noise subtraction", criterion_4),
        (5, "two-sided cavity", criterion_5),
        (6, "filtering", criterion_6),
        (7, "statistics", criterion_7),
        (8, "estimator equivalence", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {msg}"),
            Err(msg) => {
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {msg}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

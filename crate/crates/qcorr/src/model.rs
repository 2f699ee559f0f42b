//! Experiment configuration, the discretized time grid and the cavity temporal mode.
//!
//! Every Dirac delta of the continuum theory maps to `δ_{m0}/dt` on the grid
//! defined here. The integration interval for period-integrated quantities is
//! exactly one repetition period, aligned to the preparation times.

use std::ops::Deref;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, ConfigIssue};
use crate::filtering::FilterSpec;

/// Tolerance on `|α|² + |β|² = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default lower bound on `κ·t_p`: the residual population `e^{-κ t_p}` stays below 5e-5.
pub const DEFAULT_MIN_KAPPA_TP: f64 = 10.0;

/// Default number of periods the lag grid extends on each side of zero.
pub const DEFAULT_LAG_PERIODS: usize = 2;

/// Cavity state `α|0⟩ + β|1⟩` prepared at the start of every period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityPreparation {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl CavityPreparation {
    pub fn new(alpha: Complex64, beta: Complex64) -> Self {
        Self { alpha, beta }
    }

    pub fn vacuum() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn single_photon() -> Self {
        Self::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// Real superposition with one-photon probability `p1`.
    pub fn superposition(p1: f64) -> Self {
        Self::new(
            Complex64::new((1.0 - p1).sqrt(), 0.0),
            Complex64::new(p1.sqrt(), 0.0),
        )
    }

    pub fn is_vacuum(&self) -> bool {
        self.beta.norm_sqr() == 0.0
    }

    fn check(&self, prefix: &str, issues: &mut Vec<ConfigIssue>) {
        let finite = [self.alpha.re, self.alpha.im, self.beta.re, self.beta.im]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            push(issues, prefix, "non-finite amplitude");
            return;
        }
        let norm = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (norm - 1.0).abs() > NORMALIZATION_TOL {
            push(
                issues,
                prefix,
                &format!("normalization violated: |alpha|^2 + |beta|^2 = {norm}"),
            );
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        self.check("preparation", &mut issues);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }
}

impl Default for CavityPreparation {
    fn default() -> Self {
        Self::vacuum()
    }
}

/// Uniform time grid: `P` bins of width `dt` per period, `K` periods per shot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub bins_per_period: usize,
    pub periods: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, bins_per_period: usize, periods: usize) -> Self {
        Self {
            dt,
            bins_per_period,
            periods,
        }
    }

    /// Grid with a given repetition period split into `bins_per_period` bins.
    pub fn from_period(t_p: f64, bins_per_period: usize, periods: usize) -> Self {
        Self::new(t_p / bins_per_period as f64, bins_per_period, periods)
    }

    pub fn t_p(&self) -> f64 {
        self.dt * self.bins_per_period as f64
    }

    /// Number of bins in one shot.
    pub fn shot_len(&self) -> usize {
        self.bins_per_period * self.periods
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Topology {
    /// Single-port cavity followed by a balanced beam splitter and two detectors.
    Hbt { kappa: f64 },
    /// Cavity with two output ports, each feeding its own detector.
    TwoSided { kappa_b: f64, kappa_c: f64 },
}

impl Topology {
    pub fn kappa(&self) -> f64 {
        match *self {
            Topology::Hbt { kappa } => kappa,
            Topology::TwoSided { kappa_b, kappa_c } => kappa_b + kappa_c,
        }
    }

    /// Amplitude weights of the cavity mode in the two detected channels.
    pub fn channel_weights(&self) -> [f64; 2] {
        match *self {
            Topology::Hbt { .. } => [std::f64::consts::FRAC_1_SQRT_2; 2],
            Topology::TwoSided { kappa_b, kappa_c } => {
                let k = kappa_b + kappa_c;
                [(kappa_b / k).sqrt(), (kappa_c / k).sqrt()]
            }
        }
    }
}

/// Phase-preserving amplifier in one detection channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplifierChannel {
    pub gain: f64,
    pub nbar: f64,
}

impl AmplifierChannel {
    pub fn new(gain: f64, nbar: f64) -> Self {
        Self { gain, nbar }
    }

    pub fn ideal() -> Self {
        Self::new(1.0, 0.0)
    }
}

/// Complex cross-correlation `N̄_cd` between the added noise of the two channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseCross {
    pub nbar_cross: Complex64,
}

impl NoiseCross {
    pub fn real(value: f64) -> Self {
        Self {
            nbar_cross: Complex64::new(value, 0.0),
        }
    }
}

fn default_lag_periods() -> usize {
    DEFAULT_LAG_PERIODS
}

fn default_min_kappa_tp() -> f64 {
    DEFAULT_MIN_KAPPA_TP
}

/// The experiment document read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub grid: TimeGrid,
    pub channels: [AmplifierChannel; 2],
    #[serde(default)]
    pub noise_cross: NoiseCross,
    #[serde(default = "default_lag_periods")]
    pub lag_periods: usize,
    #[serde(default = "default_min_kappa_tp")]
    pub min_kappa_tp: f64,
    #[serde(default)]
    pub preparation: CavityPreparation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<FilterSpec>>,
}

/// The part of a configuration that determines the detection chain and grid.
/// Signal and vacuum runs of the same chain share this digest.
#[derive(Serialize)]
struct ChainView<'a> {
    topology: &'a Topology,
    grid: &'a TimeGrid,
    channels: &'a [AmplifierChannel; 2],
    noise_cross: &'a NoiseCross,
}

impl ExperimentConfig {
    /// HBT chain with ideal amplifiers and the default lag window.
    pub fn hbt(kappa: f64, grid: TimeGrid) -> Self {
        Self {
            topology: Topology::Hbt { kappa },
            grid,
            channels: [AmplifierChannel::ideal(); 2],
            noise_cross: NoiseCross::default(),
            lag_periods: DEFAULT_LAG_PERIODS,
            min_kappa_tp: DEFAULT_MIN_KAPPA_TP,
            preparation: CavityPreparation::vacuum(),
            filters: None,
        }
    }

    pub fn two_sided(kappa_b: f64, kappa_c: f64, grid: TimeGrid) -> Self {
        Self {
            topology: Topology::TwoSided { kappa_b, kappa_c },
            ..Self::hbt(kappa_b + kappa_c, grid)
        }
    }

    pub fn with_channels(mut self, channels: [AmplifierChannel; 2]) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_noise_cross(mut self, nbar_cross: Complex64) -> Self {
        self.noise_cross = NoiseCross { nbar_cross };
        self
    }

    pub fn with_preparation(mut self, prep: CavityPreparation) -> Self {
        self.preparation = prep;
        self
    }

    pub fn with_lag_periods(mut self, lag_periods: usize) -> Self {
        self.lag_periods = lag_periods;
        self
    }

    /// SHA-256 over the detection chain and grid (preparation, filters and
    /// analysis options excluded).
    pub fn digest(&self) -> [u8; 32] {
        let view = ChainView {
            topology: &self.topology,
            grid: &self.grid,
            channels: &self.channels,
            noise_cross: &self.noise_cross,
        };
        let bytes = serde_json::to_vec(&view).expect("config view serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn push(issues: &mut Vec<ConfigIssue>, path: &str, message: &str) {
    issues.push(ConfigIssue {
        path: path.to_string(),
        message: message.to_string(),
    });
}

fn check_rate(issues: &mut Vec<ConfigIssue>, path: &str, value: f64) {
    if !value.is_finite() {
        push(issues, path, "non-finite rate");
    } else if value <= 0.0 {
        push(issues, path, "rate must be strictly positive");
    }
}

/// A configuration whose invariants have all been checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidConfig(ExperimentConfig);

impl ValidConfig {
    pub fn into_inner(self) -> ExperimentConfig {
        self.0
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.0
    }
}

impl Deref for ValidConfig {
    type Target = ExperimentConfig;
    fn deref(&self) -> &ExperimentConfig {
        &self.0
    }
}

/// Checks every invariant of the configuration and reports all violations.
pub fn validate_config(config: &ExperimentConfig) -> Result<ValidConfig, ConfigError> {
    let mut issues = Vec::new();

    match config.topology {
        Topology::Hbt { kappa } => check_rate(&mut issues, "topology.kappa", kappa),
        Topology::TwoSided { kappa_b, kappa_c } => {
            check_rate(&mut issues, "topology.kappa_b", kappa_b);
            check_rate(&mut issues, "topology.kappa_c", kappa_c);
        }
    }

    let grid = &config.grid;
    if !grid.dt.is_finite() || grid.dt <= 0.0 {
        push(&mut issues, "grid.dt", "time step must be finite and positive");
    }
    if grid.bins_per_period == 0 {
        push(&mut issues, "grid.bins_per_period", "must be positive");
    }
    if grid.periods == 0 {
        push(&mut issues, "grid.periods", "must be positive");
    }
    if grid.bins_per_period > u32::MAX as usize {
        push(&mut issues, "grid.bins_per_period", "exceeds the record format range");
    }

    if !config.min_kappa_tp.is_finite() || config.min_kappa_tp < 0.0 {
        push(&mut issues, "min_kappa_tp", "must be finite and non-negative");
    } else {
        let kappa_tp = config.topology.kappa() * grid.t_p();
        if kappa_tp.is_finite() && kappa_tp < config.min_kappa_tp {
            push(
                &mut issues,
                "topology",
                &format!(
                    "kappa*t_p = {kappa_tp} is below the equilibrium threshold {}",
                    config.min_kappa_tp
                ),
            );
        }
    }

    if config.lag_periods < 2 {
        push(
            &mut issues,
            "lag_periods",
            "lag grid must span at least 3 periods (lag_periods >= 2)",
        );
    }
    let needed = 2 * config.lag_periods + 1;
    if grid.periods < needed {
        push(
            &mut issues,
            "grid.periods",
            &format!(
                "lag window of +/-{} periods plus one base period needs {needed} periods per shot",
                config.lag_periods
            ),
        );
    }

    for (i, ch) in config.channels.iter().enumerate() {
        let gain_path = format!("channels[{i}].gain");
        let nbar_path = format!("channels[{i}].nbar");
        if !ch.gain.is_finite() {
            push(&mut issues, &gain_path, "non-finite gain");
        } else if ch.gain < 1.0 {
            push(&mut issues, &gain_path, "gain must be >= 1");
        }
        if !ch.nbar.is_finite() {
            push(&mut issues, &nbar_path, "non-finite noise quanta");
        } else if ch.nbar < 0.0 {
            push(&mut issues, &nbar_path, "noise quanta must be >= 0");
        }
    }

    let cross = config.noise_cross.nbar_cross;
    if !cross.re.is_finite() || !cross.im.is_finite() {
        push(&mut issues, "noise_cross", "non-finite cross-noise");
    } else {
        let bound = (config.channels[0].nbar.max(0.0) * config.channels[1].nbar.max(0.0)).sqrt();
        if cross.norm() > bound * (1.0 + NORMALIZATION_TOL) + f64::MIN_POSITIVE {
            push(
                &mut issues,
                "noise_cross",
                &format!(
                    "cross-noise exceeds Cauchy-Schwarz bound: |N_cd| = {} > {bound}",
                    cross.norm()
                ),
            );
        }
    }

    config.preparation.check("preparation", &mut issues);

    if let Some(filters) = &config.filters {
        if filters.len() != 2 {
            push(&mut issues, "filters", "exactly one filter per channel is required");
        }
        for (i, f) in filters.iter().enumerate() {
            if let Err(msg) = f.check() {
                push(&mut issues, &format!("filters[{i}]"), &msg);
            }
        }
    }

    if issues.is_empty() {
        Ok(ValidConfig(config.clone()))
    } else {
        Err(ConfigError { issues })
    }
}

/// Cavity emission envelope `u(t) = √κ e^{-κt/2}` on `[0, t_p)`, zero elsewhere.
pub fn temporal_mode(topology: &Topology, t_p: f64, t: f64) -> f64 {
    if !(0.0..t_p).contains(&t) {
        return 0.0;
    }
    let kappa = topology.kappa();
    kappa.sqrt() * (-0.5 * kappa * t).exp()
}

/// The temporal mode sampled at bin midpoints and rescaled so that `∑ û² dt = 1`.
pub fn discrete_mode(topology: &Topology, grid: &TimeGrid) -> Vec<f64> {
    let t_p = grid.t_p();
    let mut u: Vec<f64> = (0..grid.bins_per_period)
        .map(|i| temporal_mode(topology, t_p, (i as f64 + 0.5) * grid.dt))
        .collect();
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>() * grid.dt;
    let scale = norm.sqrt().recip();
    u.iter_mut().for_each(|v| *v *= scale);
    u
}

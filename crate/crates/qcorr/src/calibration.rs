//! Noise calibration from vacuum runs and recovery of the coherence functions.
//!
//! Notation: `g_i` amplifier gains, `N̄_i` added noise quanta, `N̄_x` the
//! cross-correlated noise, `t_p` the repetition period. The pre-amplifier
//! fields couple to the coherence functions through topology coefficients
//!
//! | coefficient | HBT | two-sided |
//! |-------------|-----|-----------|
//! | `a_i` (auto, channel i) | 1/2 | κ_i |
//! | `c_x` (cross) | 1/2 | √(κ_b κ_c) |
//! | `c_4` (four-point) | 1/4 | κ_b κ_c |
//!
//! so that, with `f(m)` the effective kernel (`δ_{m0}/dt` without filters),
//!
//! * `Γ_α,i(m) = g_i a_i G⁽¹⁾(m) + (g_i + N̄_i) t_p f_ii(m)`
//! * `Γ_β(m)  = √(g_0 g_1) c_x G⁽¹⁾(m) + N̄_x t_p f_01(m)`
//! * `Γ⁽²⁾_β(m) = g_0 g_1 c_4 G⁽²⁾(m) + V_β(m) + 2 √(g_0 g_1) c_x N̄_x G⁽¹⁾(0) (1 + δ_{m0}) / dt`
//! * `Γ⁽²⁾_α(m) = g_0 g_1 c_4 G⁽²⁾(m) + V_α(m)
//!    + G⁽¹⁾(0)/dt · [a_0 g_0 (g_1 + N̄_1) + a_1 g_1 (g_0 + N̄_0)]
//!    + 2 √(g_0 g_1) c_x Re(N̄_x) G⁽¹⁾(0) δ_{m0} / dt`
//!
//! where `V` is the four-point function measured with the source off. Every
//! term quadratic in `1/dt` that does not involve the source is contained in
//! `V`, so it is removed by the vacuum subtraction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    correlate, CorrelationFunction, CorrelationKind, CorrelationRequest, CorrelationSet, EstimatorOptions, Variant,
};
use crate::filtering::{effective_kernel, EffectiveKernel, FilterSpec};
use crate::model::{ExperimentConfig, Topology};
use crate::sampler::RecordSet;

/// A real estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Whether the value is below zero by more than `k` standard errors.
    pub fn significantly_negative(&self, k: f64) -> bool {
        self.value < -k * self.stderr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub stderr: f64,
}

/// Noise moments measured with the source off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMoments {
    pub config_digest: String,
    pub gains: [f64; 2],
    pub dt: f64,
    pub bins_per_period: usize,
    /// Filters the vacuum records were passed through, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<FilterSpec>>,
    pub two_point_auto: [CorrelationFunction; 2],
    pub two_point_cross: CorrelationFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub four_point_alpha: Option<CorrelationFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub four_point_beta: Option<CorrelationFunction>,
    pub nbar: [Estimate; 2],
    pub nbar_cross: ComplexEstimate,
    /// Calibration inconsistencies, such as a significantly negative `N̄`.
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Effective kernels of a filter assignment: `[f_00, f_11, f_01]`.
pub fn kernels(filters: Option<&[FilterSpec]>, dt: f64) -> Result<[EffectiveKernel; 3]> {
    let Some(filters) = filters else {
        let d = EffectiveKernel::delta(dt);
        return Ok([d.clone(), d.clone(), d]);
    };
    let spec = |c: usize| {
        filters
            .iter()
            .find(|f| f.channel == c)
            .cloned()
            .unwrap_or_else(|| FilterSpec::identity(c))
    };
    let (a, b) = (spec(0), spec(1));
    Ok([
        effective_kernel(&a, &a, dt)?,
        effective_kernel(&b, &b, dt)?,
        effective_kernel(&a, &b, dt)?,
    ])
}

impl NoiseMoments {
    pub fn kernels(&self) -> Result<[EffectiveKernel; 3]> {
        kernels(self.filters.as_deref(), self.dt)
    }

    pub fn t_p(&self) -> f64 {
        self.dt * self.bins_per_period as f64
    }

    pub fn four_point(&self, variant: Variant) -> Option<&CorrelationFunction> {
        match variant {
            Variant::Alpha => self.four_point_alpha.as_ref(),
            Variant::Beta => self.four_point_beta.as_ref(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("noise moments serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Measures noise moments from vacuum records (optionally already filtered
/// with `filters`).
pub fn estimate_noise(
    vacuum: &RecordSet,
    config: &ExperimentConfig,
    filters: Option<&[FilterSpec]>,
) -> Result<NoiseMoments> {
    let digest = hex::encode(vacuum.config_digest);
    if digest != config.digest_hex() {
        return Err(Error::DigestMismatch {
            expected: config.digest_hex(),
            found: digest,
        });
    }
    if vacuum.grid != config.grid {
        return Err(Error::GridMismatch("vacuum records were taken on a different grid".into()));
    }
    let set = correlate(vacuum, CorrelationRequest::all(), EstimatorOptions::new(config.lag_periods))?;
    noise_from_correlations(set, config, filters)
}

/// Noise moments from correlations already estimated on vacuum records, for
/// callers that accumulate the estimate in chunks.
pub fn noise_from_correlations(
    set: CorrelationSet,
    config: &ExperimentConfig,
    filters: Option<&[FilterSpec]>,
) -> Result<NoiseMoments> {
    let missing = || Error::MissingCalibration("vacuum correlations lack a two-point estimate".into());
    let [a0, a1] = set.auto;
    let auto = [a0.ok_or_else(missing)?, a1.ok_or_else(missing)?];
    let cross = set.cross.ok_or_else(missing)?;
    let digest = config.digest_hex();
    for curve in auto.iter().chain([&cross]) {
        if curve.config_digest != digest {
            return Err(Error::DigestMismatch {
                expected: digest,
                found: curve.config_digest.clone(),
            });
        }
    }
    let dt = config.grid.dt;
    if auto[0].dt != dt || auto[0].bins_per_period != config.grid.bins_per_period {
        return Err(Error::GridMismatch("vacuum correlations were taken on a different grid".into()));
    }
    let [k0, k1, kx] = kernels(filters, dt)?;
    let t_p = config.grid.t_p();
    let gains = [config.channels[0].gain, config.channels[1].gain];

    let nbar: [Estimate; 2] = [(0, &k0), (1, &k1)].map(|(c, k)| {
        let scale = t_p * k.at(0);
        Estimate {
            value: auto[c].at_lag(0).re / scale - gains[c],
            stderr: auto[c].stderr_at_lag(0) / scale,
        }
    });
    let xscale = t_p * kx.at(0);
    let nbar_cross = ComplexEstimate {
        value: cross.at_lag(0) / xscale,
        stderr: cross.stderr_at_lag(0) / xscale,
    };
    let mut flags = Vec::new();
    for (c, n) in nbar.iter().enumerate() {
        if n.significantly_negative(3.0) {
            flags.push(format!(
                "calibration inconsistency: channel {c} added noise {:.4} is negative beyond 3 SE ({:.2e})",
                n.value, n.stderr
            ));
        }
    }
    Ok(NoiseMoments {
        config_digest: digest,
        gains,
        dt,
        bins_per_period: config.grid.bins_per_period,
        filters: filters.map(|f| f.to_vec()),
        two_point_auto: auto,
        two_point_cross: cross,
        four_point_alpha: set.g2_alpha,
        four_point_beta: set.g2_beta,
        nbar,
        nbar_cross,
        flags,
    })
}

/// Coupling coefficients `(a_0, a_1, c_x, c_4)` of a topology.
pub fn coupling(topology: &Topology) -> ([f64; 2], f64, f64) {
    match *topology {
        Topology::Hbt { .. } => ([0.5, 0.5], 0.5, 0.25),
        Topology::TwoSided { kappa_b, kappa_c } => ([kappa_b, kappa_c], (kappa_b * kappa_c).sqrt(), kappa_b * kappa_c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecoveryOptions {
    /// Subtract the `N̄_x` terms. Disabling this exposes the artifacts that
    /// the cross-correlated noise leaves in the recovered curves.
    pub subtract_cross: bool,
    /// Subtract the auto-channel noise floor.
    pub subtract_auto: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            subtract_cross: true,
            subtract_auto: true,
        }
    }
}

fn check_inputs(gamma: &CorrelationFunction, noise: &NoiseMoments, config: &ExperimentConfig) -> Result<()> {
    let digest = config.digest_hex();
    for found in [&gamma.config_digest, &noise.config_digest] {
        if *found != digest {
            return Err(Error::DigestMismatch {
                expected: digest.clone(),
                found: found.clone(),
            });
        }
    }
    gamma.check_compatible(&noise.two_point_cross)
}

/// Recovers `G⁽¹⁾` from a two-point estimate.
pub fn recover_g1(gamma: &CorrelationFunction, noise: &NoiseMoments, config: &ExperimentConfig) -> Result<CorrelationFunction> {
    recover_g1_with(gamma, noise, config, RecoveryOptions::default())
}

pub fn recover_g1_with(
    gamma: &CorrelationFunction,
    noise: &NoiseMoments,
    config: &ExperimentConfig,
    opts: RecoveryOptions,
) -> Result<CorrelationFunction> {
    check_inputs(gamma, noise, config)?;
    let [k0, k1, kx] = noise.kernels()?;
    let (auto, cx, _) = coupling(&config.topology);
    let g = noise.gains;
    let (amp, kernel, prefactor) = match (gamma.kind, gamma.channel) {
        (CorrelationKind::G1Alpha, Some(c)) if c < 2 => {
            let n = noise.nbar[c];
            let amp = ComplexEstimate {
                value: Complex64::new(g[c] + n.value, 0.0),
                stderr: n.stderr,
            };
            let amp = if opts.subtract_auto { Some(amp) } else { None };
            (amp, if c == 0 { k0 } else { k1 }, g[c] * auto[c])
        }
        (CorrelationKind::G1Beta, _) => {
            let amp = if opts.subtract_cross { Some(noise.nbar_cross) } else { None };
            (amp, kx, (g[0] * g[1]).sqrt() * cx)
        }
        (kind, _) => {
            return Err(Error::KindMismatch {
                expected: "G1_ALPHA or G1_BETA".into(),
                found: kind.name().into(),
            })
        }
    };
    let t_p = gamma.t_p();
    let grid = gamma.lag_grid();
    let m_max = grid.max_lag() as isize;
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for (i, m) in (-m_max..=m_max).enumerate() {
        let mut v = gamma.values[i];
        let mut var = gamma.stderr[i].powi(2);
        if let Some(a) = amp {
            let w = t_p * kernel.at(m);
            v -= a.value * w;
            var += (a.stderr * w).powi(2);
        }
        values.push(v / prefactor);
        stderr.push(var.sqrt() / prefactor);
    }
    Ok(CorrelationFunction::from_values(
        CorrelationKind::G1,
        grid,
        values,
        stderr,
        gamma.shots,
        gamma.config_digest.clone(),
    ))
}

/// Recovered `G⁽²⁾` with any warnings raised during the subtraction.
#[derive(Clone, Debug, PartialEq)]
pub struct G2Recovery {
    pub curve: CorrelationFunction,
    pub warnings: Vec<String>,
}

pub const NOISE_DOMINATED: &str = "noise-dominated regime";

/// Recovers `G⁽²⁾` from a four-point estimate, given the recovered `G⁽¹⁾`.
pub fn recover_g2(
    gamma2: &CorrelationFunction,
    g1: &CorrelationFunction,
    noise: &NoiseMoments,
    config: &ExperimentConfig,
    variant: Variant,
) -> Result<G2Recovery> {
    recover_g2_with(gamma2, g1, noise, config, variant, RecoveryOptions::default())
}

pub fn recover_g2_with(
    gamma2: &CorrelationFunction,
    g1: &CorrelationFunction,
    noise: &NoiseMoments,
    config: &ExperimentConfig,
    variant: Variant,
    opts: RecoveryOptions,
) -> Result<G2Recovery> {
    check_inputs(gamma2, noise, config)?;
    let expected_kind = match variant {
        Variant::Alpha => CorrelationKind::G2Alpha,
        Variant::Beta => CorrelationKind::G2Beta,
    };
    if gamma2.kind != expected_kind {
        return Err(Error::KindMismatch {
            expected: expected_kind.name().into(),
            found: gamma2.kind.name().into(),
        });
    }
    if g1.kind != CorrelationKind::G1 {
        return Err(Error::KindMismatch {
            expected: "G1".into(),
            found: g1.kind.name().into(),
        });
    }
    gamma2.check_compatible(g1)?;
    let vac = noise.four_point(variant).ok_or_else(|| {
        Error::MissingCalibration(format!("no vacuum four-point estimate for the {variant:?} variant"))
    })?;
    gamma2.check_compatible(vac)?;

    let (auto, cx, c4) = coupling(&config.topology);
    let [g0, g1_gain] = noise.gains;
    let gg = (g0 * g1_gain).sqrt();
    let prefactor = g0 * g1_gain * c4;
    let dt = gamma2.dt;
    let g1_zero = g1.at_lag(0).re;
    let g1_zero_se = g1.stderr_at_lag(0);
    let [n0, n1] = noise.nbar;
    let nx = noise.nbar_cross;
    let filtered = noise.filters.as_ref().is_some_and(|f| f.iter().any(|s| !s.is_identity()));
    let mut warnings = Vec::new();
    if filtered {
        warnings.push(
            "filtered records: only the vacuum four-point term was subtracted; delta-correlated cross terms are smeared by the filters"
                .to_string(),
        );
    }

    let grid = gamma2.lag_grid();
    let m_max = grid.max_lag() as isize;
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut subtracted_se = 0.0f64;
    for (i, m) in (-m_max..=m_max).enumerate() {
        let mut v = gamma2.values[i] - vac.values[i];
        let mut var = gamma2.stderr[i].powi(2) + vac.stderr[i].powi(2);
        subtracted_se = subtracted_se.max(vac.stderr[i]);
        if !filtered {
            let delta = if m == 0 { 1.0 } else { 0.0 };
            match variant {
                Variant::Beta => {
                    if opts.subtract_cross {
                        let w = 2.0 * gg * cx * (1.0 + delta) / dt;
                        let term = nx.value * g1_zero * w;
                        let se = w * ((nx.stderr * g1_zero).powi(2) + (nx.value.norm() * g1_zero_se).powi(2)).sqrt();
                        v -= term;
                        var += se * se;
                        subtracted_se = subtracted_se.max(se);
                    }
                }
                Variant::Alpha => {
                    if opts.subtract_auto {
                        let coef = auto[0] * g0 * (g1_gain + n1.value) + auto[1] * g1_gain * (g0 + n0.value);
                        let coef_se = ((auto[0] * g0 * n1.stderr).powi(2) + (auto[1] * g1_gain * n0.stderr).powi(2)).sqrt();
                        let term = g1_zero * coef / dt;
                        let se = ((g1_zero_se * coef).powi(2) + (g1_zero * coef_se).powi(2)).sqrt() / dt;
                        v -= term;
                        var += se * se;
                        subtracted_se = subtracted_se.max(se);
                    }
                    if opts.subtract_cross && m == 0 {
                        let w = 2.0 * gg * cx / dt;
                        let term = nx.value.re * g1_zero * w;
                        let se = w * ((nx.stderr * g1_zero).powi(2) + (nx.value.re * g1_zero_se).powi(2)).sqrt();
                        v -= term;
                        var += se * se;
                        subtracted_se = subtracted_se.max(se);
                    }
                }
            }
        }
        values.push(v / prefactor);
        stderr.push(var.sqrt() / prefactor);
    }

    let p = grid.bins_per_period as isize;
    let side_scale = (-m_max..=m_max)
        .filter(|m| m.abs() >= p / 2)
        .map(|m| values[grid.index(m)].re.abs())
        .fold(0.0f64, f64::max)
        * prefactor;
    if subtracted_se > 0.5 * side_scale {
        warnings.push(format!(
            "{NOISE_DOMINATED}: a subtracted term has standard error {subtracted_se:.3e}, side-peak scale is {side_scale:.3e}"
        ));
    }

    Ok(G2Recovery {
        curve: CorrelationFunction::from_values(
            CorrelationKind::G2,
            grid,
            values,
            stderr,
            gamma2.shots,
            gamma2.config_digest.clone(),
        ),
        warnings,
    })
}

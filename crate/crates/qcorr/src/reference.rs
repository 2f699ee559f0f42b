//! Closed-form coherence functions of the periodically prepared `α|0⟩ + β|1⟩` state
//! and the anti-bunching verdict.
//!
//! `g1_analytic` and `g2_analytic` are cavity-field quantities integrated over one
//! repetition period. The curves recovered from an HBT measurement describe the
//! emitted field instead, which carries one extra factor of `κ` per field pair;
//! [`expected_g1`] and [`expected_g2`] apply that convention.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::estimator::CorrelationFunction;
use crate::model::{CavityPreparation, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    /// `⟨n⟩`
    pub n_avg: f64,
    /// `|⟨a⟩|²`
    pub a_avg_sq: f64,
    /// `⟨a†a†aa⟩`
    pub g2_num: f64,
    /// `⟨n⟩²`
    pub n_avg_sq: f64,
}

pub fn state_moments(prep: &CavityPreparation) -> StateMoments {
    let n = prep.beta.norm_sqr();
    StateMoments {
        n_avg: n,
        a_avg_sq: prep.alpha.norm_sqr() * n,
        g2_num: 0.0,
        n_avg_sq: n * n,
    }
}

/// Period-integrated correlation of a pulse train in which every period starts
/// a fresh decay `e^{-r t}` per field factor, truncated at the next preparation.
///
/// `same` is the weight when both times fall in the same period and `other`
/// the weight for different periods. Writing `|τ| = l t_p + y` with
/// `0 ≤ y < t_p`, the integration over the base period splits at `t = t_p - y`.
fn pulse_train(tau: f64, t_p: f64, rate: f64, same: f64, other: f64) -> f64 {
    let tau = tau.abs();
    let l = (tau / t_p).floor();
    let y = tau - l * t_p;
    let weight = |k: f64| if k == 0.0 { same } else { other };
    let head = weight(l) * (-rate * y).exp() * (-(2.0 * rate * (t_p - y))).exp_m1().abs();
    let tail = weight(l + 1.0) * ((-rate * (t_p - y)).exp() - (-rate * (t_p + y)).exp());
    (head + tail) / (2.0 * rate)
}

/// Period-integrated cavity-field `G⁽¹⁾(τ)`.
///
/// Away from the period boundaries this is
/// `⟨n⟩ e^{-κ|τ|/2}/κ + |⟨a⟩|² ∑_{l≠0} e^{-κ|τ - l t_p|/2}/κ` up to terms of
/// order `e^{-κ t_p/2}`.
pub fn g1_analytic(tau: f64, prep: &CavityPreparation, kappa: f64, t_p: f64) -> Complex64 {
    let m = state_moments(prep);
    Complex64::new(pulse_train(tau, t_p, 0.5 * kappa, m.n_avg, m.a_avg_sq), 0.0)
}

/// Period-integrated cavity-field `G⁽²⁾(τ)`.
///
/// A pulse carries `∫ e^{-κt} e^{-κ(t+|τ|)} dt = e^{-κ|τ|}/(2κ)`, so both the
/// center and the side peaks have prefactor `1/(2κ)`.
pub fn g2_analytic(tau: f64, prep: &CavityPreparation, kappa: f64, t_p: f64) -> f64 {
    let m = state_moments(prep);
    pulse_train(tau, t_p, kappa, m.g2_num, m.n_avg_sq)
}

/// Scale factor between the recovered `G⁽¹⁾` and the cavity-field `G⁽¹⁾` for a topology.
pub fn detection_scale(topology: &Topology) -> f64 {
    match topology {
        Topology::Hbt { kappa } => *kappa,
        Topology::TwoSided { .. } => 1.0,
    }
}

/// `G⁽¹⁾(τ)` in the convention produced by the calibration module.
pub fn expected_g1(topology: &Topology, prep: &CavityPreparation, t_p: f64, tau: f64) -> Complex64 {
    g1_analytic(tau, prep, topology.kappa(), t_p) * detection_scale(topology)
}

/// `G⁽²⁾(τ)` in the convention produced by the calibration module.
pub fn expected_g2(topology: &Topology, prep: &CavityPreparation, t_p: f64, tau: f64) -> f64 {
    g2_analytic(tau, prep, topology.kappa(), t_p) * detection_scale(topology).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Antibunched,
    ClassicalCompatible,
    Inconclusive,
}

/// How a peak height is read off a window of the curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PeakMethod {
    /// Largest real value in the window.
    WindowMax,
    /// Least-squares amplitude of `e^{-rate |τ - l t_p|}` over the window.
    /// Unbiased on noisy curves, where window maxima pick up the noise.
    Template { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Period index `l` of the window centered at `l t_p`.
    pub period: i64,
    /// Lag at which the height was read (the window center for template fits).
    pub lag: f64,
    pub height: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub center: Peak,
    pub sides: Vec<Peak>,
    pub center_height: f64,
    pub side_heights: Vec<f64>,
    /// `side / center` for every side peak, in the order of `sides`.
    pub ratios: Vec<f64>,
    pub verdict: Verdict,
}

impl PeakReport {
    pub fn mean_side(&self) -> (f64, f64) {
        let n = self.sides.len() as f64;
        let mean = self.side_heights.iter().sum::<f64>() / n;
        let se = self.sides.iter().map(|p| p.stderr * p.stderr).sum::<f64>().sqrt() / n;
        (mean, se)
    }

    /// Center height over the mean side height, with first-order error.
    pub fn center_to_side(&self) -> (f64, f64) {
        let (side, side_se) = self.mean_side();
        let r = self.center_height / side;
        let rel = ((self.center.stderr / self.center_height).powi(2) + (side_se / side).powi(2)).sqrt();
        (r, (r * rel).abs())
    }
}

fn measure(curve: &CorrelationFunction, t_p: f64, l: i64, method: PeakMethod) -> Option<Peak> {
    let center = l as f64 * t_p;
    let half = 0.5 * t_p;
    let tol = 1e-9 * curve.dt;
    let window: Vec<usize> = curve
        .lags
        .iter()
        .enumerate()
        .filter(|(_, &tau)| (tau - center).abs() <= half + tol)
        .map(|(i, _)| i)
        .collect();
    let covered = curve.lags.iter().any(|&tau| (tau - center).abs() <= tol);
    if window.is_empty() || !covered {
        return None;
    }
    match method {
        PeakMethod::WindowMax => {
            let best = window
                .iter()
                .copied()
                .max_by(|&a, &b| curve.values[a].re.total_cmp(&curve.values[b].re))?;
            Some(Peak {
                period: l,
                lag: curve.lags[best],
                height: curve.values[best].re,
                stderr: curve.stderr[best],
            })
        }
        PeakMethod::Template { rate } => {
            let mut ff = 0.0;
            let mut fy = 0.0;
            let mut var = 0.0;
            for &i in &window {
                let f = (-rate * (curve.lags[i] - center).abs()).exp();
                ff += f * f;
                fy += f * curve.values[i].re;
                var += (f * curve.stderr[i]).powi(2);
            }
            Some(Peak {
                period: l,
                lag: center,
                height: fy / ff,
                stderr: var.sqrt() / ff,
            })
        }
    }
}

/// Measures the center and side peaks of a pulse-train correlation and applies
/// the anti-bunching rule: antibunched iff the center lies more than four
/// combined standard errors below the smallest side peak.
pub fn peak_report(curve: &CorrelationFunction, t_p: f64, method: PeakMethod) -> PeakReport {
    let max_lag = curve.lags.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let reach = ((max_lag + 1e-9 * curve.dt) / t_p).floor() as i64;
    let center = measure(curve, t_p, 0, method).expect("lag grid contains zero");
    let sides: Vec<Peak> = (-reach..=reach)
        .filter(|&l| l != 0)
        .filter_map(|l| measure(curve, t_p, l, method))
        .collect();
    let side_heights: Vec<f64> = sides.iter().map(|p| p.height).collect();
    let ratios = side_heights.iter().map(|h| h / center.height).collect();

    let verdict = if sides.len() < 2 || !center.height.is_finite() {
        Verdict::Inconclusive
    } else {
        let min_side = sides
            .iter()
            .min_by(|a, b| a.height.total_cmp(&b.height))
            .expect("at least two side peaks");
        let combined = (center.stderr.powi(2) + min_side.stderr.powi(2)).sqrt();
        let significant = std::iter::once(&center)
            .chain(sides.iter())
            .any(|p| p.height.abs() > 4.0 * p.stderr);
        if center.height < min_side.height - 4.0 * combined {
            Verdict::Antibunched
        } else if significant {
            Verdict::ClassicalCompatible
        } else {
            Verdict::Inconclusive
        }
    };

    PeakReport {
        center_height: center.height,
        center,
        sides,
        side_heights,
        ratios,
        verdict,
    }
}
